"""Acceptance gate: one test per criterion, each printing a verdict line.

Run `pytest -v tests/test_acceptance.py` for the one-line-per-criterion
report. The trained-model criteria share module fixtures, so the heavy
training happens once; expect the full gate to take around 25 minutes
on one CPU core.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from grefgame.agents import (
    channel_messages,
    gumbel_noise,
    named_parameters,
    new_receiver,
    new_sender,
    receiver_scores,
    sender_logits,
)
from grefgame.analysis import permutation_test, robustness_matrix
from grefgame.gnn import star_adjacency
from grefgame.rng import stream
from grefgame.runs import gen_data_run, train_run
from grefgame.tensor import (
    Tensor,
    backward,
    log_softmax,
    matmul,
    mean_rows,
    softmax,
    zero_grads,
)
from grefgame.training import (
    TrainConfig,
    adam_state,
    adam_step,
    batch_forward,
    evaluate,
    featurize,
    train,
)
from grefgame.world import World, make_dataset

from conftest import check_grad

GRAD_TOL = 1e-4


def verdict(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    assert ok, line


# -- shared training fixtures (built lazily, once per module) ------------


@pytest.fixture(scope="module")
def datasets():
    world = World(3, 4)
    return {k: make_dataset(world, k, 10_000, seed=0) for k in (2, 4, 9)}


@pytest.fixture(scope="module")
def headline_runs(datasets):
    """Three seeds of the (|V|=25, K=2) configuration, with wall times."""
    runs = []
    for seed in (1, 2, 3):
        start = time.perf_counter()
        result = train(TrainConfig(k=2, vocab_size=25, seed=seed), datasets[2])
        runs.append((time.perf_counter() - start, result))
    return runs


@pytest.fixture(scope="module")
def small_vocab_runs(datasets):
    return {
        k: train(TrainConfig(k=k, vocab_size=5, seed=1), datasets[k])
        for k in (2, 4, 9)
    }


@pytest.fixture(scope="module")
def compression_run(datasets):
    return train(TrainConfig(k=4, vocab_size=50, seed=1), datasets[4])


@pytest.fixture(scope="module")
def probe_model(datasets):
    result = train(TrainConfig(k=4, vocab_size=10, seed=1), datasets[4])
    batch = featurize(datasets[4].test, 3, 4)
    return result, batch


# -- criterion 1: gradients ----------------------------------------------


def test_criterion_01_gradients_match_finite_differences():
    rng = np.random.default_rng(42)

    def leaf(shape, kind="normal"):
        if kind == "normal":
            data = rng.normal(size=shape)
        elif kind == "positive":
            data = rng.uniform(0.5, 2.0, size=shape)
        else:  # off_zero, for the relu kink
            data = rng.uniform(0.2, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)
        return Tensor(data, requires_grad=True)

    def probe(shape):
        return Tensor(rng.normal(size=shape))

    errs: dict[str, float] = {}
    x = leaf((3, 4))
    c34, c45, c23 = probe((3, 4)), probe((4, 5)), probe((2, 3))
    p34, p35, p24 = probe((3, 4)), probe((3, 5)), probe((2, 4))
    p12, p4, p3 = probe((12,)), probe((4,)), probe((3,))
    cases = {
        "add": lambda: ((x + c34) * p34).sum(),
        "radd_scalar": lambda: ((1.5 + x) * p34).sum(),
        "sub": lambda: ((x - c34) * p34).sum(),
        "mul": lambda: ((x * c34) * p34).sum(),
        "rmul_scalar": lambda: ((2.5 * x) * p34).sum(),
        "neg": lambda: ((-x) * p34).sum(),
        "matmul_left": lambda: (matmul(x, c45) * p35).sum(),
        "matmul_right": lambda: (matmul(c23, x) * p24).sum(),
        "tanh": lambda: (x.tanh() * p34).sum(),
        "exp": lambda: (x.exp() * p34).sum(),
        "reshape": lambda: (x.reshape((12,)) * p12).sum(),
        "sum_axis": lambda: (x.sum(axis=0) * p4).sum(),
        "mean_all": lambda: x.mean() * 2.0,
        "mean_axis": lambda: (x.mean(axis=1) * p3).sum(),
        "amax": lambda: (x.amax(axis=1) * p3).sum(),
        "softmax": lambda: (softmax(x, axis=-1) * p34).sum(),
        "log_softmax": lambda: (log_softmax(x, axis=-1) * p34).sum(),
        "mean_rows": lambda: (mean_rows(x) * p4).sum(),
    }
    for name, build in cases.items():
        errs[name] = check_grad(build, x, tol=np.inf)
    xb = leaf((2, 3, 4))
    pb = probe((2, 3, 5))
    errs["matmul_batched"] = check_grad(lambda: (matmul(xb, c45) * pb).sum(), xb, tol=np.inf)
    xr = leaf((3, 4), kind="off_zero")
    errs["relu"] = check_grad(lambda: (xr.relu() * p34).sum(), xr, tol=np.inf)
    xl = leaf((3, 4), kind="positive")
    errs["log"] = check_grad(lambda: (xl.log() * p34).sum(), xl, tol=np.inf)

    # full sender-receiver composite, Gumbel noise frozen
    p, t, k, vocab = 2, 3, 2, 5
    agent_rng = np.random.default_rng(7)
    kwargs = dict(in_dim=p + t, vocab_size=vocab, hidden_dim=4, embedding_dim=4)
    sender = new_sender(agent_rng, **kwargs)
    receiver = new_receiver(agent_rng, **kwargs)
    ds = make_dataset(World(p, t), k, 12, seed=0)
    batch = featurize(ds.episodes[:4], p, t)
    noise = gumbel_noise(np.random.default_rng(11), (4, vocab))
    mask = np.zeros((4, k + 1))
    mask[np.arange(4), batch.positions] = 1.0

    def composite_loss(mode="soft"):
        logits = sender_logits(sender, batch.targets, batch.adjacency)
        messages = channel_messages(logits, 1.0, mode, noise=noise)
        scores = receiver_scores(receiver, messages, batch.candidates, batch.adjacency)
        return -(log_softmax(scores, axis=-1) * Tensor(mask)).sum() * 0.25

    params = named_parameters(sender, receiver)
    composite_err = max(
        check_grad(composite_loss, param, tol=np.inf) for param in params.values()
    )

    # straight-through channel: for a linear readout of the messages the
    # backward pass must match the soft surrogate bit for bit
    readout = Tensor(rng.normal(size=(4, vocab)))

    def channel_loss(mode):
        logits = sender_logits(sender, batch.targets, batch.adjacency)
        return (channel_messages(logits, 1.0, mode, noise=noise) * readout).sum()

    sender_params = {n: p for n, p in params.items() if n.startswith("sender.")}
    zero_grads(sender_params.values())
    backward(channel_loss("train"))
    hard_grads = {name: p.grad.copy() for name, p in sender_params.items()}
    zero_grads(sender_params.values())
    backward(channel_loss("soft"))
    st_identical = all(
        np.array_equal(hard_grads[n], p.grad) for n, p in sender_params.items()
    )

    worst_op = max(errs, key=errs.get)
    ok = max(errs.values()) < GRAD_TOL and composite_err < GRAD_TOL and st_identical
    verdict(
        1, ok,
        f"op rel err <= {errs[worst_op]:.2e} ({worst_op}), composite {composite_err:.2e} "
        f"(tol {GRAD_TOL}), straight-through grads match surrogate: {st_identical}",
    )


# -- criterion 2: propagation oracles ------------------------------------


def test_criterion_02_gcn_matches_hand_oracles():
    s = 1.0 / math.sqrt(8.0)
    hand = np.array(
        [
            [0.5, 0.0, 0.0, s],
            [0.0, 0.5, 0.0, s],
            [0.0, 0.0, 0.5, s],
            [s, s, s, 0.25],
        ]
    )
    adj_dev = float(np.max(np.abs(star_adjacency(3) - hand)))

    from grefgame.gnn import GcnEncoder, GcnLayer, encode_features
    from grefgame.world import features_array

    specs = World(3, 4).objects()[:16]
    feats = features_array(specs, 3, 4)
    enc = GcnEncoder([GcnLayer(Tensor(np.eye(7), requires_grad=True), "identity")])
    got = encode_features(enc, feats, star_adjacency(3)).data
    want = (hand @ feats).mean(axis=-2)
    enc_dev = float(np.max(np.abs(got - want)))
    ok = adj_dev < 1e-12 and enc_dev < 1e-9
    verdict(2, ok, f"adjacency dev {adj_dev:.2e} (< 1e-12), encode dev {enc_dev:.2e} (< 1e-9)")


# -- criterion 3: untrained baselines ------------------------------------


def test_criterion_03_untrained_agents_score_at_chance(datasets):
    # fresh agents per episode, so episodes are independent Bernoulli draws
    parts = []
    ok = True
    for k in (2, 4, 9):
        test = featurize(datasets[k].test, 3, 4)
        n = len(test)
        hits = 0
        for i in range(n):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=20260819, spawn_key=(k, i))
            )
            kwargs = dict(in_dim=7, vocab_size=25, hidden_dim=64, embedding_dim=64)
            sender = new_sender(rng, **kwargs)
            receiver = new_receiver(rng, **kwargs)
            one = test.take(np.array([i]))
            _, choices, _ = batch_forward(sender, receiver, one, mode="eval")
            hits += int(choices[0] == one.positions[0])
        acc = hits / n
        p0 = 1.0 / (k + 1)
        band = 3.0 * math.sqrt(p0 * (1.0 - p0) / n)
        ok = ok and abs(acc - p0) <= band
        parts.append(f"K={k}: {acc:.4f} in {p0:.4f}+/-{band:.4f}")
    verdict(3, ok, "; ".join(parts))


# -- criteria 4-8: trained-model behaviour --------------------------------


def test_criterion_04_headline_accuracy(headline_runs):
    accs = [r.test.accuracy for _, r in headline_runs]
    times = [t for t, _ in headline_runs]
    good = sum(a >= 0.85 for a in accs)
    ok = good >= 2 and all(t <= 600.0 for t in times)
    verdict(
        4, ok,
        f"|V|=25 K=2 test accuracy {[round(a, 3) for a in accs]} -> {good}/3 seeds >= 0.85, "
        f"wall times {[round(t) for t in times]}s (each <= 600s)",
    )


def test_criterion_05_small_vocab_uses_every_symbol(small_vocab_runs):
    parts = []
    ok = True
    for k, result in sorted(small_vocab_runs.items()):
        distinct = result.test.distinct_symbols
        ok = ok and distinct == 5 and not result.diverged
        parts.append(f"K={k}: {distinct}/5 symbols (accuracy {result.test.accuracy:.3f})")
    verdict(5, ok, "; ".join(parts))


def test_criterion_06_large_vocab_compresses(compression_run):
    distinct = compression_run.test.distinct_symbols
    acc = compression_run.test.accuracy
    ok = distinct < 30 and acc > 3.0 * 0.2
    verdict(
        6, ok,
        f"|V|=50 K=4 distinct symbols {distinct} (< 30), accuracy {acc:.3f} (> 0.6)",
    )


def test_criterion_07_forced_symbol_diagonal(probe_model):
    result, batch = probe_model
    rm = robustness_matrix(result.sender, result.receiver, batch)
    diag = [rm.matrix[s, s] for s in rm.defined_rows]
    ok = bool(rm.defined_rows) and all(d == 1.0 for d in diag) and rm.diagonal_is_argmax()
    off_diag = [
        rm.matrix[s, f]
        for s in rm.defined_rows
        for f in range(rm.vocab_size)
        if f != s and np.isfinite(rm.matrix[s, f])
    ]
    verdict(
        7, ok,
        f"|V|=10 K=4: {len(rm.defined_rows)} defined rows, diagonal all 1.0, "
        f"mean off-diagonal {float(np.mean(off_diag)):.3f}, diagonal is row max: "
        f"{rm.diagonal_is_argmax()}",
    )


def test_criterion_08_candidate_order_is_irrelevant(probe_model):
    result, batch = probe_model
    report = permutation_test(
        result.sender, result.receiver, batch, n_permutations=5, rng=stream(1, "permutation")
    )
    ok = report.agreement == 1.0
    verdict(
        8, ok,
        f"per-episode agreement {report.agreement} over {report.n_permutations} shuffles "
        f"of {report.n_episodes} episodes (exactly 1.0 required)",
    )


# -- criterion 9: end-to-end gradient path --------------------------------


def test_criterion_09_overfits_eight_episodes():
    ds = make_dataset(World(3, 4), 2, 10, seed=0)
    batch = featurize(ds.episodes[:8], 3, 4)
    rng = stream(0, "init")
    kwargs = dict(in_dim=7, vocab_size=10, hidden_dim=32, embedding_dim=32)
    sender = new_sender(rng, **kwargs)
    receiver = new_receiver(rng, **kwargs)
    params = named_parameters(sender, receiver)
    state = adam_state({k: t.data for k, t in params.items()})
    channel = stream(0, "channel")
    hit = None
    for step in range(1, 501):
        loss, _, _ = batch_forward(sender, receiver, batch, mode="train", rng=channel)
        backward(loss)
        new, state = adam_step(
            {k: t.data for k, t in params.items()},
            {k: t.grad for k, t in params.items()},
            state,
            lr=1e-3,
        )
        for k, tensor in params.items():
            tensor.data = new[k]
        zero_grads(params.values())
        if evaluate(sender, receiver, batch).accuracy == 1.0:
            hit = step
            break
    verdict(9, hit is not None, f"training accuracy 1.0 on 8 episodes at step {hit} (<= 500)")


# -- criterion 10: determinism --------------------------------------------


def test_criterion_10_reruns_are_byte_identical(tmp_path):
    gen_a = gen_data_run(2, 3, 1, 30, 0, tmp_path / "a.jsonl")
    gen_b = gen_data_run(2, 3, 1, 30, 0, tmp_path / "b.jsonl")
    data_same = (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    sha_same = gen_a["dataset_sha256"] == gen_b["dataset_sha256"]

    overrides = dict(
        vocab_size=4, epochs=2, batch_size=16, hidden_dim=6, embedding_dim=6,
        eval_cadence=1, patience=10, seed=0,
    )
    run_a = train_run(tmp_path / "a.jsonl", tmp_path / "runs_a", overrides)
    run_b = train_run(tmp_path / "a.jsonl", tmp_path / "runs_b", overrides)
    same = {}
    for name in ("metrics.csv", "predictions.csv", "checkpoint.json"):
        blob_a = (Path(run_a["run_dir"]) / name).read_bytes()
        blob_b = (Path(run_b["run_dir"]) / name).read_bytes()
        same[name] = blob_a == blob_b
    ok = data_same and sha_same and all(same.values())
    verdict(
        10, ok,
        f"dataset bytes identical: {data_same}, sha match: {sha_same}, "
        f"artifacts identical: {same}",
    )
