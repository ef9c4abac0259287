"""Run orchestration: directories, manifests, and report files.

Every command materializes into one run directory named by the config
hash and seed, holding the artifacts plus a manifest that pins down
exactly how to regenerate them. Timestamps live only in manifests, so
every other artifact is byte-identical across reruns.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .agents import load_checkpoint, save_checkpoint
from .analysis import permutation_test, robustness_matrix, sweep, symbol_usage
from .errors import ConfigurationError, DivergenceError
from .rng import stream
from .training import (
    TrainConfig,
    TrainResult,
    append_metrics,
    config_hash,
    featurize,
    train,
    write_metrics_header,
)
from .world import (
    Dataset,
    World,
    dataset_sha256,
    format_sample_mode,
    format_split_mode,
    load_dataset,
    make_dataset,
    parse_sample_mode,
    parse_split_mode,
    save_dataset,
)

MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    kind: str
    config: dict
    seeds: list[int]
    dataset_path: str | None
    dataset_sha256: str | None
    artifacts: dict[str, str]
    created_utc: str = ""
    code_version: str = __version__

    def write(self, path: str | Path) -> None:
        doc = asdict(self)
        if not doc["created_utc"]:
            doc["created_utc"] = datetime.now(timezone.utc).isoformat()
        Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def write_csv(path: str | Path, rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def write_json(path: str | Path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


# -- dataset generation -------------------------------------------------


def gen_data_run(
    p: int,
    t: int,
    k: int,
    n_episodes: int,
    seed: int,
    out_path: str | Path,
    sample_mode: str = "uniform",
    split_mode: str = "episode",
) -> dict:
    """Generate, save, and manifest one dataset; returns a summary dict."""
    mode_name, k_diff = parse_sample_mode(sample_mode)
    split_name, fraction = parse_split_mode(split_mode)
    world = World(p, t)
    dataset = make_dataset(
        world,
        k=k,
        n_episodes=n_episodes,
        seed=seed,
        sample_mode=mode_name,
        k_diff=k_diff,
        split_mode=split_name,
        holdout_fraction=fraction,
    )
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out_path)
    sha = dataset_sha256(out_path)
    n_train, n_val, n_test = dataset.sizes
    manifest = RunManifest(
        kind="gen-data",
        config={
            "p": p, "t": t, "k": k, "n_episodes": n_episodes, "seed": seed,
            "sample_mode": format_sample_mode(mode_name, k_diff),
            "split_mode": format_split_mode(split_name, fraction),
        },
        seeds=[seed],
        dataset_path=str(out_path),
        dataset_sha256=sha,
        artifacts={"dataset": str(out_path)},
    )
    manifest.write(out_path.with_suffix(out_path.suffix + ".manifest.json"))
    return {
        "dataset_path": str(out_path),
        "dataset_sha256": sha,
        "world_size": world.size,
        "n_episodes": n_episodes,
        "split_sizes": {"train": n_train, "validation": n_val, "test": n_test},
        "held_out_targets": 0 if dataset.held_out is None else int(dataset.held_out.size),
    }


# -- training -----------------------------------------------------------


def config_for_dataset(dataset: Dataset, overrides: dict) -> TrainConfig:
    """Build a TrainConfig whose world fields come from the dataset.

    Overrides may restate the world fields only if they agree; anything
    else is a misconfiguration the caller must hear about.
    """
    pinned = {
        "p": dataset.p,
        "t": dataset.t,
        "k": dataset.k,
        "n_episodes": len(dataset.episodes),
        "sample_mode": format_sample_mode(dataset.sample_mode, dataset.k_diff),
        "split_mode": format_split_mode(dataset.split_mode, dataset.holdout_fraction),
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    for name, value in pinned.items():
        if name in overrides and overrides[name] != value:
            raise ConfigurationError(
                f"{name}={overrides[name]!r} conflicts with the dataset's {name}={value!r}"
            )
    merged = {**pinned, **overrides}
    known = set(TrainConfig.__dataclass_fields__)
    unknown = set(merged) - known
    if unknown:
        raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
    return TrainConfig(**merged).validate()


def run_dir_name(config: TrainConfig) -> str:
    return f"run-{config_hash(config)}-s{config.seed}"


def _predictions_rows(ev) -> list[list]:
    rows = [["episode_index", "choice", "correct", "symbol"]]
    for i, (choice, ok, sym) in enumerate(zip(ev.choices, ev.correct, ev.symbols)):
        rows.append([i, int(choice), int(ok), int(sym)])
    return rows


def train_run(dataset_path: str | Path, out_dir: str | Path, overrides: dict) -> dict:
    """Train on a dataset file and persist checkpoint, metrics, predictions.

    On divergence the partial artifacts (best checkpoint so far, metric
    rows up to the failure) are still written before the error
    propagates, so the run directory always tells the full story.
    """
    dataset_path = Path(dataset_path)
    if not dataset_path.exists():
        raise ConfigurationError(f"dataset file not found: {dataset_path}")
    dataset = load_dataset(dataset_path)
    config = config_for_dataset(dataset, overrides)
    run_dir = Path(out_dir) / run_dir_name(config)
    run_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = run_dir / "metrics.csv"
    ckpt_path = run_dir / "checkpoint.json"
    write_metrics_header(metrics_path)
    sha = dataset_sha256(dataset_path)

    def persist(result: TrainResult, diverged: bool) -> dict:
        model = {
            "p": config.p,
            "t": config.t,
            "vocab_size": config.vocab_size,
            "hidden_dim": config.hidden_dim,
            "embedding_dim": config.embedding_dim,
            "activation": config.activation,
            "pooling": config.pooling,
            "temperature": config.temperature,
        }
        extra = {
            "config": config.as_dict(),
            "config_hash": config_hash(config),
            "seed": config.seed,
            "best_epoch": result.best_epoch,
            "best_val_accuracy": result.best_val_accuracy,
            "dataset_sha256": sha,
            "diverged": diverged,
        }
        save_checkpoint(ckpt_path, result.sender, result.receiver, model, extra)
        write_csv(run_dir / "predictions.csv", _predictions_rows(result.test))
        manifest = RunManifest(
            kind="train",
            config=config.as_dict(),
            seeds=[config.seed],
            dataset_path=str(dataset_path),
            dataset_sha256=sha,
            artifacts={
                "checkpoint": str(ckpt_path),
                "metrics": str(metrics_path),
                "predictions": str(run_dir / "predictions.csv"),
            },
        )
        manifest.write(run_dir / MANIFEST_NAME)
        return {
            "run_dir": str(run_dir),
            "config_hash": config_hash(config),
            "config": config.as_dict(),
            "diverged": diverged,
            "best_epoch": result.best_epoch,
            "best_val_accuracy": result.best_val_accuracy,
            "test_accuracy": result.test.accuracy,
            "test_loss": result.test.loss,
            "distinct_symbols": result.test.distinct_symbols,
            "epochs_run": result.epochs_run,
            "stopped_early": result.stopped_early,
            "checkpoint": str(ckpt_path),
            "metrics": str(metrics_path),
        }

    try:
        result = train(config, dataset, on_metrics=lambda rows: append_metrics(metrics_path, rows))
    except DivergenceError as err:
        if err.result is not None:
            persist(err.result, diverged=True)
        raise
    return persist(result, diverged=False)


# -- analysis -----------------------------------------------------------


def _load_for_analysis(ckpt_path: str | Path, dataset_path: str | Path, split: str):
    ckpt_path, dataset_path = Path(ckpt_path), Path(dataset_path)
    if not ckpt_path.exists():
        raise ConfigurationError(f"checkpoint not found: {ckpt_path}")
    if not dataset_path.exists():
        raise ConfigurationError(f"dataset file not found: {dataset_path}")
    sender, receiver, meta = load_checkpoint(ckpt_path)
    dataset = load_dataset(dataset_path)
    model = meta["model"]
    if (model["p"], model["t"]) != (dataset.p, dataset.t):
        raise ConfigurationError(
            f"checkpoint world (p={model['p']}, t={model['t']}) is incompatible with "
            f"dataset world (p={dataset.p}, t={dataset.t})"
        )
    episodes = dataset.split(split)
    batch = featurize(episodes, dataset.p, dataset.t)
    return sender, receiver, meta, dataset, batch


def _analysis_stub(meta: dict, kind: str) -> str:
    extra = meta.get("extra", {})
    chash = extra.get("config_hash", "nohash")
    seed = extra.get("seed", 0)
    return f"{kind}-{chash}-s{seed}"


def _analysis_manifest(kind, meta, dataset_path, out_dir, artifacts, extra_config=None) -> None:
    cfg = dict(meta.get("extra", {}).get("config", {}))
    if extra_config:
        cfg.update(extra_config)
    manifest = RunManifest(
        kind=f"analyze-{kind}",
        config=cfg,
        seeds=[meta.get("extra", {}).get("seed", 0)],
        dataset_path=str(dataset_path),
        dataset_sha256=dataset_sha256(dataset_path),
        artifacts={k: str(v) for k, v in artifacts.items()},
    )
    manifest.write(Path(out_dir) / f"{_analysis_stub(meta, kind)}.manifest.json")


def usage_run(ckpt_path, dataset_path, out_dir, split: str = "test") -> dict:
    sender, _, meta, _, batch = _load_for_analysis(ckpt_path, dataset_path, split)
    report = symbol_usage(sender, batch)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stub = _analysis_stub(meta, "usage")
    csv_path, json_path = out_dir / f"{stub}.csv", out_dir / f"{stub}.json"
    write_csv(csv_path, report.to_rows())
    write_json(json_path, report.to_json_dict())
    _analysis_manifest("usage", meta, dataset_path, out_dir,
                       {"csv": csv_path, "json": json_path}, {"split": split})
    return {**report.to_json_dict(), "csv": str(csv_path), "json": str(json_path)}


def robustness_run(ckpt_path, dataset_path, out_dir, split: str = "test") -> dict:
    sender, receiver, meta, _, batch = _load_for_analysis(ckpt_path, dataset_path, split)
    report = robustness_matrix(sender, receiver, batch)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stub = _analysis_stub(meta, "robustness")
    csv_path, json_path = out_dir / f"{stub}.csv", out_dir / f"{stub}.json"
    write_csv(csv_path, report.to_rows())
    write_json(json_path, report.to_json_dict())
    _analysis_manifest("robustness", meta, dataset_path, out_dir,
                       {"csv": csv_path, "json": json_path}, {"split": split})
    return {**report.to_json_dict(), "csv": str(csv_path), "json": str(json_path)}


def permutation_run(
    ckpt_path, dataset_path, out_dir, split: str = "test",
    n_permutations: int = 5, seed: int = 0,
) -> dict:
    sender, receiver, meta, _, batch = _load_for_analysis(ckpt_path, dataset_path, split)
    rng = stream(seed, "permutation")
    report = permutation_test(sender, receiver, batch, n_permutations, rng)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stub = _analysis_stub(meta, "permutation")
    csv_path, json_path = out_dir / f"{stub}.csv", out_dir / f"{stub}.json"
    write_csv(csv_path, report.to_rows())
    write_json(json_path, report.to_json_dict())
    _analysis_manifest("permutation", meta, dataset_path, out_dir,
                       {"csv": csv_path, "json": json_path},
                       {"split": split, "n_permutations": n_permutations,
                        "permutation_seed": seed})
    return {**report.to_json_dict(), "csv": str(csv_path), "json": str(json_path)}


def sweep_run(
    out_dir,
    vocab_sizes,
    ks,
    seeds,
    base_overrides: dict | None = None,
    dataset_seed: int | None = None,
    on_cell=None,
) -> dict:
    """Grid-train and aggregate; writes sweep table CSV + JSON + manifest."""
    overrides = {k: v for k, v in (base_overrides or {}).items() if v is not None}
    known = set(TrainConfig.__dataclass_fields__)
    unknown = set(overrides) - known
    if unknown:
        raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
    base = TrainConfig(**overrides)
    report = sweep(base, vocab_sizes, ks, seeds, dataset_seed=dataset_seed, on_cell=on_cell)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stub = f"sweep-{config_hash(base)}"
    csv_path, json_path = out_dir / f"{stub}.csv", out_dir / f"{stub}.json"
    write_csv(csv_path, report.to_rows())
    write_json(json_path, report.to_json_dict())
    manifest = RunManifest(
        kind="analyze-sweep",
        config={
            **base.as_dict(),
            "vocab_sizes": list(report.vocab_sizes),
            "ks": list(report.ks),
        },
        seeds=list(report.seeds),
        dataset_path=None,
        dataset_sha256=None,
        artifacts={"csv": str(csv_path), "json": str(json_path)},
    )
    manifest.write(out_dir / f"{stub}.manifest.json")
    return {**report.to_json_dict(), "csv": str(csv_path), "json": str(json_path)}
