"""Command-line client for dataset generation, training, and analyses.

Every subcommand talks HTTP to the service: by default an in-process
ASGI instance (no sockets, same artifacts on local disk), or a remote
server via --server. `serve` starts that server. Config precedence for
training fields is defaults < --config file < command-line flags.

Exit codes: 0 success, 1 unexpected failure, 2 bad configuration,
3 infeasible world, 4 training divergence.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path

import httpx

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIGURATION = 2
EXIT_INFEASIBLE = 3
EXIT_DIVERGENCE = 4

_KIND_TO_EXIT = {
    "configuration": EXIT_CONFIGURATION,
    "contract": EXIT_CONFIGURATION,
    "shape": EXIT_CONFIGURATION,
    "domain": EXIT_CONFIGURATION,
    "infeasible_world": EXIT_INFEASIBLE,
    "world_too_large": EXIT_INFEASIBLE,
    "divergence": EXIT_DIVERGENCE,
}

# TrainConfig fields a config file or flags may override per command.
TRAIN_OVERRIDE_KEYS = (
    "vocab_size", "seed", "epochs", "batch_size", "learning_rate", "temperature",
    "hidden_dim", "embedding_dim", "activation", "pooling", "eval_cadence", "patience",
)
SWEEP_EXTRA_KEYS = ("p", "t", "n_episodes", "sample_mode", "split_mode")


def _post(server: str | None, path: str, payload: dict) -> httpx.Response:
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            return client.post(path, json=payload)

    async def in_process() -> httpx.Response:
        from .service import create_app

        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(
            transport=transport, base_url="http://grefgame.local", timeout=None
        ) as client:
            return await client.post(path, json=payload)

    return asyncio.run(in_process())


def _fail(body: dict, status: int) -> int:
    kind = body.get("error", "internal")
    detail = body.get("detail", json.dumps(body))
    print(f"error ({kind}): {detail}", file=sys.stderr)
    if status == 422:  # request rejected by schema validation
        return EXIT_CONFIGURATION
    return _KIND_TO_EXIT.get(kind, EXIT_UNEXPECTED)


def _call(server: str | None, path: str, payload: dict):
    """POST and return (exit_code, body); errors already printed."""
    resp = _post(server, path, payload)
    try:
        body = resp.json()
    except ValueError:
        body = {"error": "internal", "detail": resp.text}
    if resp.status_code != 200:
        if resp.status_code == 422 and "error" not in body:
            body = {"error": "configuration", "detail": json.dumps(body.get("detail", body))}
        return _fail(body, resp.status_code), body
    return EXIT_OK, body


def _load_config_file(path: str | None, allowed: tuple[str, ...]) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        print(f"error (configuration): {path} is not valid JSON: {err}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIGURATION) from None
    if not isinstance(doc, dict):
        print(f"error (configuration): {path} must hold a JSON object", file=sys.stderr)
        raise SystemExit(EXIT_CONFIGURATION)
    unknown = set(doc) - set(allowed)
    if unknown:
        print(
            f"error (configuration): {path} sets fields not usable here: {sorted(unknown)}",
            file=sys.stderr,
        )
        raise SystemExit(EXIT_CONFIGURATION)
    return doc


def _merge_overrides(args: argparse.Namespace, allowed: tuple[str, ...]) -> dict:
    """defaults < config file < flags; only explicitly set values survive."""
    merged = _load_config_file(getattr(args, "config", None), allowed)
    for key in allowed:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--vocab", dest="vocab_size", type=int, help="vocabulary size |V|")
    parser.add_argument("--seed", type=int, help="training seed")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--lr", dest="learning_rate", type=float)
    parser.add_argument("--temperature", type=float)
    parser.add_argument("--hidden", dest="hidden_dim", type=int)
    parser.add_argument("--embedding", dest="embedding_dim", type=int)
    parser.add_argument("--activation", choices=["relu", "identity"])
    parser.add_argument("--pooling", choices=["mean", "sum", "max"])
    parser.add_argument("--eval-cadence", dest="eval_cadence", type=int)
    parser.add_argument("--patience", type=int)
    parser.add_argument("--config", help="JSON file with TrainConfig field overrides")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grefgame",
        description="Referential game on property graphs: data, training, analyses.",
    )
    parser.add_argument("--server", help="base URL of a running service (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate an episode dataset file")
    gen.add_argument("--p", type=int, default=3, help="properties per object")
    gen.add_argument("--t", type=int, default=4, help="types per property")
    gen.add_argument("--k", type=int, default=2, help="distractors per episode")
    gen.add_argument("--episodes", type=int, default=10_000)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--mode", default="uniform", help="'uniform' or 'k_diff:N'")
    gen.add_argument("--split", default="episode", help="'episode' or 'holdout_targets:F'")
    gen.add_argument("--out", required=True, help="dataset file path")

    tr = sub.add_parser("train", help="train agents on a dataset file")
    tr.add_argument("--data", required=True, help="dataset file from gen-data")
    tr.add_argument("--out", default="runs", help="parent directory for run folders")
    _add_train_flags(tr)

    an = sub.add_parser("analyze", help="analyses over trained checkpoints")
    ansub = an.add_subparsers(dest="analysis", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--ckpt", required=True, help="checkpoint.json from a training run")
        p.add_argument("--data", required=True, help="dataset file")
        p.add_argument("--out", default="reports")
        p.add_argument("--split", default="test", choices=["train", "validation", "test"])

    add_common(ansub.add_parser("usage", help="symbol usage histogram"))
    add_common(ansub.add_parser("robustness", help="forced-symbol robustness matrix"))
    perm = ansub.add_parser("permutation", help="candidate-order invariance check")
    add_common(perm)
    perm.add_argument("--permutations", type=int, default=5)
    perm.add_argument("--seed", type=int, default=0)

    sw = ansub.add_parser("sweep", help="train a vocab x distractor grid and tabulate")
    sw.add_argument("--grid", nargs="+", required=True, metavar="KEY=V1,V2",
                    help="e.g. --grid vocab=5,10,25,50 k=2,4,9")
    sw.add_argument("--seeds", required=True,
                    help="count N (seeds 0..N-1) or explicit list '0,7,13'")
    sw.add_argument("--out", default="reports")
    sw.add_argument("--p", type=int)
    sw.add_argument("--t", type=int)
    sw.add_argument("--episodes", dest="n_episodes", type=int)
    sw.add_argument("--dataset-seed", dest="dataset_seed", type=int)
    _add_train_flags(sw)

    srv = sub.add_parser("serve", help="start the HTTP service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)

    return parser


def _parse_grid(tokens: list[str]) -> tuple[list[int], list[int]]:
    grid: dict[str, list[int]] = {}
    for token in tokens:
        key, _, values = token.partition("=")
        key = {"vocab": "vocab", "vocab_size": "vocab", "k": "k"}.get(key.strip())
        if key is None or not values:
            print(f"error (configuration): bad --grid token {token!r}; "
                  "expected vocab=... or k=...", file=sys.stderr)
            raise SystemExit(EXIT_CONFIGURATION)
        try:
            grid[key] = [int(v) for v in values.split(",") if v]
        except ValueError:
            print(f"error (configuration): non-integer in --grid token {token!r}",
                  file=sys.stderr)
            raise SystemExit(EXIT_CONFIGURATION) from None
    if "vocab" not in grid or "k" not in grid:
        print("error (configuration): --grid needs both vocab=... and k=...", file=sys.stderr)
        raise SystemExit(EXIT_CONFIGURATION)
    return grid["vocab"], grid["k"]


def _parse_seeds(text: str) -> list[int]:
    try:
        if "," in text:
            return [int(s) for s in text.split(",") if s]
        return list(range(int(text)))
    except ValueError:
        print(f"error (configuration): bad --seeds value {text!r}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIGURATION) from None


def cmd_gen_data(args: argparse.Namespace) -> int:
    payload = {
        "p": args.p, "t": args.t, "k": args.k, "n_episodes": args.episodes,
        "seed": args.seed, "sample_mode": args.mode, "split_mode": args.split,
        "out_path": args.out,
    }
    code, body = _call(args.server, "/datasets", payload)
    if code != EXIT_OK:
        return code
    sizes = body["split_sizes"]
    print(f"world: {body['world_size']} objects")
    print(f"episodes: {body['n_episodes']} "
          f"(train {sizes['train']} / validation {sizes['validation']} / test {sizes['test']})")
    if body["held_out_targets"]:
        print(f"held-out target specs: {body['held_out_targets']}")
    print(f"dataset: {body['dataset_path']}")
    print(f"sha256: {body['dataset_sha256']}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    payload = {
        "dataset_path": args.data,
        "out_dir": args.out,
        **_merge_overrides(args, TRAIN_OVERRIDE_KEYS),
    }
    code, body = _call(args.server, "/runs", payload)
    if code != EXIT_OK:
        return code
    print(f"run: {body['run_dir']}")
    print(f"best epoch {body['best_epoch']} "
          f"(validation accuracy {body['best_val_accuracy']:.4f})")
    print(f"test accuracy {body['test_accuracy']:.4f}, "
          f"distinct symbols {body['distinct_symbols']}")
    if body["stopped_early"]:
        print(f"stopped early after {body['epochs_run']} epochs")
    print(f"checkpoint: {body['checkpoint']}")
    print(f"metrics: {body['metrics']}")
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    if args.analysis == "sweep":
        vocab_sizes, ks = _parse_grid(args.grid)
        payload = {
            "out_dir": args.out,
            "vocab_sizes": vocab_sizes,
            "ks": ks,
            "seeds": _parse_seeds(args.seeds),
            **_merge_overrides(args, TRAIN_OVERRIDE_KEYS + SWEEP_EXTRA_KEYS),
        }
        if args.dataset_seed is not None:
            payload["dataset_seed"] = args.dataset_seed
        payload.pop("seed", None)  # per-run seeds come from --seeds
        code, body = _call(args.server, "/analyses/sweep", payload)
        if code != EXIT_OK:
            return code
        for cell in body["cells"]:
            if not cell["accuracies"]:
                print(f"|V|={cell['vocab_size']:>3} K={cell['k']}: MISSING "
                      f"(failed seeds: {cell['failed_seeds']})")
                continue
            print(f"|V|={cell['vocab_size']:>3} K={cell['k']}: "
                  f"accuracy {cell['mean_accuracy']:.3f} +/- {cell['se_accuracy']:.3f}, "
                  f"distinct {cell['mean_distinct']:.2f} +/- {cell['se_distinct']:.2f}")
        if body["missing_cells"]:
            print(f"missing cells: {body['missing_cells']}")
        print(f"table: {body['csv']}")
        print(f"summary: {body['json']}")
        return EXIT_OK

    payload = {
        "checkpoint": args.ckpt, "dataset": args.data,
        "out_dir": args.out, "split": args.split,
    }
    if args.analysis == "usage":
        code, body = _call(args.server, "/analyses/usage", payload)
        if code != EXIT_OK:
            return code
        print(f"distinct symbols: {body['distinct_count']} of {body['vocab_size']} "
              f"({body['percent_of_vocab']:.2f}% of vocabulary)")
    elif args.analysis == "robustness":
        code, body = _call(args.server, "/analyses/robustness", payload)
        if code != EXIT_OK:
            return code
        print(f"matrix: {body['vocab_size']}x{body['vocab_size']}, "
              f"empty rows: {body['empty_rows'] or 'none'}")
        print(f"diagonal is row argmax: {body['diagonal_is_argmax']}")
    else:
        payload.update({"n_permutations": args.permutations, "seed": args.seed})
        code, body = _call(args.server, "/analyses/permutation", payload)
        if code != EXIT_OK:
            return code
        print(f"agreement with unshuffled correctness: {body['agreement']}")
        print(f"max accuracy delta across shuffles: {body['max_accuracy_delta']}")
    print(f"report: {body['csv']}")
    print(f"summary: {body['json']}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "gen-data":
            return cmd_gen_data(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "analyze":
            return cmd_analyze(args)
        return cmd_serve(args)
    except SystemExit as err:  # argparse or our own explicit exits
        code = err.code
        return code if isinstance(code, int) else EXIT_CONFIGURATION
    except httpx.HTTPError as err:
        print(f"error (transport): {err}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
