"""Command-line client for the lab service.

Every subcommand builds a JSON request and sends it to the HTTP service: by
default an in-process instance (no server needed), or a remote one via
``--server URL``.  Config files are JSON trees matching the service schemas;
outputs are plain text and files the ``report`` subcommand can aggregate.

Subcommands: train, attack, trial, matrix, defend, report, serve.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import httpx


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import create_app
    return TestClient(create_app(), base_url="http://lab")


def _post(args, path: str, payload: dict) -> dict:
    with _client(args.server) as client:
        resp = client.post(path, json=payload)
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        sys.exit(f"error ({resp.status_code}): {detail}")
    return resp.json()


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _apply_sets(tree: dict, assignments: list[str]) -> dict:
    """Apply key.path=value overrides; values parse as JSON when they can."""
    for item in assignments:
        key, sep, raw = item.partition("=")
        if not sep:
            sys.exit(f"bad --set {item!r}: expected key.path=value")
        try:
            value = json.loads(raw)
        except ValueError:
            value = raw
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return tree


def _emit(args, payload: dict) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> None:
    body = _apply_sets(_load_config(args.config), args.set)
    out = _post(args, "/train", body)
    _emit(args, out)
    if not args.json:
        print(f"method {out['method']}  epochs {out['epochs']}")
        print(f"final test acc {out['final_test_acc']:.4f}  "
              f"best {out['best_test_acc']:.4f}")
        print(f"wall {out['wall_time_s']:.1f}s")


def cmd_attack(args) -> None:
    body = _apply_sets(_load_config(args.config), args.set)
    if args.out is not None:
        body["out_path"] = args.out
    out = _post(args, "/attack", body)
    _emit(args, out)
    if not args.json:
        print(f"{out['n_points']} points (main bridge {out['n_main']}), "
              f"density {out['density']}, vetted {out['vetted']}")
        print(f"target test[{out['target_test_index']}]: "
              f"{out['true_class']} -> {out['y_target']}")
        if out["out_path"]:
            print(f"written to {out['out_path']}")


def cmd_trial(args) -> None:
    body = _apply_sets(_load_config(args.config), args.set)
    if args.outdir is not None:
        body["outdir"] = args.outdir
    out = _post(args, "/trial", body)
    _emit(args, out)
    if not args.json:
        s = out["summary"]
        print(f"attack_success {s['attack_success']}  "
              f"test_acc {s['test_acc']:.4f}  "
              f"spearman {s['spearman']}")
        for name, res in sorted(s.get("defenses", {}).items()):
            print(f"defense {name}: {len(res['flagged'])} flagged, "
                  f"tpr {res['tpr']:.2f} fpr {res['fpr']:.4f}")
        if out["outdir"]:
            print(f"artifacts in {out['outdir']}")


def cmd_matrix(args) -> None:
    body = _load_config(args.config)
    if args.parallelism is not None:
        body["parallelism"] = args.parallelism
    out = _post(args, "/matrix", body)
    _emit(args, out)
    if not args.json:
        print(out["table"], end="")


def cmd_defend(args) -> None:
    body = {"dataset_path": args.dataset, "defenses": args.defense,
            "influence_k": args.k}
    if args.trace is not None:
        body["trace_path"] = args.trace
    if args.planted is not None:
        body["planted"] = json.loads(Path(args.planted).read_text())
    out = _post(args, "/defend", body)
    _emit(args, out)
    if not args.json:
        for name, rep in sorted(out["reports"].items()):
            line = f"{name}: {len(rep['flagged'])} flagged"
            if rep.get("tpr") is not None:
                line += f"  tpr {rep['tpr']:.2f} fpr {rep['fpr']:.4f}"
            print(line)
            if rep["flagged"]:
                print(f"  indices {rep['flagged']}")


def cmd_report(args) -> None:
    out = _post(args, "/report", {"run_dirs": args.run_dir})
    _emit(args, out)
    if not args.json:
        print(out["table"], end="")
    if args.csv is not None:
        Path(args.csv).write_text(out["csv"])
        if not args.json:
            print(f"csv written to {args.csv}")


def cmd_serve(args) -> None:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poisonlab",
        description=__doc__.splitlines()[0])
    parser.add_argument("--server", default=None,
                        help="service URL (default: run in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(fn=fn)
        p.add_argument("--json", action="store_true",
                       help="print the raw JSON response")
        return p

    p = add("train", cmd_train, "one SSL training run")
    p.add_argument("--config", help="JSON config file (train request tree)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VAL",
                   help="override a config field, e.g. trainer.epochs=20")

    p = add("attack", cmd_attack, "plan a poison set and save it")
    p.add_argument("--config", help="JSON config file (attack request tree)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VAL")
    p.add_argument("--out", help="write the poison set to this file")

    p = add("trial", cmd_trial, "full pipeline: poison, train, defend")
    p.add_argument("--config", help="JSON config file (trial tree)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VAL")
    p.add_argument("--outdir", help="write run artifacts to this directory")

    p = add("matrix", cmd_matrix, "run a grid of trials from a config file")
    p.add_argument("config", help="JSON file: {\"trials\": [trial trees]}")
    p.add_argument("--parallelism", type=int, default=None)

    p = add("defend", cmd_defend, "run defenses on saved dataset/trace")
    p.add_argument("dataset", help="dataset.txt from a run directory")
    p.add_argument("--trace", help="trace.txt (needed for influence)")
    p.add_argument("--defense", action="append",
                   default=None, choices=("collinear", "influence", "cluster"),
                   help="repeatable; default collinear")
    p.add_argument("--k", type=int, default=5, help="influence neighbor count")
    p.add_argument("--planted", help="JSON file of planted indices (for TPR/FPR)")

    p = add("report", cmd_report, "aggregate run directories into tables")
    p.add_argument("run_dir", nargs="+", help="run directories to summarize")
    p.add_argument("--csv", help="also write per-run rows to this CSV file")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.set_defaults(fn=cmd_serve)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)

    return parser


def main(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    if getattr(args, "defense", "missing") is None:
        args.defense = ["collinear"]
    args.fn(args)


if __name__ == "__main__":
    main()
