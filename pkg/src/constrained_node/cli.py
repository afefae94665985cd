"""Command line entry point: ``constrained-node <subcommand> ...``.

Exit codes: 0 success, 1 when any training run failed, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import datasets as D
from . import harness as H
from .errors import ConfigError, ConstrainedNodeError, ContractError
from .trainer import Strategy, TrainConfig


class _Parser(argparse.ArgumentParser):
    # argparse already exits 2 on usage errors; keep that but never print a traceback
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _csv_list(kind):
    def parse(text):
        try:
            return [kind(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None

    return parse


def _strategy_list(text):
    out = []
    for v in text.split(","):
        try:
            out.append(Strategy(v.strip()).value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"unknown strategy {v!r}") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="constrained-node", description="Two-stage constrained neural ODE training.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate-data", help="write train.csv / test.csv for one split")
    g.add_argument("--dataset", required=True, choices=[D.WPG, D.CR])
    g.add_argument("--experiment", required=True, choices=D.EXPERIMENT_IDS)
    g.add_argument("--out", required=True, type=Path)

    t = sub.add_parser("train", help="one training run from a JSON config")
    t.add_argument("--config", required=True, type=Path)
    t.add_argument("--out", required=True, type=Path)

    e = sub.add_parser("experiment", help="run a grid of strategies x tols x seeds")
    e.add_argument("--dataset", required=True, choices=[D.WPG, D.CR])
    e.add_argument("--experiment", required=True, choices=D.EXPERIMENT_IDS)
    e.add_argument("--strategies", required=True, type=_strategy_list)
    e.add_argument("--tols", type=_csv_list(float), default=list(H.DEFAULT_TOLS))
    e.add_argument("--seeds", type=_csv_list(int), default=list(H.DEFAULT_SEEDS))
    e.add_argument("--out", required=True, type=Path)
    e.add_argument("--config", type=Path, help="base TrainConfig JSON for every run")
    e.add_argument("--k-max", type=int, help="override k_max")
    e.add_argument("--lr", type=float, help="override lr")
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--format", choices=["csv", "markdown"], default="csv")

    r = sub.add_parser("report", help="aggregate report.json files under a directory")
    r.add_argument("--in", dest="inp", required=True, type=Path)
    r.add_argument("--format", choices=["csv", "markdown"], default="csv")
    r.add_argument("--out", type=Path, help="table path (default: <in>/results.<ext>)")
    return p


def _read_config(path: Path) -> dict:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return raw


def _table_path(out: Path, fmt: str) -> Path:
    return out / ("results.csv" if fmt == "csv" else "results.md")


def cmd_generate(args) -> int:
    train, test = D.generate(args.dataset, args.experiment)
    args.out.mkdir(parents=True, exist_ok=True)
    D.write_csv(train, args.out / "train.csv")
    D.write_csv(test, args.out / "test.csv")
    meta = {"dataset": args.dataset, "experiment": args.experiment, "train": train.report, "test": test.report}
    (args.out / "data_report.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(train)} train rows and {len(test)} test rows to {args.out}")
    return 0


def cmd_train(args) -> int:
    raw = _read_config(args.config)
    try:
        dataset = raw.pop("dataset")
        experiment = raw.pop("experiment")
    except KeyError as exc:
        raise ConfigError(f"config is missing {exc.args[0]!r}") from None
    cfg = TrainConfig.from_dict(raw)
    try:
        spec = D.get_spec(dataset, experiment)
    except ContractError as exc:
        raise ConfigError(str(exc)) from None
    reports = H.run_experiment(spec, cfg.strategy, cfg.tol, [cfg.seed], out=args.out, base=cfg)
    return _finish(reports)


def cmd_experiment(args) -> int:
    base = TrainConfig.from_dict(_read_config(args.config)) if args.config else TrainConfig()
    overrides = {}
    if args.k_max is not None:
        overrides["k_max"] = args.k_max
    if args.lr is not None:
        overrides["lr"] = args.lr
    if overrides:
        base = TrainConfig.from_dict({**base.to_dict(), **overrides})
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    reports = H.run_grid(
        args.dataset, args.experiment, args.strategies, args.tols, args.seeds, out=args.out, base=base, jobs=args.jobs
    )
    table = H.emit_table(H.aggregate(reports), args.format, _table_path(args.out, args.format))
    print(f"table: {table}")
    return _finish(reports)


def cmd_report(args) -> int:
    if not args.inp.is_dir():
        raise ConfigError(f"{args.inp} is not a directory")
    reports = H.load_reports(args.inp)
    path = args.out or _table_path(args.inp, args.format)
    H.emit_table(H.aggregate(reports), args.format, path)
    print(f"{len(reports)} runs -> {path}")
    return 0


def _finish(reports) -> int:
    failed = [r for r in reports if not r.ok]
    for r in reports:
        label = f"{r.dataset} {r.experiment} {r.strategy} tol={H.tol_label(r.tol)} seed={r.seed}"
        if r.ok:
            print(f"{label}: MSE={H.sci3(r.test_mse)} V={H.sci3(r.test_v)} ({r.wall_time:.1f}s)")
        else:
            print(f"{label}: FAILED {r.error['type']}: {r.error['message']}", file=sys.stderr)
    return 1 if failed else 0


COMMANDS = {
    "generate-data": cmd_generate,
    "train": cmd_train,
    "experiment": cmd_experiment,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"constrained-node: {exc}", file=sys.stderr)
        return 2
    except ConstrainedNodeError as exc:
        print(f"constrained-node: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
