"""Experiment grid: run cells, aggregate seeds, emit tables.

A cell is ``(dataset, experiment, strategy, tol)``. Single-stage strategies
(vanilla, penalty) ignore ``tol``; they are run once per seed and stored
under the tol label ``none``.

Every file written here except ``timing.json`` is a pure function of the
inputs, so repeating an ``experiment`` invocation reproduces it byte for
byte.
"""

from __future__ import annotations

import json
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import datasets as D
from .errors import ConstrainedNodeError
from .losses import cr_constraints, optimization_loss, violation_metric, wpg_constraints
from .model import build_cr_net, build_wpg_net, save_params
from .solvers import IvpProblem, solve_rk4
from .trainer import Strategy, TrainConfig, TrainData, train

STRATEGY_ORDER = ("vanilla", "penalty", "noStrategy", "updatePrevious", "updateBest")
DEFAULT_SEEDS = (1, 2, 3, 4)
DEFAULT_TOLS = (1e-2, 1e-4, 1e-6, 1e-8)


def tol_label(tol) -> str:
    return "none" if tol is None else f"{tol:.0e}"


def sci3(x) -> str:
    """Three significant digits, compact exponent: 0.01588 -> '1.59E-2'."""
    if x is None:
        return "missing"
    if not math.isfinite(x):
        return str(x)
    mant, exp = f"{x:.2E}".split("E")
    return f"{mant}E{int(exp)}"


@dataclass
class RunReport:
    dataset: str
    experiment: str
    strategy: str
    tol: float | None
    seed: int
    test_mse: float | None = None
    test_v: float | None = None
    train_mse: float | None = None
    admissibility_iterations: int = 0
    rejections: int = 0
    wall_time: float = 0.0
    trace_path: str | None = None
    error: dict | None = None
    config: dict = field(default_factory=dict)
    data_report: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_json(self) -> str:
        """Deterministic JSON; wall time is kept out of it on purpose."""
        body = asdict(self)
        body.pop("wall_time")
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls(**json.loads(text))


def constraints_for(dataset: str, train_series):
    if dataset == D.WPG:
        return wpg_constraints(12.0)
    return cr_constraints(D.mass_total(train_series))


def net_for(dataset: str, seed: int):
    return build_wpg_net(seed) if dataset == D.WPG else build_cr_net(seed)


def evaluate(net, series, cs):
    """Test MSE and V of ``net`` solving the IVP from the series' first point."""
    traj = solve_rk4(IvpProblem(net.bind(), series.y0, series.times))
    return optimization_loss(traj, series).item(), violation_metric(traj, cs)


def run_dir(out, report_or_key) -> Path:
    r = report_or_key
    return Path(out) / r.dataset / r.experiment / r.strategy / tol_label(r.tol) / f"seed{r.seed}"


def _run_one(dataset, experiment, cfg_dict, out) -> RunReport:
    cfg = TrainConfig.from_dict(cfg_dict)
    strategy = cfg.strategy
    tol = cfg.tol if strategy.two_stage else None
    report = RunReport(dataset, experiment, strategy.value, tol, cfg.seed, config=cfg.to_dict())
    start = time.perf_counter()
    try:
        train_series, test_series = D.generate(dataset, experiment)
        report.data_report = {"train": train_series.report, "test": test_series.report}
        cs = constraints_for(dataset, train_series)
        net = net_for(dataset, cfg.seed)
        result = train(net, TrainData.from_series(train_series), cs, cfg)
        trace = result.trace
        report.test_mse, report.test_v = evaluate(result.net, test_series, cs)
        report.train_mse = trace.final_loss_II
        report.admissibility_iterations = trace.admissibility_iterations
        report.rejections = trace.rejections
    except ConstrainedNodeError as exc:
        trace = getattr(exc, "trace", None)
        report.error = {"type": type(exc).__name__, "message": str(exc)}
        result = None
    except Exception as exc:  # keep the remaining runs going
        trace = None
        report.error = {
            "type": type(exc).__name__,
            "message": str(exc),
            "traceback": traceback.format_exc(limit=5),
        }
        result = None
    report.wall_time = time.perf_counter() - start

    if out is not None:
        d = run_dir(out, report)
        d.mkdir(parents=True, exist_ok=True)
        if trace is not None and trace.iterations:
            trace.to_csv(d / "trace.csv")
            report.trace_path = str((d / "trace.csv").relative_to(out))
        if result is not None:
            save_params(result.net, d / "params.bin")
        (d / "report.json").write_text(report.to_json(), encoding="utf-8")
        (d / "timing.json").write_text(json.dumps({"wall_time": report.wall_time}) + "\n", encoding="utf-8")
    return report


def plan_runs(dataset, experiment, strategies, tols, seeds, base: TrainConfig | None = None):
    """Expand a grid into per-run config dicts, deduplicating tol-free strategies."""
    seeds = list(seeds)
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")
    base = base or TrainConfig()
    runs = []
    seen = set()
    for st in strategies:
        st = Strategy(st)
        for tol in tols if st.two_stage else (None,):
            for seed in seeds:
                key = (st.value, tol, seed)
                if key in seen:
                    continue
                seen.add(key)
                cfg = base.to_dict()
                cfg.update(strategy=st.value, seed=int(seed))
                if tol is not None:
                    cfg["tol"] = float(tol)
                runs.append(cfg)
    return runs


def run_experiment(spec, strategy, tol, seeds, out=None, base: TrainConfig | None = None, jobs: int = 1):
    """Train and evaluate one cell for every seed; failures are recorded, not raised."""
    return run_grid(spec.dataset, spec.id, [strategy], [tol], seeds, out=out, base=base, jobs=jobs)


def run_grid(dataset, experiment, strategies, tols, seeds, out=None, base=None, jobs: int = 1):
    spec = D.get_spec(dataset, experiment)
    runs = plan_runs(spec.dataset, spec.id, strategies, tols, seeds, base)
    args = [(spec.dataset, spec.id, cfg, out) for cfg in runs]
    if jobs <= 1 or len(args) <= 1:
        return [_run_one(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_run_one, *a) for a in args]
        return [f.result() for f in futures]


def load_reports(root) -> list:
    reports = []
    for path in sorted(Path(root).rglob("report.json")):
        reports.append(RunReport.from_json(path.read_text(encoding="utf-8")))
    return reports


# aggregation ----------------------------------------------------------------


@dataclass(frozen=True)
class CellStats:
    n: int
    n_failed: int
    mse_avg: float | None
    mse_std: float | None
    v_avg: float | None
    v_std: float | None


def _mean_std(values):
    # fsum is exactly rounded, so the result does not depend on input order
    n = len(values)
    m = math.fsum(values) / n
    return m, math.sqrt(math.fsum((v - m) ** 2 for v in values) / n)


@dataclass
class AggregateReport:
    cells: dict = field(default_factory=dict)  # (dataset, experiment, strategy, tol) -> CellStats

    def __getitem__(self, key):
        return self.cells[key]

    def __len__(self):
        return len(self.cells)


def aggregate(reports) -> AggregateReport:
    """Mean and population std of test MSE and V per cell.

    A cell whose runs all failed is kept with ``None`` statistics.
    """
    groups = {}
    for r in reports:
        groups.setdefault((r.dataset, r.experiment, r.strategy, r.tol), []).append(r)
    cells = {}
    for key, runs in groups.items():
        good = [r for r in runs if r.ok]
        failed = len(runs) - len(good)
        if not good:
            cells[key] = CellStats(0, failed, None, None, None, None)
            continue
        mse_avg, mse_std = _mean_std([r.test_mse for r in good])
        v_avg, v_std = _mean_std([r.test_v for r in good])
        cells[key] = CellStats(len(good), failed, mse_avg, mse_std, v_avg, v_std)
    return AggregateReport(dict(sorted(cells.items(), key=lambda kv: _cell_sort_key(kv[0]))))


def _cell_sort_key(key):
    ds, eid, st, tol = key
    rank = STRATEGY_ORDER.index(st) if st in STRATEGY_ORDER else len(STRATEGY_ORDER)
    return (ds, eid, -1.0 if tol is None else -tol, rank, st)


# tables ---------------------------------------------------------------------


def _table(agg: AggregateReport):
    strategies = sorted({k[2] for k in agg.cells}, key=lambda s: (STRATEGY_ORDER.index(s) if s in STRATEGY_ORDER else 99, s))
    header = ["dataset", "experiment", "tol"]
    for st in strategies:
        header += [f"{st} MSE_avg", f"{st} MSE_std", f"{st} V_avg", f"{st} V_std"]
    row_keys = sorted(
        {(k[0], k[1], k[3]) for k in agg.cells if k[3] is not None},
        key=lambda r: (r[0], r[1], -r[2]),
    )
    # experiments with only tol-free strategies still get a row
    free_only = sorted({(k[0], k[1]) for k in agg.cells} - {(r[0], r[1]) for r in row_keys})
    row_keys += [(ds, eid, None) for ds, eid in free_only]
    rows = []
    for ds, eid, tol in row_keys:
        row = [ds, eid, "-" if tol is None else sci3(tol)]
        for st in strategies:
            cell = agg.cells.get((ds, eid, st, tol)) or agg.cells.get((ds, eid, st, None))
            if cell is None:
                row += ["", "", "", ""]
            else:
                row += [sci3(cell.mse_avg), sci3(cell.mse_std), sci3(cell.v_avg), sci3(cell.v_std)]
        rows.append(row)
    return header, strategies, rows


def render_table(agg: AggregateReport, fmt: str = "csv") -> str:
    header, strategies, rows = _table(agg)
    if fmt == "csv":
        lines = [",".join(header)] + [",".join(r) for r in rows]
        return "\n".join(lines) + "\n"
    if fmt == "markdown":
        md_header = ["dataset", "experiment", "tol"]
        for st in strategies:
            md_header += [f"{st} MSE", f"{st} V"]
        lines = ["| " + " | ".join(md_header) + " |", "|" + "---|" * len(md_header)]
        for r in rows:
            cells = r[:3]
            for i in range(len(strategies)):
                m_avg, m_std, v_avg, v_std = r[3 + 4 * i : 7 + 4 * i]
                if not m_avg:
                    cells += ["", ""]
                else:
                    cells += [f"{m_avg} ± {m_std}", f"{v_avg} ± {v_std}"]
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown table format {fmt!r}")


def emit_table(agg: AggregateReport, fmt: str, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_table(agg, fmt))
    return path


def summary(reports) -> dict:
    """Counts used for exit codes and logging."""
    failed = [r for r in reports if not r.ok]
    return {"runs": len(reports), "failed": len(failed)}


__all__ = [
    "AggregateReport",
    "CellStats",
    "RunReport",
    "aggregate",
    "emit_table",
    "evaluate",
    "load_reports",
    "plan_runs",
    "render_table",
    "run_experiment",
    "run_grid",
    "sci3",
    "tol_label",
]
