"""World-population (logistic) and chemical-reaction datasets and their splits.

Both generators are deterministic. Grids are ``n_points`` equally spaced
times with both endpoints included; the first point is the initial
condition.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ContractError, ParseError
from .solvers import IvpProblem, solve_dopri5, solve_euler

WPG = "wpg"
CR = "cr"
EXPERIMENT_IDS = ("1.0", "2.0", "2.1", "2.2", "3.0", "3.1", "3.2")
COLUMNS = {WPG: ("t", "P"), CR: ("t", "mA", "mB", "mC", "mD")}


@dataclass(frozen=True)
class WpgParams:
    r: float = 0.026
    K: float = 12.0
    P0: float = 2.518629
    bound: float = 12.0

    def __post_init__(self):
        if not (self.r > 0 and self.K > 0 and self.P0 > 0):
            raise ContractError("r, K and P0 must be positive")

    def analytic(self, t):
        """Closed-form logistic solution."""
        e = np.exp(self.r * np.asarray(t, dtype=np.float64))
        return self.K * self.P0 * e / (self.K + self.P0 * (e - 1.0))


@dataclass(frozen=True)
class CrParams:
    k1: float = 0.1
    k2: float = 0.05
    y0: tuple = (1.0, 1.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.k1 > 0 and self.k2 > 0):
            raise ContractError("rate constants must be positive")
        if any(m < 0 for m in self.y0):
            raise ContractError("initial masses must be non-negative")

    @property
    def m_total(self) -> float:
        return float(sum(self.y0))


def logistic_rhs(params: WpgParams):
    r, K = params.r, params.K

    def f(t, y):
        return r * y * (1.0 - y / K)

    return f


def cr_rhs(params: CrParams):
    """Both reactions combined, term by term."""
    k1, k2 = params.k1, params.k2

    def f(t, y):
        mA, mB, mC, _ = y[0], y[1], y[2], y[3]
        fwd = k1 * mA * mB
        back = k2 * mC
        return ad.stack([-fwd, -fwd + back, fwd - back, back])

    return f


@dataclass(frozen=True)
class Split:
    n_points: int
    t_span: tuple

    def grid(self) -> np.ndarray:
        return np.linspace(self.t_span[0], self.t_span[1], self.n_points)


@dataclass(frozen=True)
class ExperimentSpec:
    id: str
    dataset: str
    train: Split
    test: Split

    @property
    def key(self) -> str:
        return f"{self.dataset}-{self.id}"


def _specs():
    table = {
        WPG: {
            "1.0": (200, 300, 200, 300),
            "2.0": (200, 300, 200, 400),
            "2.1": (100, 300, 200, 400),
            "2.2": (300, 300, 200, 400),
            "3.0": (200, 300, 300, 300),
            "3.1": (100, 300, 300, 300),
            "3.2": (300, 300, 300, 300),
        },
        CR: {
            "1.0": (100, 100, 100, 100),
            "2.0": (100, 100, 100, 200),
            "2.1": (50, 100, 100, 200),
            "2.2": (150, 100, 100, 200),
            "3.0": (100, 100, 200, 100),
            "3.1": (50, 100, 200, 100),
            "3.2": (150, 100, 200, 100),
        },
    }
    out = {}
    for ds, rows in table.items():
        for eid, (ntr, ttr, nte, tte) in rows.items():
            out[(ds, eid)] = ExperimentSpec(
                eid, ds, Split(ntr, (0.0, float(ttr))), Split(nte, (0.0, float(tte)))
            )
    return out


EXPERIMENTS = _specs()


def get_spec(dataset: str, experiment: str) -> ExperimentSpec:
    dataset = dataset.lower()
    experiment = _normalize_id(experiment)
    try:
        return EXPERIMENTS[(dataset, experiment)]
    except KeyError:
        raise ContractError(f"unknown experiment {dataset} {experiment}") from None


def _normalize_id(eid) -> str:
    s = str(eid)
    return s if "." in s else f"{s}.0"


@dataclass
class TimeSeries:
    times: np.ndarray
    states: np.ndarray
    names: tuple = ()
    report: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        if len(self.times) != len(self.states):
            raise ContractError("times and states lengths differ")
        if len(self.times) < 2:
            raise ContractError("a time series needs at least two points")
        self.names = tuple(self.names)

    def __len__(self):
        return len(self.times)

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.names == other.names
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.states, other.states)
        )

    @property
    def y0(self) -> np.ndarray:
        return self.states[0].copy()

    @property
    def dim(self) -> int:
        return self.states.shape[1]


def generate_wpg(spec: ExperimentSpec, params: WpgParams = WpgParams()):
    """Logistic growth integrated by dopri5 (rtol = atol = 1e-8) on each grid."""
    if spec.dataset != WPG:
        raise ContractError(f"{spec.key} is not a WPG experiment")
    f = logistic_rhs(params)
    out = []
    for split in (spec.train, spec.test):
        grid = split.grid()
        traj = solve_dopri5(f, np.array([params.P0]), split.t_span, 1e-8, 1e-8, grid)
        report = {"max_P": float(traj.values.max()), "solver": traj.stats}
        out.append(TimeSeries(grid, traj.values, COLUMNS[WPG][1:], report))
    return tuple(out)


def generate_cr(spec: ExperimentSpec, params: CrParams = CrParams()):
    """Reaction kinetics integrated by explicit Euler, independently per grid.

    Each series' ``report`` holds the measured drift of total mass from its
    initial value, and the test series also records how far train and test
    disagree at the times they share.
    """
    if spec.dataset != CR:
        raise ContractError(f"{spec.key} is not a CR experiment")
    f = cr_rhs(params)
    y0 = np.array(params.y0, dtype=np.float64)
    series = []
    for split in (spec.train, spec.test):
        grid = split.grid()
        traj = solve_euler(IvpProblem(f, y0, grid), fused=False)
        states = np.vstack([y0, traj.values])
        drift = states.sum(axis=1) - params.m_total
        report = {
            "m_total": params.m_total,
            "max_abs_mass_drift": float(np.abs(drift).max()),
            "mean_abs_mass_drift": float(np.abs(drift).mean()),
        }
        series.append(TimeSeries(grid, states, COLUMNS[CR][1:], report))
    train, test = series
    train.report.update(_shared_time_gap(train, test))
    test.report.update(_shared_time_gap(train, test))
    return train, test


def _shared_time_gap(a: TimeSeries, b: TimeSeries) -> dict:
    ia, ib = [], []
    j = 0
    for i, t in enumerate(a.times):
        while j < len(b.times) and b.times[j] < t - 1e-9:
            j += 1
        if j < len(b.times) and abs(b.times[j] - t) <= 1e-9:
            ia.append(i)
            ib.append(j)
    if not ia:
        return {"shared_times": 0, "max_train_test_gap": None}
    gap = np.abs(a.states[ia] - b.states[ib]).max()
    return {"shared_times": len(ia), "max_train_test_gap": float(gap)}


def generate(dataset: str, experiment: str):
    spec = get_spec(dataset, experiment)
    return generate_wpg(spec) if spec.dataset == WPG else generate_cr(spec)


def mass_total(ts: TimeSeries) -> float:
    """Total mass at the first time step."""
    return float(ts.states[0].sum())


# CSV -----------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def write_csv(ts: TimeSeries, path) -> None:
    names = ts.names or tuple(f"y{i}" for i in range(ts.dim))
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t",) + tuple(names))
        for t, row in zip(ts.times, ts.states):
            w.writerow([_fmt(t)] + [_fmt(v) for v in row])


def read_csv(path) -> TimeSeries:
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file", 1)
    header = rows[0]
    if len(header) < 2 or header[0] != "t":
        raise ParseError(f"{path}: header must start with 't'", 1)
    times, states = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}", lineno)
        try:
            vals = [float(v) for v in row]
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-numeric field", lineno) from None
        times.append(vals[0])
        states.append(vals[1:])
    if len(times) < 2:
        raise ParseError(f"{path}: need at least two data rows", len(rows))
    return TimeSeries(np.array(times), np.array(states), tuple(header[1:]))
