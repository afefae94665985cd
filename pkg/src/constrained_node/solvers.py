"""Initial value problem solvers.

Fixed-step Euler and RK4 run on the tape so trajectories can be
differentiated with respect to network parameters and the initial state.
When the right-hand side is a bound :class:`~constrained_node.model.DynamicsNet`
whose layout the compiled kernels support, the whole integration is recorded
as a single tape node whose backward pass is the exact reverse sweep through
the solver steps. ``fused=False`` forces the op-by-op path.

``solve_dopri5`` is an adaptive Dormand-Prince 5(4) integrator on plain
arrays, used for data generation only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from ._kernels import rk_backward, rk_forward
from .errors import ContractError, DivergenceError, ShapeError, StiffnessError
from .model import BoundDynamics

EULER = (np.zeros((1, 1)), np.array([1.0]))
RK4 = (
    np.array(
        [
            [0.0, 0.0, 0.0, 0.0],
            [0.5, 0.0, 0.0, 0.0],
            [0.0, 0.5, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ]
    ),
    np.array([1.0, 2.0, 2.0, 1.0]) / 6.0,
)
RK4_C = np.array([0.0, 0.5, 0.5, 1.0])


@dataclass
class IvpProblem:
    dynamics: object
    y0: ad.Tensor
    t_grid: np.ndarray

    def __post_init__(self):
        self.y0 = ad.as_tensor(self.y0)
        self.t_grid = np.asarray(self.t_grid, dtype=np.float64)
        if self.y0.ndim != 1:
            raise ShapeError(f"y0 must be 1-D, got shape {self.y0.shape}")
        if self.t_grid.ndim != 1 or self.t_grid.size < 2:
            raise ContractError("t_grid needs at least two points")
        if not np.all(np.diff(self.t_grid) > 0):
            raise ContractError("t_grid must be strictly increasing")
        dim = getattr(self.dynamics, "state_dim", None)
        if dim is not None and dim != self.y0.shape[0]:
            raise ShapeError(f"dynamics dim {dim} != len(y0) {self.y0.shape[0]}")


@dataclass
class Trajectory:
    times: np.ndarray
    states: ad.Tensor
    stats: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    @property
    def values(self) -> np.ndarray:
        return self.states.data


def solve_euler(p: IvpProblem, fused: bool | None = None) -> Trajectory:
    return _solve_fixed(p, EULER, np.zeros(1), fused)


def solve_rk4(p: IvpProblem, fused: bool | None = None) -> Trajectory:
    return _solve_fixed(p, RK4, RK4_C, fused)


def _solve_fixed(p: IvpProblem, tableau, c, fused) -> Trajectory:
    dyn = p.dynamics
    can_fuse = isinstance(dyn, BoundDynamics) and dyn.net.fused_layout() is not None
    if fused and not can_fuse:
        raise ContractError("fused integration needs a DynamicsNet with a supported layout")
    if fused is None:
        fused = can_fuse
    if fused:
        states = _fused_solve(dyn, p.y0, p.t_grid, tableau)
    else:
        states = _generic_solve(dyn, p.y0, p.t_grid, tableau, c)
    return Trajectory(p.t_grid[1:].copy(), states)


def _generic_solve(f, y0: ad.Tensor, grid, tableau, c) -> ad.Tensor:
    A, bw = tableau
    y = y0
    rows = []
    for n in range(len(grid) - 1):
        t = grid[n]
        h = grid[n + 1] - t
        ks = []
        for s in range(len(bw)):
            stage = y
            for j in range(s):
                if A[s, j] != 0.0:
                    stage = stage + (h * A[s, j]) * ks[j]
            ks.append(ad.as_tensor(f(t + c[s] * h, stage)))
        incr = None
        for s, k in enumerate(ks):
            if bw[s] == 0.0:
                continue
            term = (h * bw[s]) * k
            incr = term if incr is None else incr + term
        y = y + incr
        if not np.all(np.isfinite(y.data)):
            raise DivergenceError(f"non-finite state at step {n + 1} (t={grid[n + 1]:g})", step=n + 1)
        rows.append(y)
    return ad.stack(rows)


def _fused_solve(dyn: BoundDynamics, y0: ad.Tensor, grid, tableau) -> ad.Tensor:
    A, bw = tableau
    net = dyn.net
    layout = net.fused_layout()
    theta = np.ascontiguousarray(dyn.params.data)
    y0d = np.ascontiguousarray(y0.data, dtype=np.float64)
    d = y0d.shape[0]
    n_steps = len(grid) - 1
    width = d + int(layout[3].sum())
    store = np.empty((n_steps, len(bw), width))
    out = np.empty((n_steps, d))
    bad = rk_forward(theta, *layout, y0d, grid, A, bw, store, out)
    if bad >= 0:
        raise DivergenceError(f"non-finite state at step {bad + 1} (t={grid[bad + 1]:g})", step=bad + 1)

    def vjp(g):
        gtheta, gy0 = rk_backward(theta, *layout, grid, A, bw, store, np.ascontiguousarray(g))
        return gtheta, gy0

    return ad.custom_op(out, (dyn.params, y0), vjp)


# Dormand-Prince 5(4) ---------------------------------------------------------

_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# fifth-order minus embedded fourth-order weights, over all seven stages (FSAL)
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# Shampine's quartic dense output: y(t0 + x h) = y0 + h * K^T @ P @ [x, x^2, x^3, x^4]
_DP_P = np.array(
    [
        [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


def _plain(f):
    def call(t, y):
        out = f(t, y)
        if isinstance(out, ad.Tensor):
            out = out.data
        return np.asarray(out, dtype=np.float64).reshape(y.shape)

    return call


def solve_dopri5(dynamics, y0, t_span, rtol=1e-8, atol=1e-8, output_grid=None) -> Trajectory:
    """Adaptive Dormand-Prince 5(4) with quartic dense output.

    ``output_grid`` (default: the two endpoints) must lie inside ``t_span``;
    the returned trajectory has one row per output point, so a grid starting
    at ``t_span[0]`` reproduces ``y0`` in its first row. Not differentiable.
    """
    if rtol <= 0 or atol <= 0:
        raise ContractError("rtol and atol must be positive")
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ContractError("t_span must be increasing")
    f = _plain(dynamics)
    y = np.array(ad.as_tensor(y0).data, dtype=np.float64).reshape(-1)
    grid = np.array([t0, t1] if output_grid is None else output_grid, dtype=np.float64)
    if grid.size and (grid[0] < t0 or grid[-1] > t1 or np.any(np.diff(grid) < 0)):
        raise ContractError("output_grid must be sorted and inside t_span")

    span = t1 - t0
    h = span / 100.0
    h_min = 1e-12 * span
    out = np.empty((grid.size, y.size))
    gi = 0
    while gi < grid.size and grid[gi] <= t0:
        out[gi] = y
        gi += 1

    t = t0
    K = np.empty((7, y.size))
    K[0] = f(t, y)
    n_acc = n_rej = 0
    nfev = 1
    rejected = False
    while t < t1:
        if h < h_min:
            raise StiffnessError(f"step size {h:g} below {h_min:g} at t={t:g}")
        last = t + h >= t1
        if last:
            h = t1 - t
        for s in range(1, 6):
            ys = y + h * (np.asarray(_DP_A[s]) @ K[:s])
            K[s] = f(t + _DP_C[s] * h, ys)
        y_new = y + h * (_DP_B @ K[:6])
        K[6] = f(t + h, y_new)
        nfev += 6
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.sqrt(np.mean((h * (_DP_E @ K) / scale) ** 2))
        if not np.isfinite(err):
            err = np.inf

        if err <= 1.0:
            t_new = t1 if last else t + h
            if gi < grid.size:
                Q = K.T @ _DP_P
                while gi < grid.size and grid[gi] <= t_new:
                    x = (grid[gi] - t) / h
                    out[gi] = y + h * (Q @ np.array([x, x * x, x**3, x**4]))
                    gi += 1
            t = t_new
            y = y_new
            K[0] = K[6]
            n_acc += 1
            factor = MAX_FACTOR if err == 0 else SAFETY * err ** (-0.2)
            factor = min(MAX_FACTOR, max(MIN_FACTOR, factor))
            if rejected:
                factor = min(1.0, factor)
            rejected = False
            h *= factor
        else:
            n_rej += 1
            rejected = True
            factor = 0.2 if not math.isfinite(err) else SAFETY * err ** (-0.2)
            h *= max(MIN_FACTOR, factor)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("non-finite state in dopri5 output")
    stats = {"accepted": n_acc, "rejected": n_rej, "nfev": nfev}
    return Trajectory(grid, ad.Tensor(out), stats)
