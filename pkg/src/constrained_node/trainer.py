"""Two-stage training: admissibility stage, then optimization with a
preference-point acceptance rule. Vanilla and L1-penalty baselines share the
same loop.

Every quantity is recomputed from ``(seed, config, data)`` alone, so a
training run is reproducible bit for bit.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from enum import Enum

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, DivergenceError, NonConvergenceError
from .losses import ConstraintSet, LossForm, admissibility_loss, optimization_loss, penalty_loss
from .model import DynamicsNet
from .solvers import IvpProblem, solve_rk4


class Strategy(str, Enum):
    NO_STRATEGY = "noStrategy"
    UPDATE_PREVIOUS = "updatePrevious"
    UPDATE_BEST = "updateBest"
    VANILLA = "vanilla"
    PENALTY = "penalty"

    @property
    def two_stage(self) -> bool:
        return self in (Strategy.NO_STRATEGY, Strategy.UPDATE_PREVIOUS, Strategy.UPDATE_BEST)


@dataclass
class TrainConfig:
    lr: float = 1e-5
    tol: float = 1e-4
    k_min: int = 20
    k_max: int = 10000
    strategy: Strategy = Strategy.UPDATE_PREVIOUS
    loss_form: LossForm = LossForm.SQUARED
    seed: int = 1
    curve_stride: int = 20
    # penalty baseline: mu starts at mu0 and is multiplied by mu_growth every
    # mu_period iterations (0 means k_max // 5)
    mu0: float = 1.0
    mu_growth: float = 10.0
    mu_period: int = 0
    reset_adam_on_reject: bool = False
    carry_adam_state: bool = False
    admissibility_cap_factor: int = 10

    def __post_init__(self):
        try:
            self.strategy = Strategy(self.strategy)
            self.loss_form = LossForm(self.loss_form)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.k_min < 0:
            raise ConfigError("k_min must be >= 0")
        if self.k_max < 1:
            raise ConfigError("k_max must be >= 1")
        if self.curve_stride < 1:
            raise ConfigError("curve_stride must be >= 1")
        if not (self.mu0 > 0 and self.mu_growth >= 1 and self.mu_period >= 0):
            raise ConfigError("bad penalty schedule")
        if self.admissibility_cap_factor < 1:
            raise ConfigError("admissibility_cap_factor must be >= 1")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["strategy"] = self.strategy.value
        out["loss_form"] = self.loss_form.value
        return out

    def mu_at(self, k: int) -> float:
        period = self.mu_period or max(1, self.k_max // 5)
        return self.mu0 * self.mu_growth ** ((k - 1) // period)


# Adam --------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))

    def copy(self) -> "AdamState":
        return copy.deepcopy(self)


def adam_step(theta: np.ndarray, grad: np.ndarray, state: AdamState, lr: float, iteration=None) -> np.ndarray:
    """One bias-corrected Adam update. Mutates ``state``; returns new parameters."""
    if theta.shape != grad.shape or state.m.shape != theta.shape:
        raise ContractError(f"shape mismatch: theta {theta.shape}, grad {grad.shape}, state {state.m.shape}")
    if not np.all(np.isfinite(grad)):
        where = state.step + 1 if iteration is None else iteration
        raise DivergenceError(f"non-finite gradient at iteration {where}", step=where)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * (grad * grad)
    m_hat = state.m / (1.0 - b1**state.step)
    v_hat = state.v / (1.0 - b2**state.step)
    return theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)


# preference points -------------------------------------------------------------


def update_previous(p_prev, p_trial, theta_prev, theta_trial):
    """Keep the previous point if the trial is strictly less admissible."""
    if p_trial > p_prev:
        return theta_prev, p_prev
    return theta_trial, p_trial


def update_best(p_best, p_trial, theta_best, theta_trial):
    """Fall back to the incumbent if the trial is strictly less admissible.

    An accepted trial becomes the new incumbent.
    """
    if p_trial > p_best:
        return theta_best, p_best
    return theta_trial, p_trial


# training data -----------------------------------------------------------------


@dataclass
class TrainData:
    """Targets on the training grid; ``grid[0]`` is the initial condition."""

    grid: np.ndarray
    y0: np.ndarray
    target: np.ndarray

    @classmethod
    def from_series(cls, ts) -> "TrainData":
        return cls(np.asarray(ts.times, dtype=np.float64), ts.states[0].copy(), ts.states[1:].copy())


@dataclass
class _Eval:
    theta: np.ndarray
    tape: ad.Tape
    leaf: ad.Tensor
    traj: object
    loss_I: ad.Tensor
    loss_II: ad.Tensor
    _grads: dict = field(default_factory=dict)

    @property
    def p(self) -> float:
        return self.loss_I.item()

    @property
    def l2(self) -> float:
        return self.loss_II.item()

    def grad(self, which: str, loss: ad.Tensor | None = None) -> np.ndarray:
        if which not in self._grads:
            target = {"I": self.loss_I, "II": self.loss_II}.get(which, loss)
            self._grads[which] = self.tape.backward(target)[self.leaf]
        return self._grads[which]


def _evaluate(net: DynamicsNet, theta: np.ndarray, data: TrainData, cs: ConstraintSet, form) -> _Eval:
    tape = ad.Tape()
    leaf = tape.leaf(theta)
    traj = solve_rk4(IvpProblem(net.bind(leaf), data.y0, data.grid))
    loss_I = admissibility_loss(traj, cs, form)
    loss_II = optimization_loss(traj, data.target)
    return _Eval(theta, tape, leaf, traj, loss_I, loss_II)


# trace ---------------------------------------------------------------------------


@dataclass
class TrainTrace:
    iterations: list = field(default_factory=list)
    loss_II: list = field(default_factory=list)
    loss_I: list = field(default_factory=list)
    admissibility_iterations: int = 0
    admissibility_curve: list = field(default_factory=list)
    p_accepted: list = field(default_factory=list)
    p_best: list = field(default_factory=list)
    rejections: int = 0
    theta_final: np.ndarray | None = None
    theta_start: np.ndarray | None = None
    final_loss_II: float = float("nan")
    final_loss_I: float = float("nan")

    def record(self, k: int, l2: float, l1: float) -> None:
        if not (np.isfinite(l2) and np.isfinite(l1)):
            raise DivergenceError(f"non-finite loss at iteration {k}", step=k, trace=self)
        self.iterations.append(k)
        self.loss_II.append(l2)
        self.loss_I.append(l1)

    def to_csv(self, path) -> None:
        lines = ["iter,loss_II,loss_I"]
        for k, a, b in zip(self.iterations, self.loss_II, self.loss_I):
            lines.append(f"{k},{a:.17g},{b:.17g}")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")


def read_trace_csv(path) -> TrainTrace:
    from .errors import ParseError

    trace = TrainTrace()
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "iter,loss_II,loss_I":
            raise ParseError(f"{path}: bad trace header {header!r}", 1)
        for lineno, line in enumerate(fh, start=2):
            parts = line.strip().split(",")
            try:
                k, a, b = int(parts[0]), float(parts[1]), float(parts[2])
            except (ValueError, IndexError):
                raise ParseError(f"{path}:{lineno}: malformed trace row", lineno) from None
            trace.iterations.append(k)
            trace.loss_II.append(a)
            trace.loss_I.append(b)
    return trace


# stages --------------------------------------------------------------------------


def train_admissibility(net: DynamicsNet, data: TrainData, cs: ConstraintSet, cfg: TrainConfig, theta=None):
    """Minimise the admissibility loss until it drops below ``tol`` after ``k_min`` steps.

    Returns ``(theta_0, steps, adam_state, curve)`` where ``curve`` samples
    ``(k, loss_I)`` every ``curve_stride`` steps.
    """
    theta = net.theta.copy() if theta is None else np.array(theta, dtype=np.float64)
    state = AdamState.zeros(net.n_params)
    cap = cfg.admissibility_cap_factor * cfg.k_max
    best = np.inf
    curve = []
    k = 1
    while True:
        ev = _evaluate(net, theta, data, cs, cfg.loss_form)
        li = ev.p
        if not np.isfinite(li):
            raise DivergenceError(f"non-finite admissibility loss at step {k - 1}", step=k - 1)
        best = min(best, li)
        if (k - 1) % cfg.curve_stride == 0:
            curve.append((k - 1, li))
        if li < cfg.tol and k > cfg.k_min:
            break
        if k - 1 >= cap:
            raise NonConvergenceError(
                f"admissibility stage did not reach tol={cfg.tol:g} in {cap} steps (best {best:.3g})",
                best_loss=best,
                iterations=k - 1,
            )
        theta = adam_step(theta, ev.grad("I"), state, cfg.lr, iteration=k)
        k += 1
    return theta, k - 1, state, curve


def train_optimization(
    net: DynamicsNet,
    theta0,
    data: TrainData,
    cs: ConstraintSet,
    cfg: TrainConfig,
    adam_state: AdamState | None = None,
    trace: TrainTrace | None = None,
) -> TrainTrace:
    """Optimization stage. ``cfg.strategy`` picks the acceptance rule.

    noStrategy, vanilla and penalty accept every trial; penalty descends the
    L1 exact penalty with the scheduled ``mu`` instead of the plain MSE.
    """
    strategy = cfg.strategy
    trace = TrainTrace() if trace is None else trace
    state = AdamState.zeros(net.n_params) if adam_state is None else adam_state
    theta0 = np.array(theta0, dtype=np.float64)
    trace.theta_start = theta0.copy()

    cur = _evaluate(net, theta0, data, cs, cfg.loss_form)
    best = cur
    trace.p_accepted.append(cur.p)
    trace.p_best.append(cur.p)
    trace.record(0, cur.l2, cur.p)

    for k in range(1, cfg.k_max + 1):
        if strategy is Strategy.PENALTY:
            mu = cfg.mu_at(k)
            g = cur.grad(f"pen{mu!r}", penalty_loss(cur.traj, data.target, cs, mu))
        else:
            g = cur.grad("II")
        saved = state.copy() if cfg.reset_adam_on_reject else None
        theta_trial = adam_step(cur.theta, g, state, cfg.lr, iteration=k)
        try:
            trial = _evaluate(net, theta_trial, data, cs, cfg.loss_form)
        except DivergenceError as exc:
            trace.theta_final = cur.theta.copy()
            raise DivergenceError(f"iteration {k}: {exc}", step=k, trace=trace) from exc
        p_trial = trial.p
        if not np.isfinite(p_trial) or not np.isfinite(trial.l2):
            trace.theta_final = cur.theta.copy()
            raise DivergenceError(f"non-finite loss at iteration {k}", step=k, trace=trace)

        if strategy is Strategy.UPDATE_PREVIOUS:
            theta_k, _ = update_previous(cur.p, p_trial, cur.theta, trial.theta)
            accepted = theta_k is trial.theta
            cur = trial if accepted else cur
        elif strategy is Strategy.UPDATE_BEST:
            theta_k, _ = update_best(best.p, p_trial, best.theta, trial.theta)
            accepted = theta_k is trial.theta
            if accepted:
                best = trial
            cur = best
        else:
            accepted = True
            cur = trial

        if not accepted:
            trace.rejections += 1
            if saved is not None:
                state = saved
        trace.p_accepted.append(cur.p)
        trace.p_best.append(best.p if strategy is Strategy.UPDATE_BEST else cur.p)
        if k % cfg.curve_stride == 0:
            trace.record(k, cur.l2, cur.p)

    trace.theta_final = cur.theta.copy()
    trace.final_loss_II = cur.l2
    trace.final_loss_I = cur.p
    return trace


@dataclass
class TrainResult:
    net: DynamicsNet
    trace: TrainTrace
    config: TrainConfig


def train(net: DynamicsNet, data: TrainData, cs: ConstraintSet, cfg: TrainConfig) -> TrainResult:
    """Run the configured method from ``net.theta``; returns the trained network."""
    trace = TrainTrace()
    state = None
    theta0 = net.theta.copy()
    if cfg.strategy.two_stage:
        theta0, steps, stage_state, curve = train_admissibility(net, data, cs, cfg)
        trace.admissibility_iterations = steps
        trace.admissibility_curve = curve
        if cfg.carry_adam_state:
            state = stage_state
    trace = train_optimization(net, theta0, data, cs, cfg, adam_state=state, trace=trace)
    return TrainResult(net.with_params(trace.theta_final), trace, cfg)
