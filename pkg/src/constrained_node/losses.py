"""Per-time-step constraints and the losses built from them.

A constraint is a callable mapping the predicted states ``Tensor[N, d]`` to
one value per time step, ``Tensor[N]``. Inequalities are satisfied when the
value is <= 0, equalities when it is exactly 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .errors import AlignmentError, ContractError

Constraint = Callable[[ad.Tensor], ad.Tensor]


class LossForm(str, Enum):
    L1 = "l1"
    SQUARED = "squared"


@dataclass(frozen=True)
class ConstraintSet:
    inequality: Sequence[Constraint] = field(default_factory=tuple)
    equality: Sequence[Constraint] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "inequality", tuple(self.inequality))
        object.__setattr__(self, "equality", tuple(self.equality))

    def evaluate(self, states: ad.Tensor):
        """Constraint values as ``(inequality_values, equality_values)`` lists."""
        n = states.shape[0]
        ineq = [_column(c(states), n) for c in self.inequality]
        eq = [_column(c(states), n) for c in self.equality]
        return ineq, eq


def _column(value, n) -> ad.Tensor:
    value = ad.as_tensor(value)
    if value.shape != (n,):
        raise ContractError(f"constraint must return shape ({n},), got {value.shape}")
    return value


def _states(traj) -> ad.Tensor:
    states = traj.states if hasattr(traj, "states") else ad.as_tensor(traj)
    if states.ndim != 2 or states.shape[0] == 0:
        raise ContractError(f"expected a non-empty [N, d] trajectory, got {states.shape}")
    return states


# constraint factories --------------------------------------------------------


def upper_bound(bound: float, component: int = 0) -> Constraint:
    """``y[component] <= bound``."""

    def c(states):
        return states[:, component] - bound

    c.__name__ = f"y{component}<={bound:g}"
    return c


def total_equals(total: float) -> Constraint:
    """``sum(y) == total`` (conservation-of-mass style)."""

    def c(states):
        return states.sum(axis=1) - total

    c.__name__ = f"sum(y)=={total:g}"
    return c


def wpg_constraints(bound: float = 12.0) -> ConstraintSet:
    return ConstraintSet(inequality=[upper_bound(bound)])


def cr_constraints(m_total: float) -> ConstraintSet:
    return ConstraintSet(equality=[total_equals(m_total)])


# losses ----------------------------------------------------------------------


def admissibility_loss(traj, cs: ConstraintSet, form: LossForm | str = LossForm.SQUARED) -> ad.Tensor:
    """Average total constraint violation.

    ``l1``: sum over constraints of mean ``[c]+`` (inequality) or mean ``|c|``
    (equality). ``squared`` uses the squares of those terms.
    """
    form = LossForm(form)
    states = _states(traj)
    ineq, eq = cs.evaluate(states)
    terms = []
    for v in ineq:
        v = ad.relu_pos(v)
        terms.append((ad.square(v) if form is LossForm.SQUARED else v).mean())
    for v in eq:
        terms.append((ad.square(v) if form is LossForm.SQUARED else ad.abs(v)).mean())
    if not terms:
        return ad.Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def _target_states(traj, target) -> np.ndarray:
    states = _states(traj)
    tgt_states = target.states if hasattr(target, "states") else target
    tgt = np.asarray(getattr(tgt_states, "data", tgt_states), dtype=np.float64)
    times = getattr(traj, "times", None)
    tgt_times = getattr(target, "times", None)
    if times is not None and tgt_times is not None:
        tgt_times = np.asarray(tgt_times)
        if len(tgt_times) == len(times) + 1 and np.allclose(tgt_times[1:], times, rtol=0, atol=1e-9):
            return tgt[1:]
        if len(tgt_times) != len(times) or not np.allclose(tgt_times, times, rtol=0, atol=1e-9):
            raise AlignmentError(
                f"target grid ({len(tgt_times)} points) does not match trajectory grid ({len(times)} points)"
            )
    if tgt.shape != states.shape:
        raise AlignmentError(f"target shape {tgt.shape} != trajectory shape {states.shape}")
    return tgt


def optimization_loss(traj, target) -> ad.Tensor:
    """MSE between predicted states and the target series.

    ``target`` may include the initial point; it is dropped when the grids
    line up that way.
    """
    return ad.mse(_states(traj), ad.Tensor(_target_states(traj, target)))


def total_violation(traj, cs: ConstraintSet) -> ad.Tensor:
    """Sum over constraints and time steps of ``[c]+`` / ``|c|``."""
    states = _states(traj)
    ineq, eq = cs.evaluate(states)
    terms = [ad.relu_pos(v).sum() for v in ineq] + [ad.abs(v).sum() for v in eq]
    if not terms:
        return ad.Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def penalty_loss(traj, target, cs: ConstraintSet, mu: float) -> ad.Tensor:
    """L1 exact penalty: MSE + mu * total violation over all steps."""
    if not mu > 0:
        raise ContractError(f"penalty parameter must be positive, got {mu}")
    return optimization_loss(traj, target) + mu * total_violation(traj, cs)


def violation_metric(traj, cs: ConstraintSet) -> float:
    """Mean over time steps of the summed ``[c]+`` / ``|c|`` violations."""
    states = ad.Tensor(_states(traj).data)
    ineq, eq = cs.evaluate(states)
    per_step = np.zeros(states.shape[0])
    for v in ineq:
        per_step += np.maximum(v.data, 0.0)
    for v in eq:
        per_step += np.abs(v.data)
    return float(per_step.mean())


def is_feasible(traj, cs: ConstraintSet, tol_feas: float = 0.0) -> bool:
    if tol_feas < 0:
        raise ContractError("tol_feas must be non-negative")
    states = ad.Tensor(_states(traj).data)
    ineq, eq = cs.evaluate(states)
    return all(bool(np.all(v.data <= tol_feas)) for v in ineq) and all(
        bool(np.all(np.abs(v.data) <= tol_feas)) for v in eq
    )
