import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from constrained_node import autodiff as ad
from constrained_node.errors import AlignmentError, ContractError
from constrained_node.losses import (
    ConstraintSet,
    LossForm,
    admissibility_loss,
    cr_constraints,
    is_feasible,
    optimization_loss,
    penalty_loss,
    total_equals,
    upper_bound,
    violation_metric,
    wpg_constraints,
)
from constrained_node.solvers import Trajectory


def traj(states, times=None):
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    times = np.arange(1, len(states) + 1, dtype=float) if times is None else np.asarray(times, float)
    return Trajectory(times, ad.Tensor(states))


WPG = wpg_constraints(12.0)
CR = cr_constraints(2.0)


def test_feasible_gives_zero():
    t = traj([3.0, 11.0, 12.0])
    for form in LossForm:
        assert admissibility_loss(t, WPG, form).item() == 0.0


def test_wpg_squared_single_step():
    assert admissibility_loss(traj([13.0]), WPG, "squared").item() == 1.0


def test_cr_squared_single_step():
    val = admissibility_loss(traj([[0.5, 0.5, 0.5, 0.6]]), CR, LossForm.SQUARED).item()
    assert val == pytest.approx(0.01, abs=1e-15)


def test_l1_form_is_mean_of_hinge_and_abs():
    cs = ConstraintSet([upper_bound(1.0)], [total_equals(0.0)])
    t = traj([[2.0, 0.0], [0.0, -3.0]])
    # step 0: hinge 1, |sum| 2; step 1: hinge 0, |sum| 3
    assert admissibility_loss(t, cs, "l1").item() == pytest.approx(0.5 + 2.5)
    assert admissibility_loss(t, cs, "squared").item() == pytest.approx(0.5 + 6.5)


def test_optimization_loss_and_alignment():
    t = traj([[1.0, 1.0], [3.0, 3.0]], times=[1.0, 2.0])
    target = np.array([[1.0, 2.0], [3.0, 5.0]])
    assert optimization_loss(t, target).item() == 1.25

    class Series:
        times = np.array([0.0, 1.0, 2.0])
        states = np.vstack([[9.0, 9.0], target])

    # a target that includes the initial point is aligned by dropping it
    assert optimization_loss(t, Series).item() == 1.25

    class Bad:
        times = np.array([0.0, 0.5])
        states = target

    with pytest.raises(AlignmentError):
        optimization_loss(t, Bad)
    with pytest.raises(AlignmentError):
        optimization_loss(t, np.ones((3, 2)))


def test_penalty_loss():
    t = traj([13.0])
    assert penalty_loss(t, np.array([[12.0]]), WPG, 10.0).item() == 11.0
    feas = traj([11.0, 12.0])
    tgt = np.array([[10.0], [10.0]])
    assert penalty_loss(feas, tgt, WPG, 5.0).item() == optimization_loss(feas, tgt).item()
    for mu in (0.0, -1.0):
        with pytest.raises(ContractError):
            penalty_loss(t, np.array([[12.0]]), WPG, mu)


def test_violation_metric_examples():
    assert violation_metric(traj([1.0, 2.0]), WPG) == 0.0
    assert violation_metric(traj([12.5]), WPG) == 0.5
    assert violation_metric(traj([12.5, 3.0]), WPG) == 0.25


def test_is_feasible_examples():
    assert is_feasible(traj([1.0, 5.0]), WPG, 0.0)
    assert is_feasible(traj([12.0]), WPG, 0.0)
    assert not is_feasible(traj([[1.0, 1.0, 0.0, 0.001]]), CR, 1e-4)
    with pytest.raises(ContractError):
        is_feasible(traj([1.0]), WPG, -1.0)


def test_constraint_shape_contract():
    cs = ConstraintSet([lambda s: s.sum()])
    with pytest.raises(ContractError):
        admissibility_loss(traj([1.0, 2.0]), cs)


def test_gradient_of_admissibility_loss():
    tape = ad.Tape()
    x = tape.leaf([[13.0], [11.0], [14.0]])
    loss = admissibility_loss(Trajectory(np.arange(3.0), x), WPG, "squared")
    np.testing.assert_allclose(tape.backward(loss)[x], [[2 / 3], [0.0], [4 / 3]])


states_2d = st.lists(
    st.lists(st.floats(-20, 20, allow_nan=False), min_size=3, max_size=3), min_size=1, max_size=6
)


def _mixed_cs(order):
    cons = [upper_bound(1.0, 0), upper_bound(-0.5, 2), total_equals(0.3)]
    picked = [cons[i] for i in order]
    ineq = [c for c in picked if "<=" in c.__name__]
    eq = [c for c in picked if "==" in c.__name__]
    return ConstraintSet(ineq, eq)


@settings(max_examples=60, deadline=None)
@given(states_2d)
def test_l1_zero_iff_feasible(rows):
    t = traj(rows)
    cs = _mixed_cs([0, 1, 2])
    assert (admissibility_loss(t, cs, "l1").item() == 0.0) == is_feasible(t, cs, 0.0)


@settings(max_examples=60, deadline=None)
@given(states_2d, st.floats(1e-3, 1e3))
def test_penalty_dominates_mse(rows, mu):
    t = traj(rows)
    cs = _mixed_cs([0, 1, 2])
    tgt = np.zeros_like(t.values)
    pen = penalty_loss(t, tgt, cs, mu).item()
    mse = optimization_loss(t, tgt).item()
    assert pen >= mse
    assert (pen == mse) == is_feasible(t, cs, 0.0)


@settings(max_examples=60, deadline=None)
@given(states_2d)
def test_violation_metric_equals_l1_loss(rows):
    t = traj(rows)
    cs = _mixed_cs([0, 1, 2])
    assert abs(violation_metric(t, cs) - admissibility_loss(t, cs, "l1").item()) <= 1e-12 * max(
        1.0, violation_metric(t, cs)
    )


@settings(max_examples=40, deadline=None)
@given(states_2d, st.permutations([0, 1, 2]))
def test_losses_invariant_under_constraint_order(rows, order):
    t = traj(rows)
    a, b = _mixed_cs([0, 1, 2]), _mixed_cs(order)
    tgt = np.zeros_like(t.values)
    for form in LossForm:
        assert admissibility_loss(t, a, form).item() == pytest.approx(admissibility_loss(t, b, form).item(), rel=1e-15)
    assert violation_metric(t, a) == pytest.approx(violation_metric(t, b), rel=1e-15)
    assert penalty_loss(t, tgt, a, 2.0).item() == pytest.approx(penalty_loss(t, tgt, b, 2.0).item(), rel=1e-15)
