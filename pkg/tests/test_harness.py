import itertools

import numpy as np
import pytest

from constrained_node import autodiff as ad
from constrained_node import datasets as D
from constrained_node import harness as H
from constrained_node.losses import violation_metric
from constrained_node.solvers import Trajectory
from constrained_node.trainer import TrainConfig, TrainData, train


def rep(mse, v, strategy="vanilla", tol=None, seed=1, experiment="1.0", error=None):
    return H.RunReport("wpg", experiment, strategy, tol, seed, test_mse=mse, test_v=v, error=error)


def test_sci3_rendering():
    assert H.sci3(0.01588) == "1.59E-2"
    assert H.sci3(16.8) == "1.68E1"
    assert H.sci3(1.28) == "1.28E0"
    assert H.sci3(0.0) == "0.00E0"
    assert H.sci3(None) == "missing"


def test_aggregate_examples():
    one = H.aggregate([rep(0.5, 0.25)])
    cell = one[("wpg", "1.0", "vanilla", None)]
    assert (cell.n, cell.mse_avg, cell.mse_std) == (1, 0.5, 0.0)
    two = H.aggregate([rep(1.0, 1.0, seed=1), rep(3.0, 3.0, seed=2)])
    cell = two[("wpg", "1.0", "vanilla", None)]
    assert (cell.mse_avg, cell.mse_std, cell.v_avg, cell.v_std) == (2.0, 1.0, 2.0, 1.0)


def test_aggregate_order_independent():
    reports = [rep(x, x / 3, seed=i, strategy=s, tol=t) for i, (x, s, t) in enumerate(
        [(0.1, "noStrategy", 1e-2), (0.7, "noStrategy", 1e-2), (1e-9, "vanilla", None), (3.3, "noStrategy", 1e-2),
         (0.123456789, "vanilla", None), (5.0, "updateBest", 1e-4)])]
    ref = H.render_table(H.aggregate(reports), "csv")
    for perm in itertools.islice(itertools.permutations(reports), 0, 720, 37):
        assert H.render_table(H.aggregate(list(perm)), "csv") == ref
        assert H.aggregate(list(perm)).cells == H.aggregate(reports).cells


def test_empty_cell_is_missing():
    agg = H.aggregate([rep(None, None, error={"type": "X", "message": "boom"})])
    cell = agg[("wpg", "1.0", "vanilla", None)]
    assert cell.n == 0 and cell.n_failed == 1 and cell.mse_avg is None
    assert "missing" in H.render_table(agg, "csv")


def test_empty_aggregate_header_only(tmp_path):
    path = H.emit_table(H.aggregate([]), "csv", tmp_path / "t.csv")
    assert path.read_text() == "dataset,experiment,tol\n"
    md = H.emit_table(H.aggregate([]), "markdown", tmp_path / "t.md").read_text().splitlines()
    assert len(md) == 2


def test_markdown_and_csv_share_numbers():
    reports = [rep(0.01588, 0.187, seed=1), rep(0.02, 0.3, seed=2), rep(0.5, 0.1, strategy="updatePrevious", tol=1e-4)]
    agg = H.aggregate(reports)
    csv_text = H.render_table(agg, "csv")
    md_text = H.render_table(agg, "markdown")
    numbers = [c for line in csv_text.splitlines()[1:] for c in line.split(",")[3:]]
    assert numbers
    for n in numbers:
        assert n in md_text
    assert csv_text.count("1.79E-2") == 1


def test_vanilla_ignores_tol(tmp_path):
    spec = D.get_spec("wpg", "1.0")
    base = TrainConfig(k_max=20)
    reports = H.run_experiment(spec, "vanilla", 1e-6, [1], out=tmp_path, base=base)
    assert reports[0].tol is None
    assert (tmp_path / "wpg/1.0/vanilla/none/seed1/report.json").exists()
    plan = H.plan_runs("wpg", "1.0", ["vanilla", "noStrategy"], [1e-2, 1e-4], [1, 2])
    assert sum(p["strategy"] == "vanilla" for p in plan) == 2
    assert sum(p["strategy"] == "noStrategy" for p in plan) == 4


def test_reconstruction_mse_equals_final_training_mse(tmp_path):
    spec = D.get_spec("wpg", "1.0")
    for st in ("vanilla", "updatePrevious"):
        (r,) = H.run_experiment(spec, st, 1e-2, [2], base=TrainConfig(k_max=40))
        assert r.ok
        assert r.test_mse == pytest.approx(r.train_mse, rel=1e-12)


def test_run_layout_and_determinism(tmp_path):
    spec = D.get_spec("wpg", "2.1")
    base = TrainConfig(k_max=40)
    files = {}
    for out in (tmp_path / "a", tmp_path / "b"):
        reports = H.run_experiment(spec, "updatePrevious", 1e-4, [1, 2], out=out, base=base)
        assert all(r.ok for r in reports)
        d = out / "wpg/2.1/updatePrevious/1e-04/seed1"
        assert {p.name for p in d.iterdir()} == {"trace.csv", "params.bin", "report.json", "timing.json"}
        H.emit_table(H.aggregate(H.load_reports(out)), "csv", out / "results.csv")
        files[out.name] = {
            p.relative_to(out): p.read_bytes() for p in out.rglob("*") if p.is_file() and p.name != "timing.json"
        }
    assert files["a"] == files["b"]
    assert H.aggregate(H.load_reports(tmp_path / "a")).cells == H.aggregate(H.load_reports(tmp_path / "b")).cells


def test_failed_run_recorded_and_others_proceed(tmp_path):
    # lr so small that stage one cannot reach tol within the 10 * k_max cap
    base = TrainConfig(k_max=3, lr=1e-12, tol=1e-300, k_min=0)
    reports = H.run_grid("wpg", "1.0", ["updatePrevious", "vanilla"], [1e-300], [1], out=tmp_path, base=base)
    by = {r.strategy: r for r in reports}
    assert by["updatePrevious"].error["type"] == "NonConvergenceError"
    assert by["vanilla"].ok
    agg = H.aggregate(reports)
    assert agg[("wpg", "1.0", "updatePrevious", 1e-300)].mse_avg is None
    assert (tmp_path / "wpg/1.0/updatePrevious/1e-300/seed1/report.json").exists()


def test_monotone_admissibility_to_endpoint():
    train_series, _ = D.generate("wpg", "2.0")
    cs = H.constraints_for("wpg", train_series)
    for st in ("updatePrevious", "updateBest"):
        res = train(H.net_for("wpg", 1), TrainData.from_series(train_series), cs, TrainConfig(k_max=60, strategy=st))
        assert res.trace.final_loss_I <= res.trace.p_accepted[0]


def test_cr_constraints_use_t0_mass():
    train_series, _ = D.generate("cr", "1.0")
    cs = H.constraints_for("cr", train_series)
    pred = Trajectory(np.array([1.0]), ad.Tensor([[0.5, 0.5, 0.5, 0.5]]))
    assert violation_metric(pred, cs) == 0.0
