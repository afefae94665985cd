import numpy as np
import pytest

from constrained_node import datasets as D
from constrained_node.errors import ContractError, ParseError

# train (n, t_end), test (n, t_end) per experiment; all spans start at 0
SPLITS = {
    "wpg": {
        "1.0": ((200, 300), (200, 300)),
        "2.0": ((200, 300), (200, 400)),
        "2.1": ((100, 300), (200, 400)),
        "2.2": ((300, 300), (200, 400)),
        "3.0": ((200, 300), (300, 300)),
        "3.1": ((100, 300), (300, 300)),
        "3.2": ((300, 300), (300, 300)),
    },
    "cr": {
        "1.0": ((100, 100), (100, 100)),
        "2.0": ((100, 100), (100, 200)),
        "2.1": ((50, 100), (100, 200)),
        "2.2": ((150, 100), (100, 200)),
        "3.0": ((100, 100), (200, 100)),
        "3.1": ((50, 100), (200, 100)),
        "3.2": ((150, 100), (200, 100)),
    },
}


def test_fourteen_specs():
    assert len(D.EXPERIMENTS) == 14


@pytest.mark.parametrize("dataset,eid", [(d, e) for d in SPLITS for e in SPLITS[d]])
def test_split_table(dataset, eid):
    spec = D.get_spec(dataset, eid)
    (ntr, ttr), (nte, tte) = SPLITS[dataset][eid]
    assert (spec.train.n_points, spec.train.t_span) == (ntr, (0.0, ttr))
    assert (spec.test.n_points, spec.test.t_span) == (nte, (0.0, tte))
    train, test = D.generate(dataset, eid)
    assert len(train) == ntr and len(test) == nte
    assert train.times[0] == 0.0 and train.times[-1] == ttr
    np.testing.assert_allclose(np.diff(test.times), tte / (nte - 1), rtol=1e-12)


def test_get_spec_normalizes_ids():
    assert D.get_spec("WPG", 2) is D.get_spec("wpg", "2.0")
    with pytest.raises(ContractError):
        D.get_spec("wpg", "4.0")


@pytest.mark.parametrize("eid", D.EXPERIMENT_IDS)
def test_wpg_data_properties(eid):
    p = D.WpgParams()
    for ts in D.generate("wpg", eid):
        P = ts.states[:, 0]
        assert P[0] == 2.518629
        assert np.all(np.diff(P) > 0)
        assert P.max() <= 12 + 1e-9
        assert np.max(np.abs(P - p.analytic(ts.times))) < 1e-6


def test_wpg_p300_matches_closed_form():
    train, _ = D.generate("wpg", "1.0")
    assert abs(train.states[-1, 0] - 11.981519153133421) < 1e-6


@pytest.mark.parametrize("eid", D.EXPERIMENT_IDS)
def test_cr_data_properties(eid):
    for ts in D.generate("cr", eid):
        np.testing.assert_array_equal(ts.states[0], [1.0, 1.0, 0.0, 0.0])
        assert np.all(ts.states[:, 2] >= 0)
        assert np.all(np.diff(ts.states[:, 3]) >= 0)
        assert D.mass_total(ts) == 2.0


def test_cr_first_euler_step():
    train, _ = D.generate("cr", "1.0")
    h = 100 / 99
    assert train.states[1, 0] == pytest.approx(1 - 0.1 * h, abs=1e-15)
    assert train.states[1, 0] == pytest.approx(0.89899, abs=1e-5)
    assert train.states[1, 3] == 0.0


def test_cr_mass_drift_reported():
    train, test = D.generate("cr", "2.0")
    drift = np.abs(train.states.sum(axis=1) - 2.0)
    assert train.report["max_abs_mass_drift"] == pytest.approx(drift.max())
    # the kinetics as written satisfy sum(m) = 2 - mC exactly
    np.testing.assert_allclose(train.states.sum(axis=1), 2.0 - train.states[:, 2], atol=1e-12)
    assert train.report["max_abs_mass_drift"] > 0.1
    assert "max_train_test_gap" in test.report


def test_generation_is_bit_deterministic():
    for ds in ("wpg", "cr"):
        a = D.generate(ds, "2.1")
        b = D.generate(ds, "2.1")
        assert a[0] == b[0] and a[1] == b[1]


def test_csv_round_trip_and_headers(tmp_path):
    for ds, header in (("wpg", "t,P"), ("cr", "t,mA,mB,mC,mD")):
        train, _ = D.generate(ds, "1.0")
        path = tmp_path / f"{ds}.csv"
        D.write_csv(train, path)
        raw = path.read_bytes()
        assert raw.decode().splitlines()[0] == header
        assert b"\r" not in raw
        assert D.read_csv(path) == train


def test_csv_parse_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,P\n0,1\n1,abc\n")
    with pytest.raises(ParseError) as exc:
        D.read_csv(p)
    assert exc.value.offset == 3
    p.write_text("t,P\n0,1\n1,2,3\n")
    with pytest.raises(ParseError) as exc:
        D.read_csv(p)
    assert exc.value.offset == 3
    p.write_text("x,P\n0,1\n")
    with pytest.raises(ParseError):
        D.read_csv(p)


def test_param_validation():
    with pytest.raises(ContractError):
        D.WpgParams(r=-1.0)
    with pytest.raises(ContractError):
        D.CrParams(k1=0.0)
    with pytest.raises(ContractError):
        D.CrParams(y0=(-1.0, 1.0, 0.0, 0.0))
