import itertools

import numpy as np
import pytest

from icnnvolt import baseline as bl
from icnnvolt import regulate as rg
from icnnvolt.errors import DimensionMismatch, TooManyDimensions
from icnnvolt.grid import Dataset, Line, Network, make_test_feeder


def linear_data(n_rows=200, n=3, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, 2 * n))
    c = rng.normal(size=n)
    p, q = rng.normal(size=(2, n_rows, n))
    dv = np.hstack([p, q]) @ A.T + c + noise * rng.normal(size=(n_rows, n))
    return Dataset(p, q, dv), A, c


def test_exact_linear_recovery():
    data, A, c = linear_data()
    m = bl.fit_linear(data)
    assert np.allclose(m.A, A, atol=1e-8) and np.allclose(m.c, c, atol=1e-8)
    assert m.rank == 6


def test_constant_targets():
    data, _, _ = linear_data()
    const = Dataset(data.p, data.q, np.full_like(data.dv, 0.25))
    m = bl.fit_linear(const)
    assert np.allclose(m.A, 0, atol=1e-10) and np.allclose(m.c, 0.25)


def test_rank_deficiency_is_reported(caplog):
    data, _, _ = linear_data()
    data.p[:, 0] = 0.0
    with caplog.at_level("INFO"):
        m = bl.fit_linear(data)
    assert m.rank == 5 and "rank" in caplog.text
    assert np.all(np.isfinite(m.A))


def test_linear_model_roundtrip(tmp_path):
    data, _, _ = linear_data()
    m = bl.fit_linear(data)
    m.save(tmp_path / "lin.json")
    back = bl.LinearModel.load(tmp_path / "lin.json")
    assert np.array_equal(back.A, m.A) and np.array_equal(back.c, m.c)


def test_zero_slopes_keep_q0():
    m = bl.LinearModel(np.zeros((2, 4)), np.array([0.1, -0.2]))
    q0 = np.array([0.0, 0.05])
    res = bl.regulate_linear(m, np.zeros(2), q0, bl.linear_regulate_config(
        q_lower=q0 - 0.1, q_upper=q0 + 0.1))
    assert np.array_equal(res.q_star, q0)


def test_kink_optimum():
    # |q - 0.1| with the input laid out as (p, q)
    m = bl.LinearModel(np.array([[0.0, 1.0]]), np.array([-0.1]))
    res = bl.regulate_linear(m, np.zeros(1), np.zeros(1), bl.linear_regulate_config(
        q_lower=np.array([-0.2]), q_upper=np.array([0.2])))
    assert res.q_star[0] == pytest.approx(0.1, abs=1e-4)


def test_three_bus_matches_grid_oracle():
    rng = np.random.default_rng(1)
    for _ in range(5):
        m = bl.LinearModel(rng.normal(size=(3, 6)), rng.normal(scale=0.1, size=3))
        p = rng.normal(scale=0.1, size=3)
        lo = np.array([0.0, -0.2, -0.2])
        hi = np.array([0.0, 0.2, 0.2])
        res = bl.regulate_linear(m, p, np.zeros(3), bl.linear_regulate_config(q_lower=lo, q_upper=hi))
        axis = np.linspace(-0.2, 0.2, 401)
        grid = np.array([[0.0, a, b] for a, b in itertools.product(axis, axis)])
        vals = np.abs(np.hstack([np.broadcast_to(p, grid.shape), grid]) @ m.A.T + m.c).sum(axis=1)
        assert res.objective <= vals.min() + 1e-4


def test_linear_dimension_mismatch():
    m = bl.LinearModel(np.zeros((2, 4)), np.zeros(2))
    with pytest.raises(DimensionMismatch):
        bl.regulate_linear(m, np.zeros(3), np.zeros(3))


def test_oracle_two_bus_scan():
    net = Network(2, (Line(0, 1, 0.02, 0.04),))
    p = np.array([0.0, -0.1])
    lo, hi = np.array([0.0, -0.3]), np.array([0.0, 0.3])
    q_best, best = bl.oracle_regulate(net, p, lo, hi, grid_points=601)
    # a reactive injection offsets the active-power drop: roughly q = r/x * 0.1
    assert q_best[1] == pytest.approx(0.05, abs=5e-3)
    qs = np.linspace(-0.3, 0.3, 601)
    Q = np.column_stack([np.zeros_like(qs), qs])
    vals = bl.true_objective(net, np.broadcast_to(p, Q.shape), Q)
    k = int(np.argmin(vals))
    assert np.all(np.diff(vals[:k + 1]) <= 0) and np.all(np.diff(vals[k:]) >= 0)
    assert best == vals[k]


def test_oracle_midpoint_and_refinement():
    net = make_test_feeder("random_tree", n=4, seed=0)
    p = np.array([0.0, -0.1, -0.2, -0.05])
    lo = np.array([0.0, -0.1, -0.3, 0.0])
    hi = np.array([0.0, 0.1, 0.1, 0.0])
    q_mid, _ = bl.oracle_regulate(net, p, lo, hi, grid_points=1)
    assert np.allclose(q_mid, [0.0, 0.0, -0.1, 0.0])
    _, coarse = bl.oracle_regulate(net, p, lo, hi, grid_points=11)
    _, fine = bl.oracle_regulate(net, p, lo, hi, grid_points=41)
    assert fine <= coarse


def test_oracle_dimension_cap():
    net = make_test_feeder("path_13")
    with pytest.raises(TooManyDimensions):
        bl.oracle_regulate(net, np.zeros(13), -np.full(13, 0.1), np.full(13, 0.1))


def test_icnn_never_beats_oracle_beyond_grid_resolution(small_fit):
    # three free buses on the 13-bus feeder; other buses pinned at q0
    model, test = small_fit["model"], small_fit["test"]
    net = make_test_feeder("path_13")
    for k in range(3):
        lo, hi = rg.reactive_box(test.q[k], qmax=0.03, fixed=[i for i in range(13) if i not in (3, 8, 11)])
        res = rg.regulate(model, test.p[k], test.q[k], rg.RegulateConfig(q_lower=lo, q_upper=hi), net=net)
        _, best = bl.oracle_regulate(net, test.p[k], lo, hi, grid_points=21)
        realized = float(res.realized_deviation.sum())
        # one grid cell (0.003 p.u.) of reactive power moves the objective by well under 1e-3
        assert realized >= best - 1e-3


@pytest.mark.slow
def test_icnn_beats_linear_on_most_instances(desk_pipeline):
    d = desk_pipeline
    icnn_obj = bl.true_objective(d["net"], d["test"].p, d["q_icnn"])
    lin_obj = bl.true_objective(d["net"], d["test"].p, d["q_linear"])
    assert np.mean(icnn_obj <= lin_obj) >= 0.8
