import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from icnnvolt.errors import InvalidNetwork, NonConvergence, TooManyRejections, VoltageCollapse
from icnnvolt.grid import (
    Dataset, Injection, Line, LoadProfileConfig, Network, equation_residuals, generate_dataset,
    make_test_feeder, solve_power_flow, solve_voltages,
)
from oracles import two_bus_closed_form


def two_bus(r=0.01, x=0.01):
    return Network(2, (Line(0, 1, r, x),))


def path(n, r=0.01, x=0.01):
    return Network(n, tuple(Line(i, i + 1, r, x) for i in range(n - 1)))


def test_two_bus_no_load_is_flat():
    sol = solve_power_flow(two_bus(), Injection(np.zeros(2), np.zeros(2)))
    assert np.array_equal(sol.v, [1.0, 1.0])
    assert not sol.p_flow.any() and not sol.q_flow.any() and not sol.l.any()


def test_two_bus_matches_closed_form():
    sol = solve_power_flow(two_bus(), Injection([0, -0.1], [0, -0.1]))
    v2, P, Q, l = two_bus_closed_form(0.01, 0.01, -0.1, -0.1)
    assert sol.v[1] == pytest.approx(v2, abs=1e-10)
    assert sol.p_flow[1] == pytest.approx(P, abs=1e-10)
    assert sol.q_flow[1] == pytest.approx(Q, abs=1e-10)
    assert sol.l[1] == pytest.approx(l, abs=1e-10)


def test_four_bus_path_residuals():
    rng = np.random.default_rng(0)
    net = path(4)
    for _ in range(20):
        p, q = rng.uniform(-0.1, 0, 4), rng.uniform(-0.1, 0, 4)
        sol = solve_power_flow(net, Injection(p, q))
        assert max(equation_residuals(net, Injection(p, q), sol).values()) < 1e-8


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 30), seed=st.integers(0, 10_000))
def test_random_tree_residual_certificate(n, seed):
    net = make_test_feeder("random_tree", n=n, seed=seed)
    rng = np.random.default_rng(seed)
    inj = Injection(rng.uniform(-0.05, 0.02, n), rng.uniform(-0.05, 0.02, n))
    sol = solve_power_flow(net, inj, tol=1e-12)
    assert sol.converged
    assert max(equation_residuals(net, inj, sol).values()) < 1e-8


def test_feeders():
    net = make_test_feeder("path_13")
    assert net.n_buses == 13 and len(net.lines) == 12
    big = make_test_feeder("random_tree", n=123, seed=5)
    assert big.n_buses == 123 and len(big.lines) == 122
    assert big == make_test_feeder("random_tree", n=123, seed=5)
    assert big != make_test_feeder("random_tree", n=123, seed=6)
    rs = np.array([ln.r for ln in big.lines] + [ln.x for ln in big.lines])
    assert rs.min() >= 0.005 and rs.max() <= 0.05


def test_random_tree_rejects_small_n():
    with pytest.raises(ValueError):
        make_test_feeder("random_tree", n=1)


@pytest.mark.parametrize("lines", [
    [(0, 1), (1, 2), (2, 1)],        # cycle
    [(0, 1), (2, 3), (3, 2)],        # disconnected with a cycle
    [(0, 1), (1, 2)],                # too few lines for 4 buses
])
def test_invalid_networks(lines):
    with pytest.raises(InvalidNetwork):
        Network.from_dict({"n_buses": 4, "lines": [{"from": a, "to": b, "r": 0.01, "x": 0.01}
                                                   for a, b in lines]})


def test_nonpositive_impedance_rejected():
    with pytest.raises(InvalidNetwork):
        Network(2, (Line(0, 1, 0.0, 0.01),))


def test_network_json_roundtrip(tmp_path):
    net = make_test_feeder("random_tree", n=9, seed=3)
    net.save(tmp_path / "n.json")
    assert Network.load(tmp_path / "n.json") == net


def test_unoriented_edges_are_reoriented():
    d = {"n_buses": 3, "lines": [{"from": 2, "to": 1, "r": 0.01, "x": 0.02},
                                 {"from": 1, "to": 0, "r": 0.01, "x": 0.02}]}
    net = Network.from_dict(d)
    assert list(net.parent) == [-1, 0, 1]


def test_voltage_collapse():
    with pytest.raises(VoltageCollapse):
        solve_power_flow(two_bus(0.1, 0.1), Injection([0, -5.0], [0, -5.0]))


def test_nonconvergence_reports_residual():
    with pytest.raises(NonConvergence) as exc:
        solve_power_flow(path(5), Injection(np.full(5, -0.3), np.full(5, -0.3)), max_iter=2)
    assert exc.value.residual > 0 and exc.value.iterations == 2


def test_bad_tolerance():
    with pytest.raises(ValueError):
        solve_power_flow(two_bus(), Injection([0, 0], [0, 0]), tol=0)


def test_zero_injection_fixed_point_is_exact():
    net = make_test_feeder("path_13")
    sol = solve_power_flow(net, Injection(np.zeros(13), np.zeros(13)))
    assert np.all(sol.v == net.slack_voltage)


def test_monotone_reactive_loading():
    net = two_bus()
    v = [solve_power_flow(net, Injection([0, -0.05], [0, -q])).v[1]
         for q in np.linspace(0, 0.5, 20)]
    assert np.all(np.diff(v) <= 0)


def test_batched_solver_matches_single():
    net = make_test_feeder("path_13")
    rng = np.random.default_rng(1)
    p, q = rng.uniform(-0.05, 0, (5, 13)), rng.uniform(-0.05, 0, (5, 13))
    v, ok = solve_voltages(net, p, q)
    assert ok.all()
    for k in range(5):
        assert np.allclose(v[k], solve_power_flow(net, Injection(p[k], q[k])).v, atol=1e-12)


def test_dataset_zero_variance_profile():
    prof = LoadProfileConfig(p_base_range=(0.0, 0.0), pv_capacity=0.0, q_excitation=0.0)
    data = generate_dataset(make_test_feeder("path_13"), prof, 1, seed=0)
    assert len(data) == 1 and not data.dv.any()


def test_dataset_determinism_and_csv_roundtrip(tmp_path):
    net = make_test_feeder("path_13")
    a = generate_dataset(net, LoadProfileConfig(), 50, seed=4)
    b = generate_dataset(net, LoadProfileConfig(), 50, seed=4)
    assert np.array_equal(a.p, b.p) and np.array_equal(a.dv, b.dv)
    a.to_csv(tmp_path / "d.csv")
    c = Dataset.from_csv(tmp_path / "d.csv")
    assert np.array_equal(a.inputs, c.inputs) and np.array_equal(a.dv, c.dv)
    assert a.header()[0] == "p_1" and a.header()[-1] == "dv_13"


def test_dataset_rows_reproduce_power_flow():
    net = make_test_feeder("path_13")
    data = generate_dataset(net, LoadProfileConfig(), 10_000, seed=9)
    assert len(data) == 10_000
    # spot-check with the scalar solver, the rest with the batched one
    for k in range(0, 10_000, 500):
        sol = solve_power_flow(net, Injection(data.p[k], data.q[k]))
        assert np.allclose(np.abs(sol.v - 1.0), data.dv[k], atol=1e-10)
    v, ok = solve_voltages(net, data.p, data.q)
    assert ok.all() and np.allclose(np.abs(v - 1.0), data.dv, atol=1e-10)


def test_too_many_rejections():
    prof = LoadProfileConfig(p_base_range=(-3.0, -2.0), pv_capacity=0.0)
    with pytest.raises(TooManyRejections):
        generate_dataset(make_test_feeder("path_13"), prof, 20, seed=0)


def test_uncontrolled_profile_has_no_excitation():
    prof = LoadProfileConfig(q_relative=0.2).uncontrolled()
    assert prof.q_excitation == 0 and prof.q_relative == 0
