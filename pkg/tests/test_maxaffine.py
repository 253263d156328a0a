import numpy as np
import pytest

from icnnvolt import icnn
from icnnvolt import maxaffine as ma
from icnnvolt.errors import DegeneratePartition, DimensionMismatch, TooManyUnits
from oracles import naive_max_affine


def test_eval_examples():
    absx = ma.MaxAffine.from_pieces([([1.0], 0.0), ([-1.0], 0.0)])
    assert absx([-3.0]) == 3.0
    one = ma.MaxAffine.from_pieces([([2.0, -1.0], 0.5)])
    assert one([1.0, 1.0]) == 1.5
    rng = np.random.default_rng(0)
    f = ma.MaxAffine(rng.normal(size=(7, 3)), rng.normal(size=7))
    X = rng.normal(size=(50, 3))
    vals = f(X)
    for x, v in zip(X, vals):
        assert v == pytest.approx(naive_max_affine(f.pieces(), x), abs=1e-14)
    with pytest.raises(DimensionMismatch):
        f([1.0, 2.0])


def test_json_roundtrip(tmp_path):
    f = ma.MaxAffine(np.array([[1.0, 2.0], [0.1, -3.0]]), np.array([0.3, 1e-17]))
    f.save(tmp_path / "f.json")
    g = ma.MaxAffine.load(tmp_path / "f.json")
    assert np.array_equal(f.A, g.A) and np.array_equal(f.b, g.b)


def test_construction_examples():
    m = ma.icnn_from_max_affine(ma.MaxAffine.from_pieces([([1.0], 0.0), ([-1.0], 0.0)]))
    assert [icnn.forward(m, [x])[0] for x in (3.0, -2.0, 0.0)] == [3.0, 2.0, 0.0]
    three = ma.MaxAffine.from_pieces([([-1.0], 0.0), ([1.0], 0.0), ([2.0], -1.0)])
    m = ma.icnn_from_max_affine(three)
    vals = icnn.forward(m, np.array([[-1.0], [0.0], [1.0], [2.0]]))[:, 0]
    assert np.allclose(vals, [1, 0, 1, 3], atol=1e-12, rtol=0)


def test_construction_exact_and_structural():
    rng = np.random.default_rng(1)
    for _ in range(50):
        K, d = int(rng.integers(1, 11)), int(rng.integers(1, 5))
        f = ma.MaxAffine(rng.normal(size=(K, d)), rng.normal(size=K))
        m = ma.icnn_from_max_affine(f)
        assert m.depth == K and m.is_feasible()
        assert all(w == 1 for w in m.widths)
        X = rng.uniform(-1, 1, size=(1000, d))
        assert np.max(np.abs(icnn.forward(m, X)[:, 0] - f(X))) <= 1e-10


def one_hidden(W0, b0, w, c=0.0, passthrough=None):
    d = W0.shape[1]
    W1 = np.concatenate([np.maximum(W0, 0), np.maximum(-W0, 0)], axis=1)
    D = np.zeros((1, 2 * d)) if passthrough is None else np.asarray(passthrough, float)[None, :]
    layers = (icnn.LayerParams(W1, None, np.asarray(b0, float)),
              icnn.LayerParams(np.asarray(w, float)[None, :], D, np.array([c])))
    return icnn.IcnnModel(layers, icnn.Activation("relu"), d, 1)


def test_single_relu_pieces():
    m = one_hidden(np.array([[1.0]]), [0.0], [1.0])
    enum = ma.enumerate_pieces(m, n_samples=1000)
    assert enum.candidates.n_pieces == 2
    assert enum.realized.all()
    x = np.linspace(-1, 1, 11)[:, None]
    assert np.allclose(enum.realized_pieces()(x), np.maximum(x[:, 0], 0))


@pytest.mark.parametrize("K", [2, 3, 5])
def test_enumeration_supports_and_active_piece(K):
    rng = np.random.default_rng(K)
    d = 2
    m = one_hidden(rng.normal(size=(K, d)), rng.normal(scale=0.5, size=K),
                   rng.uniform(0.1, 2, K), 0.3, passthrough=rng.normal(size=2 * d))
    enum = ma.enumerate_pieces(m, n_samples=4096, seed=1)
    assert enum.candidates.n_pieces == 2 ** K
    X = rng.uniform(-1, 1, size=(1000, d))
    f = icnn.forward(m, X)[:, 0]
    codes = ma.active_pattern(m, X)
    active_vals = np.einsum("nd,nd->n", X, enum.candidates.A[codes]) + enum.candidates.b[codes]
    assert np.max(np.abs(active_vals - f)) <= 1e-10
    realized = enum.realized_pieces()
    assert np.all(X @ realized.A.T + realized.b <= f[:, None] + 1e-10)


def test_enumeration_limits():
    K = 21
    m = one_hidden(np.ones((K, 1)), np.zeros(K), np.ones(K))
    with pytest.raises(TooManyUnits):
        ma.enumerate_pieces(m)
    deep = icnn.init_model(1, 1, [2, 2])
    with pytest.raises(ValueError):
        ma.enumerate_pieces(deep)


def test_fit_recovers_abs():
    x = np.linspace(-1, 1, 401)
    f = ma.fit_max_affine(x, np.abs(x), 2, seed=0)
    assert sorted(np.round(f.A[:, 0], 3)) == [-1.0, 1.0]
    assert np.allclose(f.b, 0, atol=1e-3)


def test_fit_one_piece_is_least_squares():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(100, 3))
    y = X @ [1.0, -2.0, 0.5] + 0.3 + 0.1 * rng.normal(size=100)
    f = ma.fit_max_affine(X, y, 1)
    ref = np.linalg.lstsq(np.hstack([X, np.ones((100, 1))]), y, rcond=None)[0]
    assert np.allclose(f.A[0], ref[:3]) and f.b[0] == pytest.approx(ref[3])


def test_fit_errors():
    with pytest.raises(DegeneratePartition):
        ma.fit_max_affine(np.zeros((3, 1)), np.zeros(3), 5)
    with pytest.raises(DimensionMismatch):
        ma.fit_max_affine(np.zeros((3, 1)), np.zeros(4), 2)


def test_more_pieces_fit_an_icnn_better():
    rng = np.random.default_rng(3)
    K, d = 8, 2
    m = one_hidden(rng.normal(size=(K, d)), rng.normal(scale=0.5, size=K), rng.uniform(0.1, 1, K))
    X = rng.uniform(-1, 1, size=(3000, d))
    y = icnn.forward(m, X)[:, 0]

    def mse(f):
        return float(np.mean((f(X) - y) ** 2))

    assert mse(ma.fit_max_affine(X, y, 64, seed=0)) <= mse(ma.fit_max_affine(X, y, 4, seed=0))


def test_sup_error_shrinks_with_pieces():
    rng = np.random.default_rng(4)
    X = rng.uniform(-1, 1, size=(4000, 2))
    y = np.sum(X ** 2, axis=1)
    grid = np.stack(np.meshgrid(np.linspace(-1, 1, 101), np.linspace(-1, 1, 101)), -1).reshape(-1, 2)
    truth = np.sum(grid ** 2, axis=1)
    errs = [np.max(np.abs(ma.fit_max_affine(X, y, K, seed=0)(grid) - truth)) for K in (2, 4, 8, 16)]
    assert all(a > b for a, b in zip(errs, errs[1:]))
