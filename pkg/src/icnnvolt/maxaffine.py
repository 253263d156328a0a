"""Max-of-affine functions and their exact correspondence with ICNNs.

Three directions are covered: building an ICNN that equals a given
max-affine function (one ReLU per layer), listing the affine pieces of a
one-hidden-layer ICNN, and fitting a max-affine function to data by
alternating partition and least-squares refits.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import qmc
from sklearn.cluster import kmeans_plusplus

from . import icnn
from .errors import DegeneratePartition, DimensionMismatch, ShapeMismatch, TooManyUnits

logger = logging.getLogger(__name__)

MAX_ENUMERATION_UNITS = 20


@dataclass(frozen=True, eq=False)
class MaxAffine:
    """``f(x) = max_k (A[k] @ x + b[k])`` with ``A`` of shape (K, d)."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, float))
        b = np.atleast_1d(np.asarray(self.b, float))
        if A.shape[0] < 1 or b.shape != (A.shape[0],):
            raise ShapeMismatch("need at least one piece and one offset per slope row")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n_pieces(self):
        return self.A.shape[0]

    @property
    def dim(self):
        return self.A.shape[1]

    @classmethod
    def from_pieces(cls, pieces):
        """From an iterable of ``(a, b)`` pairs."""
        pieces = list(pieces)
        return cls(np.array([np.atleast_1d(a) for a, _ in pieces], float),
                   np.array([b for _, b in pieces], float))

    def pieces(self):
        return [(self.A[k].copy(), float(self.b[k])) for k in range(self.n_pieces)]

    def __call__(self, x):
        return eval_max_affine(self, x)

    def to_dict(self):
        return {"pieces": [{"a": a.tolist(), "b": b} for a, b in self.pieces()]}

    @classmethod
    def from_dict(cls, d):
        return cls.from_pieces((p["a"], p["b"]) for p in d["pieces"])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def eval_max_affine(f, x):
    """Pointwise max of the pieces; ``x`` is (d,) or (n, d)."""
    x = np.asarray(x, float)
    single = x.ndim <= 1
    X = x.reshape(1, -1) if single else x
    if X.shape[1] != f.dim:
        raise DimensionMismatch(f"x has dimension {X.shape[1]}, function expects {f.dim}")
    vals = (X @ f.A.T + f.b).max(axis=1)
    return float(vals[0]) if single else vals


def _split_signs(h):
    """``h @ x == [h+, h-] @ [x; -x]`` with both halves nonnegative."""
    return np.concatenate([np.maximum(h, 0.0), np.maximum(-h, 0.0)], axis=-1)


def icnn_from_max_affine(f):
    """Exact ICNN for ``f`` with one ReLU per hidden layer.

    Uses the nested form ``L_K + relu(L_{K-1} - L_K + relu(... relu(L_1 - L_2)))``:
    layer ``l < K`` computes ``relu(z_{l-1} + (a_l - a_{l+1}) x + b_l - b_{l+1})``
    and the last layer adds ``a_K x + b_K`` linearly. Every input
    coefficient acts on ``[x; -x]`` and is nonnegative; the hidden-to-hidden
    weights are 1. K pieces give exactly K layers.
    """
    A, b = f.A, f.b
    K, d = A.shape
    layers = []
    for l in range(K - 1):
        coef = _split_signs(A[l] - A[l + 1])[None, :]
        bias = np.array([b[l] - b[l + 1]])
        if l == 0:
            layers.append(icnn.LayerParams(coef, None, bias))
        else:
            layers.append(icnn.LayerParams(np.ones((1, 1)), coef, bias))
    last = _split_signs(A[-1])[None, :]
    if K == 1:
        layers.append(icnn.LayerParams(last, None, np.array([b[-1]])))
    else:
        layers.append(icnn.LayerParams(np.ones((1, 1)), last, np.array([b[-1]])))
    return icnn.IcnnModel(tuple(layers), icnn.Activation("relu"), d, 1)


@dataclass
class PieceEnumeration:
    """All sign-pattern pieces of a one-hidden-layer ICNN.

    ``patterns[k]`` is the unit subset (boolean mask) behind piece ``k`` of
    ``candidates``; ``realized[k]`` says whether any domain sample
    activated exactly that subset.
    """

    candidates: MaxAffine
    patterns: np.ndarray
    realized: np.ndarray

    def realized_pieces(self):
        return MaxAffine(self.candidates.A[self.realized], self.candidates.b[self.realized])


def _one_hidden_layer(model):
    if model.depth != 2 or model.out_dim != 1:
        raise ShapeMismatch("need exactly one hidden layer and a scalar output")
    if model.activation.kind != "relu":
        raise ShapeMismatch("piece enumeration needs ReLU units")
    hidden, out = model.layers
    if np.any(out.W < 0):
        raise ShapeMismatch("output weights must be nonnegative")
    d = model.in_dim
    W0 = hidden.W[:, :d] - hidden.W[:, d:]
    return W0, hidden.b, out.W[0], float(out.b[0]), out.D[0, :d] - out.D[0, d:]


def enumerate_pieces(model, domain=None, n_samples=100_000, seed=0):
    """Candidate affine pieces of ``sum_i w_i relu(W0_i x + b_i) + a.x + c``.

    For each of the ``2^K`` subsets ``S`` of hidden units the piece is
    ``sum_{i in S} w_i (W0_i x + b_i) + a.x + c``, where ``a`` is the
    output passthrough folded back from the expanded input. A pattern counts as realized
    when one of ``n_samples`` scrambled-Sobol points of ``domain``
    (default ``[-1, 1]^d``) activates exactly ``S``; this is a sampling
    approximation and may miss very thin regions.
    """
    W0, b0, w, c, a = _one_hidden_layer(model)
    K, d = W0.shape
    if K > MAX_ENUMERATION_UNITS:
        raise TooManyUnits(f"{K} hidden units; enumeration is capped at {MAX_ENUMERATION_UNITS}")
    patterns = ((np.arange(2 ** K)[:, None] >> np.arange(K)) & 1).astype(bool)
    weighted = patterns * w
    A = weighted @ W0 + a
    b = weighted @ b0 + c
    lo, hi = (-np.ones(d), np.ones(d)) if domain is None else map(np.asarray, domain)
    m = int(np.ceil(np.log2(max(n_samples, 2))))
    pts = qmc.Sobol(d, scramble=True, seed=seed).random_base2(m)[:n_samples]
    X = qmc.scale(pts, lo, hi)
    active = (X @ W0.T + b0) > 0
    codes = active.astype(np.int64) @ (1 << np.arange(K, dtype=np.int64))
    realized = np.zeros(2 ** K, dtype=bool)
    realized[np.unique(codes)] = True
    return PieceEnumeration(MaxAffine(A, b), patterns, realized)


def active_pattern(model, x):
    """Index into the enumeration of the units active at each row of ``x``."""
    W0, b0 = _one_hidden_layer(model)[:2]
    active = (np.atleast_2d(x) @ W0.T + b0) > 0
    return active.astype(np.int64) @ (1 << np.arange(W0.shape[0], dtype=np.int64))


def _lstsq_affine(X, y):
    Z = np.hstack([X, np.ones((len(X), 1))])
    sol = np.linalg.lstsq(Z, y, rcond=None)[0]
    return sol[:-1], sol[-1]


def _refit_pieces(Z, y, assign, K):
    """Least squares per piece, batched through the per-piece Gram matrices.

    The pseudo-inverse gives the minimum-norm solution for pieces with
    fewer than ``d + 1`` members, like ``lstsq`` would.
    """
    n, m = Z.shape
    onehot = (assign[:, None] == np.arange(K)).astype(float)
    G = (onehot.T @ (Z[:, :, None] * Z[:, None, :]).reshape(n, m * m)).reshape(K, m, m)
    r = onehot.T @ (Z * y[:, None])
    return np.einsum("kij,kj->ki", np.linalg.pinv(G, hermitian=True), r)


def _refit_once(X, y, K, rng, max_iter):
    n, d = X.shape
    Z = np.hstack([X, np.ones((n, 1))])
    local = min(n, max(d + 1, n // K))
    centers, _ = kmeans_plusplus(X, K, random_state=int(rng.integers(2 ** 31 - 1)))
    assign = np.argmin(((X[:, None, :] - centers[None]) ** 2).sum(axis=2), axis=1)
    best = (np.inf, None)
    for _ in range(max_iter):
        coef = _refit_pieces(Z, y, assign, K)
        empty = np.flatnonzero(np.bincount(assign, minlength=K) == 0)
        if empty.size:
            # reseed each empty piece with a local fit around a badly explained sample
            resid = np.abs((Z @ np.delete(coef, empty, axis=0).T).max(axis=1) - y)
            worst = np.argsort(resid)[::-1]
            for k, w in zip(empty, worst):
                near = np.argsort(((X - X[w]) ** 2).sum(axis=1))[:local]
                coef[k] = np.linalg.lstsq(Z[near], y[near], rcond=None)[0]
            logger.debug("reseeded %d empty pieces", empty.size)
        fitted = Z @ coef.T
        mse = float(np.mean((fitted.max(axis=1) - y) ** 2))
        if mse < best[0]:
            best = (mse, coef.copy())
        new = np.argmax(fitted, axis=1)
        if np.array_equal(new, assign):
            break
        assign = new
    mse, coef = best
    return coef[:, :-1], coef[:, -1], mse


def fit_max_affine(X, y, K, seed=0, n_init=3, max_iter=200):
    """Least-squares max-affine regression by partition refitting.

    Pieces start from least squares on K-means++ cells, then samples are
    reassigned to their argmax piece and each piece is refit on its
    samples until the assignment stops changing. An empty piece is reseeded
    by a least-squares fit on the neighbourhood of a worst-fit sample. The
    alternation is not monotone, so each start keeps its lowest-MSE
    iterate, and the best of ``n_init`` starts is returned.
    """
    X = np.asarray(X, float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, float).ravel()
    if len(X) != len(y):
        raise DimensionMismatch("X and y lengths differ")
    if K < 1:
        raise ValueError("K must be >= 1")
    if len(X) < K:
        raise DegeneratePartition(f"{len(X)} samples cannot support {K} pieces")
    if K == 1:
        a, c = _lstsq_affine(X, y)
        return MaxAffine(a[None, :], np.array([c]))
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        A, b, mse = _refit_once(X, y, K, rng, max_iter)
        if best is None or mse < best[2]:
            best = (A, b, mse)
    return MaxAffine(best[0], best[1])
