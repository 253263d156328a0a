"""Comparison models: linear surrogate, uncontrolled operation, brute-force oracle."""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, TooManyDimensions
from .grid import solve_voltages
from .regulate import RegulateConfig, RegulationResult, _bounds, pgd_batch

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LinearModel:
    """``deviation ~= A @ [p; q] + c``."""

    A: np.ndarray
    c: np.ndarray
    residual: float = float("nan")
    rank: int = -1

    def predict(self, u):
        return np.asarray(u, float) @ self.A.T + self.c

    def to_dict(self):
        return {"A": self.A.tolist(), "c": self.c.tolist(), "residual": self.residual,
                "rank": self.rank}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["A"], float), np.array(d["c"], float), float(d.get("residual", "nan")),
                   int(d.get("rank", -1)))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_linear(data, ridge=1e-8):
    """Least squares on centred data via ridge-stabilized normal equations.

    The intercept is not penalized. A rank-deficient design (e.g. the
    all-zero slack columns) is logged; the ridge term still yields a model.
    """
    X = data.inputs
    Y = data.dv
    n_rows, n_in = X.shape
    if n_rows < n_in + 1:
        logger.warning("only %d rows for %d regressors", n_rows, n_in + 1)
    xm = X.mean(axis=0)
    ym = Y.mean(axis=0)
    Xc = X - xm
    G = Xc.T @ Xc
    rank = int(np.linalg.matrix_rank(Xc))
    if rank < n_in:
        logger.info("design has rank %d < %d; relying on the ridge term", rank, n_in)
    coef = np.linalg.solve(G + ridge * np.eye(n_in), Xc.T @ (Y - ym))
    A = coef.T
    c = ym - A @ xm
    resid = float(np.sqrt(np.mean((X @ A.T + c - Y) ** 2)))
    return LinearModel(A, c, resid, rank)


def linear_regulate_config(**overrides):
    """Defaults for the subgradient solve: geometric step decay, no softplus,
    no backtracking (the objective is not smooth)."""
    base = dict(step_size=0.01, step_decay=0.998, max_iter=8000, softplus_t=None, backtrack=False)
    base.update(overrides)
    return RegulateConfig(**base)


def regulate_linear_batch(model, P, Q0, cfg=None):
    """Minimize ``sum_i alpha_i |A_i [p; q] + c_i|`` over the box, batched.

    Projected subgradient descent with a geometrically shrinking step;
    each row returns its best iterate.
    """
    cfg = linear_regulate_config() if cfg is None else cfg
    P = np.atleast_2d(np.asarray(P, float))
    Q0 = np.atleast_2d(np.asarray(Q0, float))
    n = P.shape[1]
    if model.A.shape[1] != 2 * n:
        raise DimensionMismatch(f"model expects {model.A.shape[1]} inputs, got 2*{n}")
    alpha = np.ones(model.A.shape[0]) if cfg.alpha is None else np.asarray(cfg.alpha, float)
    Ap, Aq = model.A[:, :n], model.A[:, n:]
    offset = P @ Ap.T + model.c
    lo, hi = _bounds(cfg, Q0.shape)

    def vg(Q, rows):
        r = offset[rows] + Q @ Aq.T
        return np.abs(r) @ alpha, (np.sign(r) * alpha) @ Aq

    x, trace, iters, conv = pgd_batch(vg, Q0, lo, hi, cfg.step_size, cfg.grad_tol,
                                      cfg.max_iter, cfg.step_decay)
    final_step = cfg.step_size * cfg.step_decay ** cfg.max_iter
    # a vanished step is the subgradient method's notion of convergence
    conv = conv | (final_step < cfg.grad_tol)
    pred = offset + x @ Aq.T
    out = []
    for b in range(P.shape[0]):
        vals = [float(t[b]) for t in trace if not np.isnan(t[b])]
        out.append(RegulationResult(x[b].copy(), vals, int(iters[b]), bool(conv[b]),
                                    pred[b].copy(), objective=float(np.abs(pred[b]) @ alpha)))
    return out


def regulate_linear(model, p, q0, cfg=None):
    """Single-instance form of :func:`regulate_linear_batch`."""
    p = np.asarray(p, float)
    return regulate_linear_batch(model, p[None, :], np.asarray(q0, float)[None, :], cfg)[0]


def true_objective(net, p, q, alpha=None):
    """``sum_i alpha_i |V_i - V0|`` from exact power flow, batched over rows."""
    v, ok = solve_voltages(net, p, q)
    dev = np.abs(v - net.slack_voltage)
    a = np.ones(net.n_buses) if alpha is None else np.asarray(alpha, float)
    vals = dev @ a
    vals[~ok] = np.inf
    return vals


def oracle_regulate(net, p, lo, hi, alpha=None, grid_points=21, max_free=4):
    """Exhaustive grid search over the reactive box with exact power flow.

    Coordinates with ``lo == hi`` are fixed. With ``grid_points == 1`` each
    free coordinate sits at its box midpoint.

    Returns
    -------
    q_best : ndarray
    best : float
        True objective at ``q_best``.
    """
    p = np.asarray(p, float)
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    free = np.flatnonzero(hi > lo)
    if len(free) > max_free:
        raise TooManyDimensions(f"{len(free)} free coordinates; the grid allows at most {max_free}")
    if grid_points == 1:
        axes = [np.array([0.5 * (lo[j] + hi[j])]) for j in free]
    else:
        axes = [np.linspace(lo[j], hi[j], grid_points) for j in free]
    pts = np.array(list(itertools.product(*axes))) if len(free) else np.zeros((1, 0))
    Q = np.tile(lo, (len(pts), 1))
    Q[:, free] = pts
    vals = true_objective(net, np.broadcast_to(p, Q.shape), Q, alpha)
    k = int(np.argmin(vals))
    return Q[k].copy(), float(vals[k])
