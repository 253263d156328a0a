"""Centralized voltage regulation by projected gradient descent over an ICNN."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import icnn
from .errors import BoundsInverted, DimensionMismatch, NonConvergence
from .grid import solve_voltages

logger = logging.getLogger(__name__)


def project_box(q, lo, hi):
    """Euclidean projection onto ``{lo <= q <= hi}`` (an elementwise clamp)."""
    q = np.asarray(q, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo > hi):
        raise BoundsInverted("lower bound exceeds upper bound")
    return np.minimum(np.maximum(q, lo), hi)


def reactive_box(q0, qmax=None, relative=None, fixed=(0,)):
    """Bounds around the uncontrolled injection ``q0``.

    ``qmax`` is an absolute per-bus capability in p.u. and ``relative`` a
    fraction of ``|q0|``; when both are given the narrower applies. Buses in
    ``fixed`` (the slack by default) get a zero-width box.
    """
    q0 = np.asarray(q0, dtype=float)
    if qmax is None and relative is None:
        raise ValueError("give qmax and/or relative")
    width = np.full(q0.shape, np.inf)
    if qmax is not None:
        width = np.minimum(width, qmax)
    if relative is not None:
        width = np.minimum(width, relative * np.abs(q0))
    width = np.array(width)
    width[..., list(fixed)] = 0.0
    return q0 - width, q0 + width


@dataclass(frozen=True)
class RegulateConfig:
    """Step size, stopping rule, bounds and objective weights.

    ``q_lower``/``q_upper`` may be (n,) or, for batched calls, (B, n).
    ``alpha`` of ``None`` means unit weights. ``softplus_t`` swaps the
    model's activation for a sharpened softplus during the solve
    (``None`` keeps the trained activation). ``step_decay`` < 1 shrinks
    the step geometrically, which the subgradient solvers use. With
    ``backtrack`` the step size is the initial and largest trial step of a
    per-instance backtracking search.
    """

    step_size: float = 0.05
    grad_tol: float = 1e-6
    max_iter: int = 5000
    q_lower: np.ndarray | None = None
    q_upper: np.ndarray | None = None
    alpha: np.ndarray | None = None
    softplus_t: float | None = 50.0
    step_decay: float = 1.0
    backtrack: bool = True

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.q_lower is not None and self.q_upper is not None:
            if np.any(np.asarray(self.q_lower) > np.asarray(self.q_upper)):
                raise BoundsInverted("q_lower exceeds q_upper")


@dataclass
class RegulationResult:
    q_star: np.ndarray
    objective_trace: list
    iterations: int
    converged: bool
    predicted_deviation: np.ndarray
    realized_deviation: np.ndarray | None = None
    objective: float = float("nan")


def pgd_batch(value_and_grad, x0, lo, hi, step, tol, max_iter, decay=1.0, backtrack=False):
    """Projected gradient descent on a batch of independent problems.

    ``value_and_grad(X, rows)`` maps the (k, dim) iterates of the still
    active problems ``rows`` to ``(values (k,), grads (k, dim))``. A row
    stops once ``||x - proj(x - grad)||_inf < tol``; a row that runs out of
    iterations returns its best iterate.

    With ``backtrack`` each row keeps its own step, starting at ``step``:
    a trial point is accepted when it passes the usual sufficient-decrease
    test ``f(x+) <= f(x) + g.(x+ - x) + ||x+ - x||^2 / (2 step)``, otherwise
    the step halves. The next trial step is the Barzilai-Borwein ratio
    ``|dx|^2 / (dx . dg)`` of the accepted move, capped at ``step``, which
    copes far better with the sharp curvature of softplus surrogates than a
    fixed step. The test keeps every row's objective non-increasing.
    Without ``backtrack`` the step is fixed (times ``decay`` per iteration).

    Returns ``(x, trace, iterations, converged)`` where ``trace`` holds one
    objective array per iteration, NaN for rows already finished.
    """
    x = project_box(x0, lo, hi).copy()
    B = x.shape[0]
    lo = np.broadcast_to(lo, x.shape)
    hi = np.broadcast_to(hi, x.shape)
    active = np.ones(B, dtype=bool)
    iters = np.zeros(B, dtype=int)
    converged = np.zeros(B, dtype=bool)
    best_x = x.copy()
    best_f = np.full(B, np.inf)
    trace = []
    gamma = step
    row_step = np.full(B, float(step))
    cached = None
    for it in range(max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        if cached is not None and np.array_equal(cached[0], idx):
            f, g = cached[1], cached[2]
        else:
            f, g = value_and_grad(x[idx], idx)
        cached = None
        row = np.full(B, np.nan)
        row[idx] = f
        trace.append(row)
        better = f < best_f[idx]
        best_f[idx[better]] = f[better]
        best_x[idx[better]] = x[idx[better]]
        pg = x[idx] - project_box(x[idx] - g, lo[idx], hi[idx])
        done = np.max(np.abs(pg), axis=1, initial=0.0) < tol
        converged[idx[done]] = True
        active[idx[done]] = False
        if it == max_iter:
            break
        keep = ~done
        move = idx[keep]
        if not backtrack:
            x[move] = project_box(x[move] - gamma * g[keep], lo[move], hi[move])
            iters[move] += 1
            gamma *= decay
            continue
        xm, fm, gm = x[move], f[keep], g[keep]
        new_x = xm.copy()
        new_f = np.empty(len(move))
        new_g = np.empty_like(gm)
        pending = np.arange(len(move))
        for _ in range(60):
            s = row_step[move[pending]][:, None]
            cand = project_box(xm[pending] - s * gm[pending], lo[move[pending]], hi[move[pending]])
            fc, gc = value_and_grad(cand, move[pending])
            dx = cand - xm[pending]
            bound = fm[pending] + np.sum(gm[pending] * dx, axis=1) + np.sum(dx * dx, axis=1) / (2 * s[:, 0])
            ok = fc <= bound + 1e-12 * np.maximum(1.0, np.abs(fm[pending]))
            acc = pending[ok]
            new_x[acc], new_f[acc], new_g[acc] = cand[ok], fc[ok], gc[ok]
            pending = pending[~ok]
            if pending.size == 0:
                break
            row_step[move[pending]] *= 0.5
        # next trial step: Barzilai-Borwein ratio of the accepted move, capped at ``step``
        dx, dg = new_x - xm, new_g - gm
        sy = np.sum(dx * dg, axis=1)
        bb = np.sum(dx * dx, axis=1) / np.where(sy > 0, sy, 1.0)
        row_step[move] = np.where(sy > 0, np.clip(bb, 1e-12, step), step)
        if pending.size:
            # step underflow: keep the iterate, which the stopping test will flag
            new_x[pending], new_f[pending], new_g[pending] = xm[pending], fm[pending], gm[pending]
            row_step[move[pending]] = step
        x[move] = new_x
        iters[move] += 1
        cached = (move, new_f, new_g)
    x = np.where(converged[:, None], x, best_x)
    return x, trace, iters, converged


def _row_trace(trace, b):
    return [float(t[b]) for t in trace if not np.isnan(t[b])]


def surrogate_objective(model, p, q, alpha=None):
    """``sum_i alpha_i f_i(p, q)`` for (n,) or (B, n) inputs."""
    u = np.concatenate([np.atleast_2d(p), np.atleast_2d(q)], axis=1)
    out = icnn.forward(model, u)
    a = np.ones(model.out_dim) if alpha is None else np.asarray(alpha, float)
    vals = out @ a
    return float(vals[0]) if np.ndim(q) == 1 else vals


def solver_model(model, cfg):
    """The model as seen by the solver (softplus swapped in if configured)."""
    if cfg.softplus_t is None:
        return model
    return model.with_activation(icnn.Activation("softplus", cfg.softplus_t))


def _bounds(cfg, shape):
    lo = np.full(shape[-1], -np.inf) if cfg.q_lower is None else np.asarray(cfg.q_lower, float)
    hi = np.full(shape[-1], np.inf) if cfg.q_upper is None else np.asarray(cfg.q_upper, float)
    return np.broadcast_to(lo, shape), np.broadcast_to(hi, shape)


def regulate_batch(model, P, Q0, cfg=RegulateConfig(), net=None):
    """Regulate many instances at once; returns a list of results.

    ``P`` and ``Q0`` are (B, n). Active power stays fixed and only the
    reactive coordinates move. With ``net`` given, the true deviations at
    each ``q_star`` are filled in from an exact power-flow solve.
    """
    P = np.atleast_2d(np.asarray(P, float))
    Q0 = np.atleast_2d(np.asarray(Q0, float))
    n = P.shape[1]
    if Q0.shape != P.shape or model.in_dim != 2 * n:
        raise DimensionMismatch(f"model expects {model.in_dim} inputs, got p/q of width {n}")
    alpha = np.ones(model.out_dim) if cfg.alpha is None else np.asarray(cfg.alpha, float)
    if alpha.shape != (model.out_dim,) or np.any(alpha < 0):
        raise DimensionMismatch("alpha must be a nonnegative vector with one weight per output")
    lo, hi = _bounds(cfg, Q0.shape)
    outside = (Q0 < lo) | (Q0 > hi)
    if outside.any():
        logger.warning("clamping %d starting injections into the box", int(outside.sum()))
    solver = solver_model(model, cfg)

    def vg(Q, rows):
        out, gu = icnn.value_and_vjp(solver, np.concatenate([P[rows], Q], axis=1), alpha)
        return out @ alpha, gu[:, n:]

    x, trace, iters, conv = pgd_batch(vg, Q0, lo, hi, cfg.step_size, cfg.grad_tol,
                                      cfg.max_iter, cfg.step_decay, cfg.backtrack)
    preds = icnn.forward(solver, np.concatenate([P, x], axis=1))
    realized = None
    if net is not None:
        v, _ = solve_voltages(net, P, x)
        realized = np.abs(v - net.slack_voltage)
    n_fail = int((~conv).sum())
    if n_fail:
        logger.info("%d of %d instances hit max_iter=%d", n_fail, len(conv), cfg.max_iter)
    return [RegulationResult(
        q_star=x[b].copy(),
        objective_trace=_row_trace(trace, b),
        iterations=int(iters[b]),
        converged=bool(conv[b]),
        predicted_deviation=preds[b].copy(),
        realized_deviation=None if realized is None else realized[b].copy(),
        objective=float(preds[b] @ alpha),
    ) for b in range(P.shape[0])]


def regulate(model, p, q0, cfg=RegulateConfig(), net=None):
    """Minimize ``sum_i alpha_i f_i(p, q)`` over the reactive box.

    Parameters
    ----------
    model : IcnnModel
        Trained surrogate taking ``[p; q]``.
    p, q0 : array_like, shape (n,)
        Fixed active injections and the starting (uncontrolled) reactive
        injections. ``q0`` is clamped into the box if needed.
    cfg : RegulateConfig
    net : Network, optional
        When given, ``realized_deviation`` is computed by true power flow.

    Returns
    -------
    RegulationResult
        ``converged`` is false when ``max_iter`` was reached; ``q_star`` is
        then the best iterate seen.
    """
    p = np.asarray(p, float)
    q0 = np.asarray(q0, float)
    if p.ndim != 1 or q0.shape != p.shape:
        raise DimensionMismatch("p and q0 must be vectors of equal length")
    if cfg.q_lower is not None and np.ndim(cfg.q_lower) > 1:
        raise DimensionMismatch("single-instance bounds must be vectors")
    return regulate_batch(model, p[None, :], q0[None, :], cfg, net)[0]


def estimate_lipschitz(model, p, lo, hi, alpha=None, softplus_t=50.0, n_pairs=200, seed=0):
    """Largest observed gradient-difference ratio over random box pairs.

    A lower bound on the gradient's Lipschitz constant: softplus surrogates
    concentrate curvature near unit kinks that random pairs rarely hit.
    """
    rng = np.random.default_rng(seed)
    solver = model if softplus_t is None else model.with_activation(
        icnn.Activation("softplus", softplus_t))
    a = np.ones(model.out_dim) if alpha is None else np.asarray(alpha, float)
    n = len(p)
    span = np.where(np.isfinite(hi - lo), hi - lo, 1.0)
    q1 = lo + rng.uniform(size=(n_pairs, n)) * span
    q2 = q1 + rng.normal(scale=1e-3, size=(n_pairs, n)) * span
    q2 = np.clip(q2, lo, hi)
    P = np.broadcast_to(p, (n_pairs, n))
    g1 = icnn.vjp_input(solver, np.concatenate([P, q1], axis=1), a)[:, n:]
    g2 = icnn.vjp_input(solver, np.concatenate([P, q2], axis=1), a)[:, n:]
    dq = np.linalg.norm(q1 - q2, axis=1)
    ok = dq > 0
    if not ok.any():
        return 0.0
    return float(np.max(np.linalg.norm(g1 - g2, axis=1)[ok] / dq[ok]))


def violation_fractions(v, v0, thresholds, skip_slack=True):
    """Fraction of bus voltages with ``|V - V0| > threshold``, per threshold."""
    v = np.atleast_2d(v)
    dev = np.abs(v - v0)
    if skip_slack:
        dev = dev[:, 1:]
    return [float(np.mean(dev > t)) for t in thresholds]


def evaluate_regulation(net, p, q_star, thresholds=(0.03, 0.05)):
    """True-power-flow violation fractions at ``(p, q_star)``.

    Accepts one instance or a (B, n) batch; fractions are over non-slack
    buses (and instances).
    """
    p = np.atleast_2d(np.asarray(p, float))
    q = np.atleast_2d(np.asarray(q_star, float))
    v, ok = solve_voltages(net, p, q)
    if not ok.all():
        raise NonConvergence(f"power flow failed on {int((~ok).sum())} instance(s)")
    return violation_fractions(v, net.slack_voltage, thresholds)
