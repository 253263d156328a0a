"""Radial distribution networks, DistFlow power flow and synthetic datasets.

All quantities are per-unit. Bus 0 is the slack bus. Injections follow the
generation-positive convention: a load has negative ``p`` and ``q``.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidNetwork, NonConvergence, TooManyRejections, VoltageCollapse

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r: float
    x: float


@dataclass(frozen=True, eq=False)
class Network:
    """Radial network rooted at the slack bus 0.

    ``lines`` must be oriented parent -> child. Use :meth:`from_dict` to
    build a network from an unoriented edge list.
    """

    n_buses: int
    lines: tuple
    slack_voltage: float = 1.0
    parent: np.ndarray = field(init=False, repr=False)
    order: np.ndarray = field(init=False, repr=False)
    r: np.ndarray = field(init=False, repr=False)
    x: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = int(self.n_buses)
        lines = tuple(self.lines)
        object.__setattr__(self, "lines", lines)
        if n < 1:
            raise InvalidNetwork("a network needs at least the slack bus")
        if len(lines) != n - 1:
            raise InvalidNetwork(f"{n} buses need {n - 1} lines, got {len(lines)}")
        if not self.slack_voltage > 0:
            raise InvalidNetwork("slack voltage must be positive")
        parent = np.full(n, -1, dtype=int)
        r = np.zeros(n)
        x = np.zeros(n)
        children = [[] for _ in range(n)]
        for ln in lines:
            i, k = int(ln.from_bus), int(ln.to_bus)
            if not (0 <= i < n and 0 <= k < n) or i == k:
                raise InvalidNetwork(f"bad line endpoints ({i}, {k})")
            if not (ln.r > 0 and ln.x > 0):
                raise InvalidNetwork(f"line ({i}, {k}) needs r > 0 and x > 0")
            if k == 0:
                raise InvalidNetwork("the slack bus cannot have a parent")
            if parent[k] != -1:
                raise InvalidNetwork(f"bus {k} has more than one parent")
            parent[k] = i
            r[k], x[k] = ln.r, ln.x
            children[i].append(k)
        # BFS from the slack; anything unreached is disconnected or on a cycle
        order = [0]
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        queue = deque([0])
        while queue:
            i = queue.popleft()
            for k in children[i]:
                if seen[k]:
                    raise InvalidNetwork("cycle detected")
                seen[k] = True
                order.append(k)
                queue.append(k)
        if not seen.all():
            raise InvalidNetwork(f"buses {np.flatnonzero(~seen).tolist()} unreachable from slack")
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "order", np.asarray(order, dtype=int))
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "x", x)

    def children(self, i):
        return [int(k) for k in np.flatnonzero(self.parent == i)]

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return (self.n_buses == other.n_buses and self.slack_voltage == other.slack_voltage
                and self.lines == other.lines)

    # -- serialization -----------------------------------------------------

    def to_dict(self):
        return {
            "n_buses": self.n_buses,
            "slack_voltage": self.slack_voltage,
            "lines": [{"from": ln.from_bus, "to": ln.to_bus, "r": ln.r, "x": ln.x}
                      for ln in self.lines],
        }

    @classmethod
    def from_dict(cls, d):
        """Build from the JSON layout, orienting each line away from the slack."""
        n = int(d["n_buses"])
        raw = [(int(e["from"]), int(e["to"]), float(e["r"]), float(e["x"])) for e in d["lines"]]
        adj = [[] for _ in range(n)]
        for idx, (i, k, _, _) in enumerate(raw):
            if not (0 <= i < n and 0 <= k < n):
                raise InvalidNetwork(f"bad line endpoints ({i}, {k})")
            adj[i].append((k, idx))
            adj[k].append((i, idx))
        oriented = [None] * len(raw)
        seen = {0}
        queue = deque([0])
        while queue:
            i = queue.popleft()
            for k, idx in adj[i]:
                if oriented[idx] is not None:
                    continue
                if k in seen:
                    raise InvalidNetwork("cycle detected")
                seen.add(k)
                oriented[idx] = Line(i, k, raw[idx][2], raw[idx][3])
                queue.append(k)
        if any(o is None for o in oriented):
            raise InvalidNetwork("network is not connected")
        return cls(n, tuple(oriented), float(d.get("slack_voltage", 1.0)))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Injection:
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if p.shape != q.shape:
            raise ValueError("p and q must have the same shape")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("injections must be finite")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)


@dataclass
class PowerFlowSolution:
    """DistFlow solution. Line quantities are indexed by their child bus;
    entry 0 is unused and kept at zero."""

    v: np.ndarray
    p_flow: np.ndarray
    q_flow: np.ndarray
    l: np.ndarray
    converged: bool
    iterations: int
    residual: float


# -- power flow -----------------------------------------------------------------


def _sweep(net, p, q, tol, max_iter):
    """Batched backward/forward sweep.

    ``p`` and ``q`` have shape (B, n). Returns V^2, P, Q, l, per-sample
    residuals, per-sample collapse flags and the iteration count.
    """
    B, n = p.shape
    r, x = net.r, net.x
    z2 = r * r + x * x
    rev = net.order[::-1][:-1]  # every non-slack bus, leaves first
    fwd = net.order[1:]
    par = net.parent
    l = np.zeros((B, n))
    v2 = np.full((B, n), net.slack_voltage ** 2)
    collapsed = np.zeros(B, dtype=bool)
    res = np.full(B, np.inf)
    it = 0
    for it in range(1, max_iter + 1):
        P = -p + r * l
        Q = -q + x * l
        for k in rev:
            P[:, par[k]] += P[:, k]
            Q[:, par[k]] += Q[:, k]
        P[:, 0] = 0.0
        Q[:, 0] = 0.0
        for k in fwd:
            v2[:, k] = v2[:, par[k]] - 2.0 * (r[k] * P[:, k] + x[k] * Q[:, k]) + z2[k] * l[:, k]
        bad = np.any(v2[:, 1:] <= 0.0, axis=1)
        if bad.any():
            collapsed |= bad
            v2[bad] = net.slack_voltage ** 2
        l_new = np.zeros((B, n))
        l_new[:, 1:] = (P[:, 1:] ** 2 + Q[:, 1:] ** 2) / v2[:, par[1:]]
        res = np.max(np.abs(l_new - l), axis=1) if n > 1 else np.zeros(B)
        res[collapsed] = np.inf
        if np.all(res[~collapsed] <= tol):
            # l lags by one pass: V^2, P, Q are consistent with the returned l,
            # so the only nonzero residual is the squared-current equation.
            break
        l = l_new
    return v2, P, Q, l, res, collapsed, it


def equation_residuals(net, inj, sol):
    """Max absolute violation of each DistFlow equation, recomputed bus by bus.

    Independent of the sweep: uses explicit child lists and scalar loops.
    """
    p, q = np.asarray(inj.p, float), np.asarray(inj.q, float)
    v = np.asarray(sol.v, float)
    P, Q, l = sol.p_flow, sol.q_flow, sol.l
    worst = {"active": 0.0, "reactive": 0.0, "voltage": 0.0, "current": 0.0}
    for ln in net.lines:
        i, k = ln.from_bus, ln.to_bus
        out_p = sum(P[c] for c in net.children(k))
        out_q = sum(Q[c] for c in net.children(k))
        worst["active"] = max(worst["active"], abs(-p[k] - (P[k] - ln.r * l[k] - out_p)))
        worst["reactive"] = max(worst["reactive"], abs(-q[k] - (Q[k] - ln.x * l[k] - out_q)))
        rhs = v[i] ** 2 - 2 * (ln.r * P[k] + ln.x * Q[k]) + (ln.r ** 2 + ln.x ** 2) * l[k]
        worst["voltage"] = max(worst["voltage"], abs(v[k] ** 2 - rhs))
        worst["current"] = max(worst["current"], abs(l[k] - (P[k] ** 2 + Q[k] ** 2) / v[i] ** 2))
    return worst


def solve_power_flow(net, inj, tol=1e-10, max_iter=200):
    """Solve DistFlow on a radial network by backward/forward sweep.

    Parameters
    ----------
    net : Network
    inj : Injection
        Per-bus injections; the slack entry is ignored.
    tol : float
        Bound on the residual of the squared-current equation; the other
        three equations hold to rounding by construction.
    max_iter : int

    Returns
    -------
    PowerFlowSolution

    Raises
    ------
    NonConvergence, VoltageCollapse
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    p = np.asarray(inj.p, float).reshape(1, -1)
    q = np.asarray(inj.q, float).reshape(1, -1)
    if p.shape[1] != net.n_buses:
        raise ValueError(f"injection length {p.shape[1]} != n_buses {net.n_buses}")
    v2, P, Q, l, res, collapsed, it = _sweep(net, p, q, tol, max_iter)
    if collapsed[0]:
        raise VoltageCollapse("squared voltage went nonpositive; operating point infeasible")
    if res[0] > tol:
        raise NonConvergence(f"no convergence in {max_iter} iterations (residual {res[0]:.3e})",
                             residual=float(res[0]), iterations=it)
    return PowerFlowSolution(v=np.sqrt(v2[0]), p_flow=P[0], q_flow=Q[0], l=l[0],
                             converged=True, iterations=it, residual=float(res[0]))


def solve_voltages(net, p, q, tol=1e-10, max_iter=200):
    """Vectorized solve over many injections.

    Returns ``(v, ok)`` with ``v`` of shape (B, n) and ``ok`` flagging
    samples that converged without collapse; failed rows hold NaN.
    """
    p = np.atleast_2d(np.asarray(p, float))
    q = np.atleast_2d(np.asarray(q, float))
    v2, _, _, _, res, collapsed, _ = _sweep(net, p, q, tol, max_iter)
    ok = (~collapsed) & (res <= tol)
    v = np.sqrt(np.where(ok[:, None], v2, np.nan))
    return v, ok


# -- test feeders ---------------------------------------------------------------

# 13-bus balanced equivalent of the IEEE 13-node topology:
# 0=650 1=632 2=633 3=634 4=645 5=646 6=671 7=692 8=675 9=684 10=611 11=652 12=680
_FEEDER_13 = [
    (0, 1, 0.0396, 0.0792),
    (1, 2, 0.0198, 0.0264),
    (2, 3, 0.0264, 0.0528),
    (1, 4, 0.0264, 0.0264),
    (4, 5, 0.0165, 0.0165),
    (1, 6, 0.0462, 0.0660),
    (6, 7, 0.0033, 0.0033),
    (7, 8, 0.0264, 0.0264),
    (6, 9, 0.0165, 0.0165),
    (9, 10, 0.0198, 0.0198),
    (9, 11, 0.0330, 0.0264),
    (6, 12, 0.0330, 0.0396),
]


def make_test_feeder(kind="path_13", n=None, seed=0):
    """Return a shipped or random radial feeder.

    ``kind`` is ``"path_13"`` (fixed 13-bus feeder) or ``"random_tree"``.
    Random trees attach each new bus to a uniformly chosen earlier bus of a
    random labelling (a uniform random recursive tree) and draw r and x
    log-uniformly from [0.005, 0.05].
    """
    if kind == "path_13":
        return Network(13, tuple(Line(*row) for row in _FEEDER_13))
    if kind != "random_tree":
        raise ValueError(f"unknown feeder kind {kind!r}")
    if n is None or n < 2:
        raise ValueError("random_tree needs n >= 2")
    rng = np.random.default_rng(seed)
    label = np.concatenate([[0], 1 + rng.permutation(n - 1)])
    lo, hi = np.log(0.005), np.log(0.05)
    lines = []
    for pos in range(1, n):
        attach = int(rng.integers(0, pos))
        r, x = np.exp(rng.uniform(lo, hi, size=2))
        lines.append(Line(int(label[attach]), int(label[pos]), float(r), float(x)))
    lines.sort(key=lambda ln: ln.to_bus)
    return Network(n, tuple(lines))


# -- synthetic load profiles and datasets -----------------------------------------


@dataclass(frozen=True)
class LoadProfileConfig:
    """Synthetic smart-meter profile.

    Base loads are drawn once per network (from ``base_seed``). Each sample
    picks an hour of day; loads scale by a daily sinusoid with uniform
    noise, PV buses inject a clipped solar sinusoid, and the reactive
    injection gets an independent excitation term so the data covers the
    control range.
    """

    p_base_range: tuple = (-0.05, -0.01)
    power_factor: float = 0.9
    load_amplitude: float = 0.4
    load_noise: float = 0.2
    peak_hour: float = 19.0
    pv_fraction: float = 0.5
    pv_capacity: float = 0.17
    pv_noise: float = 0.1
    q_excitation: float = 0.03
    q_relative: float = 0.0
    base_seed: int = 0

    def base_loads(self, net):
        rng = np.random.default_rng(self.base_seed)
        lo, hi = self.p_base_range
        p = rng.uniform(lo, hi, size=net.n_buses)
        p[0] = 0.0
        tan_phi = np.tan(np.arccos(self.power_factor))
        q = p * tan_phi
        n_pv = int(round(self.pv_fraction * (net.n_buses - 1)))
        pv = np.zeros(net.n_buses, dtype=bool)
        if n_pv:
            pv[1 + rng.choice(net.n_buses - 1, size=n_pv, replace=False)] = True
        return p, q, pv

    def uncontrolled(self):
        """Same profile with the reactive excitation switched off."""
        return replace(self, q_excitation=0.0, q_relative=0.0)


def sample_injections(net, profile, n_samples, rng):
    """Draw ``(p, q)`` arrays of shape (n_samples, n_buses); slack entries are 0."""
    p_base, q_base, pv = profile.base_loads(net)
    n = net.n_buses
    hour = rng.uniform(0.0, 24.0, size=(n_samples, 1))
    shape = 1.0 + profile.load_amplitude * np.cos(2 * np.pi * (hour - profile.peak_hour) / 24.0)
    load_scale = shape + rng.uniform(-profile.load_noise, profile.load_noise, size=(n_samples, n))
    load_scale = np.maximum(load_scale, 0.0)
    p = p_base * load_scale
    q = q_base * load_scale
    solar = np.maximum(np.sin(np.pi * (hour - 6.0) / 12.0), 0.0)
    pv_out = profile.pv_capacity * solar * (1.0 + rng.uniform(-profile.pv_noise, profile.pv_noise,
                                                              size=(n_samples, n)))
    p = p + np.where(pv, np.maximum(pv_out, 0.0), 0.0)
    q = q + np.abs(q) * rng.uniform(-profile.q_relative, profile.q_relative, size=(n_samples, n))
    q = q + rng.uniform(-profile.q_excitation, profile.q_excitation, size=(n_samples, n))
    p[:, 0] = 0.0
    q[:, 0] = 0.0
    return p, q


@dataclass
class Dataset:
    """Rows of (p, q, |V - V0|), each block of width n_buses."""

    p: np.ndarray
    q: np.ndarray
    dv: np.ndarray
    n_rejected: int = 0

    @property
    def n_buses(self):
        return self.p.shape[1]

    def __len__(self):
        return self.p.shape[0]

    @property
    def inputs(self):
        return np.hstack([self.p, self.q])

    def subset(self, idx):
        return Dataset(self.p[idx], self.q[idx], self.dv[idx])

    def header(self):
        n = self.n_buses
        return ([f"p_{i}" for i in range(1, n + 1)] + [f"q_{i}" for i in range(1, n + 1)]
                + [f"dv_{i}" for i in range(1, n + 1)])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for row in np.hstack([self.p, self.q, self.dv]):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        n = sum(1 for h in header if h.startswith("p_"))
        if len(header) != 3 * n:
            raise ValueError(f"{path}: expected 3*{n} columns, got {len(header)}")
        a = np.array(body, dtype=float).reshape(-1, 3 * n)
        return cls(a[:, :n].copy(), a[:, n:2 * n].copy(), a[:, 2 * n:].copy())


def generate_dataset(net, profile, n_samples, seed, tol=1e-10, max_iter=200):
    """Simulate ``n_samples`` labelled rows; non-converged draws are redrawn.

    The nominal magnitude of every bus is the slack voltage.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    ps, qs, vs = [], [], []
    have = 0
    drawn = 0
    rejected = 0
    while have < n_samples:
        need = n_samples - have
        p, q = sample_injections(net, profile, need, rng)
        v, ok = solve_voltages(net, p, q, tol=tol, max_iter=max_iter)
        drawn += need
        rejected += int((~ok).sum())
        if rejected > 0.5 * drawn:
            raise TooManyRejections(f"{rejected} of {drawn} draws failed power flow")
        ps.append(p[ok])
        qs.append(q[ok])
        vs.append(v[ok])
        have += int(ok.sum())
    if rejected:
        logger.info("redrew %d non-converged samples", rejected)
    p = np.vstack(ps)[:n_samples]
    q = np.vstack(qs)[:n_samples]
    v = np.vstack(vs)[:n_samples]
    return Dataset(p, q, np.abs(v - net.slack_voltage), n_rejected=rejected)
