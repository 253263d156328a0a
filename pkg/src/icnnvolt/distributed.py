"""Dual-decomposition voltage regulation over a communication graph.

Every agent keeps its own copy of the full reactive vector and solves a
local problem built from one output head of the shared surrogate plus
linear price terms. Neighbours swap estimates after each round and move
the prices by dual ascent until adjacent copies agree.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import icnn
from .errors import DimensionMismatch, InvalidNetwork, NoConsensus
from .regulate import RegulateConfig, _bounds, pgd_batch, project_box, solver_model

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CommGraph:
    n_agents: int
    edges: tuple

    def __post_init__(self):
        n = self.n_agents
        edges = []
        seen = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j or not (0 <= i < n and 0 <= j < n):
                raise InvalidNetwork(f"bad communication edge ({i}, {j})")
            key = (min(i, j), max(i, j))
            if key not in seen:
                seen.add(key)
                edges.append(key)
        object.__setattr__(self, "edges", tuple(sorted(edges)))
        adj = self.neighbors_map()
        reached = {0}
        queue = deque([0])
        while queue:
            i = queue.popleft()
            for j in adj[i]:
                if j not in reached:
                    reached.add(j)
                    queue.append(j)
        if len(reached) != n:
            raise InvalidNetwork("communication graph is not connected")

    def neighbors_map(self):
        adj = {i: [] for i in range(self.n_agents)}
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return {i: sorted(v) for i, v in adj.items()}

    @classmethod
    def from_network(cls, net):
        return cls(net.n_buses, tuple((ln.from_bus, ln.to_bus) for ln in net.lines))

    @classmethod
    def ring(cls, n):
        if n == 1:
            return cls(1, ())
        if n == 2:
            return cls(2, ((0, 1),))
        return cls(n, tuple((i, (i + 1) % n) for i in range(n)))

    def to_dict(self):
        return {"n": self.n_agents, "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["n"]), tuple(tuple(e) for e in d["edges"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class AgentState:
    """One bus controller.

    ``q_local`` is this agent's copy of the full reactive vector.
    ``duals[(a, b)]`` is the price vector on ``q^a - q^b`` for each directed
    edge touching this agent. Both endpoints of an edge hold the same two
    prices and update them from the same exchanged copies.
    ``neighbor_q`` holds the copies received in the previous round.
    """

    id: int
    q_local: np.ndarray
    neighbors: list
    duals: dict = field(default_factory=dict)
    neighbor_q: dict = field(default_factory=dict)

    @classmethod
    def initial(cls, i, q0, neighbors):
        q0 = np.array(q0, dtype=float)
        duals = {}
        for j in neighbors:
            duals[(i, j)] = np.zeros_like(q0)
            duals[(j, i)] = np.zeros_like(q0)
        return cls(i, q0, list(neighbors), duals, {j: q0.copy() for j in neighbors})

    def price_vector(self):
        """Linear coefficients of this agent's local objective."""
        c = np.zeros(len(self.q_local))
        for j in self.neighbors:
            c += self.duals[(self.id, j)] - self.duals[(j, self.id)]
        return c

    def penalty_anchor(self):
        """Sum over neighbours of the edge midpoints from the previous round."""
        return sum((0.5 * (self.q_local + self.neighbor_q[j]) for j in self.neighbors),
                   np.zeros(len(self.q_local)))

    def message_to(self, j):
        """What neighbour ``j`` receives: our current copy of the vector."""
        return self.q_local.copy()

    def receive(self, inbox, step):
        """Store neighbour copies and apply the dual update on each incident edge."""
        i = self.id
        for j in self.neighbors:
            qj = inbox[j]
            if step is not None:
                self.duals[(i, j)] = dual_update(self.duals[(i, j)], self.q_local, qj, step)
                self.duals[(j, i)] = dual_update(self.duals[(j, i)], qj, self.q_local, step)
            self.neighbor_q[j] = np.array(qj, dtype=float)

    def local_gap(self, inbox):
        return max((float(np.max(np.abs(self.q_local - inbox[j]), initial=0.0))
                    for j in self.neighbors), default=0.0)


def dual_update(lam, q_i_at_i, q_i_at_j, step):
    """``lam + step * (q_i^i - q_i^j)``; works elementwise on vectors."""
    if not step > 0:
        raise ValueError("dual step must be positive")
    return lam + step * (np.asarray(q_i_at_i) - np.asarray(q_i_at_j))


@dataclass(frozen=True)
class DistributedConfig:
    """Consensus settings.

    ``penalty`` (rho) adds ``rho * sum_j ||q - (q^i + q^j)/2||^2`` over the
    previous-round copies to each local problem. With ``penalty == 0`` the
    method is plain dual decomposition and ``dual_step`` defaults to
    ``0.1 / sqrt(t)``. With ``penalty > 0`` it defaults to the constant
    ``penalty / 2``, which makes the iteration decentralized consensus
    ADMM. ``inner_iters`` caps the warm-started PGD steps per round.
    """

    penalty: float = 1.0
    dual_step: float | None = None
    schedule: str | None = None
    consensus_tol: float = 1e-3
    max_rounds: int = 1000
    inner_iters: int = 100
    subproblem: RegulateConfig = RegulateConfig()
    strict: bool = False

    def __post_init__(self):
        if not self.consensus_tol > 0:
            raise ValueError("consensus_tol must be positive")
        if self.penalty < 0:
            raise ValueError("penalty must be nonnegative")
        if self.schedule not in (None, "sqrt", "constant"):
            raise ValueError("schedule must be 'sqrt' or 'constant'")
        if self.dual_step is not None and not self.dual_step > 0:
            raise ValueError("dual_step must be positive")

    def resolved_schedule(self):
        if self.schedule is not None:
            return self.schedule
        return "constant" if self.penalty > 0 else "sqrt"

    def step(self, t):
        base = self.dual_step
        if base is None:
            base = 0.5 * self.penalty if self.penalty > 0 else 0.1
        return base / np.sqrt(t) if self.resolved_schedule() == "sqrt" else base


def _local_problems(agents, model, p, sub, penalty):
    """Vectorized value/gradient for a set of agents' local objectives."""
    n = len(p)
    alpha = np.ones(model.out_dim) if sub.alpha is None else np.asarray(sub.alpha, float)
    solver = solver_model(model, sub)
    ids = np.array([a.id for a in agents])
    prices = np.array([a.price_vector() for a in agents])
    degree = np.array([len(a.neighbors) for a in agents], float)[:, None]
    anchors = np.array([a.penalty_anchor() for a in agents])
    heads = np.zeros((len(agents), model.out_dim))
    heads[np.arange(len(agents)), ids] = alpha[ids]

    def vg(Q, rows):
        u = np.concatenate([np.broadcast_to(p, Q.shape), Q], axis=1)
        out, gu = icnn.value_and_vjp(solver, u, heads[rows])
        vals = np.sum(out * heads[rows], axis=1) + np.sum(prices[rows] * Q, axis=1)
        grad = gu[:, n:] + prices[rows]
        if penalty > 0:
            # sum_j ||q - m_j||^2 = deg ||q||^2 - 2 q.sum_j m_j + const
            d = degree[rows]
            vals = vals + penalty * np.sum(d * Q * Q - 2.0 * anchors[rows] * Q, axis=1)
            grad = grad + penalty * (2.0 * d * Q - 2.0 * anchors[rows])
        return vals, grad

    return vg


def solve_subproblems(agents, model, p, sub, penalty=0.0, max_iter=None):
    """Solve every agent's local problem, warm-started at its current copy.

    Row ``k`` of the batched solve touches only ``agents[k]``'s state.
    Returns the number of inner solves that stopped on the iteration cap.
    """
    p = np.asarray(p, float)
    if model.in_dim != 2 * len(p):
        raise DimensionMismatch(f"model expects {model.in_dim} inputs, got p of width {len(p)}")
    Q0 = np.array([a.q_local for a in agents])
    lo, hi = _bounds(sub, Q0.shape)
    vg = _local_problems(agents, model, p, sub, penalty)
    x, _, _, conv = pgd_batch(vg, Q0, lo, hi, sub.step_size, sub.grad_tol,
                              sub.max_iter if max_iter is None else max_iter, sub.step_decay,
                              sub.backtrack)
    for a, q in zip(agents, x):
        a.q_local = q.copy()
    return int((~conv).sum())


def agent_subproblem(agent, model, p, cfg, penalty=0.0):
    """Minimize ``alpha_i f_i(q^i) + sum_j (lam_ij - lam_ji) . q^i`` over the box.

    ``cfg`` is the inner :class:`RegulateConfig`. A positive ``penalty``
    adds the proximal consensus term. Updates ``agent.q_local`` in place
    and returns it.
    """
    solve_subproblems([agent], model, p, cfg, penalty)
    return agent.q_local


@dataclass
class DistributedResult:
    q: np.ndarray
    agent_q: np.ndarray
    rounds: int
    converged: bool
    gap_trace: list
    objective_trace: list
    agents: list

    @property
    def gap(self):
        return self.gap_trace[-1] if self.gap_trace else 0.0


def consensus_vector(agents):
    """Arithmetic mean of the agents' copies."""
    return np.mean([a.q_local for a in agents], axis=0)


def run_distributed(model, p, graph, cfg=DistributedConfig(), q0=None):
    """Bulk-synchronous consensus over ``graph``.

    Each round every agent solves its local problem from the round-start
    prices and neighbour copies, neighbours exchange copies, and both ends
    of every edge apply the same dual update. Stops when the largest edge
    disagreement ``max |q^i - q^j|`` and the largest change of any copy
    over the round both drop to ``consensus_tol``, or after ``max_rounds``.
    """
    p = np.asarray(p, float)
    n = len(p)
    if graph.n_agents != n:
        raise DimensionMismatch(f"graph has {graph.n_agents} agents for {n} buses")
    sub = cfg.subproblem
    lo, hi = _bounds(sub, (n,))
    start = np.zeros(n) if q0 is None else np.asarray(q0, float)
    start = project_box(start, lo, hi)
    adj = graph.neighbors_map()
    agents = [AgentState.initial(i, start, adj[i]) for i in range(n)]
    solver = solver_model(model, sub)
    alpha = np.ones(model.out_dim) if sub.alpha is None else np.asarray(sub.alpha, float)
    gaps, objs = [], []
    converged = False
    t = 0
    for t in range(1, cfg.max_rounds + 1):
        before = np.array([a.q_local for a in agents])
        solve_subproblems(agents, model, p, sub, cfg.penalty, cfg.inner_iters)
        moved = float(np.max(np.abs(np.array([a.q_local for a in agents]) - before)))
        inboxes = {i: {j: agents[j].message_to(i) for j in adj[i]} for i in range(n)}
        gap = max((agents[i].local_gap(inboxes[i]) for i in range(n)), default=0.0)
        gaps.append(float(gap))
        q_bar = consensus_vector(agents)
        objs.append(float(icnn.forward(solver, np.concatenate([p, q_bar])) @ alpha))
        step = cfg.step(t)
        for i in range(n):
            agents[i].receive(inboxes[i], step)
        # agreement alone can be transient; the copies must also have settled
        if gap <= cfg.consensus_tol and moved <= cfg.consensus_tol:
            converged = True
            break
    result = DistributedResult(consensus_vector(agents), np.array([a.q_local for a in agents]),
                               t, converged, gaps, objs, agents)
    if not converged:
        msg = f"no consensus after {cfg.max_rounds} rounds (gap {gaps[-1]:.3e})"
        if cfg.strict:
            raise NoConsensus(msg, trace=result)
        logger.warning(msg)
    return result
