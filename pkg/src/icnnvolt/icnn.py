"""Input-convex neural network with passthrough layers on an expanded input.

The network sees ``uhat = [u; -u]``. Layer 1 computes ``g(W1 uhat + b1)``,
layers 2..m-1 compute ``g(W_l z + D_l uhat + b_l)`` and the last layer is
the same affine map without activation. Every ``W_l`` with ``l >= 2`` is
kept entrywise nonnegative, which makes each output convex in ``u``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ShapeMismatch

LN2 = float(np.log(2.0))


def relu(x):
    return np.maximum(x, 0.0)


def softplus(x, t=1.0):
    """Sharpened softplus ``log(1 + exp(t x)) / t``, overflow-safe."""
    if not t > 0:
        raise ValueError("sharpness t must be positive")
    x = np.asarray(x, dtype=float)
    tx = t * x
    # logaddexp(0, tx) = max(tx, 0) + log1p(exp(-|tx|))
    out = (np.maximum(tx, 0.0) + np.log1p(np.exp(-np.abs(tx)))) / t
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Activation:
    kind: str = "relu"
    t: float = 50.0

    def __post_init__(self):
        if self.kind not in ("relu", "softplus"):
            raise ValueError(f"unsupported activation {self.kind!r}")
        if self.kind == "softplus" and not self.t > 0:
            raise ValueError("softplus sharpness must be positive")

    def __call__(self, x):
        if self.kind == "relu":
            return relu(x)
        return softplus(x, self.t)

    def derivative(self, x):
        # ReLU'(0) := 0
        if self.kind == "relu":
            return (x > 0).astype(float)
        return expit(self.t * x)


@dataclass(frozen=True, eq=False)
class LayerParams:
    W: np.ndarray
    D: np.ndarray | None
    b: np.ndarray

    def arrays(self):
        return [a for a in (self.W, self.D, self.b) if a is not None]


@dataclass(frozen=True, eq=False)
class IcnnModel:
    layers: tuple
    activation: Activation = Activation()
    in_dim: int = 0
    out_dim: int = 0

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ShapeMismatch("model needs at least one layer")
        d2 = 2 * self.in_dim
        prev = None
        for idx, lp in enumerate(layers):
            W = np.asarray(lp.W, float)
            if W.ndim != 2:
                raise ShapeMismatch(f"layer {idx + 1}: W must be 2-D")
            width = W.shape[0]
            if idx == 0:
                if W.shape[1] != d2:
                    raise ShapeMismatch(f"layer 1: W has {W.shape[1]} columns, expected {d2}")
                if lp.D is not None:
                    raise ShapeMismatch("layer 1 has no passthrough")
            else:
                if W.shape[1] != prev:
                    raise ShapeMismatch(f"layer {idx + 1}: W has {W.shape[1]} columns, expected {prev}")
                if lp.D is None or np.shape(lp.D) != (width, d2):
                    raise ShapeMismatch(f"layer {idx + 1}: D must have shape ({width}, {d2})")
            if np.shape(lp.b) != (width,):
                raise ShapeMismatch(f"layer {idx + 1}: b must have shape ({width},)")
            prev = width
        if prev != self.out_dim:
            raise ShapeMismatch(f"last layer width {prev} != out_dim {self.out_dim}")

    @property
    def depth(self):
        return len(self.layers)

    @property
    def widths(self):
        return [lp.W.shape[0] for lp in self.layers]

    def with_activation(self, activation):
        return replace(self, activation=activation)

    def select_output(self, k):
        """Scalar model for output coordinate ``k``."""
        if not 0 <= k < self.out_dim:
            raise ShapeMismatch(f"output {k} out of range for {self.out_dim} outputs")
        last = self.layers[-1]
        keep = LayerParams(last.W[k:k + 1], None if last.D is None else last.D[k:k + 1], last.b[k:k + 1])
        return replace(self, layers=self.layers[:-1] + (keep,), out_dim=1)

    def is_feasible(self):
        return all(np.all(lp.W >= 0) for lp in self.layers[1:])

    # -- serialization -----------------------------------------------------

    def to_dict(self):
        return {
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "activation": {"kind": self.activation.kind, "t": self.activation.t},
            "layers": [{"W": lp.W.tolist(), "D": None if lp.D is None else lp.D.tolist(),
                        "b": lp.b.tolist()} for lp in self.layers],
        }

    @classmethod
    def from_dict(cls, d):
        act = Activation(d["activation"]["kind"], float(d["activation"].get("t", 50.0)))
        d2 = 2 * int(d["in_dim"])
        layers = []
        for lp in d["layers"]:
            W = np.array(lp["W"], dtype=float).reshape(len(lp["W"]), -1)
            D = None if lp["D"] is None else np.array(lp["D"], dtype=float).reshape(W.shape[0], d2)
            layers.append(LayerParams(W, D, np.array(lp["b"], dtype=float)))
        return cls(tuple(layers), act, int(d["in_dim"]), int(d["out_dim"]))

    def save(self, path):
        # json writes floats with repr, which round-trips exactly
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_model(in_dim, out_dim, hidden, seed=0, activation=Activation(), bias_scale=0.1):
    """Random feasible model with hidden widths ``hidden``.

    The first layer is ``N(0, 1/fan_in)``. Later ``W`` are
    ``U(0, 2/fan_in)``: nonnegative with mean ``1/fan_in``, so activations
    keep their scale with depth instead of growing by ~sqrt(fan_in) per
    layer. Passthrough and biases are ``N(0, bias_scale^2)``. The output
    layer starts at zero, so a fresh model predicts a constant and
    training begins from the target mean rather than a random function.
    """
    rng = np.random.default_rng(seed)
    widths = list(hidden) + [out_dim]
    d2 = 2 * in_dim
    layers = []
    fan_in = d2
    for idx, w in enumerate(widths):
        if idx == 0:
            W = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(w, fan_in))
        else:
            W = rng.uniform(0.0, 2.0 / fan_in, size=(w, fan_in))
        D = None if idx == 0 else rng.normal(0.0, bias_scale, size=(w, d2))
        b = rng.normal(0.0, bias_scale, size=w)
        if idx == len(widths) - 1:
            W, D, b = np.zeros_like(W), None if D is None else np.zeros_like(D), np.zeros_like(b)
        layers.append(LayerParams(W, D, b))
        fan_in = w
    return IcnnModel(tuple(layers), activation, in_dim, out_dim)


def default_hidden(n_buses):
    """Three hidden layers up to 13 buses, four beyond; width 4 per bus."""
    depth = 3 if n_buses <= 13 else 4
    return [4 * n_buses] * depth


def expand(u):
    u = np.asarray(u, dtype=float)
    return np.concatenate([u, -u], axis=-1)


def _check_input(model, u):
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != model.in_dim or u.ndim not in (1, 2):
        raise ShapeMismatch(f"input has shape {u.shape}, expected (..., {model.in_dim})")
    return u


def _forward_cache(model, uhat):
    """Return (pre-activations, layer outputs) for a 2-D batch ``uhat``."""
    g = model.activation
    pres, outs = [], []
    z = None
    last = model.depth - 1
    for idx, lp in enumerate(model.layers):
        if idx == 0:
            a = uhat @ lp.W.T + lp.b
        else:
            a = z @ lp.W.T + uhat @ lp.D.T + lp.b
        z = a if idx == last else g(a)
        pres.append(a)
        outs.append(z)
    return pres, outs


def forward_expanded(model, uhat):
    """Evaluate on an already expanded input of width ``2 * in_dim``."""
    uhat = np.asarray(uhat, dtype=float)
    single = uhat.ndim == 1
    if uhat.shape[-1] != 2 * model.in_dim:
        raise ShapeMismatch(f"expanded input must have width {2 * model.in_dim}")
    _, outs = _forward_cache(model, np.atleast_2d(uhat))
    return outs[-1][0] if single else outs[-1]


def forward(model, u):
    """Model outputs for ``u`` of shape (d,) or (B, d)."""
    u = _check_input(model, u)
    return forward_expanded(model, expand(u))


def _backward(model, uhat, upstream, want_params):
    pres, outs = _forward_cache(model, uhat)
    g = model.activation
    last = model.depth - 1
    delta = upstream
    ghat = np.zeros_like(uhat)
    grads = [None] * model.depth
    for idx in range(last, -1, -1):
        lp = model.layers[idx]
        if idx != last:
            delta = delta * g.derivative(pres[idx])
        prev = uhat if idx == 0 else outs[idx - 1]
        if want_params:
            gW = delta.T @ prev
            gD = None if lp.D is None else delta.T @ uhat
            grads[idx] = LayerParams(gW, gD, delta.sum(axis=0))
        if lp.D is not None:
            ghat += delta @ lp.D
        if idx == 0:
            ghat += delta @ lp.W
        else:
            delta = delta @ lp.W
    return ghat, grads, outs[-1]


def vjp_input(model, u, upstream):
    """Gradient of ``<upstream, f(u)>`` with respect to ``u``; batched."""
    u = _check_input(model, u)
    single = u.ndim == 1
    U = np.atleast_2d(u)
    up = np.broadcast_to(np.asarray(upstream, float), (U.shape[0], model.out_dim))
    ghat, _, _ = _backward(model, expand(U), up, want_params=False)
    d = model.in_dim
    gu = ghat[:, :d] - ghat[:, d:]
    return gu[0] if single else gu


def value_and_vjp(model, u, upstream):
    """Like :func:`vjp_input` but also returns the forward outputs."""
    u = _check_input(model, u)
    single = u.ndim == 1
    U = np.atleast_2d(u)
    up = np.broadcast_to(np.asarray(upstream, float), (U.shape[0], model.out_dim))
    ghat, _, out = _backward(model, expand(U), up, want_params=False)
    d = model.in_dim
    gu = ghat[:, :d] - ghat[:, d:]
    return (out[0], gu[0]) if single else (out, gu)


def grad_input(model, u):
    """Jacobian of the outputs with respect to ``u``, shape (out_dim, in_dim).

    A subgradient selection for ReLU models.
    """
    u = _check_input(model, u)
    if u.ndim != 1:
        raise ShapeMismatch("grad_input takes a single input vector")
    U = np.repeat(u[None, :], model.out_dim, axis=0)
    return vjp_input(model, U, np.eye(model.out_dim))


def grad_params(model, u, upstream):
    """Gradients of ``sum_b <upstream_b, f(u_b)>`` for every W, D and b.

    Returns a list of :class:`LayerParams` shaped like ``model.layers``.
    """
    u = _check_input(model, u)
    U = np.atleast_2d(u)
    up = np.asarray(upstream, float)
    if up.shape[-1] != model.out_dim:
        raise ShapeMismatch(f"upstream must have width {model.out_dim}")
    up = np.broadcast_to(up, (U.shape[0], model.out_dim))
    _, grads, _ = _backward(model, expand(U), up, want_params=True)
    return grads


def project_weights(model):
    """Clamp every ``W_l`` with ``l >= 2`` to the nonnegative orthant.

    This is the Euclidean projection onto the feasible parameter set.
    Already-feasible layers are returned as the same objects.
    """
    layers = [model.layers[0]]
    for lp in model.layers[1:]:
        if np.all(lp.W >= 0):
            layers.append(lp)
        else:
            layers.append(LayerParams(np.maximum(lp.W, 0.0), lp.D, lp.b))
    return replace(model, layers=tuple(layers))


def apply_step(model, grads, lr):
    """Plain gradient step ``theta - lr * grad`` (no projection)."""
    layers = []
    for lp, gp in zip(model.layers, grads):
        D = None if lp.D is None else lp.D - lr * gp.D
        layers.append(LayerParams(lp.W - lr * gp.W, D, lp.b - lr * gp.b))
    return replace(model, layers=tuple(layers))
