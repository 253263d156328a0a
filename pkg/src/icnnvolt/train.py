"""Projected stochastic gradient descent on the mean-squared-error loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import icnn
from .errors import DivergedLoss, EmptyDataset, LengthMismatch

logger = logging.getLogger(__name__)


def mse_loss(pred, target):
    """``||target - pred||^2 / N`` for two vectors of equal length."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise LengthMismatch(f"pred {pred.shape} vs target {target.shape}")
    if pred.size == 0:
        raise LengthMismatch("empty vectors")
    diff = target - pred
    return float(diff @ diff) / diff.size


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.2
    batch_size: int = 64
    n_iterations: int = 20_000
    seed: int = 0
    validation_fraction: float = 0.2
    project: bool = True
    standardize: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")


@dataclass
class TrainReport:
    train_loss_curve: list
    val_mae: float
    final_model: icnn.IcnnModel
    smoothed_loss_curve: list = field(default_factory=list)
    train_idx: np.ndarray | None = None
    val_idx: np.ndarray | None = None

    @property
    def val_mae_pct(self):
        """Held-out MAE as a percentage of the (unit) nominal voltage."""
        return 100.0 * self.val_mae


def split_indices(n, validation_fraction, seed):
    """Deterministic (train, validation) index split."""
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(round(validation_fraction * n))
    if n - n_val < 1:
        n_val = n - 1
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def mean_absolute_error(pred, target):
    return float(np.mean(np.abs(np.asarray(pred) - np.asarray(target))))


@dataclass(frozen=True)
class Standardizer:
    """Per-column affine rescaling used only while training.

    Folding it into the parameters is exact and keeps every ``W_l`` (l >= 2)
    nonnegative, since inputs only touch W1 and the passthroughs and the
    output scales are positive.
    """

    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray

    @classmethod
    def fit(cls, X, Y):
        xs = X.std(axis=0)
        ys = Y.std(axis=0)
        xs[xs == 0] = 1.0
        ys[ys == 0] = 1.0
        return cls(X.mean(axis=0), xs, Y.mean(axis=0), ys)

    @classmethod
    def identity(cls, d, n_out):
        return cls(np.zeros(d), np.ones(d), np.zeros(n_out), np.ones(n_out))

    def _hat(self):
        s = np.concatenate([1.0 / self.x_scale, 1.0 / self.x_scale])
        c = np.concatenate([self.x_mean / self.x_scale, -self.x_mean / self.x_scale])
        return s, c

    def to_raw(self, model):
        """Parameters acting on standardized data -> parameters on raw data."""
        s, c = self._hat()
        layers = []
        last = model.depth - 1
        for idx, lp in enumerate(model.layers):
            if idx == 0:
                W, D, b = lp.W * s, None, lp.b - lp.W @ c
            else:
                W, D, b = lp.W, lp.D * s, lp.b - lp.D @ c
            if idx == last:
                W = self.y_scale[:, None] * W
                D = None if D is None else self.y_scale[:, None] * D
                b = self.y_scale * b + self.y_mean
            layers.append(icnn.LayerParams(W, D, b))
        return replace(model, layers=tuple(layers))

    def to_standardized(self, model):
        s, c = self._hat()
        layers = []
        last = model.depth - 1
        for idx, lp in enumerate(model.layers):
            W, D, b = lp.W, lp.D, lp.b
            if idx == last:
                W = W / self.y_scale[:, None]
                D = None if D is None else D / self.y_scale[:, None]
                b = (b - self.y_mean) / self.y_scale
            if idx == 0:
                W = W / s
                b = b + W @ c
            else:
                D = D / s
                b = b + D @ c
            layers.append(icnn.LayerParams(W, D, b))
        return replace(model, layers=tuple(layers))


def _ema(values, beta=0.98):
    out = []
    acc = None
    for v in values:
        acc = v if acc is None else beta * acc + (1 - beta) * v
        out.append(acc)
    return out


def train(model, data, cfg=TrainConfig(), callback=None):
    """Fit ``model`` to ``data`` (inputs ``[p, q]``, targets ``dv``).

    With ``cfg.standardize`` the loop runs on per-column standardized
    inputs and targets (statistics from the training split) and the
    rescaling is folded back into the returned parameters, so
    ``final_model`` acts on raw per-unit data; the recorded loss curve is
    always in raw units. ``model`` itself is in raw units too; use
    :func:`fit_icnn` to start from a fresh initialization. ``callback(it,
    loss, model)`` sees the model in training coordinates.

    Each iteration samples ``batch_size`` training rows with replacement,
    takes a gradient step on the batch MSE and projects the weights back
    onto ``W_{2:m} >= 0`` (skipped when ``cfg.project`` is false).
    """
    if len(data) == 0:
        raise EmptyDataset("no rows to train on")
    X = data.inputs
    Y = data.dv
    if X.shape[1] != model.in_dim or Y.shape[1] != model.out_dim:
        raise LengthMismatch(f"data has {X.shape[1]} inputs / {Y.shape[1]} targets, model expects "
                             f"{model.in_dim} / {model.out_dim}")
    train_idx, val_idx = split_indices(len(data), cfg.validation_fraction, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    if cfg.standardize:
        st = Standardizer.fit(X[train_idx], Y[train_idx])
        model = st.to_standardized(model)
        X = (X - st.x_mean) / st.x_scale
        Y = (Y - st.y_mean) / st.y_scale
    else:
        st = Standardizer.identity(X.shape[1], Y.shape[1])
    if cfg.project:
        model = icnn.project_weights(model)
    y2 = st.y_scale ** 2
    n_out = model.out_dim
    curve = []
    for it in range(cfg.n_iterations):
        idx = train_idx[rng.integers(0, len(train_idx), size=cfg.batch_size)]
        xb, yb = X[idx], Y[idx]
        uhat = icnn.expand(xb)
        pred = icnn._forward_cache(model, uhat)[1][-1]
        resid = pred - yb
        loss = float(np.mean(resid * resid * y2))
        if not np.isfinite(loss):
            raise DivergedLoss(f"loss became non-finite at iteration {it}; lower the learning rate")
        upstream = 2.0 * resid / (n_out * len(idx))
        _, grads, _ = icnn._backward(model, uhat, upstream, want_params=True)
        model = icnn.apply_step(model, grads, cfg.learning_rate)
        if cfg.project:
            model = icnn.project_weights(model)
        curve.append(loss)
        if callback is not None:
            callback(it, loss, model)
    if cfg.standardize:
        model = st.to_raw(model)
        X, Y = data.inputs, data.dv
    eval_idx = val_idx if len(val_idx) else train_idx
    val_mae = mean_absolute_error(icnn.forward(model, X[eval_idx]), Y[eval_idx])
    logger.info("trained %d iterations, held-out MAE %.3e", cfg.n_iterations, val_mae)
    return TrainReport(curve, val_mae, model, _ema(curve), train_idx, val_idx)


def fit_icnn(data, cfg=TrainConfig(), hidden=None, init_seed=None, activation=icnn.Activation(),
             callback=None):
    """Initialize a model sized for ``data`` and train it.

    The initialization is drawn in standardized coordinates and mapped to
    raw coordinates, so :func:`train` starts from the usual scale.
    """
    n_in = data.inputs.shape[1]
    n_out = data.dv.shape[1]
    hidden = icnn.default_hidden(data.n_buses) if hidden is None else list(hidden)
    seed = cfg.seed if init_seed is None else init_seed
    model = icnn.init_model(n_in, n_out, hidden, seed=seed, activation=activation)
    if cfg.standardize:
        train_idx, _ = split_indices(len(data), cfg.validation_fraction, cfg.seed)
        model = Standardizer.fit(data.inputs[train_idx], data.dv[train_idx]).to_raw(model)
    return train(model, data, cfg, callback)
