"""Mini-batch trainer for the trained-model comparison arm.

A plain rectifier MLP fitted with adaptive per-parameter step sizes (Adam:
momentum plus second-moment scaling), squared-error or cross-entropy loss,
and best-validation-epoch selection. Deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import FeedForwardNet, Linear, Relu, Softmax
from .seeding import rng_for

__all__ = ["TrainConfig", "TrainReport", "TrainingDivergedError", "train_mlp"]

LOSSES = ("squared_error", "cross_entropy")


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    hidden_widths: tuple[int, ...] = (100, 100, 100)
    loss: str = "squared_error"
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("invalid training configuration")
        if any(wdt < 1 for wdt in self.hidden_widths):
            raise ValueError("hidden widths must be positive")
        object.__setattr__(self, "hidden_widths", tuple(self.hidden_widths))


@dataclass(frozen=True)
class TrainReport:
    train_loss: float
    val_loss: float
    best_epoch: int
    val_history: tuple[float, ...]


def _forward_params(params, X):
    """Hidden activations for backprop: returns (pre-activations list, output)."""
    pres = []
    h = X
    for k, (W, b) in enumerate(params):
        z = h @ W.T + b
        pres.append((h, z))
        h = np.maximum(z, 0.0) if k < len(params) - 1 else z
    return pres, h


def _loss_and_grad(params, X, y, loss):
    pres, out = _forward_params(params, X)
    n = X.shape[0]
    if loss == "squared_error":
        resid = out - y
        value = float((resid ** 2).mean())
        g = 2.0 * resid / resid.size
    else:
        shifted = out - out.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        logp = shifted - logz
        value = float(-logp[np.arange(n), y].mean())
        g = np.exp(logp)
        g[np.arange(n), y] -= 1.0
        g /= n
    grads = []
    for k in range(len(params) - 1, -1, -1):
        h_in, z = pres[k]
        gW = g.T @ h_in
        gb = g.sum(axis=0)
        grads.append((gW, gb))
        if k > 0:
            g = g @ params[k][0]
            g = g * (pres[k - 1][1] > 0.0)
    grads.reverse()
    return value, grads


def _evaluate(params, X, y, loss):
    value, _ = _loss_and_grad(params, X, y, loss)
    return value


def train_mlp(train, val, cfg: TrainConfig) -> tuple[FeedForwardNet, TrainReport]:
    """Fit a rectifier MLP on a train bundle, selecting the best-val epoch.

    ``train`` / ``val`` are DatasetBundles (or anything with ``features`` and
    ``labels``). Returns the fitted net and a report with final losses; for
    cross-entropy the returned network ends with a softmax layer.
    """
    X = np.asarray(train.features, dtype=np.float64)
    Xv = np.asarray(val.features, dtype=np.float64)
    if X.shape[1] != Xv.shape[1]:
        raise ValueError("train/val feature dimensions disagree")
    if cfg.loss == "cross_entropy":
        y = np.asarray(train.labels).astype(np.int64).reshape(-1)
        yv = np.asarray(val.labels).astype(np.int64).reshape(-1)
        out_dim = int(max(y.max(), yv.max())) + 1
    else:
        y = np.asarray(train.labels, dtype=np.float64).reshape(X.shape[0], -1)
        yv = np.asarray(val.labels, dtype=np.float64).reshape(Xv.shape[0], -1)
        out_dim = y.shape[1]

    rng = rng_for(cfg.seed, "init")
    dims = [X.shape[1], *cfg.hidden_widths, out_dim]
    params = []
    for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        # He init for rectified layers, gentler scale for the output layer.
        scale = np.sqrt((2.0 if k < len(dims) - 2 else 1.0) / fan_in)
        params.append((rng.normal(0.0, scale, size=(fan_out, fan_in)), np.zeros(fan_out)))

    m = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
    v = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
    # beta2 = 0.99: a long second-moment memory suppresses the step size while
    # the loss decays and stalls the endgame well above the optimum.
    beta1, beta2, eps = 0.9, 0.99, 1e-8
    step = 0

    best_val = np.inf
    best_params = [(W.copy(), b.copy()) for W, b in params]
    best_epoch = 0
    val_history = []

    shuffle_rng = rng_for(cfg.seed, "shuffle")
    lr = cfg.learning_rate
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(X.shape[0])
        for lo in range(0, X.shape[0], cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            value, grads = _loss_and_grad(params, X[batch], y[batch], cfg.loss)
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch, value)
            step += 1
            corr1 = 1.0 - beta1 ** step
            corr2 = 1.0 - beta2 ** step
            new_params = []
            for k, ((W, b), (gW, gb)) in enumerate(zip(params, grads)):
                mW = beta1 * m[k][0] + (1 - beta1) * gW
                mb = beta1 * m[k][1] + (1 - beta1) * gb
                vW = beta2 * v[k][0] + (1 - beta2) * gW ** 2
                vb = beta2 * v[k][1] + (1 - beta2) * gb ** 2
                m[k] = (mW, mb)
                v[k] = (vW, vb)
                W = W - lr * (mW / corr1) / (np.sqrt(vW / corr2) + eps)
                b = b - lr * (mb / corr1) / (np.sqrt(vb / corr2) + eps)
                new_params.append((W, b))
            params = new_params
        val_loss = _evaluate(params, Xv, yv, cfg.loss)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(epoch, val_loss)
        val_history.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_params = [(W.copy(), b.copy()) for W, b in params]
            best_epoch = epoch

    layers: list = []
    for k, (W, b) in enumerate(best_params):
        layers.append(Linear(W, b))
        if k < len(best_params) - 1:
            layers.append(Relu())
    if cfg.loss == "cross_entropy":
        layers.append(Softmax())
    net = FeedForwardNet(tuple(layers))
    report = TrainReport(
        train_loss=_evaluate(best_params, X, y, cfg.loss),
        val_loss=float(best_val),
        best_epoch=best_epoch,
        val_history=tuple(val_history),
    )
    return net, report
