"""Minimal dense feed-forward networks with exact evaluation and gradients.

The layer vocabulary is deliberately tiny (linear, rectifier, softmax): it is
all the handcrafted model constructions need, and keeping it small lets the
forward pass and the reverse-mode gradient be exact, auditable float64 code.
Networks are immutable after construction and safe to share across threads.

Convention: the rectifier derivative at an input of exactly 0 is 0. Several
handcrafted models place kinks exactly on data points, so this choice is
load-bearing and must not drift.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Linear",
    "Relu",
    "Softmax",
    "Layer",
    "FeedForwardNet",
    "TargetSpec",
    "SCALAR_OUTPUT",
    "forward",
    "input_gradient",
    "InputDimensionError",
    "TargetError",
    "net_to_dict",
    "net_from_dict",
    "save_net",
    "load_net",
]

TARGET_KINDS = ("scalar_output", "class_probability", "logit", "logit_normalised")


class InputDimensionError(ValueError):
    """Input does not match the network's expected dimension."""


class TargetError(ValueError):
    """Attribution target is invalid for the given network."""


def _as_matrix(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Linear:
    """Affine map ``x -> weight @ x + bias`` with weight shape (out, in)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = _as_matrix(self.weight, "weight")
        if w.ndim != 2:
            raise ValueError("weight must be a 2-d matrix")
        b = _as_matrix(self.bias, "bias")
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias shape {b.shape} does not match weight rows {w.shape[0]}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class Relu:
    """Elementwise rectifier; carries no parameters."""


@dataclass(frozen=True)
class Softmax:
    """Row-wise softmax; carries no parameters."""


Layer = Linear | Relu | Softmax


@dataclass(frozen=True)
class FeedForwardNet:
    """Immutable sequence of layers with consistent dimensions.

    The first layer must be linear (it fixes the input dimension); rectifier
    and softmax layers preserve the width of the preceding linear layer.
    """

    layers: tuple[Layer, ...]
    input_dim: int = field(init=False)
    output_dim: int = field(init=False)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        if not isinstance(layers[0], Linear):
            raise ValueError("the first layer must be linear")
        dim = layers[0].in_dim
        width = dim
        for k, layer in enumerate(layers):
            if isinstance(layer, Linear):
                if layer.in_dim != width:
                    raise ValueError(
                        f"layer {k}: expects input dim {layer.in_dim}, got {width}"
                    )
                width = layer.out_dim
            # Relu / Softmax keep the width.
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "input_dim", dim)
        object.__setattr__(self, "output_dim", width)

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)

    @property
    def ends_with_softmax(self) -> bool:
        return isinstance(self.layers[-1], Softmax)


@dataclass(frozen=True)
class TargetSpec:
    """Selects which scalar of the network output is attributed.

    kinds:
      scalar_output            -- the single output of a 1-d net
      class_probability(index) -- softmax output at ``index``
      logit(index)             -- pre-softmax value at ``index``
      logit_normalised(index)  -- logit minus the mean logit
    ``index=None`` resolves per sample to the predicted class (argmax).
    """

    kind: str = "scalar_output"
    index: int | None = None

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise TargetError(f"unknown target kind {self.kind!r}")


SCALAR_OUTPUT = TargetSpec("scalar_output")


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _apply(layer: Layer, h: np.ndarray) -> np.ndarray:
    if isinstance(layer, Linear):
        return h @ layer.weight.T + layer.bias
    if isinstance(layer, Relu):
        return np.maximum(h, 0.0)
    return _softmax(h)


def _check_input(net: FeedForwardNet, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != net.input_dim:
        raise InputDimensionError(
            f"expected input dim {net.input_dim}, got shape {np.asarray(x).shape}"
        )
    return arr, single


def forward(net: FeedForwardNet, x) -> np.ndarray:
    """Evaluate the network on a vector (d,) or a batch (n, d)."""
    h, single = _check_input(net, x)
    for layer in net.layers:
        h = _apply(layer, h)
    return h[0] if single else h


def _forward_trace(net: FeedForwardNet, X: np.ndarray) -> list[np.ndarray]:
    """Layer inputs plus the final output: trace[k] feeds net.layers[k]."""
    trace = [X]
    h = X
    for layer in net.layers:
        h = _apply(layer, h)
        trace.append(h)
    return trace


def resolve_target(net: FeedForwardNet, X, target: TargetSpec) -> np.ndarray | None:
    """Per-sample output indices for the target, or None for scalar targets.

    ``index=None`` picks each sample's predicted class; the caller is expected
    to freeze the result before probing perturbed inputs.
    """
    if target.kind == "scalar_output":
        if net.output_dim != 1:
            raise TargetError("scalar_output target needs a 1-d output network")
        return None
    if target.kind in ("logit", "logit_normalised") and not net.ends_with_softmax:
        raise TargetError(f"{target.kind} target needs a softmax-ended network")
    if target.index is None:
        out = forward(net, X)
        out = out[None, :] if out.ndim == 1 else out
        return out.argmax(axis=1)
    if not 0 <= target.index < net.output_dim:
        raise TargetError(f"target index {target.index} out of range")
    X_arr = np.asarray(X, dtype=np.float64)
    n = 1 if X_arr.ndim == 1 else X_arr.shape[0]
    return np.full(n, target.index, dtype=np.intp)


def target_values(net: FeedForwardNet, X, target: TargetSpec = SCALAR_OUTPUT,
                  indices: np.ndarray | None = None) -> np.ndarray:
    """Scalar target value per sample, shape (n,).

    ``indices`` overrides per-sample class indices (frozen by the caller when
    the same target must be tracked across perturbed inputs).
    """
    X_arr, _ = _check_input(net, X)
    if target.kind == "scalar_output":
        return forward(net, X_arr)[:, 0]
    if indices is None:
        indices = resolve_target(net, X_arr, target)
    rows = np.arange(X_arr.shape[0])
    if target.kind == "class_probability":
        return forward(net, X_arr)[rows, indices]
    # logit targets: value before the final softmax
    trace = _forward_trace(net, X_arr)
    logits = trace[-2]
    if target.kind == "logit":
        return logits[rows, indices]
    return logits[rows, indices] - logits.mean(axis=1)


def input_gradient(net: FeedForwardNet, x, target: TargetSpec = SCALAR_OUTPUT,
                   indices: np.ndarray | None = None) -> np.ndarray:
    """Exact gradient of the target output w.r.t. the input.

    Reverse accumulation through the layer stack; the rectifier derivative at
    exactly 0 is taken as 0. Accepts a vector or a batch, mirroring `forward`.
    """
    X, single = _check_input(net, x)
    n = X.shape[0]
    if indices is None:
        indices = resolve_target(net, X, target)
    trace = _forward_trace(net, X)

    layers = net.layers
    if target.kind in ("logit", "logit_normalised"):
        stop = len(layers) - 1  # seed at the softmax input
        k_classes = net.output_dim
        g = np.zeros((n, k_classes))
        g[np.arange(n), indices] = 1.0
        if target.kind == "logit_normalised":
            g -= 1.0 / k_classes
    else:
        stop = len(layers)
        g = np.zeros((n, net.output_dim))
        if target.kind == "scalar_output":
            g[:, 0] = 1.0
        else:
            g[np.arange(n), indices] = 1.0

    for k in range(stop - 1, -1, -1):
        layer = layers[k]
        if isinstance(layer, Linear):
            g = g @ layer.weight
        elif isinstance(layer, Relu):
            g = g * (trace[k] > 0.0)
        else:  # softmax: vjp through y = softmax(z)
            y = trace[k + 1]
            g = y * (g - (g * y).sum(axis=1, keepdims=True))
    return g[0] if single else g


# ---------------------------------------------------------------------------
# Serialization: a small JSON document, schema "ffnet-v1".
#
#   {"format": "ffnet-v1",
#    "layers": [{"kind": "linear", "weight": [[...], ...], "bias": [...]},
#               {"kind": "relu"},
#               {"kind": "softmax"}]}
#
# Weights are row-major nested lists rendered with Python's shortest
# round-trip float repr, so store/load is bit-identical for float64.
# ---------------------------------------------------------------------------

def net_to_dict(net: FeedForwardNet) -> dict:
    layers = []
    for layer in net.layers:
        if isinstance(layer, Linear):
            layers.append({
                "kind": "linear",
                "weight": layer.weight.tolist(),
                "bias": layer.bias.tolist(),
            })
        elif isinstance(layer, Relu):
            layers.append({"kind": "relu"})
        else:
            layers.append({"kind": "softmax"})
    return {"format": "ffnet-v1", "layers": layers}


def net_from_dict(doc: dict) -> FeedForwardNet:
    if doc.get("format") != "ffnet-v1":
        raise ValueError(f"unsupported net document format {doc.get('format')!r}")
    layers: list[Layer] = []
    for entry in doc["layers"]:
        kind = entry["kind"]
        if kind == "linear":
            layers.append(Linear(np.array(entry["weight"], dtype=np.float64),
                                 np.array(entry["bias"], dtype=np.float64)))
        elif kind == "relu":
            layers.append(Relu())
        elif kind == "softmax":
            layers.append(Softmax())
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    return FeedForwardNet(tuple(layers))


def save_net(net: FeedForwardNet, path) -> None:
    with open(path, "w") as fh:
        json.dump(net_to_dict(net), fh, indent=1)
        fh.write("\n")


def load_net(path) -> FeedForwardNet:
    with open(path) as fh:
        return net_from_dict(json.load(fh))
