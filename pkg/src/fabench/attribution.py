"""Feature-attribution methods implemented from first principles.

All methods operate on a FeedForwardNet, a batch of inputs, a baseline
(reference) input, and a TargetSpec selecting the explained output scalar.
Per-sample class targets (``index=None``) are resolved once on the original
input and held fixed while the method probes perturbed inputs.

Sampling methods derive one sub-seed per sample from ``(seed, sample index)``,
so attributing a batch gives the same numbers regardless of chunking or
evaluation order.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .nets import (
    SCALAR_OUTPUT,
    FeedForwardNet,
    Linear,
    Relu,
    Softmax,
    TargetSpec,
    _check_input,
    _forward_trace,
    input_gradient,
    resolve_target,
    target_values,
)
from .seeding import rng_for

__all__ = [
    "AttributionMatrix",
    "DegenerateSamplingError",
    "UnderDeterminedError",
    "input_x_gradient",
    "integrated_gradients",
    "deeplift_rescale",
    "feature_ablation",
    "shapley_value_sampling",
    "exact_shapley",
    "kernel_shap",
    "lime",
    "METHODS",
]

RESCALE_EPS = 1e-10


class DegenerateSamplingError(RuntimeError):
    """Sampled regression system is singular; raise the budget and retry."""


class UnderDeterminedError(ValueError):
    """Too few samples to fit the surrogate."""


@dataclass(frozen=True)
class AttributionMatrix:
    """Per-sample, per-feature scores from one method under one target."""

    values: np.ndarray
    method: str
    target: TargetSpec
    elapsed_seconds: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise ValueError("attribution values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


def _prep(net: FeedForwardNet, X, baseline):
    X_arr, _ = _check_input(net, X)
    if baseline is None:
        B = np.zeros_like(X_arr)
    else:
        B = np.asarray(baseline, dtype=np.float64)
        if B.ndim == 1:
            if B.shape[0] != X_arr.shape[1]:
                raise ValueError(f"baseline dim {B.shape[0]} != input dim {X_arr.shape[1]}")
            B = np.broadcast_to(B, X_arr.shape).copy()
        elif B.shape != X_arr.shape:
            raise ValueError(f"baseline shape {B.shape} does not match inputs {X_arr.shape}")
    return X_arr, B


def _timed(method: str, target: TargetSpec, start: float, values: np.ndarray,
           **params) -> AttributionMatrix:
    return AttributionMatrix(values, method, target, time.perf_counter() - start, params)


def input_x_gradient(net: FeedForwardNet, X,
                     target: TargetSpec = SCALAR_OUTPUT) -> AttributionMatrix:
    """x * d(target)/dx; purely local."""
    start = time.perf_counter()
    X_arr, _ = _check_input(net, X)
    idx = resolve_target(net, X_arr, target)
    grads = input_gradient(net, X_arr, target, indices=idx)
    return _timed("input_x_gradient", target, start, X_arr * grads)


def integrated_gradients(net: FeedForwardNet, X, baseline=None, steps: int = 64,
                         target: TargetSpec = SCALAR_OUTPUT) -> AttributionMatrix:
    """Straight-line path integral of gradients, midpoint rule.

    attribution_i = (x_i - b_i) * (1/steps) * sum_k g_i(b + (k-1/2)/steps (x-b))
    (Sundararajan et al., arXiv:1703.01365; midpoint sampling keeps kinks that
    sit exactly on path endpoints out of the sum.)
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    start = time.perf_counter()
    X_arr, B = _prep(net, X, baseline)
    idx = resolve_target(net, X_arr, target)
    diff = X_arr - B
    total = np.zeros_like(X_arr)
    for k in range(steps):
        alpha = (k + 0.5) / steps
        total += input_gradient(net, B + alpha * diff, target, indices=idx)
    values = diff * (total / steps)
    return _timed("integrated_gradients", target, start, values, steps=steps)


# ---------------------------------------------------------------------------
# Difference-ratio multiplier propagation (the classic rescale rule).
# ---------------------------------------------------------------------------

def _rescale_coefficients(pre_x, pre_b, post_x, post_b, local_grad):
    delta_in = pre_x - pre_b
    delta_out = post_x - post_b
    small = np.abs(delta_in) < RESCALE_EPS
    safe = np.where(small, 1.0, delta_in)
    return np.where(small, local_grad, delta_out / safe)


def deeplift_rescale(net: FeedForwardNet, X, baseline=None,
                     target: TargetSpec = SCALAR_OUTPUT) -> AttributionMatrix:
    """Layerwise multiplier propagation with the rescale rule.

    Linear layers propagate multipliers through their weights; rectifier (and
    softmax, treated per-unit) use delta_out/delta_in, falling back to the
    local derivative when |delta_in| < 1e-10. Contributions are the final
    multipliers times (x - baseline), so they sum to the target delta.

    For ``logit_normalised`` targets, per-input contributions to every logit
    are computed first and the class mean is subtracted.
    """
    start = time.perf_counter()
    X_arr, B = _prep(net, X, baseline)
    idx = resolve_target(net, X_arr, target)
    n, d = X_arr.shape

    trace_x = _forward_trace(net, X_arr)
    trace_b = _forward_trace(net, B)

    layers = net.layers
    stop = len(layers) - 1 if target.kind in ("logit", "logit_normalised") else len(layers)

    # mult[s, u, i]: multiplier from input i to unit u of the current layer.
    mult = np.broadcast_to(np.eye(d), (n, d, d)).copy()
    for k in range(stop):
        layer = layers[k]
        if isinstance(layer, Linear):
            mult = np.einsum("ou,nui->noi", layer.weight, mult)
        elif isinstance(layer, Relu):
            local = (trace_x[k] > 0.0).astype(np.float64)
            r = _rescale_coefficients(trace_x[k], trace_b[k],
                                      trace_x[k + 1], trace_b[k + 1], local)
            mult = r[:, :, None] * mult
        else:  # Softmax treated as a per-unit rescale nonlinearity
            y = trace_x[k + 1]
            local = y * (1.0 - y)
            r = _rescale_coefficients(trace_x[k], trace_b[k],
                                      trace_x[k + 1], trace_b[k + 1], local)
            mult = r[:, :, None] * mult

    rows = np.arange(n)
    delta = X_arr - B
    if target.kind == "scalar_output":
        contrib = mult[:, 0, :] * delta
    elif target.kind == "logit_normalised":
        per_class = mult * delta[:, None, :]
        contrib = per_class[rows, idx, :] - per_class.mean(axis=1)
    else:
        contrib = mult[rows, idx, :] * delta
    return _timed("deeplift_rescale", target, start, contrib)


def feature_ablation(net: FeedForwardNet, X, baseline=None,
                     target: TargetSpec = SCALAR_OUTPUT) -> AttributionMatrix:
    """f(x) - f(x with x_i replaced by the baseline value), per feature."""
    start = time.perf_counter()
    X_arr, B = _prep(net, X, baseline)
    idx = resolve_target(net, X_arr, target)
    base_vals = target_values(net, X_arr, target, indices=idx)
    values = np.empty_like(X_arr)
    for i in range(X_arr.shape[1]):
        Xa = X_arr.copy()
        Xa[:, i] = B[:, i]
        values[:, i] = base_vals - target_values(net, Xa, target, indices=idx)
    return _timed("feature_ablation", target, start, values)


def _shapley_weights(n: int) -> np.ndarray:
    """w[s] = s! (n-s-1)! / n! for coalition size s."""
    return np.array([
        math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n)
        for s in range(n)
    ])


def exact_shapley(net: FeedForwardNet, x, baseline=None,
                  target: TargetSpec = SCALAR_OUTPUT) -> np.ndarray:
    """Exact Shapley values by full coalition enumeration (n <= 12)."""
    X_arr, B = _prep(net, np.atleast_2d(np.asarray(x, dtype=np.float64)), baseline)
    if X_arr.shape[0] != 1:
        raise ValueError("exact_shapley explains a single input")
    n = X_arr.shape[1]
    if n > 12:
        raise ValueError("exact_shapley supports at most 12 features")
    idx = resolve_target(net, X_arr, target)
    masks = ((np.arange(2 ** n, dtype=np.uint32)[:, None]
              >> np.arange(n, dtype=np.uint32)[None, :]) & 1).astype(np.float64)
    states = masks * X_arr[0] + (1.0 - masks) * B[0]
    v = target_values(net, states, target,
                      indices=np.repeat(idx, 2 ** n) if idx is not None else None)
    sizes = masks.sum(axis=1).astype(int)
    w = _shapley_weights(n)
    phi = np.zeros(n)
    subset_ids = np.arange(2 ** n)
    for i in range(n):
        without = (subset_ids >> i) & 1 == 0
        s_ids = subset_ids[without]
        phi[i] = np.sum(w[sizes[s_ids]] * (v[s_ids | (1 << i)] - v[s_ids]))
    return phi


def shapley_value_sampling(net: FeedForwardNet, X, baseline=None,
                           n_permutations: int = 25, seed: int = 0,
                           target: TargetSpec = SCALAR_OUTPUT,
                           exhaustive: bool = False) -> AttributionMatrix:
    """Permutation-sampling Shapley estimate (Castro et al. 2009).

    Walks each sampled permutation from the baseline, flipping one feature at
    a time to its input value; the output delta of each step is credited to
    the flipped feature. With ``exhaustive=True`` all n! permutations are
    enumerated, which reproduces the exact values.
    """
    if n_permutations < 1 and not exhaustive:
        raise ValueError("n_permutations must be >= 1")
    start = time.perf_counter()
    X_arr, B = _prep(net, X, baseline)
    idx = resolve_target(net, X_arr, target)
    n, d = X_arr.shape
    values = np.empty_like(X_arr)
    for s in range(n):
        if exhaustive:
            perms = np.array(list(itertools.permutations(range(d))), dtype=np.intp)
        else:
            rng = rng_for(seed, "sample", s)
            perms = np.array([rng.permutation(d) for _ in range(n_permutations)],
                             dtype=np.intp)
        p = perms.shape[0]
        # states[j, k]: baseline with the first k features of permutation j
        # switched to x; k ranges 0..d.
        masks = np.zeros((p, d + 1, d))
        for k in range(1, d + 1):
            masks[:, k] = masks[:, k - 1]
            masks[np.arange(p), k, perms[:, k - 1]] = 1.0
        states = masks * X_arr[s] + (1.0 - masks) * B[s]
        flat = states.reshape(-1, d)
        vals = target_values(
            net, flat, target,
            indices=np.repeat(idx[s], flat.shape[0]) if idx is not None else None,
        ).reshape(p, d + 1)
        marginals = np.diff(vals, axis=1)  # contribution of perms[:, k]
        phi = np.zeros(d)
        np.add.at(phi, perms.reshape(-1), marginals.reshape(-1))
        values[s] = phi / p
    return _timed("shapley_value_sampling", target, start, values,
                  n_permutations=(None if exhaustive else n_permutations),
                  exhaustive=exhaustive, seed=seed)


ENUM_COALITION_LIMIT = 4096


def _proper_coalitions(n: int) -> tuple[np.ndarray, np.ndarray]:
    ids = np.arange(1, 2 ** n - 1, dtype=np.uint32)
    masks = ((ids[:, None] >> np.arange(n, dtype=np.uint32)[None, :]) & 1).astype(np.float64)
    sizes = masks.sum(axis=1).astype(int)
    weights = np.array([(n - 1) / (math.comb(n, s) * s * (n - s)) for s in sizes])
    return masks, weights


def _solve_kernel_regression(masks, weights, y_rows, delta) -> np.ndarray:
    """Weighted LS per sample with the efficiency constraint by elimination.

    ``y_rows`` is (m, n_samples): coalition values minus v(empty); ``delta``
    is (n_samples,). Eliminates the last coefficient via
    phi_n = delta - sum(phi_<n) and regresses y - m_n*delta on (m_i - m_n).
    """
    n = masks.shape[1]
    design = masks[:, :-1] - masks[:, [-1]]
    sw = np.sqrt(weights)
    rhs = (y_rows - masks[:, [-1]] * delta[None, :]) * sw[:, None]
    coef, _, rank, _ = np.linalg.lstsq(design * sw[:, None], rhs, rcond=None)
    if rank < n - 1:
        raise DegenerateSamplingError(
            f"kernel regression is rank deficient ({rank} < {n - 1}); raise the budget"
        )
    phi_last = delta - coef.sum(axis=0)
    return np.vstack([coef, phi_last[None, :]]).T


def kernel_shap(net: FeedForwardNet, X, baseline=None, budget: int = 2048,
                seed: int = 0, target: TargetSpec = SCALAR_OUTPUT) -> AttributionMatrix:
    """Shapley-kernel weighted linear regression on coalition indicators
    (Lundberg & Lee 2017).

    Proper coalitions are weighted by pi(s) = (n-1)/(C(n,s) s (n-s)); the
    empty and full coalitions enter through the efficiency constraint
    sum(phi) = f(x) - f(baseline), imposed by eliminating one coefficient.
    All 2^n - 2 proper coalitions are enumerated while they fit the
    enumeration limit (one shared design solved for all samples at once),
    otherwise ``budget`` coalitions are sampled per sample proportionally
    to the kernel.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    start = time.perf_counter()
    X_arr, B = _prep(net, X, baseline)
    idx = resolve_target(net, X_arr, target)
    n_samples, n = X_arr.shape
    v_empty = target_values(net, B, target, indices=idx)
    v_full = target_values(net, X_arr, target, indices=idx)
    delta = v_full - v_empty
    if n == 1:
        return _timed("kernel_shap", target, start, delta[:, None],
                      budget=budget, seed=seed)

    if 2 ** n <= ENUM_COALITION_LIMIT:
        masks, weights = _proper_coalitions(n)
        m = masks.shape[0]
        y_rows = np.empty((m, n_samples))
        chunk = max(1, ENUM_COALITION_LIMIT * 64 // m)
        for lo in range(0, n_samples, chunk):
            hi = min(lo + chunk, n_samples)
            span = hi - lo
            states = (masks[None, :, :] * X_arr[lo:hi, None, :]
                      + (1.0 - masks[None, :, :]) * B[lo:hi, None, :]).reshape(-1, n)
            ind = np.repeat(idx[lo:hi], m) if idx is not None else None
            y_rows[:, lo:hi] = target_values(net, states, target, indices=ind) \
                .reshape(span, m).T
        y_rows -= v_empty[None, :]
        values = _solve_kernel_regression(masks, weights, y_rows, delta)
        return _timed("kernel_shap", target, start, values, budget=budget, seed=seed)

    values = np.empty_like(X_arr)
    size_mass = np.array([(n - 1) / (s * (n - s)) for s in range(1, n)])
    size_mass /= size_mass.sum()
    for s in range(n_samples):
        rng = rng_for(seed, "sample", s)
        sizes_draw = rng.choice(np.arange(1, n), size=budget, p=size_mass)
        # uniform subset of each size via rank thresholding
        ranks = np.argsort(rng.random((budget, n)), axis=1).argsort(axis=1)
        masks = (ranks < sizes_draw[:, None]).astype(np.float64)
        states = masks * X_arr[s] + (1.0 - masks) * B[s]
        ind = np.repeat(idx[s], budget) if idx is not None else None
        y = target_values(net, states, target, indices=ind) - v_empty[s]
        values[s] = _solve_kernel_regression(
            masks, np.ones(budget), y[:, None], delta[s:s + 1])[0]
    return _timed("kernel_shap", target, start, values, budget=budget, seed=seed)


def _soft_threshold(value: float, cut: float) -> float:
    if value > cut:
        return value - cut
    if value < -cut:
        return value + cut
    return 0.0


def _weighted_lasso(design: np.ndarray, y: np.ndarray, weights: np.ndarray,
                    lam: float, max_sweeps: int = 1000, tol: float = 1e-8) -> np.ndarray:
    """Coordinate descent for weighted lasso with an unpenalised intercept.

    Minimises (1/(2 sum w)) sum_s w_s (y_s - b0 - m_s . beta)^2 + lam ||beta||_1.
    Works on the Gram matrix, so sweeps cost O(p^2) regardless of sample count.
    """
    n_cols = design.shape[1]
    total = weights.sum()
    wd = weights[:, None] * design
    gram = design.T @ wd / total             # (p, p)
    col_mean = wd.sum(axis=0) / total        # E_w[m_j]
    xy = design.T @ (weights * y) / total    # E_w[m_j y]
    y_mean = float(np.average(y, weights=weights))
    col_sq = np.diag(gram).copy()

    beta = np.zeros(n_cols)
    b0 = y_mean
    for _ in range(max_sweeps):
        max_change = 0.0
        for j in range(n_cols):
            if col_sq[j] <= 0.0:
                continue
            rho = xy[j] - b0 * col_mean[j] - gram[j] @ beta + col_sq[j] * beta[j]
            new = _soft_threshold(float(rho), lam) / col_sq[j]
            change = new - beta[j]
            if change != 0.0:
                beta[j] = new
                max_change = max(max_change, abs(change))
        b0_new = y_mean - float(col_mean @ beta)
        max_change = max(max_change, abs(b0_new - b0))
        b0 = b0_new
        if max_change < tol:
            break
    return beta


def lime(net: FeedForwardNet, X, baseline=None, n_samples: int = 200,
         kernel_width: float | None = None, regularisation: str = "none",
         lasso_lambda: float = 0.01, seed: int = 0,
         target: TargetSpec = SCALAR_OUTPUT) -> AttributionMatrix:
    """Local linear surrogate on binary feature masks (Ribeiro et al. 2016).

    Masks keep the input value where 1 and the baseline value where 0;
    surrogate samples are weighted by exp(-d^2 / width^2) with d the
    euclidean distance between x and the perturbed input divided by sqrt(n).
    All 2^n masks are enumerated once when they fit inside ``n_samples``.
    The attribution is the surrogate's coefficient vector.
    """
    if regularisation not in ("none", "lasso"):
        raise ValueError(f"unknown regularisation {regularisation!r}")
    start = time.perf_counter()
    X_arr, B = _prep(net, X, baseline)
    n, d = X_arr.shape
    if n_samples < d + 2:
        raise UnderDeterminedError(
            f"n_samples={n_samples} cannot identify {d} coefficients plus intercept"
        )
    idx = resolve_target(net, X_arr, target)
    width = kernel_width if kernel_width is not None else 0.75 * math.sqrt(d)
    values = np.empty_like(X_arr)
    exhaustive = 2 ** d <= n_samples
    for s in range(n):
        if exhaustive:
            masks = ((np.arange(2 ** d, dtype=np.uint32)[:, None]
                      >> np.arange(d, dtype=np.uint32)[None, :]) & 1).astype(np.float64)
        else:
            rng = rng_for(seed, "sample", s)
            masks = rng.integers(0, 2, size=(n_samples, d)).astype(np.float64)
        states = masks * X_arr[s] + (1.0 - masks) * B[s]
        dist = np.linalg.norm(X_arr[s] - states, axis=1) / math.sqrt(d)
        weights = np.exp(-(dist ** 2) / width ** 2)
        y = target_values(
            net, states, target,
            indices=np.repeat(idx[s], states.shape[0]) if idx is not None else None,
        )
        if regularisation == "none":
            design = np.column_stack([np.ones(masks.shape[0]), masks])
            sw = np.sqrt(weights)
            coef, _, _, _ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
            values[s] = coef[1:]
        else:
            values[s] = _weighted_lasso(masks, y, weights, lasso_lambda)
    return _timed(f"lime_{regularisation}" if regularisation != "none" else "lime_linear",
                  target, start, values,
                  n_samples=n_samples, kernel_width=width,
                  regularisation=regularisation, seed=seed)


METHODS = (
    "input_x_gradient",
    "integrated_gradients",
    "deeplift_rescale",
    "feature_ablation",
    "shapley_value_sampling",
    "kernel_shap",
    "lime",
)


def save_attribution(matrix: AttributionMatrix, path: str) -> None:
    """Write scores as CSV plus a ``<path>.meta.json`` method/target sidecar."""
    import csv as _csv
    import json as _json

    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow([f"a{i}" for i in range(matrix.values.shape[1])])
        for row in matrix.values:
            writer.writerow([repr(float(v)) for v in row])
    meta = {
        "format": "attribution-v1",
        "method": matrix.method,
        "target": {"kind": matrix.target.kind, "index": matrix.target.index},
        "elapsed_seconds": matrix.elapsed_seconds,
        "params": {k: v for k, v in matrix.params.items()},
    }
    with open(path + ".meta.json", "w") as fh:
        _json.dump(meta, fh, indent=1, default=str)
        fh.write("\n")


def load_attribution(path: str) -> AttributionMatrix:
    import csv as _csv
    import json as _json

    with open(path + ".meta.json") as fh:
        meta = _json.load(fh)
    if meta.get("format") != "attribution-v1":
        raise ValueError(f"unsupported attribution format {meta.get('format')!r}")
    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        next(reader)
        values = np.array([[float(v) for v in row] for row in reader])
    target = TargetSpec(meta["target"]["kind"], meta["target"]["index"])
    return AttributionMatrix(values, meta["method"], target,
                             meta.get("elapsed_seconds", 0.0), meta.get("params", {}))
