"""Scoring of attribution matrices.

Four metrics: squared error against exact ground truth, squared attribution
mass on known-irrelevant features (mask error), worst-case attribution change
under small input perturbations (max-sensitivity), and the expected squared
gap between attribution-predicted and actual output changes (infidelity).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nets import SCALAR_OUTPUT, FeedForwardNet, TargetSpec, resolve_target, target_values
from .seeding import rng_for

__all__ = ["MetricResult", "mse", "mask_error", "sensitivity_max", "infidelity", "METRICS"]

METRICS = ("mse", "mask_error", "sensitivity_max", "infidelity")


@dataclass(frozen=True)
class MetricResult:
    """Per-sample scores with their mean and population std."""

    per_sample: np.ndarray
    mean: float
    std: float
    degenerate: bool = False

    @classmethod
    def from_scores(cls, scores: np.ndarray, degenerate: bool = False) -> "MetricResult":
        scores = np.asarray(scores, dtype=np.float64)
        if not np.all(np.isfinite(scores)):
            raise ValueError("metric scores must be finite")
        return cls(scores, float(scores.mean()), float(scores.std()), degenerate)


def mse(attr_values, gt_values) -> MetricResult:
    """Per sample: mean over features of (phi_i - FA_i)^2."""
    attr = np.asarray(attr_values, dtype=np.float64)
    gt = np.asarray(gt_values, dtype=np.float64)
    if attr.shape != gt.shape:
        raise ValueError(f"shape mismatch: attributions {attr.shape}, ground truth {gt.shape}")
    return MetricResult.from_scores(((attr - gt) ** 2).mean(axis=1))


def mask_error(attr_values, mask) -> MetricResult:
    """Per sample: mean squared attribution on mask-0 (irrelevant) features.

    A mask with no irrelevant features is degenerate; the result is 0 with
    the degenerate flag set rather than an error.
    """
    attr = np.asarray(attr_values, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (attr.shape[1],):
        raise ValueError(f"mask length {mask.shape} does not match {attr.shape[1]} features")
    irrelevant = mask == 0
    if not irrelevant.any():
        return MetricResult.from_scores(np.zeros(attr.shape[0]), degenerate=True)
    return MetricResult.from_scores((attr[:, irrelevant] ** 2).mean(axis=1))


def sensitivity_max(attribution_fn, net: FeedForwardNet, X, radius: float = 0.02,
                    n_perturb: int = 10, seed: int = 0) -> MetricResult:
    """Worst relative attribution change over uniform L-inf perturbations.

    score(x) = max over draws of ||A(x + delta) - A(x)||_2 / max(||A(x)||_2, 1e-12)
    where ``attribution_fn(net, X) -> (n, d)`` recomputes the attributions.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if n_perturb < 1:
        raise ValueError("n_perturb must be >= 1")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    base = np.asarray(attribution_fn(net, X), dtype=np.float64)
    norms = np.maximum(np.linalg.norm(base, axis=1), 1e-12)
    worst = np.zeros(X.shape[0])
    for k in range(n_perturb):
        rng = rng_for(seed, "perturb", k)
        delta = rng.uniform(-radius, radius, size=X.shape)
        perturbed = np.asarray(attribution_fn(net, X + delta), dtype=np.float64)
        change = np.linalg.norm(perturbed - base, axis=1) / norms
        worst = np.maximum(worst, change)
    return MetricResult.from_scores(worst)


def infidelity(net: FeedForwardNet, X, attr_values, baseline=None,
               feature_kinds: tuple[str, ...] | None = None,
               noise_scale: float = 0.5, n_perturb: int = 128, seed: int = 0,
               target: TargetSpec = SCALAR_OUTPUT) -> MetricResult:
    """Monte-Carlo estimate of E[(I . phi - (f(x) - f(x - I)))^2].

    The perturbation I matches the column kind: continuous features get iid
    normal noise with std ``noise_scale``; categorical01 / boolean_pm1
    features flip a uniformly chosen random subset to the baseline value /
    the opposite sign.
    """
    if noise_scale <= 0:
        raise ValueError("noise_scale must be positive")
    if n_perturb < 1:
        raise ValueError("n_perturb must be >= 1")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    attr = np.asarray(attr_values, dtype=np.float64)
    if attr.shape != X.shape:
        raise ValueError(f"attributions {attr.shape} do not match inputs {X.shape}")
    n, d = X.shape
    kinds = tuple(feature_kinds) if feature_kinds is not None else ("continuous",) * d
    if len(kinds) != d:
        raise ValueError("feature_kinds length mismatch")
    if baseline is None:
        B = np.zeros_like(X)
    else:
        B = np.asarray(baseline, dtype=np.float64)
        B = np.broadcast_to(B, X.shape).copy() if B.ndim == 1 else B
    idx = resolve_target(net, X, target)
    f_x = target_values(net, X, target, indices=idx)

    continuous = np.array([k == "continuous" for k in kinds])
    pm1 = np.array([k == "boolean_pm1" for k in kinds])
    cat01 = np.array([k == "categorical01" for k in kinds])

    scores = np.zeros(n)
    for s in range(n):
        rng = rng_for(seed, "sample", s)
        I = np.zeros((n_perturb, d))
        if continuous.any():
            I[:, continuous] = rng.normal(0.0, noise_scale, size=(n_perturb, int(continuous.sum())))
        if cat01.any():
            flips = rng.integers(0, 2, size=(n_perturb, int(cat01.sum()))).astype(np.float64)
            I[:, cat01] = flips * (X[s, cat01] - B[s, cat01])
        if pm1.any():
            flips = rng.integers(0, 2, size=(n_perturb, int(pm1.sum()))).astype(np.float64)
            I[:, pm1] = flips * (2.0 * X[s, pm1])
        shifted = X[s] - I
        f_shift = target_values(
            net, shifted, target,
            indices=np.repeat(idx[s], n_perturb) if idx is not None else None,
        )
        resid = I @ attr[s] - (f_x[s] - f_shift)
        scores[s] = float((resid ** 2).mean())
    return MetricResult.from_scores(scores)
