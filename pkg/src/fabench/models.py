"""Procedural construction of networks with exactly known mechanisms.

Seven model families, each paired with a closed-form reference evaluator that
never touches the network code. ``build_model`` emits a rectifier network that
reproduces the closed form exactly on the declared input support (continuous
features in [-B, B], categorical features in {0, 1}, boolean atoms in
{-1, +1}); ``validate_model`` measures the worst-case deviation between the
two routes.

Construction notes, per family:

* weighted: per-feature pairs relu(w_i x_i) - relu(-w_i x_i) sum to the
  weighted total while keeping the net a genuine rectifier MLP.
* conflicting: relu(w_i x_i - M_i c_i) - relu(-w_i x_i - M_i c_i) with the
  gate constant M_i = B*|w_i| + 1. When c_i = 1 both units saturate below
  zero, so the value and all local gradients vanish.
* pertinent_negatives: the multiplier path w_i * m * relu(1 - x_i) places a
  kink exactly at x_i = 1, where the local gradient (by the relu'(0) = 0
  convention) disagrees with the ablation ground truth.
* shattered: a single rectified layer summing relu(w_i x_i + b_i).
* interacting: the extra weight on an interacting pair is carried by the
  clipped ramp sign(x)*min(|x|, K c) = relu(x) - relu(x - Kc) - relu(-x)
  + relu(-x - Kc) with K = B + 1. On the support the gate's c-units are
  either saturated or exactly cancelled, so local gradients, straight-path
  gradient integrals and difference-ratio propagation all match the closed
  form's per-feature attribution.
* uncertainty: one linear layer building the class logits, then softmax;
  common features shift every logit equally and cannot move the output.
* boolean: delegated to the formula compiler.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boolean import atom_names, compile_boolean, eval_truth, parse_boolean
from .nets import FeedForwardNet, Linear, Relu, Softmax, forward
from .seeding import rng_for

__all__ = [
    "FAMILIES",
    "ModelSpec",
    "PertinentNegativeParams",
    "InteractingPair",
    "InteractingParams",
    "UncertaintyParams",
    "UnsupportedFamilyError",
    "build_model",
    "closed_form",
    "validate_model",
    "feature_kinds",
    "sample_support_probes",
]

FAMILIES = (
    "weighted",
    "conflicting",
    "pertinent_negatives",
    "shattered",
    "interacting",
    "uncertainty",
    "boolean",
)

MIN_WEIGHT = 0.05


class UnsupportedFamilyError(ValueError):
    pass


@dataclass(frozen=True)
class PertinentNegativeParams:
    """Indices whose zero value carries meaning, and the zero-value multiplier."""

    pn_indices: tuple[int, ...]
    multiplier: float = 10.0

    def __post_init__(self):
        if not self.pn_indices:
            raise ValueError("pn_indices must be nonempty")
        if self.multiplier == 1.0:
            raise ValueError("multiplier must differ from 1")
        object.__setattr__(self, "pn_indices", tuple(sorted(set(self.pn_indices))))


@dataclass(frozen=True)
class InteractingPair:
    """A continuous feature whose weight is switched by a categorical one.

    weight_off applies when the categorical is 0, weight_on when it is 1.
    """

    continuous: int
    categorical: int
    weight_off: float
    weight_on: float


@dataclass(frozen=True)
class InteractingParams:
    pairs: tuple[InteractingPair, ...]

    def __post_init__(self):
        used: set[int] = set()
        for p in self.pairs:
            for idx in (p.continuous, p.categorical):
                if idx in used:
                    raise ValueError(f"feature index {idx} appears in more than one pair")
                used.add(idx)
        if not any(p.weight_off != p.weight_on for p in self.pairs):
            raise ValueError("at least one pair must have differing weights")


@dataclass(frozen=True)
class UncertaintyParams:
    """Class-defining (standard) features and output-irrelevant (common) ones."""

    standard_indices: tuple[int, ...]
    common_indices: tuple[int, ...]

    def __post_init__(self):
        if set(self.standard_indices) & set(self.common_indices):
            raise ValueError("standard and common index sets must be disjoint")
        if not self.standard_indices:
            raise ValueError("need at least one standard feature")


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Declarative description of one handcrafted model."""

    family: str
    weights: np.ndarray
    input_bound: float = 10.0
    pertinent: PertinentNegativeParams | None = None
    interacting: InteractingParams | None = None
    uncertainty: UncertaintyParams | None = None
    formula: str | None = None
    shattered_offsets: np.ndarray | None = None

    def __eq__(self, other):
        if not isinstance(other, ModelSpec):
            return NotImplemented
        return (
            self.family == other.family
            and np.array_equal(self.weights, other.weights)
            and self.input_bound == other.input_bound
            and self.pertinent == other.pertinent
            and self.interacting == other.interacting
            and self.uncertainty == other.uncertainty
            and self.formula == other.formula
            and (
                (self.shattered_offsets is None and other.shattered_offsets is None)
                or (self.shattered_offsets is not None
                    and other.shattered_offsets is not None
                    and np.array_equal(self.shattered_offsets, other.shattered_offsets))
            )
        )

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UnsupportedFamilyError(f"unknown family {self.family!r}")
        w = np.asarray(self.weights, dtype=np.float64)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        if self.input_bound <= 0:
            raise ValueError("input_bound must be positive")
        if self.family != "boolean" and w.size and np.any(np.abs(w) < MIN_WEIGHT):
            raise ValueError(f"weights must satisfy |w_i| >= {MIN_WEIGHT}")
        if self.family == "pertinent_negatives":
            if self.pertinent is None:
                raise ValueError("pertinent_negatives needs PertinentNegativeParams")
            if max(self.pertinent.pn_indices) >= w.size:
                raise ValueError("pn index out of range")
        if self.family == "interacting":
            if self.interacting is None:
                raise ValueError("interacting needs InteractingParams")
            for p in self.interacting.pairs:
                if max(p.continuous, p.categorical) >= w.size:
                    raise ValueError("pair index out of range")
        if self.family == "uncertainty":
            if self.uncertainty is None:
                raise ValueError("uncertainty needs UncertaintyParams")
            idx = self.uncertainty.standard_indices + self.uncertainty.common_indices
            if idx and max(idx) >= w.size:
                raise ValueError("uncertainty index out of range")
        if self.family == "boolean" and not self.formula:
            raise ValueError("boolean needs a formula")
        if self.shattered_offsets is not None:
            b = np.asarray(self.shattered_offsets, dtype=np.float64)
            if b.shape != w.shape:
                raise ValueError("shattered_offsets must match weights shape")
            b.flags.writeable = False
            object.__setattr__(self, "shattered_offsets", b)

    @property
    def n_features(self) -> int:
        if self.family == "conflicting":
            return 2 * self.weights.size
        if self.family == "boolean":
            return len(atom_names(parse_boolean(self.formula)))
        return self.weights.size

    @property
    def n_classes(self) -> int:
        if self.family != "uncertainty":
            return 1
        return len(self.uncertainty.standard_indices)


def feature_kinds(spec: ModelSpec) -> list[str]:
    """Per-column kind: continuous | categorical01 | boolean_pm1."""
    n = spec.n_features
    if spec.family == "boolean":
        return ["boolean_pm1"] * n
    kinds = ["continuous"] * n
    if spec.family == "conflicting":
        half = spec.weights.size
        for i in range(half, n):
            kinds[i] = "categorical01"
    elif spec.family == "pertinent_negatives":
        for i in spec.pertinent.pn_indices:
            kinds[i] = "categorical01"
    elif spec.family == "interacting":
        for p in spec.interacting.pairs:
            kinds[p.categorical] = "categorical01"
    return kinds


# ---------------------------------------------------------------------------
# Closed forms (reference route; no network code involved).
# ---------------------------------------------------------------------------

def closed_form(spec: ModelSpec, X) -> np.ndarray:
    """Evaluate the family formula directly; returns (n_samples, out_dim)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != spec.n_features:
        raise ValueError(f"expected {spec.n_features} features, got {X.shape[1]}")
    w = spec.weights
    fam = spec.family
    if fam == "weighted":
        return (X @ w)[:, None]
    if fam == "conflicting":
        n = w.size
        x, c = X[:, :n], X[:, n:]
        return ((x * w) * (1.0 - c)).sum(axis=1)[:, None]
    if fam == "pertinent_negatives":
        z = X * w
        m = spec.pertinent.multiplier
        for i in spec.pertinent.pn_indices:
            z[:, i] = w[i] * (X[:, i] + m * (1.0 - X[:, i]))
        return z.sum(axis=1)[:, None]
    if fam == "shattered":
        b = spec.shattered_offsets
        pre = X * w + (0.0 if b is None else b)
        return np.maximum(pre, 0.0).sum(axis=1)[:, None]
    if fam == "interacting":
        paired: set[int] = set()
        total = np.zeros(X.shape[0])
        for p in spec.interacting.pairs:
            x = X[:, p.continuous]
            c = X[:, p.categorical]
            total += w[p.categorical] * c + x * (p.weight_off * (1.0 - c) + p.weight_on * c)
            paired.update((p.continuous, p.categorical))
        for j in range(X.shape[1]):
            if j not in paired:
                total += w[j] * X[:, j]
        return total[:, None]
    if fam == "uncertainty":
        std = list(spec.uncertainty.standard_indices)
        com = list(spec.uncertainty.common_indices)
        shift = X[:, com] @ w[com] if com else 0.0
        logits = X[:, std] * w[std] + np.atleast_1d(shift)[:, None]
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)
    if fam == "boolean":
        ast = parse_boolean(spec.formula)
        names = atom_names(ast)
        out = np.empty((X.shape[0], 1))
        for r in range(X.shape[0]):
            out[r, 0] = eval_truth(ast, {nm: int(v) for nm, v in zip(names, X[r])})
        return out
    raise UnsupportedFamilyError(fam)


# ---------------------------------------------------------------------------
# Builders.
# ---------------------------------------------------------------------------

def _pair_block(rows: list[np.ndarray], out_coeffs: list[float],
                row: np.ndarray, coeff: float) -> None:
    """Append the +/- rectified pair carrying ``coeff * (row . x)`` exactly."""
    rows.append(row)
    out_coeffs.append(coeff)
    rows.append(-row)
    out_coeffs.append(-coeff)


def _finish(rows, biases, out_coeffs) -> FeedForwardNet:
    hidden = Linear(np.vstack(rows), np.asarray(biases, dtype=np.float64))
    out = Linear(np.asarray(out_coeffs, dtype=np.float64)[None, :], np.zeros(1))
    return FeedForwardNet((hidden, Relu(), out))


def build_model(spec: ModelSpec) -> FeedForwardNet:
    """Construct the network computing ``closed_form(spec, .)`` exactly."""
    w = spec.weights
    n = w.size
    fam = spec.family

    if fam == "weighted":
        rows, coeffs = [], []
        for i in range(n):
            row = np.zeros(n)
            row[i] = w[i]
            _pair_block(rows, coeffs, row, 1.0)
        return _finish(rows, [0.0] * len(rows), coeffs)

    if fam == "conflicting":
        d = 2 * n
        rows, coeffs = [], []
        for i in range(n):
            gate = spec.input_bound * abs(w[i]) + 1.0
            row = np.zeros(d)
            row[i] = w[i]
            row[n + i] = -gate
            rows.append(row)
            coeffs.append(1.0)
            row2 = np.zeros(d)
            row2[i] = -w[i]
            row2[n + i] = -gate
            rows.append(row2)
            coeffs.append(-1.0)
        return _finish(rows, [0.0] * len(rows), coeffs)

    if fam == "pertinent_negatives":
        rows, biases, coeffs = [], [], []
        for i in range(n):
            row = np.zeros(n)
            row[i] = w[i]
            _pair_block(rows, coeffs, row, 1.0)
            biases.extend([0.0, 0.0])
        m = spec.pertinent.multiplier
        for i in spec.pertinent.pn_indices:
            row = np.zeros(n)
            row[i] = -1.0
            rows.append(row)
            biases.append(1.0)          # relu(1 - x_i)
            coeffs.append(w[i] * m)
        return _finish(rows, biases, coeffs)

    if fam == "shattered":
        b = spec.shattered_offsets
        bias = np.zeros(n) if b is None else np.asarray(b, dtype=np.float64)
        hidden = Linear(np.diag(w), bias)
        out = Linear(np.ones((1, n)), np.zeros(1))
        return FeedForwardNet((hidden, Relu(), out))

    if fam == "interacting":
        d = n
        gate = spec.input_bound + 1.0
        rows, biases, coeffs = [], [], []
        paired: set[int] = set()
        for p in spec.interacting.pairs:
            xi, ci = p.continuous, p.categorical
            diff = p.weight_on - p.weight_off
            # relu(x), relu(x - K c), relu(-x), relu(-x - K c); the plain
            # relu(+/-x) units double as the carrier of the base weight.
            row = np.zeros(d)
            row[xi] = 1.0
            rows.append(row)
            coeffs.append(p.weight_on)
            row = np.zeros(d)
            row[xi] = 1.0
            row[ci] = -gate
            rows.append(row)
            coeffs.append(-diff)
            row = np.zeros(d)
            row[xi] = -1.0
            rows.append(row)
            coeffs.append(-p.weight_on)
            row = np.zeros(d)
            row[xi] = -1.0
            row[ci] = -gate
            rows.append(row)
            coeffs.append(diff)
            biases.extend([0.0, 0.0, 0.0, 0.0])
            # additive categorical carry
            row = np.zeros(d)
            row[ci] = w[ci]
            _pair_block(rows, coeffs, row, 1.0)
            biases.extend([0.0, 0.0])
            paired.update((xi, ci))
        for j in range(d):
            if j not in paired:
                row = np.zeros(d)
                row[j] = w[j]
                _pair_block(rows, coeffs, row, 1.0)
                biases.extend([0.0, 0.0])
        return _finish(rows, biases, coeffs)

    if fam == "uncertainty":
        std = list(spec.uncertainty.standard_indices)
        com = list(spec.uncertainty.common_indices)
        k = len(std)
        weight = np.zeros((k, n))
        for cls, i in enumerate(std):
            weight[cls, i] = w[i]
            for j in com:
                weight[cls, j] = w[j]
        return FeedForwardNet((Linear(weight, np.zeros(k)), Softmax()))

    if fam == "boolean":
        return compile_boolean(parse_boolean(spec.formula))

    raise UnsupportedFamilyError(fam)


def sample_support_probes(spec: ModelSpec, n_probes: int, seed: int = 0) -> np.ndarray:
    """Random inputs covering the declared support of the family."""
    rng = rng_for(seed, "probes", spec.family)
    kinds = feature_kinds(spec)
    cols = []
    for kind in kinds:
        if kind == "continuous":
            cols.append(rng.uniform(-spec.input_bound, spec.input_bound, size=n_probes))
        elif kind == "categorical01":
            cols.append(rng.integers(0, 2, size=n_probes).astype(np.float64))
        else:
            cols.append(rng.choice([-1.0, 1.0], size=n_probes))
    return np.column_stack(cols)


def validate_model(net: FeedForwardNet, spec: ModelSpec, probes) -> float:
    """Max absolute deviation between the net and the closed form over probes."""
    probes = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    got = forward(net, probes)
    want = closed_form(spec, probes)
    return float(np.max(np.abs(got - want))) if probes.size else 0.0
