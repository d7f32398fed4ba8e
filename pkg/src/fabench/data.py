"""Synthetic dataset generation paired with the handcrafted model families.

Each generated bundle carries the realized samples, labels computed from the
family's closed form, per-column feature kinds, and a ground-truth payload:
exact per-feature attributions (defined by ablating features to the reference
input in a fixed order), a binary relevance mask, or nothing.

Ground-truth conventions:

* Continuous/categorical families ablate to 0. The ablation order matters for
  the paired families: conflicting ablates the cancellation feature first,
  interacting ablates the continuous feature first.
* The standalone boolean AND/OR units use an input-dependent reference b-:
  the all-false vector when the formula is true, the all-true vector when it
  is false, i.e. the cheapest input that flips the decision. The per-feature
  responsibility magnitude is |M(b) - M(b-)| divided by the number of flipped
  features; the stored ground truth is signed by the realized output so that
  it sums to M(b) - M(b-) exactly, matching what completeness-conforming
  attribution methods can produce against the same reference.

Generation is a pure function of the spec: weights, samples and splits all
derive from the spec seed through the documented seed tree.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .models import (
    FAMILIES,
    InteractingPair,
    InteractingParams,
    ModelSpec,
    PertinentNegativeParams,
    UncertaintyParams,
    UnsupportedFamilyError,
    closed_form,
    feature_kinds,
)
from .seeding import rng_for

__all__ = [
    "DATASET_FAMILIES",
    "DatasetSpec",
    "GroundTruth",
    "DatasetBundle",
    "GroundTruthUnavailableError",
    "draw_model_spec",
    "generate_dataset",
    "generate_splits",
    "ground_truth_exact",
    "ground_truth_boolean_unit",
    "save_bundle",
    "load_bundle",
    "dataset_spec_to_dict",
    "dataset_spec_from_dict",
    "model_spec_to_dict",
    "model_spec_from_dict",
]

DATASET_FAMILIES = (
    "weighted",
    "conflicting",
    "pertinent_negatives",
    "shattered",
    "interacting",
    "uncertainty",
    "bool_and",
    "bool_or",
    "boolean",
)

MAX_BOOL_ATOMS = 20
ENUMERATION_LIMIT = 4096


class GroundTruthUnavailableError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    """Declarative description of one synthetic data generator.

    ``n_features`` counts the base features; the conflicting family adds one
    cancellation feature per base feature on top of that.
    """

    family: str
    n_features: int = 10
    n_train: int = 2600
    n_val: int = 400
    n_test: int = 1000
    seed: int = 0
    input_bound: float = 10.0
    shattered_sigma: float = 0.5
    pn_count: int = 2
    pn_multiplier: float = 10.0
    formula: str | None = None

    def __post_init__(self):
        if self.family not in DATASET_FAMILIES:
            raise UnsupportedFamilyError(f"unknown dataset family {self.family!r}")
        for name in ("n_features", "n_train", "n_val", "n_test"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.family == "boolean" and not self.formula:
            raise ValueError("generic boolean datasets need a formula")
        if self.family in ("bool_and", "bool_or", "boolean"):
            n_atoms = self.n_features
            if self.formula:
                from .boolean import atom_names, parse_boolean
                n_atoms = len(atom_names(parse_boolean(self.formula)))
            if n_atoms > MAX_BOOL_ATOMS:
                raise ValueError(f"boolean atom count {n_atoms} exceeds {MAX_BOOL_ATOMS}")
        if self.family == "pertinent_negatives" and not 0 < self.pn_count <= self.n_features:
            raise ValueError("pn_count must be in 1..n_features")


@dataclass(frozen=True)
class GroundTruth:
    """Tagged payload: exact attribution matrix, binary mask, or absent."""

    kind: str  # "exact" | "mask" | "none"
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("exact", "mask", "none"):
            raise ValueError(f"unknown ground truth kind {self.kind!r}")
        if self.kind == "none":
            if self.values is not None:
                raise ValueError("'none' ground truth carries no values")
        else:
            v = np.asarray(self.values, dtype=np.float64)
            v.flags.writeable = False
            object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class DatasetBundle:
    """Realized samples with labels, ground truth, and the paired model spec."""

    features: np.ndarray
    labels: np.ndarray
    feature_kinds: tuple[str, ...]
    ground_truth: GroundTruth
    model_spec: ModelSpec
    dataset_spec: DatasetSpec | None = None
    split: str = "test"

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        f.flags.writeable = False
        object.__setattr__(self, "features", f)
        lbl = np.asarray(self.labels)
        lbl.flags.writeable = False
        object.__setattr__(self, "labels", lbl)
        object.__setattr__(self, "feature_kinds", tuple(self.feature_kinds))

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def is_classification(self) -> bool:
        return self.labels.ndim == 1

    def default_baseline(self) -> np.ndarray:
        """Attribution reference input: zero, or the flip reference per row
        for boolean families (0 is outside the +/-1 support)."""
        if all(k == "boolean_pm1" for k in self.feature_kinds):
            out = closed_form(self.model_spec, self.features)[:, 0]
            return np.where(out[:, None] > 0, -1.0, 1.0) * np.ones((1, self.n_features))
        return np.zeros(self.n_features)


# ---------------------------------------------------------------------------
# Model-spec drawing (weights are redrawn per trial by the harness).
# ---------------------------------------------------------------------------

def _draw_weights(rng, n: int, low=-1.0, high=1.0, min_abs=0.05) -> np.ndarray:
    w = rng.uniform(low, high, size=n)
    while np.any(np.abs(w) < min_abs):
        bad = np.abs(w) < min_abs
        w[bad] = rng.uniform(low, high, size=int(bad.sum()))
    return w


def _draw_normal_weights(rng, n: int, min_abs=0.05) -> np.ndarray:
    w = rng.standard_normal(n)
    while np.any(np.abs(w) < min_abs):
        bad = np.abs(w) < min_abs
        w[bad] = rng.standard_normal(int(bad.sum()))
    return w


def _unit_formula(connective: str, n: int) -> str:
    names = [f"x{i}" for i in range(n)]
    return f" {connective} ".join(names)


def draw_model_spec(spec: DatasetSpec, seed: int | None = None) -> ModelSpec:
    """Draw the paired model for one trial; pure function of (spec, seed)."""
    rng = rng_for(spec.seed if seed is None else seed, "model", spec.family)
    n = spec.n_features
    fam = spec.family
    if fam in ("weighted", "conflicting", "shattered"):
        return ModelSpec(fam, _draw_weights(rng, n), input_bound=spec.input_bound)
    if fam == "pertinent_negatives":
        return ModelSpec(
            fam,
            _draw_weights(rng, n),
            input_bound=spec.input_bound,
            pertinent=PertinentNegativeParams(
                tuple(range(spec.pn_count)), spec.pn_multiplier
            ),
        )
    if fam == "interacting":
        w = _draw_weights(rng, n)
        half = n // 2
        pairs = []
        for i in range(half):
            w_off = _draw_weights(rng, 1)[0]
            w_on = _draw_weights(rng, 1)[0]
            while abs(w_off - w_on) < 0.1:
                w_on = _draw_weights(rng, 1)[0]
            pairs.append(InteractingPair(i, half + i, w_off, w_on))
        return ModelSpec(fam, w, input_bound=spec.input_bound,
                         interacting=InteractingParams(tuple(pairs)))
    if fam == "uncertainty":
        n_std = (n + 1) // 2
        return ModelSpec(
            fam,
            _draw_normal_weights(rng, n),
            input_bound=spec.input_bound,
            uncertainty=UncertaintyParams(
                tuple(range(n_std)), tuple(range(n_std, n))
            ),
        )
    if fam == "bool_and":
        return ModelSpec("boolean", np.array([]), formula=_unit_formula("AND", n))
    if fam == "bool_or":
        return ModelSpec("boolean", np.array([]), formula=_unit_formula("OR", n))
    if fam == "boolean":
        return ModelSpec("boolean", np.array([]), formula=spec.formula)
    raise UnsupportedFamilyError(fam)


# ---------------------------------------------------------------------------
# Sample generation.
# ---------------------------------------------------------------------------

def _truncated_normal(rng, n: int, sigma: float, bound: float) -> np.ndarray:
    x = rng.standard_normal(n) * sigma
    while np.any(np.abs(x) > bound):
        bad = np.abs(x) > bound
        x[bad] = rng.standard_normal(int(bad.sum())) * sigma
    return x


def _enumerate_assignments(n: int) -> np.ndarray:
    rows = np.arange(2 ** n, dtype=np.uint32)
    bits = (rows[:, None] >> np.arange(n, dtype=np.uint32)[None, :]) & 1
    return bits.astype(np.float64) * 2.0 - 1.0


def _draw_features(spec: DatasetSpec, model: ModelSpec, split: str, count: int) -> np.ndarray:
    kinds = feature_kinds(model)
    if all(k == "boolean_pm1" for k in kinds):
        n = len(kinds)
        if split == "test" and 2 ** n <= ENUMERATION_LIMIT:
            return _enumerate_assignments(n)
        rng = rng_for(spec.seed, "features", split)
        return rng.choice([-1.0, 1.0], size=(count, n))
    rng = rng_for(spec.seed, "features", split)
    sigma = spec.shattered_sigma if spec.family == "shattered" else 1.0
    cols = []
    for kind in kinds:
        if kind == "continuous":
            cols.append(_truncated_normal(rng, count, sigma, spec.input_bound))
        elif kind == "categorical01":
            cols.append(rng.integers(0, 2, size=count).astype(np.float64))
        else:
            cols.append(rng.choice([-1.0, 1.0], size=count))
    return np.column_stack(cols)


def _labels_for(model: ModelSpec, X: np.ndarray) -> np.ndarray:
    out = closed_form(model, X)
    if model.family == "uncertainty":
        return out.argmax(axis=1).astype(np.int64)
    return out


def _attach_ground_truth(spec: DatasetSpec, model: ModelSpec, X: np.ndarray) -> GroundTruth:
    fam = spec.family
    if fam in ("weighted", "conflicting", "pertinent_negatives", "interacting"):
        return GroundTruth("exact", ground_truth_exact(model, X))
    if fam == "uncertainty":
        mask = np.zeros(model.n_features)
        mask[list(model.uncertainty.standard_indices)] = 1.0
        return GroundTruth("mask", mask)
    if fam in ("bool_and", "bool_or"):
        connective = "AND" if fam == "bool_and" else "OR"
        rows = np.vstack([ground_truth_boolean_unit(connective, row) for row in X])
        out = closed_form(model, X)[:, 0]
        # Sign by the realized output so the stored truth telescopes to
        # M(b) - M(b-) and is directly comparable to completeness-conforming
        # attribution methods run against the same flip reference.
        return GroundTruth("exact", rows * out[:, None])
    return GroundTruth("none")


def generate_dataset(spec: DatasetSpec, split: str = "test") -> DatasetBundle:
    """Realize one split of the generator; deterministic for a fixed spec.

    Boolean-family test splits enumerate all 2**n assignments while they fit
    under the enumeration limit; other splits sample uniformly.
    """
    if split not in ("train", "val", "test"):
        raise ValueError(f"unknown split {split!r}")
    model = draw_model_spec(spec)
    count = {"train": spec.n_train, "val": spec.n_val, "test": spec.n_test}[split]
    X = _draw_features(spec, model, split, count)
    return DatasetBundle(
        features=X,
        labels=_labels_for(model, X),
        feature_kinds=tuple(feature_kinds(model)),
        ground_truth=_attach_ground_truth(spec, model, X),
        model_spec=model,
        dataset_spec=spec,
        split=split,
    )


def generate_splits(spec: DatasetSpec) -> dict[str, DatasetBundle]:
    return {split: generate_dataset(spec, split) for split in ("train", "val", "test")}


# ---------------------------------------------------------------------------
# Ground-truth oracles.
# ---------------------------------------------------------------------------

def _ablated(model: ModelSpec, X: np.ndarray, cols: tuple[int, ...]) -> np.ndarray:
    Xa = X.copy()
    Xa[:, list(cols)] = 0.0
    return closed_form(model, Xa)[:, 0]


def ground_truth_exact(model: ModelSpec, X) -> np.ndarray:
    """Per-feature ablation ground truth against the zero reference.

    Ablation order: cancellation features before their continuous partner
    (conflicting); continuous features before their categorical partner
    (interacting); independent per-feature ablation elsewhere.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    fam = model.family
    base = closed_form(model, X)[:, 0]
    fa = np.zeros_like(X)
    if fam in ("weighted", "pertinent_negatives"):
        for i in range(X.shape[1]):
            fa[:, i] = base - _ablated(model, X, (i,))
        return fa
    if fam == "conflicting":
        n = model.weights.size
        for i in range(n):
            drop_c = _ablated(model, X, (n + i,))
            drop_both = _ablated(model, X, (n + i, i))
            fa[:, n + i] = base - drop_c
            fa[:, i] = drop_c - drop_both
        return fa
    if fam == "interacting":
        paired: set[int] = set()
        for p in model.interacting.pairs:
            drop_x = _ablated(model, X, (p.continuous,))
            drop_both = _ablated(model, X, (p.continuous, p.categorical))
            fa[:, p.continuous] = base - drop_x
            fa[:, p.categorical] = drop_x - drop_both
            paired.update((p.continuous, p.categorical))
        for j in range(X.shape[1]):
            if j not in paired:
                fa[:, j] = base - _ablated(model, X, (j,))
        return fa
    raise GroundTruthUnavailableError(f"family {fam!r} has no exact ground truth")


def ground_truth_boolean_unit(connective: str, b) -> np.ndarray:
    """Responsibility split for a standalone AND/OR unit at assignment ``b``.

    The reference b- flips the unit's output (all-false when the unit is
    true, all-true when it is false); features already equal to their
    reference value get 0, the rest share |M(b) - M(b-)| equally.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 1:
        raise ValueError("b must be a single assignment vector")
    if not np.all(np.isin(b, (-1.0, 1.0))):
        raise ValueError("assignments must be +/-1")
    if connective not in ("AND", "OR"):
        raise ValueError(f"unknown connective {connective!r}")
    if connective == "AND":
        m_b = 1.0 if np.all(b == 1.0) else -1.0
    else:
        m_b = 1.0 if np.any(b == 1.0) else -1.0
    b_ref = -m_b * np.ones_like(b)
    m_ref = -m_b  # flipping every feature flips an AND/OR unit's output
    changed = b != b_ref
    denom = float(((b - b_ref) / 2.0).sum())
    fa = np.zeros_like(b)
    fa[changed] = (m_b - m_ref) / denom
    return fa


# ---------------------------------------------------------------------------
# Spec serialization and bundle round-trip I/O.
# ---------------------------------------------------------------------------

def dataset_spec_to_dict(spec: DatasetSpec) -> dict:
    return asdict(spec)


def dataset_spec_from_dict(doc: dict) -> DatasetSpec:
    allowed = set(DatasetSpec.__dataclass_fields__)
    unknown = set(doc) - allowed
    if unknown:
        raise ValueError(f"unknown dataset spec keys: {sorted(unknown)}")
    return DatasetSpec(**doc)


def model_spec_to_dict(spec: ModelSpec) -> dict:
    doc: dict = {
        "family": spec.family,
        "weights": spec.weights.tolist(),
        "input_bound": spec.input_bound,
    }
    if spec.pertinent is not None:
        doc["pertinent"] = {
            "pn_indices": list(spec.pertinent.pn_indices),
            "multiplier": spec.pertinent.multiplier,
        }
    if spec.interacting is not None:
        doc["interacting"] = [
            [p.continuous, p.categorical, p.weight_off, p.weight_on]
            for p in spec.interacting.pairs
        ]
    if spec.uncertainty is not None:
        doc["uncertainty"] = {
            "standard_indices": list(spec.uncertainty.standard_indices),
            "common_indices": list(spec.uncertainty.common_indices),
        }
    if spec.formula is not None:
        doc["formula"] = spec.formula
    if spec.shattered_offsets is not None:
        doc["shattered_offsets"] = spec.shattered_offsets.tolist()
    return doc


def model_spec_from_dict(doc: dict) -> ModelSpec:
    allowed = {"family", "weights", "input_bound", "pertinent", "interacting",
               "uncertainty", "formula", "shattered_offsets"}
    unknown = set(doc) - allowed
    if unknown:
        raise ValueError(f"unknown model spec keys: {sorted(unknown)}")
    kwargs: dict = {
        "family": doc["family"],
        "weights": np.asarray(doc.get("weights", []), dtype=np.float64),
        "input_bound": doc.get("input_bound", 10.0),
    }
    if "pertinent" in doc:
        kwargs["pertinent"] = PertinentNegativeParams(
            tuple(doc["pertinent"]["pn_indices"]), doc["pertinent"]["multiplier"]
        )
    if "interacting" in doc:
        kwargs["interacting"] = InteractingParams(tuple(
            InteractingPair(int(a), int(b), float(w1), float(w2))
            for a, b, w1, w2 in doc["interacting"]
        ))
    if "uncertainty" in doc:
        kwargs["uncertainty"] = UncertaintyParams(
            tuple(doc["uncertainty"]["standard_indices"]),
            tuple(doc["uncertainty"]["common_indices"]),
        )
    if "formula" in doc:
        kwargs["formula"] = doc["formula"]
    if "shattered_offsets" in doc:
        kwargs["shattered_offsets"] = np.asarray(doc["shattered_offsets"], dtype=np.float64)
    return ModelSpec(**kwargs)


def save_bundle(bundle: DatasetBundle, path: str) -> None:
    """Write the sample table as CSV plus a ``<path>.meta.json`` sidecar.

    Floats are rendered with the shortest round-trip repr, so load_bundle
    restores them bit for bit.
    """
    d = bundle.n_features
    header = [f"f{i}" for i in range(d)]
    if bundle.is_classification:
        header.append("class")
    else:
        header += [f"y{j}" for j in range(bundle.labels.shape[1])]
    gt = bundle.ground_truth
    if gt.kind == "exact":
        header += [f"gt{i}" for i in range(d)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in range(bundle.n_samples):
            row = [repr(float(v)) for v in bundle.features[r]]
            if bundle.is_classification:
                row.append(str(int(bundle.labels[r])))
            else:
                row += [repr(float(v)) for v in bundle.labels[r]]
            if gt.kind == "exact":
                row += [repr(float(v)) for v in gt.values[r]]
            writer.writerow(row)
    meta = {
        "format": "bundle-v1",
        "split": bundle.split,
        "feature_kinds": list(bundle.feature_kinds),
        "label_kind": "class" if bundle.is_classification else "real",
        "ground_truth": {"kind": gt.kind},
        "model_spec": model_spec_to_dict(bundle.model_spec),
    }
    if gt.kind == "mask":
        meta["ground_truth"]["mask"] = gt.values.tolist()
    if bundle.dataset_spec is not None:
        meta["dataset_spec"] = dataset_spec_to_dict(bundle.dataset_spec)
    with open(path + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")


def load_bundle(path: str) -> DatasetBundle:
    with open(path + ".meta.json") as fh:
        meta = json.load(fh)
    if meta.get("format") != "bundle-v1":
        raise ValueError(f"unsupported bundle format {meta.get('format')!r}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    d = sum(1 for h in header if h.startswith("f"))
    features = np.array([[float(v) for v in row[:d]] for row in rows])
    classification = meta["label_kind"] == "class"
    if classification:
        labels = np.array([int(row[d]) for row in rows], dtype=np.int64)
        gt_start = d + 1
    else:
        n_y = sum(1 for h in header if h.startswith("y"))
        labels = np.array([[float(v) for v in row[d:d + n_y]] for row in rows])
        gt_start = d + n_y
    gt_kind = meta["ground_truth"]["kind"]
    if gt_kind == "exact":
        gt = GroundTruth("exact", np.array(
            [[float(v) for v in row[gt_start:gt_start + d]] for row in rows]))
    elif gt_kind == "mask":
        gt = GroundTruth("mask", np.array(meta["ground_truth"]["mask"]))
    else:
        gt = GroundTruth("none")
    dataset_spec = None
    if "dataset_spec" in meta:
        dataset_spec = dataset_spec_from_dict(meta["dataset_spec"])
    return DatasetBundle(
        features=features,
        labels=labels,
        feature_kinds=tuple(meta["feature_kinds"]),
        ground_truth=gt,
        model_spec=model_spec_from_dict(meta["model_spec"]),
        dataset_spec=dataset_spec,
        split=meta.get("split", "test"),
    )
