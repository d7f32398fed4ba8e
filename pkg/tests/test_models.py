import numpy as np
import pytest

from fabench.models import (
    InteractingPair,
    InteractingParams,
    ModelSpec,
    PertinentNegativeParams,
    UncertaintyParams,
    UnsupportedFamilyError,
    build_model,
    closed_form,
    feature_kinds,
    sample_support_probes,
    validate_model,
)
from fabench.nets import TargetSpec, forward, input_gradient
from fabench.seeding import rng_for


def spec_for(family, n=8, seed=0):
    """A representative spec with deterministic pseudo-random weights."""
    rng = rng_for(seed, "spec", family)
    w = rng.uniform(0.1, 1.0, n) * rng.choice([-1.0, 1.0], n)
    if family == "pertinent_negatives":
        return ModelSpec(family, w, pertinent=PertinentNegativeParams((0, 1), 10.0))
    if family == "interacting":
        pairs = tuple(
            InteractingPair(i, n // 2 + i,
                            float(rng.uniform(0.2, 1.0)),
                            float(-rng.uniform(0.2, 1.0)))
            for i in range(n // 2)
        )
        return ModelSpec(family, w, interacting=InteractingParams(pairs))
    if family == "uncertainty":
        half = n // 2
        return ModelSpec(family, w,
                         uncertainty=UncertaintyParams(tuple(range(half)),
                                                       tuple(range(half, n))))
    if family == "boolean":
        return ModelSpec(family, np.array([]),
                         formula="(a AND b AND c) OR (NOT d AND e) OR NOT f")
    return ModelSpec(family, w)


ALL_FAMILIES = ("weighted", "conflicting", "pertinent_negatives", "shattered",
                "interacting", "uncertainty", "boolean")


class TestBuildExamples:
    def test_conflicting_cancellation(self):
        net = build_model(ModelSpec("conflicting", np.array([2.0])))
        assert forward(net, [1.5, 1.0]) == pytest.approx([0.0])
        assert forward(net, [1.5, 0.0]) == pytest.approx([3.0])

    def test_pertinent_negative_zero_value(self):
        net = build_model(ModelSpec("pertinent_negatives", np.array([1.0]),
                                    pertinent=PertinentNegativeParams((0,), 10.0)))
        assert forward(net, [0.0]) == pytest.approx([10.0])
        assert forward(net, [1.0]) == pytest.approx([1.0])

    def test_interacting_switch(self):
        spec = ModelSpec("interacting", np.array([0.5, 2.0]),
                         interacting=InteractingParams(
                             (InteractingPair(0, 1, 1.0, 5.0),)))
        net = build_model(spec)
        assert forward(net, [3.0, 1.0]) == pytest.approx([17.0])
        assert forward(net, [3.0, 0.0]) == pytest.approx([3.0])

    def test_unknown_family_rejected(self):
        with pytest.raises(UnsupportedFamilyError):
            ModelSpec("mystery", np.array([1.0]))


class TestExactness:
    @pytest.mark.parametrize("family", ALL_FAMILIES)
    def test_deviation_under_1e9(self, family):
        spec = spec_for(family)
        net = build_model(spec)
        probes = sample_support_probes(spec, 10_000, seed=3)
        assert validate_model(net, spec, probes) <= 1e-9

    def test_zero_input_zero_deviation(self):
        spec = spec_for("weighted")
        net = build_model(spec)
        assert validate_model(net, spec, np.zeros((1, 8))) == 0.0

    def test_boolean_and_exhaustive(self):
        spec = ModelSpec("boolean", np.array([]), formula="a AND b")
        net = build_model(spec)
        probes = np.array([[a, b] for a in (-1.0, 1.0) for b in (-1.0, 1.0)])
        assert validate_model(net, spec, probes) <= 1e-12

    @pytest.mark.parametrize("family", ALL_FAMILIES)
    def test_random_specs_stay_exact(self, family):
        # 100+ random spec/probe draws per family
        for trial in range(15):
            spec = spec_for(family, n=6, seed=100 + trial)
            net = build_model(spec)
            probes = sample_support_probes(spec, 400, seed=trial)
            assert validate_model(net, spec, probes) <= 1e-9


class TestGradientStructure:
    def test_conflicting_gate_zeroes_gradients(self):
        spec = spec_for("conflicting", n=5)
        net = build_model(spec)
        rng = rng_for(5, "gate")
        for _ in range(100):
            x = rng.uniform(-10, 10, 5)
            c = rng.integers(0, 2, 5).astype(float)
            g = input_gradient(net, np.concatenate([x, c]))
            on = c == 1.0
            assert np.all(g[:5][on] == 0.0)
            assert np.all(g[5:][on] == 0.0)

    def test_uncertainty_translation_invariance(self):
        spec = spec_for("uncertainty", n=8)
        net = build_model(spec)
        rng = rng_for(6, "shift")
        common = list(spec.uncertainty.common_indices)
        for _ in range(100):
            x = rng.standard_normal(8)
            shifted = x.copy()
            shifted[common] += float(rng.uniform(-3, 3))
            assert forward(net, shifted) == pytest.approx(forward(net, x), abs=1e-12)

    def test_interacting_local_gradients_match_formula(self):
        spec = ModelSpec("interacting", np.array([0.5, 2.0]),
                         interacting=InteractingParams(
                             (InteractingPair(0, 1, 1.0, 5.0),)))
        net = build_model(spec)
        g_on = input_gradient(net, [3.0, 1.0])
        assert g_on == pytest.approx([5.0, 2.0])
        g_off = input_gradient(net, [3.0, 0.0])
        assert g_off[0] == pytest.approx(1.0)


class TestSpecValidation:
    def test_small_weights_rejected(self):
        with pytest.raises(ValueError):
            ModelSpec("weighted", np.array([1.0, 0.01]))

    def test_multiplier_one_rejected(self):
        with pytest.raises(ValueError):
            PertinentNegativeParams((0,), 1.0)

    def test_pair_reuse_rejected(self):
        with pytest.raises(ValueError):
            InteractingParams((InteractingPair(0, 1, 1.0, 2.0),
                               InteractingPair(1, 2, 1.0, 2.0)))

    def test_equal_pair_weights_rejected(self):
        with pytest.raises(ValueError):
            InteractingParams((InteractingPair(0, 1, 1.0, 1.0),))

    def test_overlapping_uncertainty_sets_rejected(self):
        with pytest.raises(ValueError):
            UncertaintyParams((0, 1), (1, 2))

    def test_feature_kinds(self):
        spec = spec_for("conflicting", n=3)
        assert feature_kinds(spec) == ["continuous"] * 3 + ["categorical01"] * 3
        spec = spec_for("pertinent_negatives", n=4)
        assert feature_kinds(spec) == ["categorical01", "categorical01",
                                       "continuous", "continuous"]
