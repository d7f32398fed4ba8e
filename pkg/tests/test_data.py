import numpy as np
import pytest

from fabench.data import (
    DATASET_FAMILIES,
    DatasetSpec,
    GroundTruth,
    GroundTruthUnavailableError,
    dataset_spec_from_dict,
    draw_model_spec,
    generate_dataset,
    generate_splits,
    ground_truth_boolean_unit,
    ground_truth_exact,
    load_bundle,
    save_bundle,
)
from fabench.models import ModelSpec, build_model, closed_form
from fabench.nets import forward


def make_spec(family, **kw):
    base = dict(n_features=6, n_train=80, n_val=30, n_test=120, seed=17)
    if family == "boolean":
        base["formula"] = "(a AND b) OR NOT c"
    base.update(kw)
    return DatasetSpec(family, **base)


class TestGroundTruthOracles:
    def test_weighted_example(self):
        spec = ModelSpec("weighted", np.array([1.0, -2.0]))
        x = np.array([[3.0, 4.0]])
        assert closed_form(spec, x)[0, 0] == pytest.approx(-5.0)
        assert ground_truth_exact(spec, x)[0] == pytest.approx([3.0, -8.0])

    def test_conflicting_ablation_order(self):
        spec = ModelSpec("conflicting", np.array([2.0]))
        fa = ground_truth_exact(spec, np.array([[1.5, 1.0]]))[0]
        assert fa == pytest.approx([3.0, -3.0])  # FA_x = 3, FA_c = -3

    def test_pertinent_negative_at_zero(self):
        from fabench.models import PertinentNegativeParams
        spec = ModelSpec("pertinent_negatives", np.array([1.0]),
                         pertinent=PertinentNegativeParams((0,), 10.0))
        assert ground_truth_exact(spec, np.array([[0.0]]))[0] == pytest.approx([0.0])

    def test_interacting_order(self):
        from fabench.models import InteractingPair, InteractingParams
        spec = ModelSpec("interacting", np.array([0.5, 2.0]),
                         interacting=InteractingParams(
                             (InteractingPair(0, 1, 1.0, 5.0),)))
        fa = ground_truth_exact(spec, np.array([[3.0, 1.0]]))[0]
        assert fa == pytest.approx([15.0, 2.0])

    def test_unavailable_families_raise(self):
        spec = ModelSpec("shattered", np.array([1.0, 1.0]))
        with pytest.raises(GroundTruthUnavailableError):
            ground_truth_exact(spec, np.zeros((1, 2)))

    @pytest.mark.parametrize("family", ["weighted", "conflicting",
                                        "pertinent_negatives", "interacting"])
    def test_additivity_telescopes(self, family):
        # sum_i FA_i(x) = M(x) - M(0), 100+ random rows per family
        bundle = generate_dataset(make_spec(family, n_test=150))
        m0 = closed_form(bundle.model_spec, np.zeros((1, bundle.n_features)))[0, 0]
        mx = closed_form(bundle.model_spec, bundle.features)[:, 0]
        sums = bundle.ground_truth.values.sum(axis=1)
        assert np.abs(sums - (mx - m0)).max() <= 1e-9


class TestBooleanUnitGroundTruth:
    def test_or_example(self):
        assert ground_truth_boolean_unit("OR", [1, -1]) == pytest.approx([2.0, 0.0])

    def test_and_examples(self):
        assert ground_truth_boolean_unit("AND", [1, -1]) == pytest.approx([0.0, 2.0])
        assert ground_truth_boolean_unit("AND", [1, 1]) == pytest.approx([1.0, 1.0])

    def test_non_pm1_rejected(self):
        with pytest.raises(ValueError):
            ground_truth_boolean_unit("AND", [0.5, 1.0])

    @pytest.mark.parametrize("family", ["bool_and", "bool_or"])
    def test_stored_truth_telescopes_to_flip_delta(self, family):
        bundle = generate_dataset(make_spec(family, n_features=5))
        out = closed_form(bundle.model_spec, bundle.features)[:, 0]
        ref = bundle.default_baseline()
        m_ref = closed_form(bundle.model_spec, ref)[:, 0]
        sums = bundle.ground_truth.values.sum(axis=1)
        assert np.abs(sums - (out - m_ref)).max() == 0.0


class TestGeneration:
    @pytest.mark.parametrize("family", DATASET_FAMILIES)
    def test_labels_align_with_network(self, family):
        bundle = generate_dataset(make_spec(family))
        net = build_model(bundle.model_spec)
        out = forward(net, bundle.features)
        if bundle.is_classification:
            assert np.array_equal(out.argmax(axis=1), bundle.labels)
        else:
            assert np.abs(out - bundle.labels).max() <= 1e-9

    @pytest.mark.parametrize("family", DATASET_FAMILIES)
    def test_bit_for_bit_determinism(self, family):
        a = generate_dataset(make_spec(family))
        b = generate_dataset(make_spec(family))
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)
        assert a.model_spec == b.model_spec

    def test_column_kinds_respected(self):
        bundle = generate_dataset(make_spec("conflicting"))
        x, c = bundle.features[:, :6], bundle.features[:, 6:]
        assert np.all(np.isin(c, (0.0, 1.0)))
        assert np.abs(x).max() <= 10.0
        assert bundle.feature_kinds == ("continuous",) * 6 + ("categorical01",) * 6

    def test_uncertainty_mask(self):
        bundle = generate_dataset(make_spec("uncertainty", n_features=3))
        assert bundle.ground_truth.kind == "mask"
        assert bundle.ground_truth.values == pytest.approx([1.0, 1.0, 0.0])

    def test_boolean_test_split_enumerates(self):
        spec = DatasetSpec("boolean", n_features=2, formula="A AND B", seed=1)
        bundle = generate_dataset(spec)
        assert bundle.n_samples == 4
        rows = {tuple(r) for r in bundle.features}
        assert len(rows) == 4

    def test_boolean_sampled_when_large(self):
        spec = DatasetSpec("bool_or", n_features=13, n_test=250, seed=1)
        bundle = generate_dataset(spec)
        assert bundle.n_samples == 250

    def test_atom_limit(self):
        with pytest.raises(ValueError):
            DatasetSpec("bool_and", n_features=21)

    def test_splits_share_the_model(self):
        splits = generate_splits(make_spec("weighted"))
        assert splits["train"].model_spec == splits["test"].model_spec
        assert splits["train"].n_samples == 80
        assert splits["val"].n_samples == 30
        assert not np.array_equal(splits["train"].features[:30],
                                  splits["val"].features)

    def test_shattered_sigma_narrows_spread(self):
        wide = generate_dataset(make_spec("weighted", n_test=400))
        narrow = generate_dataset(make_spec("shattered", n_test=400))
        assert narrow.features.std() < wide.features.std()

    def test_trial_weights_differ_across_seeds(self):
        a = draw_model_spec(make_spec("weighted", seed=1))
        b = draw_model_spec(make_spec("weighted", seed=2))
        assert not np.array_equal(a.weights, b.weights)
        assert np.abs(a.weights).min() >= 0.05


class TestRoundTrip:
    @pytest.mark.parametrize("family", ["weighted", "uncertainty", "bool_and",
                                        "shattered", "interacting"])
    def test_save_load_bit_identical(self, family, tmp_path):
        bundle = generate_dataset(make_spec(family))
        path = str(tmp_path / "bundle.csv")
        save_bundle(bundle, path)
        loaded = load_bundle(path)
        assert np.array_equal(bundle.features, loaded.features)
        assert np.array_equal(bundle.labels, loaded.labels)
        assert bundle.feature_kinds == loaded.feature_kinds
        assert bundle.model_spec == loaded.model_spec
        assert bundle.dataset_spec == loaded.dataset_spec
        gt, lgt = bundle.ground_truth, loaded.ground_truth
        assert gt.kind == lgt.kind
        if gt.kind != "none":
            assert np.array_equal(gt.values, lgt.values)

    def test_unknown_spec_keys_rejected(self):
        with pytest.raises(ValueError):
            dataset_spec_from_dict({"family": "weighted", "n_feature": 4})


class TestGroundTruthType:
    def test_none_carries_no_values(self):
        with pytest.raises(ValueError):
            GroundTruth("none", np.zeros(3))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            GroundTruth("approximate", np.zeros(3))
