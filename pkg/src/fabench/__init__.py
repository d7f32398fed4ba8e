"""Benchmark harness for feature-attribution methods.

Procedurally constructed networks with exactly known internal mechanisms are
paired with synthetic datasets carrying ground-truth attributions; a suite of
attribution methods implemented from first principles is scored against those
truths (or against robustness/faithfulness metrics where no truth exists).
"""

from .attribution import (
    AttributionMatrix,
    DegenerateSamplingError,
    UnderDeterminedError,
    deeplift_rescale,
    exact_shapley,
    feature_ablation,
    input_x_gradient,
    integrated_gradients,
    kernel_shap,
    lime,
    shapley_value_sampling,
)
from .bench import (
    ExperimentConfig,
    MethodSetting,
    MetricSetting,
    ResultTable,
    config_from_dict,
    render_table,
    run_experiment,
)
from .boolean import BooleanParseError, compile_boolean, eval_truth, parse_boolean
from .data import (
    DatasetBundle,
    DatasetSpec,
    GroundTruth,
    generate_dataset,
    generate_splits,
    ground_truth_boolean_unit,
    ground_truth_exact,
    load_bundle,
    save_bundle,
)
from .metrics import MetricResult, infidelity, mask_error, mse, sensitivity_max
from .models import (
    InteractingPair,
    InteractingParams,
    ModelSpec,
    PertinentNegativeParams,
    UncertaintyParams,
    build_model,
    closed_form,
    validate_model,
)
from .nets import (
    FeedForwardNet,
    InputDimensionError,
    Linear,
    Relu,
    Softmax,
    TargetSpec,
    forward,
    input_gradient,
    load_net,
    save_net,
)
from .training import TrainConfig, TrainingDivergedError, TrainReport, train_mlp

__version__ = "0.1.0"
