"""Config-driven experiment pipeline.

Builds dataset/model pairs per trial, optionally trains comparison models,
runs a method grid on the test split, scores each cell with the dataset's
default metric (or an override), and aggregates mean +/- std across trials.

Determinism: every trial cell derives its seeds from the master seed through
the documented seed tree (master -> trial -> dataset -> method), so results
are byte-identical across runs and across any degree of parallelism. Cell
failures are recorded in-table as error cells without aborting the run.
"""

from __future__ import annotations

import dataclasses
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import attribution as attr_mod
from .attribution import AttributionMatrix
from .data import DatasetBundle, DatasetSpec, dataset_spec_from_dict, generate_dataset
from .metrics import MetricResult, infidelity, mask_error, mse, sensitivity_max
from .models import build_model
from .nets import FeedForwardNet, TargetSpec, forward
from .seeding import mix
from .training import TrainConfig, train_mlp

__all__ = [
    "MethodSetting",
    "MetricSetting",
    "ExperimentConfig",
    "ResultRow",
    "ResultTable",
    "run_experiment",
    "render_table",
    "config_from_dict",
    "config_to_dict",
    "DEFAULT_METRIC_BY_FAMILY",
]

ARMS = ("handcrafted", "trained")

DEFAULT_METRIC_BY_FAMILY = {
    "weighted": "mse",
    "conflicting": "mse",
    "pertinent_negatives": "mse",
    "interacting": "mse",
    "bool_and": "mse",
    "bool_or": "mse",
    "uncertainty": "mask_error",
    "shattered": "sensitivity_max",
    "boolean": "infidelity",
}


@dataclass(frozen=True)
class MethodSetting:
    """One attribution method plus its knobs and an optional target override."""

    method: str
    label: str | None = None
    target: str | None = None          # None: dataset default
    target_index: int | None = None
    steps: int = 64                    # integrated_gradients
    n_permutations: int = 25           # shapley_value_sampling
    exhaustive: bool = False
    budget: int = 2048                 # kernel_shap
    n_samples: int = 200               # lime
    kernel_width: float | None = None
    regularisation: str = "none"
    lasso_lambda: float = 0.01

    def __post_init__(self):
        if self.method not in attr_mod.METHODS:
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def display(self) -> str:
        if self.label:
            return self.label
        if self.method == "lime":
            return "lime_lasso" if self.regularisation == "lasso" else "lime_linear"
        return self.method


@dataclass(frozen=True)
class MetricSetting:
    name: str
    radius: float = 0.02        # sensitivity_max
    n_perturb: int | None = None  # default: 10 for sensitivity, 128 for infidelity
    noise_scale: float = 0.5    # infidelity

    def __post_init__(self):
        if self.name not in ("mse", "mask_error", "sensitivity_max", "infidelity"):
            raise ValueError(f"unknown metric {self.name!r}")

    @property
    def perturbations(self) -> int:
        if self.n_perturb is not None:
            return self.n_perturb
        return 10 if self.name == "sensitivity_max" else 128


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple[DatasetSpec, ...]
    methods: tuple[MethodSetting, ...]
    metrics: tuple[MetricSetting | None, ...] = ()  # per dataset; None = family default
    arms: tuple[str, ...] = ("handcrafted",)
    n_trials: int = 5
    master_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not self.datasets or not self.methods:
            raise ValueError("config needs at least one dataset and one method")
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        for arm in self.arms:
            if arm not in ARMS:
                raise ValueError(f"unknown arm {arm!r}")
        metrics = tuple(self.metrics) if self.metrics else (None,) * len(self.datasets)
        if len(metrics) != len(self.datasets):
            raise ValueError("metrics must align with datasets")
        object.__setattr__(self, "datasets", tuple(self.datasets))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "metrics", metrics)
        object.__setattr__(self, "arms", tuple(self.arms))


@dataclass(frozen=True)
class ResultRow:
    dataset: str
    arm: str
    method: str
    target: str
    metric: str
    mean: float | None
    std: float | None
    n_trials: int
    mean_runtime_s: float | None
    error: str | None = None


@dataclass(frozen=True)
class ResultTable:
    rows: tuple[ResultRow, ...]

    @property
    def n_errors(self) -> int:
        return sum(1 for r in self.rows if r.error is not None)


# ---------------------------------------------------------------------------
# Cell execution.
# ---------------------------------------------------------------------------

def _default_target(bundle: DatasetBundle) -> TargetSpec:
    if bundle.is_classification:
        return TargetSpec("class_probability", None)
    return TargetSpec("scalar_output")


def _method_target(setting: MethodSetting, bundle: DatasetBundle) -> TargetSpec:
    if setting.target is None:
        return _default_target(bundle)
    return TargetSpec(setting.target, setting.target_index)


def _run_method(setting: MethodSetting, net: FeedForwardNet, X: np.ndarray,
                baseline, target: TargetSpec, seed: int) -> AttributionMatrix:
    m = setting.method
    if m == "input_x_gradient":
        return attr_mod.input_x_gradient(net, X, target=target)
    if m == "integrated_gradients":
        return attr_mod.integrated_gradients(net, X, baseline=baseline,
                                             steps=setting.steps, target=target)
    if m == "deeplift_rescale":
        return attr_mod.deeplift_rescale(net, X, baseline=baseline, target=target)
    if m == "feature_ablation":
        return attr_mod.feature_ablation(net, X, baseline=baseline, target=target)
    if m == "shapley_value_sampling":
        return attr_mod.shapley_value_sampling(
            net, X, baseline=baseline, n_permutations=setting.n_permutations,
            seed=seed, target=target, exhaustive=setting.exhaustive)
    if m == "kernel_shap":
        return attr_mod.kernel_shap(net, X, baseline=baseline,
                                    budget=setting.budget, seed=seed, target=target)
    if m == "lime":
        return attr_mod.lime(net, X, baseline=baseline, n_samples=setting.n_samples,
                             kernel_width=setting.kernel_width,
                             regularisation=setting.regularisation,
                             lasso_lambda=setting.lasso_lambda, seed=seed, target=target)
    raise ValueError(f"unknown method {m!r}")


def _score(metric: MetricSetting, setting: MethodSetting, net: FeedForwardNet,
           bundle: DatasetBundle, matrix: AttributionMatrix, baseline,
           target: TargetSpec, seed: int) -> MetricResult:
    gt = bundle.ground_truth
    if metric.name == "mse":
        if gt.kind != "exact":
            raise ValueError(f"dataset has no exact ground truth (kind={gt.kind})")
        return mse(matrix.values, gt.values)
    if metric.name == "mask_error":
        if gt.kind != "mask":
            raise ValueError(f"dataset has no relevance mask (kind={gt.kind})")
        return mask_error(matrix.values, gt.values)
    if metric.name == "sensitivity_max":
        def rerun(n_, X_):
            return _run_method(setting, n_, X_, baseline, target, seed).values
        return sensitivity_max(rerun, net, bundle.features, radius=metric.radius,
                               n_perturb=metric.perturbations, seed=mix(seed, "sens"))
    return infidelity(net, bundle.features, matrix.values, baseline=baseline,
                      feature_kinds=bundle.feature_kinds,
                      noise_scale=metric.noise_scale, n_perturb=metric.perturbations,
                      seed=mix(seed, "infid"), target=target)


def _model_performance(net: FeedForwardNet, bundle: DatasetBundle) -> tuple[str, float]:
    out = forward(net, bundle.features)
    if bundle.is_classification:
        return "accuracy", float((out.argmax(axis=1) == bundle.labels).mean())
    return "mse", float(((out - bundle.labels) ** 2).mean())


def _dataset_name(spec: DatasetSpec, index: int, total_of_family: int) -> str:
    return spec.family if total_of_family == 1 else f"{spec.family}#{index}"


def _run_trial(cfg: ExperimentConfig, di: int, trial: int) -> dict:
    """All cells for one (dataset, trial); returns per-cell outcomes."""
    spec = cfg.datasets[di]
    trial_seed = mix(cfg.master_seed, "trial", trial, "dataset", di, spec.family)
    spec_t = dataclasses.replace(spec, seed=trial_seed)
    out: dict = {"di": di, "trial": trial, "cells": {}, "performance": {}}
    try:
        test = generate_dataset(spec_t, "test")
    except Exception as exc:  # noqa: BLE001 - recorded as an error cell
        out["fatal"] = f"{type(exc).__name__}: {exc}"
        return out

    nets: dict[str, FeedForwardNet] = {}
    arm_errors: dict[str, str] = {}
    if "handcrafted" in cfg.arms:
        nets["handcrafted"] = build_model(test.model_spec)
    if "trained" in cfg.arms:
        try:
            train_b = generate_dataset(spec_t, "train")
            val_b = generate_dataset(spec_t, "val")
            loss = "cross_entropy" if test.is_classification else "squared_error"
            tc = dataclasses.replace(cfg.train, loss=loss, seed=mix(trial_seed, "train"))
            nets["trained"], _ = train_mlp(train_b, val_b, tc)
        except Exception as exc:  # noqa: BLE001
            arm_errors["trained"] = f"{type(exc).__name__}: {exc}"

    metric = cfg.metrics[di] or MetricSetting(DEFAULT_METRIC_BY_FAMILY[spec.family])
    baseline = test.default_baseline()
    for arm in cfg.arms:
        if arm in arm_errors:
            out["performance"][arm] = ("error", arm_errors[arm])
            for mi in range(len(cfg.methods)):
                out["cells"][(arm, mi)] = {"error": arm_errors[arm]}
            continue
        net = nets[arm]
        out["performance"][arm] = _model_performance(net, test)
        for mi, setting in enumerate(cfg.methods):
            seed = mix(trial_seed, "method", mi, setting.display)
            try:
                target = _method_target(setting, test)
                start = time.perf_counter()
                matrix = _run_method(setting, net, test.features, baseline, target, seed)
                result = _score(metric, setting, net, test, matrix, baseline, target, seed)
                out["cells"][(arm, mi)] = {
                    "mean": result.mean,
                    "runtime": time.perf_counter() - start,
                    "target": target,
                }
            except Exception as exc:  # noqa: BLE001
                out["cells"][(arm, mi)] = {"error": f"{type(exc).__name__}: {exc}"}
    return out


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> ResultTable:
    """Execute the full grid; deterministic for a fixed config at any ``jobs``."""
    tasks = [(di, t) for di in range(len(cfg.datasets)) for t in range(cfg.n_trials)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda a: _run_trial(cfg, *a), tasks))
    else:
        results = [_run_trial(cfg, *task) for task in tasks]
    by_key = {(r["di"], r["trial"]): r for r in results}

    family_counts: dict[str, int] = {}
    for spec in cfg.datasets:
        family_counts[spec.family] = family_counts.get(spec.family, 0) + 1

    rows: list[ResultRow] = []
    for di, spec in enumerate(cfg.datasets):
        name = _dataset_name(spec, di, family_counts[spec.family])
        metric = cfg.metrics[di] or MetricSetting(DEFAULT_METRIC_BY_FAMILY[spec.family])
        trials = [by_key[(di, t)] for t in range(cfg.n_trials)]
        fatal = next((t["fatal"] for t in trials if "fatal" in t), None)
        for arm in cfg.arms:
            # model performance row
            if fatal is not None:
                rows.append(ResultRow(name, arm, "model_performance", "-", "-",
                                      None, None, cfg.n_trials, None, fatal))
            else:
                perf = [t["performance"][arm] for t in trials]
                err = next((p[1] for p in perf if p[0] == "error"), None)
                if err is not None:
                    rows.append(ResultRow(name, arm, "model_performance", "-", "-",
                                          None, None, cfg.n_trials, None, err))
                else:
                    vals = np.array([p[1] for p in perf])
                    rows.append(ResultRow(name, arm, "model_performance", "-", perf[0][0],
                                          float(vals.mean()), float(vals.std()),
                                          cfg.n_trials, None, None))
            for mi, setting in enumerate(cfg.methods):
                if fatal is not None:
                    rows.append(ResultRow(name, arm, setting.display, "-", metric.name,
                                          None, None, cfg.n_trials, None, fatal))
                    continue
                cells = [t["cells"][(arm, mi)] for t in trials]
                err = next((c["error"] for c in cells if "error" in c), None)
                if err is not None:
                    rows.append(ResultRow(name, arm, setting.display, "-", metric.name,
                                          None, None, cfg.n_trials, None, err))
                    continue
                means = np.array([c["mean"] for c in cells])
                runtimes = np.array([c["runtime"] for c in cells])
                tgt = cells[0]["target"]
                tgt_str = tgt.kind if tgt.index is None else f"{tgt.kind}[{tgt.index}]"
                rows.append(ResultRow(name, arm, setting.display, tgt_str, metric.name,
                                      float(means.mean()), float(means.std()),
                                      cfg.n_trials, float(runtimes.mean()), None))
    return ResultTable(tuple(rows))


# ---------------------------------------------------------------------------
# Rendering.
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("dataset", "arm", "method", "target", "metric",
               "mean", "std", "n_trials", "error")


def render_table(table: ResultTable, fmt: str = "csv",
                 include_runtime: bool = False) -> str:
    """csv: full-precision, stable column order; markdown: 'mean +/- std' cells.

    Wall-clock runtimes vary between runs, so the runtime column is opt-in;
    the default csv is byte-identical for identical configs.
    """
    if fmt == "csv":
        columns = CSV_COLUMNS + (("mean_runtime_s",) if include_runtime else ())
        lines = [",".join(columns)]
        for r in table.rows:
            vals = [r.dataset, r.arm, r.method, r.target, r.metric,
                    "" if r.mean is None else repr(r.mean),
                    "" if r.std is None else repr(r.std),
                    str(r.n_trials),
                    "" if r.error is None else r.error.replace(",", ";")]
            if include_runtime:
                vals.append("" if r.mean_runtime_s is None else repr(r.mean_runtime_s))
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"
    if fmt == "markdown":
        header = "| dataset | arm | method | target | metric | score |"
        sep = "|---|---|---|---|---|---|"
        lines = [header, sep]
        for r in table.rows:
            if r.error is not None:
                cell = f"ERR({r.error})"
            else:
                cell = f"{r.mean:.3f} ± {r.std:.3f}"
            lines.append(f"| {r.dataset} | {r.arm} | {r.method} | {r.target} "
                         f"| {r.metric} | {cell} |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


# ---------------------------------------------------------------------------
# Config document parsing (strict: unknown keys are rejected).
# ---------------------------------------------------------------------------

def _strict(doc: dict, allowed: set[str], where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ValueError(f"unknown keys in {where}: {sorted(unknown)}")


def config_from_dict(doc: dict) -> ExperimentConfig:
    _strict(doc, {"master_seed", "n_trials", "arms", "datasets", "methods", "train"},
            "experiment config")
    datasets: list[DatasetSpec] = []
    metrics: list[MetricSetting | None] = []
    for entry in doc.get("datasets", []):
        entry = dict(entry)
        metric_doc = entry.pop("metric", None)
        datasets.append(dataset_spec_from_dict(entry))
        if metric_doc is None:
            metrics.append(None)
        else:
            _strict(metric_doc, {"name", "radius", "n_perturb", "noise_scale"}, "metric")
            metrics.append(MetricSetting(**metric_doc))
    methods = []
    for entry in doc.get("methods", []):
        _strict(entry, set(MethodSetting.__dataclass_fields__), "method")
        methods.append(MethodSetting(**entry))
    train_doc = doc.get("train", {})
    _strict(train_doc, set(TrainConfig.__dataclass_fields__), "train")
    if "hidden_widths" in train_doc:
        train_doc = dict(train_doc, hidden_widths=tuple(train_doc["hidden_widths"]))
    return ExperimentConfig(
        datasets=tuple(datasets),
        methods=tuple(methods),
        metrics=tuple(metrics),
        arms=tuple(doc.get("arms", ("handcrafted",))),
        n_trials=doc.get("n_trials", 5),
        master_seed=doc.get("master_seed", 0),
        train=TrainConfig(**train_doc),
    )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc: dict = {
        "master_seed": cfg.master_seed,
        "n_trials": cfg.n_trials,
        "arms": list(cfg.arms),
        "datasets": [],
        "methods": [],
        "train": dataclasses.asdict(cfg.train),
    }
    for spec, metric in zip(cfg.datasets, cfg.metrics):
        entry = dataclasses.asdict(spec)
        if metric is not None:
            entry["metric"] = dataclasses.asdict(metric)
        doc["datasets"].append(entry)
    for m in cfg.methods:
        doc["methods"].append(dataclasses.asdict(m))
    doc["train"]["hidden_widths"] = list(cfg.train.hidden_widths)
    return doc
