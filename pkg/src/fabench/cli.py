"""Command-line interface.

Subcommands:
  list        enumerate families, methods and metrics
  generate    realize one dataset split and write it as CSV + sidecar
  build-model construct a handcrafted network and write it as JSON
  attribute   run one method on a saved bundle, write the attribution matrix
  evaluate    score a saved attribution matrix against a bundle
  run         execute a full experiment config, write the result table

``run`` exits with the number of error cells (0 on success).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import attribution as attr_mod
from .attribution import load_attribution, save_attribution
from .bench import (
    DEFAULT_METRIC_BY_FAMILY,
    MethodSetting,
    MetricSetting,
    _method_target,
    _run_method,
    _score,
    config_from_dict,
    render_table,
    run_experiment,
)
from .data import (
    DATASET_FAMILIES,
    dataset_spec_from_dict,
    DatasetSpec,
    draw_model_spec,
    generate_dataset,
    load_bundle,
    save_bundle,
)
from .metrics import METRICS
from .models import FAMILIES, build_model
from .nets import load_net, save_net


def _load_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _dataset_spec_from_args(args) -> DatasetSpec:
    if args.config:
        doc = _load_json(args.config)
        if args.seed is not None:
            doc["seed"] = args.seed
        return dataset_spec_from_dict(doc)
    if not args.family:
        raise SystemExit("either --config or --family is required")
    kwargs = {"family": args.family}
    if args.seed is not None:
        kwargs["seed"] = args.seed
    if args.n_features is not None:
        kwargs["n_features"] = args.n_features
    if args.formula is not None:
        kwargs["formula"] = args.formula
    return DatasetSpec(**kwargs)


def cmd_list(_args) -> int:
    print("dataset families:")
    for fam in DATASET_FAMILIES:
        print(f"  {fam} (default metric: {DEFAULT_METRIC_BY_FAMILY[fam]})")
    print("model families:")
    for fam in FAMILIES:
        print(f"  {fam}")
    print("attribution methods:")
    for m in attr_mod.METHODS:
        print(f"  {m}")
    print("metrics:")
    for m in METRICS:
        print(f"  {m}")
    return 0


def cmd_generate(args) -> int:
    spec = _dataset_spec_from_args(args)
    bundle = generate_dataset(spec, args.split)
    save_bundle(bundle, args.out)
    print(f"wrote {bundle.n_samples} x {bundle.n_features} samples to {args.out}")
    return 0


def cmd_build_model(args) -> int:
    spec = _dataset_spec_from_args(args)
    model = draw_model_spec(spec)
    net = build_model(model)
    save_net(net, args.out)
    print(f"wrote {model.family} net ({net.input_dim} -> {net.output_dim}) to {args.out}")
    return 0


def cmd_attribute(args) -> int:
    net = load_net(args.net)
    bundle = load_bundle(args.data)
    setting = MethodSetting(
        method=args.method,
        target=args.target,
        target_index=args.target_index,
        steps=args.steps,
        n_permutations=args.n_permutations,
        budget=args.budget,
        n_samples=args.n_samples,
        regularisation=args.regularisation,
        lasso_lambda=args.lasso_lambda,
    )
    target = _method_target(setting, bundle)
    baseline = bundle.default_baseline()
    matrix = _run_method(setting, net, bundle.features, baseline, target,
                         args.seed if args.seed is not None else 0)
    save_attribution(matrix, args.out)
    print(f"wrote {matrix.values.shape[0]} x {matrix.values.shape[1]} attributions "
          f"({matrix.method}, {matrix.elapsed_seconds:.3f}s) to {args.out}")
    return 0


def _setting_from_matrix(matrix) -> MethodSetting:
    """Rebuild the method setting from a saved matrix (for re-run metrics)."""
    method = matrix.method
    kwargs = {}
    if method.startswith("lime"):
        kwargs["regularisation"] = matrix.params.get("regularisation", "none")
        method = "lime"
    for key in ("steps", "n_permutations", "exhaustive", "budget", "n_samples",
                "kernel_width", "lasso_lambda"):
        if matrix.params.get(key) is not None:
            kwargs[key] = matrix.params[key]
    return MethodSetting(method=method, **kwargs)


def cmd_evaluate(args) -> int:
    bundle = load_bundle(args.data)
    matrix = load_attribution(args.attr)
    metric_name = args.metric or DEFAULT_METRIC_BY_FAMILY[
        bundle.dataset_spec.family if bundle.dataset_spec else "weighted"]
    metric = MetricSetting(metric_name)
    net = load_net(args.net) if args.net else build_model(bundle.model_spec)
    setting = _setting_from_matrix(matrix)
    result = _score(metric, setting, net, bundle, matrix,
                    bundle.default_baseline(), matrix.target,
                    args.seed if args.seed is not None else 0)
    print(f"{metric_name}: {result.mean:.6g} ± {result.std:.6g} "
          f"over {len(result.per_sample)} samples")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("metric,mean,std,n_samples\n")
            fh.write(f"{metric_name},{result.mean!r},{result.std!r},{len(result.per_sample)}\n")
    return 0


def cmd_run(args) -> int:
    doc = _load_json(args.config)
    if args.seed is not None:
        doc["master_seed"] = args.seed
    if args.trials is not None:
        doc["n_trials"] = args.trials
    cfg = config_from_dict(doc)
    table = run_experiment(cfg, jobs=args.jobs)
    text = render_table(table, args.format)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if table.n_errors:
        print(f"{table.n_errors} error cell(s)", file=sys.stderr)
    return table.n_errors


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fabench",
                                     description="Feature-attribution benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("list", help="enumerate families, methods and metrics")

    def add_dataset_args(p):
        p.add_argument("--config", help="dataset spec JSON file")
        p.add_argument("--family", choices=DATASET_FAMILIES)
        p.add_argument("--n-features", type=int, dest="n_features")
        p.add_argument("--formula", help="generic boolean formula")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("generate", help="realize a dataset split")
    add_dataset_args(p)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", required=True)

    p = sub.add_parser("build-model", help="construct and serialize a handcrafted net")
    add_dataset_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("attribute", help="run one method on a saved bundle")
    p.add_argument("--net", required=True)
    p.add_argument("--data", required=True, help="bundle CSV path")
    p.add_argument("--method", required=True, choices=attr_mod.METHODS)
    p.add_argument("--target", choices=("scalar_output", "class_probability",
                                        "logit", "logit_normalised"))
    p.add_argument("--target-index", type=int, dest="target_index")
    p.add_argument("--steps", type=int, default=64)
    p.add_argument("--n-permutations", type=int, default=25, dest="n_permutations")
    p.add_argument("--budget", type=int, default=2048)
    p.add_argument("--n-samples", type=int, default=200, dest="n_samples")
    p.add_argument("--regularisation", default="none", choices=("none", "lasso"))
    p.add_argument("--lasso-lambda", type=float, default=0.01, dest="lasso_lambda")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="score a saved attribution matrix")
    p.add_argument("--attr", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--net", help="net JSON (default: rebuild from bundle spec)")
    p.add_argument("--metric", choices=METRICS)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("run", help="execute a full experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--format", default="csv", choices=("csv", "markdown"))
    p.add_argument("--trials", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int)

    return parser


COMMANDS = {
    "list": cmd_list,
    "generate": cmd_generate,
    "build-model": cmd_build_model,
    "attribute": cmd_attribute,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
