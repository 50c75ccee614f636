"""
Command-line runner for the mixed-supervision segmentation pipeline.

Commands: gen-data, folds, train, eval, gradcheck, compare, crossval.

Exit codes:
- 0 success
- 1 usage or configuration error
- 2 data error (missing/invalid files, empty pools, bad checkpoints)
- 3 numeric failure (non-finite loss/gradient, failed gradient check, NaN in a report)
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path
from typing import Any, Callable, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from src.data.folds import get_fold, plan_folds, read_fold_plans, write_fold_plans
from src.data.preprocessing import assign_roles, build_dataset
from src.data.storage import DirectorySliceStore
from src.errors import (
    CheckpointError,
    DataError,
    EvaluationError,
    LossError,
    ModelConfigError,
    NonFiniteError,
    SamplingError,
    TensorError,
)
from src.evaluation.reports import (
    compare_scenarios,
    evaluate_fold,
    load_test_cases,
    read_comparison_inputs,
    write_comparison_inputs,
)
from src.network.checkpoint import load_checkpoint
from src.settings import MixSupSettings, RunConfig, resolve_run_config, write_resolved_config
from src.training.crossval import run_crossval
from src.training.gradcheck_suite import run_gradcheck_suite
from src.training.sampling import read_manifest, write_manifest
from src.training.trainer import train_model


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

MANIFEST_NAME = "manifest.jsonl"
VOLUMES_NAME = "volumes.json"


def _format_value(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _print_event(evt: dict[str, Any]) -> None:
    """Keep watch output short: kind first, then the event's own fields."""
    parts = [f"kind={evt.get('kind', 'event')}"]
    parts += [f"{key}={_format_value(value)}" for key, value in evt.items() if key != "kind"]
    print("[TRACE] " + " ".join(parts))


def _event_sink(watch: bool) -> Optional[Callable[[dict[str, Any]], None]]:
    return _print_event if watch else None


def _load_dataset(config: RunConfig):
    dataset_dir = config.dataset_path()
    records = read_manifest(dataset_dir / MANIFEST_NAME)
    return records, DirectorySliceStore(dataset_dir)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(config: RunConfig) -> int:
    dataset_dir = config.dataset_path()
    store = DirectorySliceStore(dataset_dir)
    summary = build_dataset(config.generator(), store, config.scale_constant)
    write_manifest(dataset_dir / MANIFEST_NAME, summary.records)
    (dataset_dir / VOLUMES_NAME).write_text(
        json.dumps(
            {
                "tumor_volume_ids": summary.tumor_volume_ids,
                "negative_volume_ids": summary.negative_volume_ids,
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    write_resolved_config(config, dataset_dir)
    counts = summary.counts()
    print("gen-data: " + " ".join(f"{k}={v}" for k, v in counts.items()))
    print(f"dataset: {dataset_dir}")
    return EXIT_OK


def cmd_folds(config: RunConfig) -> int:
    folds = config.folds
    plans = plan_folds(
        config.data.num_volumes,
        folds.test_per_fold,
        folds.fa_per_fold,
        folds.num_folds,
        config.fold_permutation_seed(),
    )
    path = write_fold_plans(config.folds_path(), plans)
    write_resolved_config(config, Path(config.output_dir))
    for plan in plans:
        print(
            f"fold {plan.fold_id}: test={len(plan.test_ids)} fa={len(plan.fa_ids)} "
            f"wa={len(plan.wa_ids)}"
        )
    print(f"folds: {path}")
    return EXIT_OK


def cmd_train(config: RunConfig, fold_id: int, watch: bool) -> int:
    records, store = _load_dataset(config)
    plan = get_fold(read_fold_plans(config.folds_path()), fold_id)
    fold_records = assign_roles(records, plan)
    seeds = config.seeds()
    run_dir = Path(config.output_dir) / f"train_{config.mode}_fold{fold_id}"
    write_resolved_config(config, run_dir)
    result = train_model(
        fold_records.training(config.mode),
        store,
        model_config=config.model,
        loss_config=config.resolved_loss(),
        composition=config.composition,
        optimizer_config=config.optimizer,
        train_config=config.training,
        mode=config.mode,
        sampler_seed=seeds.sampler,
        init_seed=seeds.init,
        output_dir=run_dir,
        on_event=_event_sink(watch),
    )
    last = result.history[-1] if result.history else {}
    losses = " ".join(f"{k}={_format_value(v)}" for k, v in last.items() if k != "iteration")
    reads = " ".join(f"{k}={v}" for k, v in sorted(result.access_log.items()))
    print(f"train: mode={config.mode} fold={fold_id} iterations={result.iterations} {losses}")
    print(f"reads: {reads}")
    print(f"checkpoint: {result.checkpoint_path}")
    return EXIT_OK


def cmd_eval(config: RunConfig, checkpoint: Path, fold_id: int, regions: Optional[list[str]]) -> int:
    ckpt = load_checkpoint(checkpoint)
    records, store = _load_dataset(config)
    plan = get_fold(read_fold_plans(config.folds_path()), fold_id)
    cases = load_test_cases(assign_roles(records, plan).test, store)
    report = evaluate_fold(
        ckpt.model,
        cases,
        regions or None,
        method=config.mode,
        fold_id=fold_id,
    )
    out_dir = Path(config.output_dir) / f"eval_fold{fold_id}"
    report.write(out_dir)
    write_resolved_config(config, out_dir)
    print(report.to_text(), end="")
    if report.has_nan:
        print("ERROR: NaN in Dice report")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_gradcheck(config: RunConfig, epsilon: float, tolerance: float, max_checks: Optional[int]) -> int:
    reports = run_gradcheck_suite(
        seed=config.seed, epsilon=epsilon, tolerance=tolerance, max_checks_per_input=max_checks
    )
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"passed": all(r.passed for r in reports), "checks": [r.to_dict() for r in reports]}
    (out_dir / "gradcheck_report.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.label:<24} max_rel_error={r.max_rel_error:.3e}")
    print(f"gradcheck: {sum(r.passed for r in reports)}/{len(reports)} passed (tolerance {tolerance:g})")
    return EXIT_OK if payload["passed"] else EXIT_NUMERIC


def cmd_compare(config: RunConfig, scenario_files: list[Path]) -> int:
    scenarios = []
    for path in scenario_files:
        scenarios += read_comparison_inputs(path)
    report = compare_scenarios(scenarios)
    report.write(Path(config.output_dir))
    print(report.to_text(), end="")
    if report.has_nan:
        print("ERROR: NaN in comparison tables")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_crossval(config: RunConfig, fold_ids: Optional[list[int]], watch: bool) -> int:
    records, store = _load_dataset(config)
    out_dir = Path(config.output_dir) / f"crossval_fa{config.folds.fa_per_fold}"
    write_resolved_config(config, out_dir)
    output = run_crossval(config, records, store, out_dir, fold_ids=fold_ids, on_event=_event_sink(watch))
    write_comparison_inputs(out_dir / "scenario.json", [output.scenario])
    report = compare_scenarios([output.scenario])
    report.write(out_dir)
    print(report.to_text(), end="")
    if report.has_nan:
        print("ERROR: NaN in comparison tables")
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="JSON run config file.")
    common.add_argument("--output-dir", default=argparse.SUPPRESS, help="Directory for all outputs.")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="Root random seed.")
    common.add_argument(
        "--watch",
        action="store_true",
        default=argparse.SUPPRESS,
        help="Print training trace events as they happen.",
    )

    parser = argparse.ArgumentParser(
        prog="mixsup",
        description="Train and evaluate tumor segmentation with mixed (pixel + image-level) supervision.",
        parents=[common],
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    gen = subparsers.add_parser("gen-data", parents=[common], help="Generate the synthetic dataset.")
    gen.add_argument("--volumes", type=int, help="Number of volumes.")
    gen.add_argument("--tumor-fraction", type=float, help="Fraction of volumes with a tumor.")
    gen.add_argument("--data-dir", help="Dataset directory (default <output-dir>/dataset).")

    folds = subparsers.add_parser("folds", parents=[common], help="Plan cross-validation folds.")
    folds.add_argument("--volumes", type=int, help="Number of volumes N.")
    folds.add_argument("--test", type=int, help="Test volumes per fold T.")
    folds.add_argument("--fa", type=int, help="Fully annotated volumes per fold F.")
    folds.add_argument("--num-folds", type=int, help="Number of folds.")
    folds.add_argument("--identity", action="store_true", help="Do not permute volume ids.")

    train = subparsers.add_parser("train", parents=[common], help="Train one model on one fold.")
    train.add_argument("--mode", choices=["standard", "mixed"], help="Supervision mode.")
    train.add_argument("--fold", type=int, default=1, help="Fold id (1-based).")
    train.add_argument("--iterations", type=int, help="Training iterations.")
    train.add_argument("--data-dir", help="Dataset directory.")

    ev = subparsers.add_parser("eval", parents=[common], help="Dice report for a checkpoint.")
    ev.add_argument("--checkpoint", type=Path, required=True, help="MSUP checkpoint file.")
    ev.add_argument("--fold", type=int, default=1, help="Fold id whose test volumes are scored.")
    ev.add_argument("--regions", nargs="+", help="Regions to score.")
    ev.add_argument("--data-dir", help="Dataset directory.")

    gc = subparsers.add_parser("gradcheck", parents=[common], help="Finite-difference gradient checks.")
    gc.add_argument("--epsilon", type=float, default=1e-6)
    gc.add_argument("--tolerance", type=float, default=1e-4)
    gc.add_argument("--max-checks", type=int, default=12, help="Coordinates checked per model tensor.")

    cmp_parser = subparsers.add_parser("compare", parents=[common], help="Compare scenario results.")
    cmp_parser.add_argument("scenarios", nargs="+", type=Path, help="scenario.json files from crossval.")

    cv = subparsers.add_parser("crossval", parents=[common], help="Standard vs mixed over folds.")
    cv.add_argument("--fa", type=int, help="Fully annotated volumes per fold.")
    cv.add_argument("--test", type=int, help="Test volumes per fold.")
    cv.add_argument("--folds", type=int, nargs="+", dest="fold_ids", help="Fold ids to run.")
    cv.add_argument("--iterations", type=int, help="Training iterations per model.")
    cv.add_argument("--data-dir", help="Dataset directory.")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    """CLI flags as a nested override layer (only flags actually given)."""
    out: dict[str, Any] = {}

    def put(path: str, value: Any) -> None:
        if value is None:
            return
        node = out
        *parents, leaf = path.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value

    put("seed", getattr(args, "seed", None))
    put("output_dir", getattr(args, "output_dir", None))
    put("dataset_dir", getattr(args, "data_dir", None))
    put("mode", getattr(args, "mode", None))
    put("training.iterations", getattr(args, "iterations", None))
    put("folds.test_per_fold", getattr(args, "test", None))
    put("folds.fa_per_fold", getattr(args, "fa", None))
    put("folds.num_folds", getattr(args, "num_folds", None))
    if getattr(args, "identity", False):
        put("folds.permute", False)
    if args.command == "gen-data":
        put("data.tumor_fraction", getattr(args, "tumor_fraction", None))
    put("data.num_volumes", getattr(args, "volumes", None))
    return out


def _dispatch(args: argparse.Namespace, config: RunConfig, watch: bool) -> int:
    if args.command == "gen-data":
        return cmd_gen_data(config)
    if args.command == "folds":
        return cmd_folds(config)
    if args.command == "train":
        return cmd_train(config, args.fold, watch)
    if args.command == "eval":
        return cmd_eval(config, args.checkpoint, args.fold, args.regions)
    if args.command == "gradcheck":
        return cmd_gradcheck(config, args.epsilon, args.tolerance, args.max_checks)
    if args.command == "compare":
        return cmd_compare(config, args.scenarios)
    if args.command == "crossval":
        return cmd_crossval(config, args.fold_ids, watch)
    raise ValueError(f"Unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    load_dotenv()

    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    try:
        settings = MixSupSettings()
        config = resolve_run_config(getattr(args, "config", None), _overrides(args), settings)
        watch = bool(getattr(args, "watch", False) or settings.watch)
        return _dispatch(args, config, watch)
    except NonFiniteError as e:
        print(f"ERROR: {e}")
        return EXIT_NUMERIC
    except (DataError, SamplingError, EvaluationError, CheckpointError, OSError) as e:
        print(f"ERROR: {e}")
        return EXIT_DATA
    except (ValidationError, ModelConfigError, LossError, TensorError, ValueError) as e:
        print(f"ERROR: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
