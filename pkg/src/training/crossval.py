"""
Cross-validation harness: standard vs mixed training on every fold of one
FA/WA scenario.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from src.data.folds import FoldPlan, plan_folds
from src.data.preprocessing import assign_roles
from src.evaluation.reports import ScenarioResult, evaluate_fold, load_test_cases
from src.settings import RunConfig
from src.state.training_state import EventSink
from src.training.sampling import SliceRecord
from src.training.trainer import train_model


METHODS = ("standard", "mixed")


@dataclass
class CrossvalOutput:
    scenario: ScenarioResult
    plans: list[FoldPlan]


def scenario_label(fa_count: int, wa_count: int) -> str:
    return f"{fa_count}FA+{wa_count}WA"


def run_crossval(
    config: RunConfig,
    records: Sequence[SliceRecord],
    store,
    output_dir: Path | str,
    *,
    fold_ids: Optional[Sequence[int]] = None,
    on_event: Optional[EventSink] = None,
) -> CrossvalOutput:
    """
    Train and evaluate both methods on the requested folds.

    Folds are re-planned for each scenario: the permutation seed mixes the
    run's fold stream with F.

    Args:
        config: Resolved run configuration (folds section sets N/T/F)
        records: Full manifest (every volume extracted with role fa)
        store: Slice store for training and test slices
        output_dir: Receives fold<k>/<method>/ training outputs and reports
        fold_ids: Subset of folds to run (default: all)
    """
    output_dir = Path(output_dir)
    seeds = config.seeds()
    folds = config.folds
    plans = plan_folds(
        config.data.num_volumes,
        folds.test_per_fold,
        folds.fa_per_fold,
        folds.num_folds,
        config.fold_permutation_seed(),
    )
    wanted = set(fold_ids) if fold_ids else {p.fold_id for p in plans}
    active = [p for p in plans if p.fold_id in wanted]

    wa_count = config.data.num_volumes - folds.test_per_fold - folds.fa_per_fold
    label = scenario_label(folds.fa_per_fold, wa_count)
    reports = {method: [] for method in METHODS}
    for plan in active:
        fold_records = assign_roles(records, plan)
        cases = load_test_cases(fold_records.test, store)
        for method in METHODS:
            run_dir = output_dir / f"fold{plan.fold_id}" / method
            result = train_model(
                fold_records.training(method),
                store,
                model_config=config.model,
                loss_config=config.resolved_loss(),
                composition=config.composition,
                optimizer_config=config.optimizer,
                train_config=config.training,
                mode=method,
                sampler_seed=seeds.sampler,
                init_seed=seeds.init,
                output_dir=run_dir,
                on_event=on_event,
            )
            report = evaluate_fold(
                result.model, cases, method=method, scenario=label, fold_id=plan.fold_id
            )
            report.write(run_dir, stem="dice_report")
            reports[method].append(report)

    scenario = ScenarioResult(
        label=label,
        fa_count=folds.fa_per_fold,
        standard=reports["standard"],
        mixed=reports["mixed"],
    )
    return CrossvalOutput(scenario=scenario, plans=active)
