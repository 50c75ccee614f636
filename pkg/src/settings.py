"""
Run configuration and process-level settings.

Precedence when resolving a RunConfig:
- command-line flags
- JSON config file (--config)
- environment (MIXSUP_SEED, MIXSUP_OUTPUT_DIR, MIXSUP_DTYPE, MIXSUP_WATCH; .env honoured)
- built-in defaults

Seeds: numpy SeedSequence(root).spawn(4) in the order (data, sampler, init,
folds); child i becomes a 32-bit integer via generate_state(1)[0].
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.errors import DataError
from src.network.config import ModelConfig
from src.simulations.phantoms import GeneratorConfig
from src.training.losses import LossConfig
from src.training.optimizer import OptimizerConfig
from src.training.sampling import BatchComposition
from src.training.trainer import TrainConfig


RESOLVED_CONFIG_NAME = "resolved_config.json"
SEED_STREAMS = ("data", "sampler", "init", "folds")


class MixSupSettings(BaseSettings):
    """Environment-level defaults (prefix MIXSUP_)."""

    model_config = SettingsConfigDict(env_prefix="MIXSUP_", env_file=".env", extra="ignore")

    seed: int = 0
    output_dir: str = "runs"
    dtype: Literal["float64", "float32"] = "float64"
    watch: bool = False


class FoldConfig(BaseModel):
    """Cross-validation split sizes (per fold)."""

    model_config = ConfigDict(frozen=True)

    num_folds: int = Field(default=5, ge=1)
    test_per_fold: int = Field(default=4, ge=1)
    fa_per_fold: int = Field(default=4, ge=0)
    permute: bool = True


class RunConfig(BaseModel):
    """Everything a command needs; echoed as resolved_config.json."""

    model_config = ConfigDict(frozen=True)

    seed: int = 0
    output_dir: str = "runs"
    dataset_dir: Optional[str] = None
    mode: Literal["standard", "mixed"] = "mixed"
    scale_constant: float = Field(default=100.0, gt=0)
    data: GeneratorConfig = GeneratorConfig()
    model: ModelConfig = ModelConfig.toy()
    loss: Optional[LossConfig] = None
    composition: BatchComposition = BatchComposition()
    optimizer: OptimizerConfig = OptimizerConfig()
    training: TrainConfig = TrainConfig()
    folds: FoldConfig = FoldConfig()

    @model_validator(mode="after")
    def _data_matches_model(self) -> "RunConfig":
        c, _, h, w = self.data.dims
        if c != self.model.input_channels:
            raise ValueError(f"data has {c} channels but the model expects {self.model.input_channels}")
        if (h, w) != tuple(self.model.input_size):
            raise ValueError(f"data slices are {h}x{w} but the model expects {self.model.input_size}")
        if self.loss is not None and self.loss.num_classes != self.model.num_classes:
            raise ValueError(
                f"loss has {self.loss.num_classes} target weights for {self.model.num_classes} classes"
            )
        return self

    def resolved_loss(self) -> LossConfig:
        return self.loss or LossConfig.for_classes(self.model.num_classes)

    def seeds(self) -> "SeedBundle":
        return split_seeds(self.seed)

    def generator(self) -> GeneratorConfig:
        """Generator config with its seed taken from the data stream."""
        return self.data.model_copy(update={"seed": self.seeds().data})

    def dataset_path(self) -> Path:
        return Path(self.dataset_dir) if self.dataset_dir else Path(self.output_dir) / "dataset"

    def fold_permutation_seed(self) -> Optional[int]:
        """Per-scenario permutation seed, or None for the identity permutation."""
        if not self.folds.permute:
            return None
        return scenario_fold_seed(self.seeds().folds, self.folds.fa_per_fold)

    def folds_path(self) -> Path:
        return Path(self.output_dir) / "folds.json"


@dataclass(frozen=True)
class SeedBundle:
    data: int
    sampler: int
    init: int
    folds: int


def split_seeds(root_seed: int) -> SeedBundle:
    children = np.random.SeedSequence(root_seed).spawn(len(SEED_STREAMS))
    values = [int(child.generate_state(1)[0]) for child in children]
    return SeedBundle(**dict(zip(SEED_STREAMS, values)))


def scenario_fold_seed(fold_seed: int, fa_count: int) -> int:
    """
    Fold permutation seed for one FA/WA scenario.

    Folds are re-drawn for every scenario, so the seed mixes the run's fold
    stream with the scenario's FA count.
    """
    return int(np.random.SeedSequence([fold_seed, fa_count]).generate_state(1)[0])


def deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config_file(path: Path | str) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValueError(f"Config file {path} is not valid JSON: {e}")
    if not isinstance(raw, dict):
        raise ValueError(f"Config file {path} must hold a JSON object")
    return raw


def resolve_run_config(
    config_file: Optional[Path | str] = None,
    overrides: Optional[dict[str, Any]] = None,
    settings: Optional[MixSupSettings] = None,
) -> RunConfig:
    """
    Layer defaults, environment, config file and CLI overrides.

    Raises:
        pydantic.ValidationError: If the merged configuration is invalid
    """
    settings = settings or MixSupSettings()
    layers: list[dict[str, Any]] = []

    env_layer: dict[str, Any] = {}
    if "seed" in settings.model_fields_set:
        env_layer["seed"] = settings.seed
    if "output_dir" in settings.model_fields_set:
        env_layer["output_dir"] = settings.output_dir
    if "dtype" in settings.model_fields_set:
        env_layer["model"] = {"dtype": settings.dtype}
    layers.append(env_layer)
    if config_file is not None:
        layers.append(load_config_file(config_file))
    layers.append(overrides or {})

    merged = RunConfig().model_dump(mode="json")
    explicit_branches = False
    for layer in layers:
        merged = deep_merge(merged, layer)
        if "num_branches" in layer.get("model", {}):
            explicit_branches = layer["model"]["num_branches"] is not None
    if not explicit_branches:
        # Re-derived from num_classes.
        merged["model"].pop("num_branches", None)
    return RunConfig.model_validate(merged)


def write_resolved_config(config: RunConfig, directory: Path | str) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / RESOLVED_CONFIG_NAME
    path.write_text(config.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path
