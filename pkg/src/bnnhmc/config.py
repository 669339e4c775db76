"""Strict JSON experiment configuration.

Unknown keys are rejected at every nesting level, and every default is
materialised when a config is serialised, so a run's ``config.json`` shows
every value that was used.
"""

from __future__ import annotations

import json
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .exceptions import ConfigError

KINDS = (
    "hmc", "sgld", "sghmc", "sgd", "ensemble", "mfvi", "rhat", "burnin", "bma_eval",
    "compare", "subspace_scan", "synth_gen", "temperature_sweep", "prior_sweep",
    "robustness_sweep",
)
SWEEP_AXES = ("trajectory_length", "n_chains", "temperature", "prior_variance", "noise_sigma")
SWEEP_KIND_AXIS = {
    "temperature_sweep": "temperature",
    "prior_sweep": "prior_variance",
    "robustness_sweep": "noise_sigma",
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class ModelConfig(_Strict):
    hidden_widths: list[int] = Field(default_factory=lambda: [50])
    activation: Literal["identity", "relu", "swish"] = "swish"
    head: Literal["classification", "regression"] = "classification"
    num_classes: Optional[int] = None
    noise_std: Optional[float] = None


class PriorConfig(_Strict):
    family: Literal["gaussian", "mog", "logistic"] = "gaussian"
    variance: float = Field(0.2, gt=0)
    variances: list[float] = Field(default_factory=lambda: [1 / 40, 1 / 160])
    weights: list[float] = Field(default_factory=lambda: [0.5, 0.5])


class SyntheticConfig(_Strict):
    intervals: list[list[float]] = Field(
        default_factory=lambda: [[-10.0, -6.0], [6.0, 10.0], [14.0, 18.0]])
    points_per_interval: int = 40
    teacher_widths: list[int] = Field(default_factory=lambda: [100, 100, 100])
    teacher_std: float = 0.1
    noise_std: float = 0.02
    activation: Literal["identity", "relu", "swish"] = "swish"
    seed: int = 0
    grid_lo: float = -12.0
    grid_hi: float = 20.0
    grid_points: int = 400


class DataConfig(_Strict):
    """Where the training and evaluation data come from.

    ``synthetic``: the teacher task, evaluated on a dense grid.
    ``uci``: a delimited table split into train/test.
    ``vectorized``: classification containers at ``path`` and ``test_path``.
    ``digits``: scikit-learn's bundled 8x8 digits.
    """

    source: Literal["synthetic", "uci", "vectorized", "digits"] = "synthetic"
    path: Optional[str] = None
    test_path: Optional[str] = None
    delimiter: Optional[str] = None
    train_fraction: float = Field(0.9, gt=0, lt=1)
    split_seed: int = 0
    split_index: int = 0
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)
    digits_classes: list[int] = Field(default_factory=lambda: list(range(10)))
    digits_n_train: int = 1000
    noise_sigma: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def _paths(self):
        if self.source == "uci" and not self.path:
            raise ValueError("data.path is required for source 'uci'")
        if self.source == "vectorized" and not (self.path and self.test_path):
            raise ValueError("data.path and data.test_path are required for source 'vectorized'")
        return self


class HmcSection(_Strict):
    step_size: float = Field(1e-5, gt=0)
    trajectory_length: Optional[float] = Field(None, gt=0)
    n_burnin: int = Field(0, ge=0)
    n_samples: int = Field(10, ge=1)
    n_chains: int = Field(1, ge=1)
    temperature: float = Field(1.0, gt=0)
    init: Literal["prior", "normal"] = "prior"
    init_scale: float = Field(0.005, gt=0)
    keep_last: Optional[int] = Field(None, ge=1)
    accepted_only: bool = False


class TrainSectionSGD(_Strict):
    """Pre-training used as the MFVI mean initialisation."""

    step_size: float = Field(1e-5, gt=0)
    n_epochs: int = Field(100, ge=1)
    batch_size: Optional[int] = Field(None, ge=1)
    schedule: Literal["constant", "cosine", "cyclical"] = "cosine"
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: Optional[float] = Field(None, gt=0)


class TrainSection(_Strict):
    step_size: float = Field(1e-5, gt=0)
    n_epochs: int = Field(100, ge=1)
    batch_size: Optional[int] = Field(None, ge=1)
    schedule: Literal["constant", "cosine", "cyclical"] = "constant"
    n_cycles: int = Field(1, ge=1)
    momentum: float = Field(0.0, ge=0, lt=1)
    weight_decay: Optional[float] = Field(None, gt=0)
    preconditioner: Literal["none", "rms"] = "none"
    rms_decay: float = Field(0.99, ge=0, lt=1)
    rms_eps: float = Field(1e-8, gt=0)
    n_burnin_epochs: int = Field(0, ge=0)
    thin_epochs: int = Field(10, ge=1)
    init_scale: Optional[float] = Field(None, gt=0)
    vi_init_variance: float = Field(1e-2, gt=0)
    n_models: int = Field(1, ge=1)
    n_chains: int = Field(1, ge=1)
    n_vi_samples: int = Field(50, ge=1)
    sgd_init: TrainSectionSGD = Field(default_factory=TrainSectionSGD)


class EvalSection(_Strict):
    stores: list[str] = Field(default_factory=list)
    reference_stores: list[str] = Field(default_factory=list)
    n_bins: int = Field(20, ge=1)
    burnin_grid: list[int] = Field(default_factory=lambda: [0])
    burnin_window: int = Field(100, ge=1)
    burnin_metric: Literal["accuracy", "nll", "rmse", "test_ll"] = "accuracy"


class SubspaceSection(_Strict):
    anchors: list[str] = Field(default_factory=list)
    resolution: int = Field(20, ge=2)
    a_range: Optional[list[float]] = None
    b_range: Optional[list[float]] = None

    @model_validator(mode="after")
    def _ranges(self):
        for r in (self.a_range, self.b_range):
            if r is not None and (len(r) != 2 or not r[0] < r[1]):
                raise ValueError("ranges must be [lo, hi] with lo < hi")
        return self


class SweepSection(_Strict):
    axis: Optional[Literal["trajectory_length", "n_chains", "temperature", "prior_variance",
                           "noise_sigma"]] = None
    values: list[float] = Field(default_factory=list)
    seeds: list[int] = Field(default_factory=lambda: [0])
    base_kind: Literal["hmc", "sgld", "sghmc", "sgd", "ensemble", "mfvi"] = "hmc"


class ExperimentConfig(_Strict):
    kind: Literal[KINDS]  # type: ignore[valid-type]
    seed: int = 0
    out: Optional[str] = None
    workers: Optional[int] = Field(None, ge=1)
    model: ModelConfig = Field(default_factory=ModelConfig)
    prior: PriorConfig = Field(default_factory=PriorConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    hmc: HmcSection = Field(default_factory=HmcSection)
    train: TrainSection = Field(default_factory=TrainSection)
    eval: EvalSection = Field(default_factory=EvalSection)
    subspace: SubspaceSection = Field(default_factory=SubspaceSection)
    sweep: SweepSection = Field(default_factory=SweepSection)

    @model_validator(mode="after")
    def _sweep_axis(self):
        implied = SWEEP_KIND_AXIS.get(self.kind)
        if implied is not None:
            if self.sweep.axis not in (None, implied):
                raise ValueError(f"kind {self.kind!r} sweeps {implied!r}, not {self.sweep.axis!r}")
            self.sweep.axis = implied
            if not self.sweep.values:
                raise ValueError("sweep.values must list at least one value")
        return self

    @property
    def is_sweep(self) -> bool:
        return self.kind in SWEEP_KIND_AXIS or self.sweep.axis is not None


def _format_error(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        if e["type"] == "extra_forbidden":
            lines.append(f"{loc}: unknown key")
        else:
            lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def parse_config(text: str) -> ExperimentConfig:
    """Validate a JSON document; errors name the offending path."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"invalid JSON: {err}") from None
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as err:
        raise ConfigError(_format_error(err)) from None


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical JSON with every default filled in."""
    return json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())
