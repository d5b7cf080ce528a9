"""Experiment configuration documents.

An experiment config is a JSON file validated by the models below. Unknown keys
are rejected so that typos never silently fall back to defaults.
"""

import hashlib
import json
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.utils.errors import ConfigurationError

SchemeName = Literal["Local", "Cloud", "SFL", "SPFL", "APFL"]
TaskName = Literal["lqr", "lane-swap", "lane-change"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class FlConfig(_Strict):
    rounds: int = Field(50, ge=1, description="Maximum number of rounds.")
    epochs: int = Field(30, ge=1, description="Epochs per local training pass.")
    base_lr: float = Field(0.01, gt=0, description="Base learning rate L.")
    batch_size: int = Field(32, ge=1)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    convergence_threshold: float = Field(1e-5, ge=0)
    init_scale: float = Field(0.1, ge=0)
    personalization: Literal["adaptive", "masked"] = "adaptive"
    masked_groups: List[str] = Field(
        default_factory=list,
        description="Groups trained in the personalization pass when personalization='masked'.",
    )

    @model_validator(mode="after")
    def _check_mask(self) -> "FlConfig":
        if self.personalization == "masked" and not self.masked_groups:
            raise ValueError("masked personalization needs at least one group.")
        return self


class LqrTaskConfig(_Strict):
    r_values: List[float] = Field(default_factory=lambda: [1.0, 50.0, 100.0])
    q_diag: Tuple[float, float] = (1.0, 1.0)
    n_init: int = Field(40, ge=1)
    horizon: int = Field(30, ge=1)
    noise_var: float = Field(0.01, ge=0)
    init_low: float = -5.0
    init_high: float = 5.0
    test_fraction: float = Field(0.1, ge=0, lt=1)
    state_reduction: Literal["sum", "component_mean"] = "component_mean"

    @model_validator(mode="after")
    def _check(self) -> "LqrTaskConfig":
        if not self.r_values or any(value <= 0 for value in self.r_values):
            raise ValueError("r_values must be a non-empty list of positive numbers.")
        if self.init_high < self.init_low:
            raise ValueError("init_high must not be below init_low.")
        return self


class CvaeConfig(_Strict):
    hidden: int = Field(32, ge=1)
    latent: int = Field(4, ge=1)
    window: int = Field(10, ge=1, description="History window W.")
    future_len: int = Field(3, ge=1, description="Forecast horizon in steps.")
    beta_kl: float = Field(1.0, ge=0)
    init_scale: float = Field(0.1, ge=0)
    eval_seed: int = 0


class MpcConfig(_Strict):
    alpha: float = -3.0
    beta: float = 5000.0
    tau: int = Field(3, ge=1)
    horizon: int = Field(20, ge=2)
    n_samples: int = Field(5, ge=1)
    c_low: Optional[float] = None

    @model_validator(mode="after")
    def _check(self) -> "MpcConfig":
        if self.horizon <= self.tau:
            raise ValueError("MPC horizon H must exceed the control interval tau.")
        return self


class DriverConfig(_Strict):
    gammas: List[float] = Field(default_factory=lambda: [-1.0, -0.5, 0.0, 0.5, 1.0])
    v_high: float = 10.0
    v_low: float = 5.0
    d_safe: float = Field(10.0, gt=0)
    kp: float = 0.5
    ki: float = 0.0
    kd: float = 0.1

    @model_validator(mode="after")
    def _check(self) -> "DriverConfig":
        if not self.v_high > self.v_low > 0:
            raise ValueError("Driver speeds must satisfy v_high > v_low > 0.")
        if not self.gammas or any(abs(gamma) > 1 for gamma in self.gammas):
            raise ValueError("gammas must be a non-empty list within [-1, 1].")
        return self


class InitRanges(_Strict):
    robot_speed: Tuple[float, float] = (7.0, 9.0)
    human_speed: Tuple[float, float] = (7.0, 9.0)
    gap: Tuple[float, float] = (-6.0, 6.0)
    gray_gap: Tuple[float, float] = (-30.0, -15.0)
    gray_speed: Tuple[float, float] = (6.0, 8.0)
    min_gap: float = Field(3.0, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "InitRanges":
        for name in ("robot_speed", "human_speed", "gap", "gray_gap", "gray_speed"):
            low, high = getattr(self, name)
            if high < low:
                raise ValueError(f"Range {name} has max below min.")
        return self


class SimConfig(_Strict):
    dt: float = Field(0.1, gt=0)
    robot_lane_x: float = 0.0
    human_lane_x: float = 3.5
    road_min_x: float = -1.75
    road_max_x: float = 5.25
    collision_distance: float = Field(2.0, gt=0)
    max_steps: int = Field(400, ge=1)
    trigger_gap: float = Field(8.0, gt=0)
    lane_tolerance: float = Field(0.1, gt=0)
    lateral_q: Tuple[float, float] = (1.0, 0.0)
    lateral_r: float = Field(2.5e4, gt=0)
    speed_q: float = Field(1.0, gt=0)
    speed_r: float = Field(2.2, gt=0)


class DrivingDataConfig(_Strict):
    n_inits: int = Field(50, ge=1)
    n_test_sessions: int = Field(10, ge=0)
    sample_stride: int = Field(1, ge=1)
    collection_rounds: int = Field(
        1,
        ge=1,
        description="Data collections per scheme. The first uses the naive predictor; "
        "each later one re-collects with the forecasters just trained and retrains "
        "on the pooled data.",
    )
    ranges: InitRanges = InitRanges()

    @model_validator(mode="after")
    def _check(self) -> "DrivingDataConfig":
        if self.n_test_sessions >= self.n_inits:
            raise ValueError("n_test_sessions must leave at least one training session.")
        return self


class EvalConfig(_Strict):
    controller_eval: bool = Field(
        True, description="Run closed-loop controller episodes on held-out sessions."
    )
    baseline: bool = Field(True, description="Also run the non-proactive baseline.")
    max_sessions: Optional[int] = Field(
        None, ge=1, description="Cap on held-out sessions per driver."
    )


class ExperimentConfig(_Strict):
    task: TaskName = "lqr"
    schemes: List[SchemeName] = Field(
        default_factory=lambda: ["Local", "Cloud", "SFL", "SPFL", "APFL"]
    )
    trials: int = Field(1, ge=1)
    master_seed: int = 0
    output_dir: str = "runs"
    fl: FlConfig = FlConfig()
    lqr: LqrTaskConfig = LqrTaskConfig()
    cvae: CvaeConfig = CvaeConfig()
    sim: SimConfig = SimConfig()
    mpc: MpcConfig = MpcConfig()
    driver: DriverConfig = DriverConfig()
    driving: DrivingDataConfig = DrivingDataConfig()
    evaluation: EvalConfig = EvalConfig()
    reference_scheme: SchemeName = "APFL"

    @model_validator(mode="after")
    def _check(self) -> "ExperimentConfig":
        if not self.schemes:
            raise ValueError("At least one scheme is required.")
        if len(set(self.schemes)) != len(self.schemes):
            raise ValueError("Schemes must not repeat.")
        return self

    def with_overrides(
        self, master_seed: Optional[int] = None, output_dir: Optional[str] = None
    ) -> "ExperimentConfig":
        update = {}
        if master_seed is not None:
            update["master_seed"] = master_seed
        if output_dir is not None:
            update["output_dir"] = output_dir
        return self.model_copy(update=update)


def parse_experiment_config(document: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(document)
    except ValidationError as exc:
        raise ConfigurationError(f"Invalid experiment config: {exc}") from exc


def load_experiment_config(path: Path | str) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as handle:
            document = json.load(handle)
    except OSError as exc:
        raise ConfigurationError(f"Cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"Config {path} is not valid JSON: {exc}") from exc
    return parse_experiment_config(document)


def config_hash(config: BaseModel) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
