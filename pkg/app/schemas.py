"""
Pydantic schemas for configuration, run records and reports
"""

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Dict, List, Literal, Optional
import math

from app.models.ann import Variant


# ============================================================================
# Configuration Schemas
# ============================================================================

class FeedbackSimConfig(BaseModel):
    """Parameters of the synthetic feedback-loop generator"""
    model_config = ConfigDict(extra="forbid")

    K: int = Field(default=500, ge=2, description="Examples recorded per day (K/2 candidate sets)")
    T: int = Field(default=100, ge=3, description="Simulated days")
    r: float = Field(default=0.0, ge=0.0, le=1.0, description="Position-2 click 1->0 flip probability")
    sigma: float = Field(default=3.0, ge=0.0, description="Feature standard deviation")
    p_click: float = Field(default=0.1, gt=0.0, lt=1.0, description="Base click rate P(Y=1)")
    reservoir_size: int = Field(default=100_000, ge=2)
    heldout_size: int = Field(default=100_000, ge=2)
    candidate_set_size: int = Field(default=100, ge=2, description="Reservoir rows ranked per candidate set")
    top_per_set: Literal[2] = Field(default=2, description="Positions shown per candidate set")
    n_features: int = Field(default=10, ge=1)
    ranker_l2: float = Field(default=1.0, ge=0.0, description="L2 strength on ranker weights")
    ranker_max_iter: int = Field(default=1000, ge=1)
    ranker_tol: float = Field(default=1e-6, gt=0.0)
    rng_seed: int = Field(default=0, ge=0)

    @field_validator("K")
    @classmethod
    def validate_even_k(cls, v):
        if v % 2:
            raise ValueError("K must be even (two positions per candidate set)")
        return v

    @model_validator(mode="after")
    def validate_candidate_set(self):
        if self.candidate_set_size > self.reservoir_size:
            raise ValueError("candidate_set_size cannot exceed reservoir_size")
        if self.candidate_set_size < self.top_per_set:
            raise ValueError("candidate_set_size must hold at least top_per_set rows")
        # day 0 draws K distinct reservoir rows
        if self.K > self.reservoir_size:
            raise ValueError("K cannot exceed reservoir_size")
        return self


class TrainConfig(BaseModel):
    """ANN architecture and optimisation settings"""
    model_config = ConfigDict(extra="forbid")

    lam: float = Field(default=0.0, ge=0.0, le=1.0, description="Weight of the covariance term")
    learning_rate: float = Field(default=0.01, gt=0.0)
    minibatch_size: int = Field(default=100, ge=2)
    epochs: int = Field(default=100, ge=0)
    probe_epochs: int = Field(default=100, ge=0)
    base_widths: List[int] = Field(default_factory=lambda: [10], min_length=1)
    prediction_widths: List[int] = Field(default_factory=lambda: [10])
    bias_widths: List[int] = Field(default_factory=lambda: [10])
    bypass_widths: List[int] = Field(default_factory=lambda: [1])
    variant: Variant = Variant.WITH_BYPASS
    rng_seed: int = Field(default=0, ge=0)

    @field_validator("base_widths", "prediction_widths", "bias_widths", "bypass_widths")
    @classmethod
    def validate_widths(cls, v):
        if any(w <= 0 for w in v):
            raise ValueError("Layer widths must be positive")
        return v


DEFAULT_LAMBDAS = [0.0, 0.9, 0.99, 0.999, 0.9999, 0.99999]


class ExperimentSpec(BaseModel):
    """A full sweep: simulation, training template and the (lambda, variant, trial) grid"""
    model_config = ConfigDict(extra="forbid")

    sim: FeedbackSimConfig = Field(default_factory=FeedbackSimConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    lambdas: List[float] = Field(default_factory=lambda: list(DEFAULT_LAMBDAS), min_length=1)
    trials: int = Field(default=10, ge=1)
    variants: List[Variant] = Field(
        default_factory=lambda: [Variant.WITH_BYPASS, Variant.NO_BYPASS], min_length=1
    )
    output_dir: Optional[str] = None
    master_seed: int = Field(default=0, ge=0)

    @field_validator("lambdas")
    @classmethod
    def validate_lambdas(cls, v):
        if any(not 0.0 <= lam <= 1.0 for lam in v):
            raise ValueError("Every lambda must lie in [0, 1]")
        return sorted(set(v))

    @field_validator("variants")
    @classmethod
    def validate_variants(cls, v):
        unique = []
        for variant in v:
            if variant not in unique:
                unique.append(variant)
        return unique


# ============================================================================
# Training / Metrics Schemas
# ============================================================================

class EpochLoss(BaseModel):
    epoch: int
    loss_n: float
    loss_b: float


class TrainingLog(BaseModel):
    """Per-epoch mean noisy and bias losses"""
    epochs: List[EpochLoss] = []


class MetricsReport(BaseModel):
    """Evaluation of one model on one dataset"""
    tag: Literal["FL", "RUS", "heldout"]
    n: int = Field(..., ge=0)
    auc: float = Field(..., ge=0.0, le=1.0)
    log_loss: float = Field(..., ge=0.0)
    bias_probe_mse: Optional[float] = Field(None, ge=0.0)

    @model_validator(mode="after")
    def validate_finite(self):
        values = [self.auc, self.log_loss]
        if self.bias_probe_mse is not None:
            values.append(self.bias_probe_mse)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("Metrics must be finite")
        return self


# ============================================================================
# Checkpoint Schemas
# ============================================================================

class LayerState(BaseModel):
    weights: List[List[float]]
    biases: List[float]
    activation: Literal["tanh", "sigmoid", "linear"]
    use_bias: bool = True


class NetworkState(BaseModel):
    layers: List[LayerState] = Field(..., min_length=1)


class AnnCheckpoint(BaseModel):
    """
    Versioned model checkpoint. Floats are written with Python's shortest
    round-trip repr, so 64-bit values reload bit-exactly.
    """
    format_version: Literal[1] = 1
    variant: Variant
    n_features: int
    base: NetworkState
    prediction: NetworkState
    bias: NetworkState
    bypass: Optional[NetworkState] = None
    train_config: Optional[TrainConfig] = None


# ============================================================================
# Sweep Result Schemas
# ============================================================================

class RunRecord(BaseModel):
    """One (lambda, variant, trial) training run"""
    lam: float
    variant: Variant
    trial: int
    seed: int
    status: Literal["completed", "failed"] = "completed"
    error: Optional[str] = None
    fl_auc: Optional[float] = None
    fl_log_loss: Optional[float] = None
    fl_probe_mse: Optional[float] = None
    rus_auc: Optional[float] = None
    rus_log_loss: Optional[float] = None
    rus_probe_mse: Optional[float] = None
    bypass_diff: Optional[float] = None
    checkpoint: Optional[str] = None


class MetricSummary(BaseModel):
    mean: Optional[float] = None
    std: Optional[float] = None
    n: int = 0


class SweepCell(BaseModel):
    """Aggregate over trials for one (lambda, variant)"""
    lam: float
    reverse_log_lambda: float
    variant: Variant
    n_trials: int
    n_failed: int = 0
    failed: bool = False
    errors: List[str] = []
    metrics: Dict[str, MetricSummary] = {}
    fl_auc_rel_gain: Optional[float] = None
    fl_auc_abs_diff: Optional[float] = None
    rus_auc_rel_gain: Optional[float] = None
    rus_auc_abs_diff: Optional[float] = None


class TrialSummary(BaseModel):
    """Realised simulation statistics of one trial"""
    trial: int
    seed: int
    status: Literal["completed", "failed"] = "completed"
    error: Optional[str] = None
    prev_day_position1_ctr: Optional[float] = None
    prev_day_position2_ctr: Optional[float] = None
    last_day_position1_ctr: Optional[float] = None
    last_day_position2_ctr: Optional[float] = None
    all_days_position1_ctr: Optional[float] = None
    all_days_position2_ctr: Optional[float] = None
    naive_avg_ctr: Optional[float] = None
    naive_mse: Optional[float] = None
    upper_bound_auc: Optional[float] = None
    upper_bound_log_loss: Optional[float] = None
    fl_rows: int = 0
    data_dir: Optional[str] = None


class TrendSummary(BaseModel):
    """Direction of the metrics across the lambda sweep for one variant"""
    variant: Variant
    spearman_fl_auc: Optional[float] = None
    spearman_fl_probe_mse: Optional[float] = None
    spearman_bypass_diff_vs_probe_mse: Optional[float] = None
    sign_test_fl_auc_p: Optional[float] = None
    sign_test_probe_mse_p: Optional[float] = None


class SweepResult(BaseModel):
    spec: ExperimentSpec
    trials: List[TrialSummary] = []
    runs: List[RunRecord] = []
    cells: List[SweepCell] = []
    trends: List[TrendSummary] = []

    @property
    def has_failures(self) -> bool:
        return any(c.failed for c in self.cells) or any(t.status == "failed" for t in self.trials)

    def cell(self, lam: float, variant: Variant) -> SweepCell:
        for c in self.cells:
            if c.lam == lam and c.variant == variant:
                return c
        raise KeyError(f"No cell for lambda={lam}, variant={variant}")
