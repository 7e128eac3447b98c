"""Request/response models for the HTTP service.

The request models mirror the core config dataclasses field-for-field (a
test pins the defaults against each other), so a JSON body round-trips
losslessly into a :class:`poisonlab.harness.TrialConfig`.
"""

from __future__ import annotations

from pydantic import BaseModel, Field

from .. import data as data_mod
from .. import harness, methods


class DatasetModel(BaseModel):
    kind: str = "two-moons"
    n_labeled: int = Field(40, ge=1)
    n_unlabeled: int = Field(5000, ge=1)
    n_test: int = Field(1000, ge=1)
    seed: int = 0
    params: dict | None = None


class TrainerModel(BaseModel):
    method: str = "fixmatch-like"
    epochs: int = Field(350, ge=2)
    labeled_batch: int = Field(16, ge=0)
    unlabeled_batch: int = Field(64, ge=1)
    lr: float = Field(0.03, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(0.0, ge=0)
    lambda_u: float = Field(1.0, ge=0)
    tau: float = Field(0.95, gt=0, le=1)
    temperature: float = Field(0.5, gt=0)
    ema_decay: float = Field(0.95, ge=0, lt=1)
    vat_eps: float = Field(0.15, gt=0)
    vat_xi: float = Field(1e-4, gt=0)
    vat_entropy_weight: float = Field(0.3, ge=0)
    n_aug: int = Field(2, ge=1)
    mixup: bool = False
    warmup_frac: float = Field(0.02, ge=0, le=1)
    weak_sigma: float = Field(0.05, ge=0)
    strong_sigma: float = Field(0.08, ge=0)
    strong_dropout: float = Field(0.05, ge=0, lt=1)
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "relu"
    seed: int = 0
    record_trace: bool = True

    def to_config(self) -> methods.TrainerConfig:
        return methods.TrainerConfig(**self.model_dump())


class AttackModel(BaseModel):
    mode: str = "bridge"
    density: str = "1.5-x"
    budget_frac: float = Field(0.005, gt=0, lt=1)
    sigma_p: float = Field(0.0, ge=0)
    n_supports: int = Field(2, ge=1)
    attack_seed: int = 0
    margin_quantile: float = Field(0.0, ge=0, le=1)
    n_target_candidates: int = Field(20, ge=1)
    n_pair_candidates: int = Field(12, ge=1)
    rehearsal_epochs: int = Field(150, ge=0)
    density_ladder: bool = True

    def to_config(self) -> harness.AttackConfig:
        return harness.AttackConfig(**self.model_dump())


class TrialModel(BaseModel):
    dataset: DatasetModel = DatasetModel()
    trainer: TrainerModel = TrainerModel()
    attack: AttackModel | None = AttackModel()
    defenses: tuple[str, ...] = ()
    seed: int = 0
    outdir: str | None = None
    cell: str = ""

    def to_config(self) -> harness.TrialConfig:
        return harness.TrialConfig.from_dict(self.model_dump())


class TrainRequest(BaseModel):
    dataset: DatasetModel = DatasetModel()
    trainer: TrainerModel = TrainerModel()


class TrainResponse(BaseModel):
    method: str
    epochs: int
    final_test_acc: float
    best_test_acc: float
    final_sup_loss: float
    final_mask_rate: float
    wall_time_s: float


class AttackRequest(BaseModel):
    dataset: DatasetModel = DatasetModel()
    attack: AttackModel = AttackModel()
    trainer: TrainerModel = TrainerModel()
    out_path: str | None = None      # write the poison set here if given


class AttackResponse(BaseModel):
    n_points: int
    n_main: int
    y_target: int
    true_class: int
    target_test_index: int
    density: str
    vetted: bool
    planner_rehearsals: int
    alphas: list[float]
    out_path: str | None


class TrialResponse(BaseModel):
    summary: dict
    wall_time_s: float
    outdir: str | None


class MatrixRequest(BaseModel):
    trials: list[TrialModel]
    parallelism: int = Field(1, ge=1)


class MatrixResponse(BaseModel):
    table: str
    cells: dict[str, tuple[int, int, int]]   # cell -> successes, trials, failures
    results: list[dict]                      # summary or {"error": ...} per trial


class DefendRequest(BaseModel):
    dataset_path: str
    trace_path: str | None = None
    defenses: tuple[str, ...] = ("collinear",)
    influence_k: int = Field(5, ge=1)
    planted: list[int] | None = None         # enables TPR/FPR reporting


class DefenseEntry(BaseModel):
    flagged: list[int]
    threshold: float | None = None
    tpr: float | None = None
    fpr: float | None = None


class DefendResponse(BaseModel):
    n_unlabeled: int
    reports: dict[str, DefenseEntry]


class ReportRequest(BaseModel):
    run_dirs: list[str]


class ReportResponse(BaseModel):
    table: str
    csv: str
    rows: list[dict]


class HealthResponse(BaseModel):
    status: str
    version: str
    dataset_kinds: tuple[str, ...] = data_mod.DATASET_KINDS
    methods: tuple[str, ...] = methods.METHODS
    defenses: tuple[str, ...] = harness.DEFENSE_NAMES
