"""Pydantic request/response models for the HTTP service.

Request models mirror the library's run functions; train-config
override fields default to None, meaning "use the library default".
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class ErrorBody(BaseModel):
    error: str  # machine-readable kind, e.g. "configuration"
    detail: str


class HealthResponse(BaseModel):
    status: str
    version: str


class SplitSizes(BaseModel):
    train: int
    validation: int
    test: int


class GenDataRequest(BaseModel):
    p: int = 3
    t: int = 4
    k: int = 2
    n_episodes: int = 10_000
    seed: int = 0
    sample_mode: str = "uniform"
    split_mode: str = "episode"
    out_path: str


class GenDataResponse(BaseModel):
    dataset_path: str
    dataset_sha256: str
    world_size: int
    n_episodes: int
    split_sizes: SplitSizes
    held_out_targets: int


class TrainOverrides(BaseModel):
    """Optional TrainConfig fields; None keeps the library default."""

    vocab_size: int | None = None
    seed: int | None = None
    epochs: int | None = None
    batch_size: int | None = None
    learning_rate: float | None = None
    temperature: float | None = None
    hidden_dim: int | None = None
    embedding_dim: int | None = None
    activation: str | None = None
    pooling: str | None = None
    eval_cadence: int | None = None
    patience: int | None = None


class TrainRequest(TrainOverrides):
    dataset_path: str
    out_dir: str = "runs"


class TrainResponse(BaseModel):
    run_dir: str
    config_hash: str
    config: dict
    diverged: bool
    best_epoch: int
    best_val_accuracy: float
    test_accuracy: float
    test_loss: float
    distinct_symbols: int
    epochs_run: int
    stopped_early: bool
    checkpoint: str
    metrics: str


class AnalyzeRequest(BaseModel):
    checkpoint: str
    dataset: str
    out_dir: str = "reports"
    split: str = "test"


class UsageResponse(BaseModel):
    vocab_size: int
    n_episodes: int
    counts: list[int]
    distinct_count: int
    percent_of_vocab: float
    csv: str
    json_path: str = Field(alias="json")

    model_config = {"populate_by_name": True}


class RobustnessResponse(BaseModel):
    vocab_size: int
    matrix: list[list[float | None]]
    support: list[int]
    empty_rows: list[int]
    diagonal_is_argmax: bool
    csv: str
    json_path: str = Field(alias="json")

    model_config = {"populate_by_name": True}


class PermutationRequest(AnalyzeRequest):
    n_permutations: int = 5
    seed: int = 0


class PermutationResponse(BaseModel):
    n_episodes: int
    n_permutations: int
    agreement: float
    base_accuracy: float
    shuffled_accuracies: list[float]
    max_accuracy_delta: float
    csv: str
    json_path: str = Field(alias="json")

    model_config = {"populate_by_name": True}


class SweepRequest(TrainOverrides):
    out_dir: str = "reports"
    vocab_sizes: list[int]
    ks: list[int]
    seeds: list[int]
    dataset_seed: int | None = None
    p: int | None = None
    t: int | None = None
    n_episodes: int | None = None


class SweepCellModel(BaseModel):
    vocab_size: int
    k: int
    seeds: list[int]
    accuracies: list[float]
    distinct_counts: list[int]
    failed_seeds: list[int]
    mean_accuracy: float | None
    se_accuracy: float | None
    mean_distinct: float | None
    se_distinct: float | None


class SweepResponse(BaseModel):
    vocab_sizes: list[int]
    ks: list[int]
    seeds: list[int]
    missing_cells: list[list[int]]
    cells: list[SweepCellModel]
    csv: str
    json_path: str = Field(alias="json")

    model_config = {"populate_by_name": True}
