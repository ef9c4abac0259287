"""HTTP service exposing dataset generation, training, and analyses.

Endpoints are synchronous wrappers over the run functions; a request
blocks until its artifacts are on disk, then returns the same summary
the library produces. Library errors map onto structured JSON bodies:
configuration and contract violations are 400s, infeasible worlds and
training divergence are 409s, anything unexpected is a 500.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import (
    ConfigurationError,
    ContractError,
    DivergenceError,
    DomainError,
    GrefgameError,
    InfeasibleWorldError,
    ShapeError,
    WorldTooLargeError,
)
from ..runs import (
    gen_data_run,
    permutation_run,
    robustness_run,
    sweep_run,
    train_run,
    usage_run,
)
from . import schemas

# (kind, HTTP status) per error class; order matters, subclasses first.
ERROR_MAP: tuple[tuple[type, str, int], ...] = (
    (WorldTooLargeError, "world_too_large", 409),
    (InfeasibleWorldError, "infeasible_world", 409),
    (DivergenceError, "divergence", 409),
    (ConfigurationError, "configuration", 400),
    (ShapeError, "shape", 400),
    (DomainError, "domain", 400),
    (ContractError, "contract", 400),
)


def error_kind(err: Exception) -> tuple[str, int]:
    for cls, kind, status in ERROR_MAP:
        if isinstance(err, cls):
            return kind, status
    return "internal", 500


def create_app() -> FastAPI:
    app = FastAPI(title="grefgame", version=__version__)

    @app.exception_handler(GrefgameError)
    async def handle_library_error(request: Request, err: GrefgameError):
        kind, status = error_kind(err)
        body = schemas.ErrorBody(error=kind, detail=str(err))
        return JSONResponse(status_code=status, content=body.model_dump())

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/datasets", response_model=schemas.GenDataResponse)
    def gen_data(req: schemas.GenDataRequest) -> schemas.GenDataResponse:
        summary = gen_data_run(
            p=req.p,
            t=req.t,
            k=req.k,
            n_episodes=req.n_episodes,
            seed=req.seed,
            out_path=req.out_path,
            sample_mode=req.sample_mode,
            split_mode=req.split_mode,
        )
        return schemas.GenDataResponse(**summary)

    @app.post("/runs", response_model=schemas.TrainResponse)
    def run_training(req: schemas.TrainRequest) -> schemas.TrainResponse:
        overrides = req.model_dump(exclude={"dataset_path", "out_dir"}, exclude_none=True)
        summary = train_run(req.dataset_path, req.out_dir, overrides)
        return schemas.TrainResponse(**summary)

    @app.post("/analyses/usage", response_model=schemas.UsageResponse)
    def analyze_usage(req: schemas.AnalyzeRequest) -> schemas.UsageResponse:
        summary = usage_run(req.checkpoint, req.dataset, req.out_dir, split=req.split)
        return schemas.UsageResponse(**summary)

    @app.post("/analyses/robustness", response_model=schemas.RobustnessResponse)
    def analyze_robustness(req: schemas.AnalyzeRequest) -> schemas.RobustnessResponse:
        summary = robustness_run(req.checkpoint, req.dataset, req.out_dir, split=req.split)
        return schemas.RobustnessResponse(**summary)

    @app.post("/analyses/permutation", response_model=schemas.PermutationResponse)
    def analyze_permutation(req: schemas.PermutationRequest) -> schemas.PermutationResponse:
        summary = permutation_run(
            req.checkpoint,
            req.dataset,
            req.out_dir,
            split=req.split,
            n_permutations=req.n_permutations,
            seed=req.seed,
        )
        return schemas.PermutationResponse(**summary)

    @app.post("/analyses/sweep", response_model=schemas.SweepResponse)
    def analyze_sweep(req: schemas.SweepRequest) -> schemas.SweepResponse:
        overrides = req.model_dump(
            exclude={"out_dir", "vocab_sizes", "ks", "seeds", "dataset_seed"},
            exclude_none=True,
        )
        summary = sweep_run(
            req.out_dir,
            req.vocab_sizes,
            req.ks,
            req.seeds,
            base_overrides=overrides,
            dataset_seed=req.dataset_seed,
        )
        return schemas.SweepResponse(**summary)

    return app
