import os
import logging
from importlib import metadata

from dotenv import load_dotenv
from pydantic import BaseModel, field_validator, model_validator

load_dotenv()

# Configuration
DEFAULT_SEED = 20220101
SEED = int(os.getenv("REPHASE_SEED", DEFAULT_SEED))
LOG_LEVEL = os.getenv("REPHASE_LOG_LEVEL", "INFO")
ATLAS_PATH = os.getenv("REPHASE_ATLAS_PATH") or None
JOBS = int(os.getenv("REPHASE_JOBS", 1))

SOURCE_VERSION = "0.1.0"

# Sweep bounds of the lambda1 / chi curves
TIME_SWEEP_MIN = 0.0125
TIME_SWEEP_MAX = 125.0
TIME_SWEEP_STEP = 0.0125

# Production fuel grid (601000 cells); the desk grid is what atlas-gen uses by default
PRODUCTION_DL_AXIS = (0.125, 125.0, 0.125)
PRODUCTION_ETA_AXIS = (0.3, 0.9, 0.001)
DESK_DL_AXIS = (0.5, 50.0, 0.5)
DESK_ETA_AXIS = (0.30, 0.90, 0.01)


def code_version() -> str:
    try:
        return metadata.version("rephase")
    except metadata.PackageNotFoundError:
        return SOURCE_VERSION


def setup_logging(level: str = None):
    """Configure root logging once for the CLI and the HTTP server."""
    logging.basicConfig(
        level=(level or LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


class IntegratorSettings(BaseModel):
    rel_tol: float = 1e-13
    abs_tol: float = 1e-13
    max_steps: int = 200000
    method: str = "DOP853"

    @field_validator("rel_tol", "abs_tol")
    @classmethod
    def validate_tolerance(cls, v):
        if not 0.0 < v <= 1e-2:
            raise ValueError(f"Tolerance must lie in (0, 1e-2], got {v}")
        return v

    @field_validator("max_steps")
    @classmethod
    def validate_max_steps(cls, v):
        if v <= 0:
            raise ValueError(f"max_steps must be positive, got {v}")
        return v

    @field_validator("method")
    @classmethod
    def validate_method(cls, v):
        if v not in ("DOP853", "RK45"):
            raise ValueError(f"Unsupported integration method: {v}")
        return v


class RootSettings(BaseModel):
    residual_tol: float = 1e-11
    max_iters: int = 50
    initial_trust_factor: float = 0.01
    step_tol: float = 1e-13

    @field_validator("residual_tol", "initial_trust_factor", "step_tol")
    @classmethod
    def validate_positive(cls, v):
        if v <= 0:
            raise ValueError(f"Must be positive, got {v}")
        return v

    @field_validator("max_iters")
    @classmethod
    def validate_max_iters(cls, v):
        if v <= 0:
            raise ValueError(f"max_iters must be positive, got {v}")
        return v


class FuelSolverSettings(BaseModel):
    retry_budget: int = 20
    l0_range_factor: float = 10.0  # l0 drawn in [0, factor / dL]
    l1_range: tuple[float, float] = (-4.0, 4.0)
    switch_subdivision_eps: float = 1e-3
    quad_tol: float = 1e-12
    residual_tol: float = 1e-9
    seed: int = SEED

    @field_validator("retry_budget")
    @classmethod
    def validate_budget(cls, v):
        if v < 0:
            raise ValueError(f"retry_budget must be non-negative, got {v}")
        return v

    @model_validator(mode="after")
    def validate_l1_range(self):
        lo, hi = self.l1_range
        if lo >= hi:
            raise ValueError(f"l1_range must be increasing, got {self.l1_range}")
        return self


class ContinuationSettings(BaseModel):
    factor: float = 10.0
    epsilon_target: float = 1e-6

    @field_validator("factor")
    @classmethod
    def validate_factor(cls, v):
        if v <= 1.0:
            raise ValueError(f"Continuation factor must exceed 1, got {v}")
        return v
