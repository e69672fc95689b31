from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, field_validator, model_validator
from typing import Optional
from pathlib import Path
import logging
import os
import uvicorn

from rephase import atlas, config, fuelopt, reference, timeopt
from rephase.errors import SOLVER_ERRORS, AtlasFormatError, DomainError, InfeasibleProblemError

logger = logging.getLogger(__name__)

app = FastAPI(title="rephase - optimal low-thrust rephasing")

# Get allowed origins from environment variable
# For development: "http://localhost:3000"
ALLOWED_ORIGINS_STR = os.getenv("ALLOWED_ORIGINS", "http://localhost:3000")

if ALLOWED_ORIGINS_STR == "*":
    allow_origins = ["*"]
else:
    allow_origins = [origin.strip() for origin in ALLOWED_ORIGINS_STR.split(",")]

app.add_middleware(
    CORSMiddleware,
    allow_origins=allow_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


class TimeSolveRequest(BaseModel):
    chi: Optional[float] = None
    dtf: Optional[float] = None
    amax: Optional[float] = None
    strategy: str = "double-loop"
    profile_points: Optional[int] = None  # include the control profile when set

    @field_validator("strategy")
    @classmethod
    def validate_strategy(cls, v):
        if v not in timeopt.STRATEGIES:
            raise ValueError(f"strategy must be one of {timeopt.STRATEGIES}")
        return v

    @model_validator(mode="after")
    def validate_form(self):
        if (self.chi is None) == (self.dtf is None):
            raise ValueError("Give exactly one of chi or dtf")
        if self.dtf is not None and self.amax is None:
            raise ValueError("dtf needs amax")
        return self


class FuelSolveRequest(BaseModel):
    dL: float
    eta: Optional[float] = None
    dtf: Optional[float] = None
    amax: float = 1.0
    eps: float = 0.01
    continue_to: Optional[float] = None
    profile_points: Optional[int] = None

    @model_validator(mode="after")
    def validate_form(self):
        if (self.eta is None) == (self.dtf is None):
            raise ValueError("Give exactly one of eta or dtf")
        return self


class AtlasQueryRequest(BaseModel):
    dL: float
    eta: float


class ValidateRequest(BaseModel):
    case: str

    @field_validator("case")
    @classmethod
    def validate_case(cls, v):
        if v not in reference.load_cases():
            raise ValueError(f"Unknown case {v!r}")
        return v


def _solve_or_raise(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except InfeasibleProblemError as e:
        raise HTTPException(status_code=422, detail={"error": str(e), "min_delta_L": e.min_delta_L})
    except DomainError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except SOLVER_ERRORS as e:
        logger.warning("solver failure: %s", e)
        raise HTTPException(status_code=500, detail=f"Solver failure: {e}")


def _load_atlas():
    if not config.ATLAS_PATH:
        return None
    try:
        return atlas.read_atlas(config.ATLAS_PATH)
    except (AtlasFormatError, OSError) as e:
        logger.warning("atlas at %s unusable: %s", config.ATLAS_PATH, e)
        return None


@app.post("/time-solve")
def time_solve(request: TimeSolveRequest):
    def run():
        if request.chi is not None:
            problem = timeopt.TimeOptProblem.from_chi(request.chi)
        else:
            problem = timeopt.TimeOptProblem.from_phase(request.dtf, request.amax)
        sol = timeopt.solve_time_optimal(problem, strategy=request.strategy)
        result = {
            "delta_L": sol.delta_L,
            "l1": sol.l1,
            "sign_l0": sol.sign_l0,
            "chi": sol.chi,
            "tof": sol.tof,
            "l0_magnitude": sol.l0_magnitude,
            "iterations": sol.iterations,
            "residual": sol.residual,
            "seed_source": sol.seed_source,
        }
        if request.profile_points:
            result["profile"] = timeopt.control_profile(sol, n_points=request.profile_points).to_dict(orient="list")
        return result

    return _solve_or_raise(run)


@app.post("/fuel-solve")
def fuel_solve(request: FuelSolveRequest):
    def run():
        if request.eta is not None:
            problem = fuelopt.FuelOptProblem(delta_L=request.dL, eta=request.eta, a_max=request.amax, epsilon=request.eps)
        else:
            problem = fuelopt.FuelOptProblem.from_phase(request.dL, request.dtf, request.amax, epsilon=request.eps)
        sol = fuelopt.solve_fuel_optimal(problem, atlas_grid=_load_atlas())
        if request.continue_to is not None:
            sol = fuelopt.continue_epsilon(sol, request.continue_to)
        result = {
            "l0": sol.l0,
            "l1": sol.l1,
            "J": sol.J,
            "J_norm": sol.J_norm,
            "n_arcs": sol.n_arcs,
            "eta": sol.eta,
            "epsilon_path": list(sol.epsilon_path),
            "seed_source": sol.seed_source,
            "iterations": sol.iterations,
            "residual": sol.residual,
        }
        if request.profile_points:
            result["profile"] = fuelopt.control_profile(sol, n_points=request.profile_points).to_dict(orient="list")
        return result

    return _solve_or_raise(run)


@app.post("/atlas-query")
def atlas_query(request: AtlasQueryRequest):
    grid = _load_atlas()
    if grid is None:
        raise HTTPException(status_code=404, detail="No atlas configured. Set REPHASE_ATLAS_PATH to a fuel atlas CSV.")
    candidates = _solve_or_raise(atlas.interpolate_seed, grid, request.dL, request.eta)
    return {
        "candidates": [{"l0": c.l0, "l1": c.l1, "source": c.source} for c in candidates],
        "J_norm": atlas.interpolate_J_norm(grid, request.dL, request.eta),
    }


@app.get("/cases")
def get_cases():
    return {
        case_id: {"kind": case.kind, "description": case.description}
        for case_id, case in reference.load_cases().items()
    }


@app.post("/validate")
def validate(request: ValidateRequest):
    return _solve_or_raise(reference.validate_case, request.case).model_dump()


@app.get("/admin/status")
def get_status():
    """Version, seed policy and atlas availability."""
    status = {
        "version": config.code_version(),
        "seed": config.SEED,
        "atlas": {"path": config.ATLAS_PATH, "exists": False},
    }
    if config.ATLAS_PATH:
        path = Path(config.ATLAS_PATH)
        status["atlas"]["exists"] = path.exists()
        sidecar = atlas.sidecar_path(path)
        if sidecar.exists():
            try:
                grid = atlas.read_atlas(path)
                status["atlas"]["summary"] = grid.meta.get("summary")
                status["atlas"]["epsilon"] = grid.meta.get("epsilon")
            except (AtlasFormatError, OSError) as e:
                status["atlas"]["error"] = str(e)
    return status


def start_server():
    """Entry point for the rephase-server command."""
    config.setup_logging()
    host = os.getenv("HOST", "0.0.0.0")
    port = int(os.getenv("PORT", 8000))
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    start_server()
