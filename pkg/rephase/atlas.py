"""Solution atlases: the time-optimal l1/chi curve and the (dL, eta) fuel grid.

Atlases are stored as a CSV body (17 significant digits) next to a JSON
sidecar holding the grid spec, epsilon, code version and seed policy.
"""
import json
import math
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from rephase import fuelopt, timeopt
from rephase.config import FuelSolverSettings, code_version
from rephase.errors import AtlasFormatError, DomainError, RephaseError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MUTATION_THRESHOLD = 0.5
FLOAT_FORMAT = "%.17g"

TIME_COLUMNS = ["dL", "l1", "chi", "converged"]
FUEL_COLUMNS = ["dL", "eta", "l0_times_dL", "l1", "J_norm", "n_arcs", "converged", "epsilon"]
_INT_COLUMNS = {"n_arcs", "converged"}


@dataclass(frozen=True)
class SeedCandidate:
    l0: float
    l1: float
    source: str  # interpolated | nearest-cell | analytic


@dataclass
class AtlasGrid:
    dL_axis: np.ndarray
    eta_axis: np.ndarray
    cells: pd.DataFrame  # one row per (dL, eta), sorted by dL then eta
    meta: dict = field(default_factory=dict)

    def cell(self, i: int, j: int) -> pd.Series:
        return self.cells.iloc[i * len(self.eta_axis) + j]

    def field_grid(self, column: str) -> np.ndarray:
        """Values of one column as an array of shape (len(dL_axis), len(eta_axis))."""
        return self.cells[column].to_numpy().reshape(len(self.dL_axis), len(self.eta_axis))


@dataclass
class TimeCurve:
    table: pd.DataFrame
    meta: dict = field(default_factory=dict)


def axis(start: float, stop: float, step: float) -> np.ndarray:
    """Inclusive evenly spaced axis, rounded to the step's decimal places."""
    if not step > 0:
        raise DomainError(f"Grid step must be positive, got {step}")
    if stop < start:
        raise DomainError(f"Grid stop {stop} lies below start {start}")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    decimals = max(0, -int(math.floor(math.log10(step))) + 3)
    return np.round(start + step * np.arange(n), decimals)


# --- Generation -----------------------------------------------------------------

def _time_chunk(dLs):
    rows = []
    l1 = None
    for dL in dLs:
        try:
            l1 = timeopt.solve_lambda1(dL, x0=l1)
            chi = timeopt.f2(dL, l1)
            rows.append({"dL": dL, "l1": l1, "chi": chi, "converged": 1})
        except RephaseError as exc:
            logger.warning("time atlas point dL=%g failed: %s", dL, exc)
            l1 = None
            rows.append({"dL": dL, "l1": math.nan, "chi": math.nan, "converged": 0})
    return rows


def generate_time_atlas(dL_min: float, dL_max: float, step: float, jobs: int = 1, progress: bool = False) -> TimeCurve:
    """Sweep dL and record (l1, chi) on the time-optimal solution curve.

    Points are split into contiguous chunks so each worker warm-starts l1
    from its previous point.
    """
    dLs = axis(dL_min, dL_max, step)
    chunks = [c for c in np.array_split(dLs, max(1, jobs) * 4) if len(c)]
    rows = []
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as executor:
        futures = [executor.submit(_time_chunk, chunk) for chunk in chunks]
        for future in tqdm(as_completed(futures), total=len(futures), disable=not progress, desc="time atlas"):
            rows.extend(future.result())
    table = pd.DataFrame(rows, columns=TIME_COLUMNS).sort_values("dL", ignore_index=True)
    meta = {
        "kind": "time",
        "grid": {"dL": [dL_min, dL_max, step]},
        "code_version": code_version(),
    }
    meta["summary"] = time_curve_summary(table)
    return TimeCurve(table=table, meta=meta)


def time_curve_summary(table: pd.DataFrame) -> dict:
    ok = table[table["converged"] == 1]
    return {
        "points": int(len(table)),
        "converged": int(len(ok)),
        "chi_strictly_increasing": bool(np.all(np.diff(ok["chi"].to_numpy()) > 0)),
    }


def _failed_cell(dL, eta, epsilon):
    return {
        "dL": dL, "eta": eta, "l0_times_dL": math.nan, "l1": math.nan,
        "J_norm": math.nan, "n_arcs": 0, "converged": 0, "epsilon": epsilon,
    }


def _fuel_column(dL, eta_axis, epsilon, settings):
    """Sweep one dL column in ascending eta, seeding each cell from the last converged one."""
    rows = []
    seed = None
    for eta in eta_axis:
        problem = fuelopt.FuelOptProblem(delta_L=float(dL), eta=float(eta), epsilon=epsilon)
        try:
            sol = fuelopt.solve_fuel_optimal(problem, seed=seed, settings=settings)
        except RephaseError as exc:
            logger.warning("fuel atlas cell (%g, %g) failed: %s", dL, eta, exc)
            rows.append(_failed_cell(dL, eta, epsilon))
            continue
        seed = (sol.l0, sol.l1)
        rows.append({
            "dL": dL,
            "eta": eta,
            "l0_times_dL": sol.l0_times_dL,
            "l1": sol.l1,
            "J_norm": sol.J_norm,
            "n_arcs": sol.n_arcs,
            "converged": 1,
            "epsilon": epsilon,
        })
    return rows


def generate_fuel_atlas(
    dL_axis: Sequence[float],
    eta_axis: Sequence[float],
    epsilon: float,
    jobs: int = 1,
    settings: Optional[FuelSolverSettings] = None,
    progress: bool = False,
) -> AtlasGrid:
    """Solve every (dL, eta) cell; columns of constant dL run in parallel."""
    dL_axis = np.asarray(dL_axis, dtype=float)
    eta_axis = np.asarray(eta_axis, dtype=float)
    if np.any(np.diff(dL_axis) <= 0) or np.any(np.diff(eta_axis) <= 0):
        raise DomainError("Atlas axes must be strictly increasing")
    settings = settings or FuelSolverSettings()

    rows = []
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as executor:
        futures = {executor.submit(_fuel_column, dL, eta_axis, epsilon, settings): dL for dL in dL_axis}
        for future in tqdm(as_completed(futures), total=len(futures), disable=not progress, desc="fuel atlas"):
            rows.extend(future.result())

    cells = pd.DataFrame(rows, columns=FUEL_COLUMNS).sort_values(["dL", "eta"], ignore_index=True)
    grid = AtlasGrid(dL_axis=dL_axis, eta_axis=eta_axis, cells=cells)
    grid.meta = {
        "kind": "fuel",
        "grid": {"dL": dL_axis.tolist(), "eta": eta_axis.tolist()},
        "epsilon": epsilon,
        "code_version": code_version(),
        "seed_policy": {
            "rng_seed": settings.seed,
            "retry_budget": settings.retry_budget,
            "order": "column warm start, analytic, random",
        },
    }
    grid.meta["summary"] = atlas_summary(grid)
    logger.info("fuel atlas: %d cells, %.2f%% converged", len(cells), 100.0 * grid.meta["summary"]["convergence_rate"])
    return grid


# --- Queries ------------------------------------------------------------------------

def atlas_summary(grid: AtlasGrid) -> dict:
    converged = grid.field_grid("converged") == 1
    J = grid.field_grid("J_norm")
    monotone = 0
    for i in range(len(grid.dL_axis)):
        column = J[i][converged[i]]
        if np.all(np.diff(column) <= 1e-9):
            monotone += 1
    arcs = grid.cells.loc[grid.cells["converged"] == 1, "n_arcs"].value_counts().sort_index()
    n_columns = max(1, len(grid.dL_axis))
    return {
        "cells": int(converged.size),
        "converged": int(converged.sum()),
        "convergence_rate": float(converged.mean()) if converged.size else 0.0,
        "monotone_column_rate": monotone / n_columns,
        "arc_histogram": {int(k): int(v) for k, v in arcs.items()},
    }


def mutation_cells(grid: AtlasGrid, threshold: float = MUTATION_THRESHOLD) -> list:
    """Adjacent converged cell pairs whose l1 differs by more than threshold."""
    l1 = grid.field_grid("l1")
    ok = grid.field_grid("converged") == 1
    pairs = []
    n_i, n_j = l1.shape
    for i in range(n_i):
        for j in range(n_j):
            for di, dj in ((1, 0), (0, 1)):
                a, b = i + di, j + dj
                if a < n_i and b < n_j and ok[i, j] and ok[a, b] and abs(l1[i, j] - l1[a, b]) > threshold:
                    pairs.append(((grid.dL_axis[i], grid.eta_axis[j]), (grid.dL_axis[a], grid.eta_axis[b])))
    return pairs


def _analytic_candidate(delta_L, eta):
    regime = "short" if delta_L < 4.0 else "long"
    l0, l1, _ = fuelopt.analytic_fuel_estimate(delta_L, eta, regime)
    return SeedCandidate(l0=l0, l1=l1, source="analytic")


def _lower_index(axis_values, x):
    i = int(np.searchsorted(axis_values, x, side="right")) - 1
    return min(max(i, 0), max(len(axis_values) - 2, 0))


def interpolate_seed(grid: AtlasGrid, delta_L: float, eta: float) -> list:
    """Seed candidates for (dL, eta), best first.

    Bilinear inside a cell whose corners agree on the burn structure;
    otherwise each distinct corner as a nearest-cell candidate. Queries
    outside the grid get the analytic estimate only.
    """
    dLs, etas = grid.dL_axis, grid.eta_axis
    if not (dLs[0] <= delta_L <= dLs[-1] and etas[0] <= eta <= etas[-1]):
        logger.debug("atlas query (%g, %g) outside the grid; using the analytic estimate", delta_L, eta)
        return [_analytic_candidate(delta_L, eta)]

    i, j = _lower_index(dLs, delta_L), _lower_index(etas, eta)
    i1, j1 = min(i + 1, len(dLs) - 1), min(j + 1, len(etas) - 1)
    tx = (delta_L - dLs[i]) / (dLs[i1] - dLs[i]) if i1 > i else 0.0
    ty = (eta - etas[j]) / (etas[j1] - etas[j]) if j1 > j else 0.0
    corners = [(i, j, (1 - tx) * (1 - ty)), (i1, j, tx * (1 - ty)), (i, j1, (1 - tx) * ty), (i1, j1, tx * ty)]
    rows = [(grid.cell(a, b), w, (a, b)) for a, b, w in corners]

    smooth = (
        all(r["converged"] == 1 for r, _, _ in rows)
        and len({int(r["n_arcs"]) for r, _, _ in rows}) == 1
        and max(r["l1"] for r, _, _ in rows) - min(r["l1"] for r, _, _ in rows) <= MUTATION_THRESHOLD
    )
    if smooth:
        # zero weights are skipped so a node query returns the stored values exactly
        l0_dL = sum(w * r["l0_times_dL"] for r, w, _ in rows if w != 0.0)
        l1 = sum(w * r["l1"] for r, w, _ in rows if w != 0.0)
        return [SeedCandidate(l0=l0_dL / delta_L, l1=l1, source="interpolated")]

    def distance(idx):
        a, b = idx
        sx = (dLs[i1] - dLs[i]) or 1.0
        sy = (etas[j1] - etas[j]) or 1.0
        return math.hypot((dLs[a] - delta_L) / sx, (etas[b] - eta) / sy)

    candidates, seen = [], set()
    for r, _, idx in sorted(rows, key=lambda item: distance(item[2])):
        if r["converged"] != 1:
            continue
        key = (r["l0_times_dL"], r["l1"])
        if key in seen:
            continue
        seen.add(key)
        candidates.append(SeedCandidate(l0=r["l0_times_dL"] / delta_L, l1=r["l1"], source="nearest-cell"))
    return candidates or [_analytic_candidate(delta_L, eta)]


def interpolate_J_norm(grid: AtlasGrid, delta_L: float, eta: float) -> Optional[float]:
    """Bilinear J/(a_max dL) from the converged corners, None outside the grid."""
    dLs, etas = grid.dL_axis, grid.eta_axis
    if not (dLs[0] <= delta_L <= dLs[-1] and etas[0] <= eta <= etas[-1]):
        return None
    i, j = _lower_index(dLs, delta_L), _lower_index(etas, eta)
    i1, j1 = min(i + 1, len(dLs) - 1), min(j + 1, len(etas) - 1)
    tx = (delta_L - dLs[i]) / (dLs[i1] - dLs[i]) if i1 > i else 0.0
    ty = (eta - etas[j]) / (etas[j1] - etas[j]) if j1 > j else 0.0
    total, weight = 0.0, 0.0
    for a, b, w in ((i, j, (1 - tx) * (1 - ty)), (i1, j, tx * (1 - ty)), (i, j1, (1 - tx) * ty), (i1, j1, tx * ty)):
        row = grid.cell(a, b)
        if w != 0.0 and row["converged"] == 1:
            total += w * row["J_norm"]
            weight += w
    return total / weight if weight > 0 else None


# --- Persistence ----------------------------------------------------------------

def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def _write_table(table: pd.DataFrame, columns, meta: dict, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table[columns].to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="")
    with open(sidecar_path(path), "w", encoding="utf-8") as f:
        json.dump({"schema_version": SCHEMA_VERSION, **meta}, f, indent=2)


def _parse_column(values, name: str):
    parsed = []
    for k, text in enumerate(values):
        text = text.strip()
        if text == "" and name not in _INT_COLUMNS:
            parsed.append(math.nan)
            continue
        try:
            parsed.append(int(text) if name in _INT_COLUMNS else float(text))
        except ValueError:
            # header is line 1
            raise AtlasFormatError(f"Malformed value {text!r} in column {name!r} at line {k + 2}", line=k + 2, column=name)
    return parsed


def _read_table(path, columns, kind: str):
    path = Path(path)
    meta_file = sidecar_path(path)
    if not meta_file.exists():
        raise AtlasFormatError(f"Metadata sidecar {meta_file} not found")
    with open(meta_file, encoding="utf-8") as f:
        meta = json.load(f)
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise AtlasFormatError(f"Unsupported atlas schema version {meta.get('schema_version')!r} (expected {SCHEMA_VERSION})")
    if meta.get("kind") != kind:
        raise AtlasFormatError(f"Atlas {path} holds a {meta.get('kind')!r} table, expected {kind!r}")

    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as exc:
        raise AtlasFormatError(f"Malformed atlas file {path}: {exc}")
    for name in raw.columns:
        if name not in columns:
            raise AtlasFormatError(f"Unknown column {name!r} in {path}", line=1, column=name)
    for name in columns:
        if name not in raw.columns:
            raise AtlasFormatError(f"Missing column {name!r} in {path}", line=1, column=name)
    table = pd.DataFrame({name: _parse_column(raw[name].tolist(), name) for name in columns})
    return table, meta


def write_atlas(grid: AtlasGrid, path):
    _write_table(grid.cells, FUEL_COLUMNS, grid.meta, path)


def read_atlas(path) -> AtlasGrid:
    cells, meta = _read_table(path, FUEL_COLUMNS, "fuel")
    cells = cells.sort_values(["dL", "eta"], ignore_index=True)
    dL_axis = np.unique(cells["dL"].to_numpy())
    eta_axis = np.unique(cells["eta"].to_numpy())
    if len(cells) != len(dL_axis) * len(eta_axis):
        raise AtlasFormatError(
            f"Atlas {path} has {len(cells)} rows, not a full {len(dL_axis)} x {len(eta_axis)} grid"
        )
    return AtlasGrid(dL_axis=dL_axis, eta_axis=eta_axis, cells=cells, meta=meta)


def write_time_curve(curve: TimeCurve, path):
    _write_table(curve.table, TIME_COLUMNS, curve.meta, path)


def read_time_curve(path) -> TimeCurve:
    table, meta = _read_table(path, TIME_COLUMNS, "time")
    return TimeCurve(table=table, meta=meta)
