"""Partitioned, sequential coupling of the subsurface and surface solvers.

Within each time step the two solvers exchange interface data in a fixed
point loop (Gauss-Seidel ordering, subsurface first):

  1. the surface heights of the previous iterate become Dirichlet head
     values on the soil's top boundary (map_height_to_head),
  2. the subsurface step is solved and its top-edge Darcy fluxes are turned
     into per-cell surface sources (map_flux_to_source),
  3. the surface step is solved for a height proposal h_tilde,
  4. the new iterate is the relaxed blend omega*h_tilde + (1-omega)*h_prev,
  5. the loop stops when res = ||h_tilde - h_prev||_2 falls below tol.

The first iterate of step n is the converged height of step n-1.  Each step
records the residual sequence, the observed contraction rate CR_n (mean of
consecutive residual ratios, defined only when at least three residuals
exist), and a linear-theory predictor: the spatial means c_bar, K_bar of the
capacity and conductivity over all grid nodes are fed into the vertical
interface operator S, giving |S| and an optimal relaxation estimate
1/(1 - S).  Fully saturated fields make c_bar zero; the predictor then
substitutes a 1e-30 guard so the linear model stays evaluable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analysis import LinearModelParams, discrete_S
from .linear1d import observed_cr
from .richards2d import (DirichletData, Grid2D, NewtonSettings,
                         RichardsWorkspace, SubsurfaceState, top_dirichlet)
from .surface1d import (BoundarySpec, SurfaceModel, SurfaceSource,
                        SurfaceState, implicit_fv_step)


@dataclass(frozen=True)
class CouplingConfig:
    """Relaxation, tolerance and stepping controls of the coupled loop."""

    omega: float = 1.0
    tol: float = 1e-8
    max_iters: int = 100
    dt: float = 36.0
    num_steps: int = 300
    output_every: int = 10

    def __post_init__(self) -> None:
        if not 0.0 < self.omega <= 1.0:
            raise ValueError("omega must lie in (0, 1]")
        if self.tol <= 0.0 or self.dt <= 0.0:
            raise ValueError("tol and dt must be positive")
        if self.max_iters < 1 or self.num_steps < 1 or self.output_every < 1:
            raise ValueError("iteration and step counts must be positive")

    @property
    def total_time(self) -> float:
        return self.dt * self.num_steps


@dataclass(frozen=True)
class RainSchedule:
    """Constant rainfall rate [m/s] switched off after the cutoff time."""

    rate: float = 0.0
    cutoff: float = float("inf")

    def at(self, time: float) -> float:
        # implicit stepping samples sources at the end of the step; keep the
        # step that lands exactly on the cutoff inside the rainy window
        return self.rate if time <= self.cutoff * (1.0 + 1e-12) else 0.0


@dataclass(eq=False)
class CoupledProblem:
    """Geometry, materials and solver settings for one scenario."""

    grid: Grid2D
    material: object
    surface_model: SurfaceModel
    boundary: BoundarySpec
    rain: RainSchedule = RainSchedule()
    static_dirichlet: DirichletData | None = None
    newton: NewtonSettings = NewtonSettings()
    workspace: RichardsWorkspace = field(init=False)

    def __post_init__(self) -> None:
        self.workspace = RichardsWorkspace(self.grid, self.material)
        if self.static_dirichlet is not None:
            top = set(self.grid.top_node_indices().tolist())
            if top & set(self.static_dirichlet.nodes.tolist()):
                raise ValueError("static Dirichlet nodes may not lie on the "
                                 "coupled top boundary")


@dataclass(frozen=True)
class CoupledState:
    subsurface: SubsurfaceState
    surface: SurfaceState

    @property
    def time(self) -> float:
        return self.subsurface.time


@dataclass(frozen=True)
class PredictedFactors:
    c_bar: float
    k_bar: float
    abs_s: float
    omega_opt: float
    c_guarded: bool


@dataclass(frozen=True)
class StepRecord:
    """Trace data of one coupled time step."""

    step: int
    time: float
    iterations: int
    converged: bool
    residuals: tuple[float, ...]
    cr: float | None
    predicted: PredictedFactors
    newton_iterations: int
    clamped_volume: float


class CouplingDivergedError(RuntimeError):
    """Fixed point loop hit max_iters; carries the residual history."""

    def __init__(self, step: int, residuals: tuple[float, ...]):
        super().__init__(
            f"coupling iteration did not converge in step {step} "
            f"({len(residuals)} iterations, last residual "
            f"{residuals[-1]:.3e})")
        self.step = step
        self.residuals = residuals


def map_height_to_head(h_cells: np.ndarray) -> np.ndarray:
    """Nodal top-boundary head values from cell heights.

    Interior nodes average the two adjacent cells, end nodes copy the
    single adjacent cell.
    """
    h_cells = np.asarray(h_cells, dtype=float)
    if h_cells.ndim != 1 or h_cells.size < 1:
        raise ValueError("need a 1d array of at least one cell")
    nodes = np.empty(h_cells.size + 1)
    nodes[0] = h_cells[0]
    nodes[-1] = h_cells[-1]
    nodes[1:-1] = 0.5 * (h_cells[:-1] + h_cells[1:])
    return nodes


def map_flux_to_source(flux_integrals: np.ndarray, dx: float) -> np.ndarray:
    """Per-cell surface source [m/s] from top-edge flux integrals [m^2/s].

    Positive integrals (water leaving the soil through the upward normal)
    add water to the surface cells.
    """
    if dx <= 0.0:
        raise ValueError("dx must be positive")
    return np.asarray(flux_integrals, dtype=float) / dx


def relax(h_tilde: np.ndarray, h_prev_iter: np.ndarray,
          omega: float) -> np.ndarray:
    """Convex blend of the proposal and the previous iterate."""
    if not 0.0 < omega <= 1.0:
        raise ValueError("omega must lie in (0, 1]")
    return omega * np.asarray(h_tilde, dtype=float) \
        + (1.0 - omega) * np.asarray(h_prev_iter, dtype=float)


def residual_norm(h_tilde: np.ndarray, h_prev_iter: np.ndarray) -> float:
    """Euclidean norm of the height update over the surface cells."""
    h_tilde = np.asarray(h_tilde, dtype=float)
    h_prev_iter = np.asarray(h_prev_iter, dtype=float)
    if h_tilde.shape != h_prev_iter.shape:
        raise ValueError("height arrays must have equal shape")
    return float(np.linalg.norm(h_tilde - h_prev_iter))


def predict_S(state: SubsurfaceState, grid: Grid2D, material, dt: float,
              ) -> PredictedFactors:
    """Linear-theory contraction estimate from spatial coefficient means."""
    node_x, _ = grid.node_coords()
    bound = material.at(node_x)
    c_bar = float(np.mean(bound.capacity(state.psi)))
    k_bar = float(np.mean(bound.hydraulic_conductivity(state.psi)))
    guarded = c_bar < 1e-30
    params = LinearModelParams(c=max(c_bar, 1e-30), k=k_bar,
                               length=grid.length_z, dt=dt,
                               num_elements=grid.num_z)
    result = discrete_S(params)
    return PredictedFactors(c_bar=c_bar, k_bar=k_bar, abs_s=abs(result.S),
                            omega_opt=result.omega_opt, c_guarded=guarded)


def run_coupled_step(problem: CoupledProblem, config: CouplingConfig,
                     state: CoupledState) -> tuple[CoupledState, StepRecord]:
    """Advance the coupled system by one time step."""
    step = int(round(state.time / config.dt)) + 1
    time_new = state.time + config.dt
    rain_rate = problem.rain.at(time_new)
    psi_old = state.subsurface.psi
    h_committed = state.surface.h

    h_iter = h_committed.copy()
    psi_guess = psi_old
    residuals: list[float] = []
    newton_total = 0
    clamped_total = 0.0
    surface_new = None
    converged = False
    for _ in range(config.max_iters):
        dirichlet = top_dirichlet(problem.grid, map_height_to_head(h_iter))
        if problem.static_dirichlet is not None:
            dirichlet = dirichlet.merged_with(problem.static_dirichlet)
        psi_new, newton_report = problem.workspace.newton_step(
            psi_old, config.dt, dirichlet, problem.newton,
            initial_guess=psi_guess)
        newton_total += newton_report.iterations
        psi_guess = psi_new
        source = SurfaceSource(
            exchange=map_flux_to_source(
                problem.workspace.interface_flux(psi_new), problem.grid.dx),
            rain=rain_rate)
        surface_new, surf_report = implicit_fv_step(
            state.surface, source, config.dt, problem.grid.dx,
            problem.surface_model, problem.boundary)
        clamped_total += surf_report.clamped_volume
        residuals.append(residual_norm(surface_new.h, h_iter))
        h_iter = relax(surface_new.h, h_iter, config.omega)
        if residuals[-1] < config.tol:
            converged = True
            break
    if not converged:
        raise CouplingDivergedError(step, tuple(residuals))

    new_sub = SubsurfaceState(psi=psi_guess, time=time_new)
    new_surf = SurfaceState(h=h_iter, hu=surface_new.hu, time=time_new)
    predicted = predict_S(new_sub, problem.grid, problem.material, config.dt)
    record = StepRecord(step=step, time=time_new, iterations=len(residuals),
                        converged=converged, residuals=tuple(residuals),
                        cr=observed_cr(residuals), predicted=predicted,
                        newton_iterations=newton_total,
                        clamped_volume=clamped_total)
    return CoupledState(subsurface=new_sub, surface=new_surf), record


@dataclass(frozen=True)
class SimulationResult:
    records: tuple[StepRecord, ...]
    snapshots: tuple[tuple[int, CoupledState], ...]
    final_state: CoupledState


def run_simulation(problem: CoupledProblem, config: CouplingConfig,
                   initial: CoupledState) -> SimulationResult:
    """March num_steps coupled steps, keeping periodic state snapshots."""
    state = initial
    records = []
    snapshots = [(0, state)]
    for step in range(1, config.num_steps + 1):
        state, record = run_coupled_step(problem, config, state)
        records.append(record)
        if step % config.output_every == 0 or step == config.num_steps:
            snapshots.append((step, state))
    return SimulationResult(records=tuple(records),
                            snapshots=tuple(snapshots), final_state=state)


def time_averaged_cr(records, exclude_above: float | None = None,
                     ) -> tuple[float | None, int]:
    """Mean of the defined CR_n values and the count of undefined ones.

    Steps whose CR exceeds exclude_above are left out of the mean (manual
    outlier control); they do not count as undefined.
    """
    defined = [r.cr for r in records if r.cr is not None]
    undefined_count = sum(1 for r in records if r.cr is None)
    if exclude_above is not None:
        defined = [value for value in defined if value <= exclude_above]
    if not defined:
        return None, undefined_count
    return float(np.mean(defined)), undefined_count


TRACE_COLUMNS = ("n", "t", "K_n", "res_first", "res_last", "CR_n",
                 "c_bar", "K_bar", "abs_S_pred", "omega_opt_pred")


def trace_rows(records) -> list[dict]:
    rows = []
    for r in records:
        rows.append({
            "n": r.step, "t": r.time, "K_n": r.iterations,
            "res_first": r.residuals[0], "res_last": r.residuals[-1],
            "CR_n": "" if r.cr is None else r.cr,
            "c_bar": r.predicted.c_bar, "K_bar": r.predicted.k_bar,
            "abs_S_pred": r.predicted.abs_s,
            "omega_opt_pred": r.predicted.omega_opt,
        })
    return rows


SUMMARY_COLUMNS = ("scenario", "CR", "undefined_count")


def summary_row(scenario_id: str, records,
                exclude_above: float | None = None) -> dict:
    average, undefined_count = time_averaged_cr(records, exclude_above)
    return {"scenario": scenario_id,
            "CR": "" if average is None else average,
            "undefined_count": undefined_count}
