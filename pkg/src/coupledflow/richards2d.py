"""Variably saturated subsurface flow on a 2D Cartesian grid.

Richards' equation in mixed form,

    d theta(psi) / dt + div v = 0,      v = -K(psi) grad(psi + z),

is discretized with bilinear quadrilateral finite elements (2x2 Gauss points
per element, consistent mass) and implicit Euler in time.  One time step asks
for a root of the weak residual

    R_i = <theta(psi) - theta(psi_old), phi_i>
          + dt <K(psi) grad(psi + z), grad phi_i>

over the free nodes, with Dirichlet rows replaced by (psi_node - prescribed);
the root is found with a damped Newton iteration using the analytic capacity
c(psi) and conductivity derivative K'(psi).  The surface coupling reads the
normal Darcy flux at the midpoint of every top cell edge,

    flux_l = -K(psi_mid) (d_z psi_mid + 1) * dx,

positive when water leaves the soil.  Nonlinear coefficients are evaluated at
quadrature points from the interpolated psi, and material parameters may vary
horizontally (they are baked in per quadrature point at workspace setup).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve


@dataclass(frozen=True)
class Grid2D:
    """Cartesian grid of num_x by num_z rectangular elements."""

    length_x: float
    length_z: float
    num_x: int
    num_z: int

    def __post_init__(self) -> None:
        if self.length_x <= 0.0 or self.length_z <= 0.0:
            raise ValueError("domain lengths must be positive")
        if self.num_x < 1 or self.num_z < 1:
            raise ValueError("need at least one element per direction")

    @property
    def dx(self) -> float:
        return self.length_x / self.num_x

    @property
    def dz(self) -> float:
        return self.length_z / self.num_z

    @property
    def num_nodes(self) -> int:
        return (self.num_x + 1) * (self.num_z + 1)

    def node_index(self, ix, iz):
        return iz * (self.num_x + 1) + ix

    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Arrays of x and z for every node, in node index order."""
        ix = np.arange(self.num_x + 1)
        iz = np.arange(self.num_z + 1)
        x, z = np.meshgrid(ix * self.dx, iz * self.dz)
        return x.ravel(), z.ravel()

    def top_node_indices(self) -> np.ndarray:
        """Nodes on z = length_z, ordered by increasing x."""
        return self.node_index(np.arange(self.num_x + 1), self.num_z)

    def connectivity(self) -> np.ndarray:
        """Element to node map, corners ordered counterclockwise from
        bottom left."""
        ex, ez = np.meshgrid(np.arange(self.num_x), np.arange(self.num_z))
        ex, ez = ex.ravel(), ez.ravel()
        return np.column_stack([
            self.node_index(ex, ez), self.node_index(ex + 1, ez),
            self.node_index(ex + 1, ez + 1), self.node_index(ex, ez + 1)])


@dataclass(frozen=True)
class SubsurfaceState:
    """Nodal pressure head field at one time level."""

    psi: np.ndarray
    time: float = 0.0


@dataclass(frozen=True)
class NewtonSettings:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_iters: int = 50
    damping: int = 10

    def __post_init__(self) -> None:
        if self.abs_tol <= 0.0 or self.rel_tol <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1 or self.damping < 0:
            raise ValueError("max_iters must be >= 1 and damping >= 0")


@dataclass(frozen=True)
class NewtonReport:
    iterations: int
    residual_norm: float
    initial_residual_norm: float


class NewtonError(RuntimeError):
    """Newton ran out of iterations; carries the final residual norm."""

    def __init__(self, message: str, residual_norm: float, iterations: int):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.iterations = iterations


@dataclass(eq=False, frozen=True)
class DirichletData:
    """Prescribed head values at a set of nodes."""

    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=int)
        values = np.asarray(self.values, dtype=float)
        if nodes.shape != values.shape or nodes.ndim != 1:
            raise ValueError("nodes and values must be matching 1d arrays")
        if nodes.size != np.unique(nodes).size:
            raise ValueError("duplicate Dirichlet nodes")
        if not np.all(np.isfinite(values)):
            raise ValueError("Dirichlet values must be finite")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    def merged_with(self, other: "DirichletData") -> "DirichletData":
        return DirichletData(np.concatenate([self.nodes, other.nodes]),
                             np.concatenate([self.values, other.values]))


def top_dirichlet(grid: Grid2D, values) -> DirichletData:
    """Dirichlet data on the full top boundary (scalar or per node values)."""
    nodes = grid.top_node_indices()
    return DirichletData(nodes, np.broadcast_to(
        np.asarray(values, dtype=float), nodes.shape).copy())


# Reference element machinery (corners ordered BL, BR, TR, TL).
_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
_GAUSS = np.array([(sx / np.sqrt(3.0), sz / np.sqrt(3.0))
                   for sz in (-1.0, 1.0) for sx in (-1.0, 1.0)])


def _shape_values(points: np.ndarray) -> np.ndarray:
    xi, eta = points[:, :1], points[:, 1:]
    cx, cz = _CORNERS[:, 0], _CORNERS[:, 1]
    return (1.0 + xi * cx) * (1.0 + eta * cz) / 4.0


def _shape_gradients(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xi, eta = points[:, :1], points[:, 1:]
    cx, cz = _CORNERS[:, 0], _CORNERS[:, 1]
    return cx * (1.0 + eta * cz) / 4.0, (1.0 + xi * cx) * cz / 4.0


class RichardsWorkspace:
    """Precomputed assembly data for one grid / material pairing.

    The material object must provide ``at(x) -> bound`` with vectorized
    methods theta, capacity, hydraulic_conductivity, conductivity_derivative
    of psi alone; ``coupledflow.material.MaterialField`` does.
    """

    def __init__(self, grid: Grid2D, material):
        self.grid = grid
        self.material = material
        self.conn = grid.connectivity()
        self.weight = grid.dx * grid.dz / 4.0
        self.shape = _shape_values(_GAUSS)
        dxi, deta = _shape_gradients(_GAUSS)
        self.grad_x = dxi * 2.0 / grid.dx
        self.grad_z = deta * 2.0 / grid.dz
        # gradient-gradient outer products per quadrature point
        self.grad_outer = (np.einsum("qa,qb->qab", self.grad_x, self.grad_x)
                           + np.einsum("qa,qb->qab", self.grad_z, self.grad_z))
        node_x, _ = grid.node_coords()
        self.qp_x = node_x[self.conn] @ self.shape.T
        self.bound = material.at(self.qp_x)
        rows = np.broadcast_to(self.conn[:, :, None],
                               (self.conn.shape[0], 4, 4))
        cols = np.broadcast_to(self.conn[:, None, :],
                               (self.conn.shape[0], 4, 4))
        self._coo_rows = rows.ravel()
        self._coo_cols = cols.ravel()
        # top-edge midpoints for the interface flux
        ex = np.arange(grid.num_x)
        self._top = {
            "tl": grid.node_index(ex, grid.num_z),
            "tr": grid.node_index(ex + 1, grid.num_z),
            "bl": grid.node_index(ex, grid.num_z - 1),
            "br": grid.node_index(ex + 1, grid.num_z - 1),
        }
        self._top_bound = material.at((ex + 0.5) * grid.dx)

    # ── assembly ─────────────────────────────────────────────────────────

    def _check_finite(self, values: np.ndarray, label: str) -> None:
        if not np.all(np.isfinite(values)):
            element = int(np.argwhere(~np.isfinite(values))[0][0])
            raise FloatingPointError(
                f"non-finite {label} in element {element}")

    def _fields_at_qp(self, psi: np.ndarray):
        psi_el = psi[self.conn]
        return (psi_el @ self.shape.T, psi_el @ self.grad_x.T,
                psi_el @ self.grad_z.T)

    def residual(self, psi_new: np.ndarray, psi_old: np.ndarray, dt: float,
                 dirichlet: DirichletData | None) -> np.ndarray:
        psi_qp, dpsi_dx, dpsi_dz = self._fields_at_qp(psi_new)
        psi_old_qp = psi_old[self.conn] @ self.shape.T
        theta_qp = self.bound.theta(psi_qp)
        theta_old_qp = self.bound.theta(psi_old_qp)
        cond_qp = self.bound.hydraulic_conductivity(psi_qp)
        self._check_finite(theta_qp, "water content")
        self._check_finite(cond_qp, "conductivity")
        element_res = self.weight * (
            (theta_qp - theta_old_qp) @ self.shape
            + dt * ((cond_qp * dpsi_dx) @ self.grad_x
                    + (cond_qp * (dpsi_dz + 1.0)) @ self.grad_z))
        out = np.zeros(self.grid.num_nodes)
        np.add.at(out, self.conn, element_res)
        if dirichlet is not None:
            out[dirichlet.nodes] = psi_new[dirichlet.nodes] - dirichlet.values
        return out

    def jacobian(self, psi_new: np.ndarray, dt: float,
                 dirichlet: DirichletData | None) -> sparse.csr_matrix:
        psi_qp, dpsi_dx, dpsi_dz = self._fields_at_qp(psi_new)
        cap_qp = self.bound.capacity(psi_qp)
        cond_qp = self.bound.hydraulic_conductivity(psi_qp)
        dcond_qp = self.bound.conductivity_derivative(psi_qp)
        self._check_finite(cap_qp, "capacity")
        self._check_finite(dcond_qp, "conductivity derivative")
        # directional derivative of the Darcy term splits into a K' advection
        # part and the symmetric K stiffness part
        advect = (dpsi_dx[:, :, None] * self.grad_x[None, :, :]
                  + (dpsi_dz + 1.0)[:, :, None] * self.grad_z[None, :, :])
        element_jac = self.weight * (
            np.einsum("eq,qa,qb->eab", cap_qp, self.shape, self.shape)
            + dt * (np.einsum("eq,eqa,qb->eab", dcond_qp, advect, self.shape)
                    + np.einsum("eq,qab->eab", cond_qp, self.grad_outer)))
        matrix = sparse.coo_matrix(
            (element_jac.ravel(), (self._coo_rows, self._coo_cols)),
            shape=(self.grid.num_nodes, self.grid.num_nodes)).tocsr()
        if dirichlet is not None:
            constrained = np.zeros(self.grid.num_nodes, dtype=bool)
            constrained[dirichlet.nodes] = True
            row_of_entry = np.repeat(np.arange(self.grid.num_nodes),
                                     np.diff(matrix.indptr))
            matrix.data[constrained[row_of_entry]] = 0.0
            matrix = (matrix + sparse.diags(constrained.astype(float))).tocsr()
        return matrix

    # ── solves ───────────────────────────────────────────────────────────

    def newton_step(self, psi_old: np.ndarray, dt: float,
                    dirichlet: DirichletData,
                    settings: NewtonSettings = NewtonSettings(),
                    initial_guess: np.ndarray | None = None,
                    ) -> tuple[np.ndarray, NewtonReport]:
        """Advance one implicit Euler step; returns the new field."""
        psi_old = np.asarray(psi_old, dtype=float)
        if not np.all(np.isfinite(psi_old)):
            raise ValueError("previous state contains non-finite values")
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        psi = np.array(psi_old if initial_guess is None else initial_guess,
                       dtype=float)
        residual = self.residual(psi, psi_old, dt, dirichlet)
        norm = norm0 = np.max(np.abs(residual))
        for iteration in range(1, settings.max_iters + 1):
            if norm <= settings.abs_tol or norm <= settings.rel_tol * norm0:
                return psi, NewtonReport(iteration - 1, norm, norm0)
            matrix = self.jacobian(psi, dt, dirichlet)
            delta = spsolve(matrix.tocsc(), -residual)
            step = 1.0
            for _ in range(settings.damping + 1):
                trial = psi + step * delta
                trial_res = self.residual(trial, psi_old, dt, dirichlet)
                trial_norm = np.max(np.abs(trial_res))
                if trial_norm < norm or trial_norm <= settings.abs_tol:
                    break
                step *= 0.5
            psi, residual, norm = trial, trial_res, trial_norm
        if norm <= settings.abs_tol or norm <= settings.rel_tol * norm0:
            return psi, NewtonReport(settings.max_iters, norm, norm0)
        raise NewtonError(
            f"Newton failed to converge in {settings.max_iters} iterations "
            f"(residual {norm:.3e})", residual_norm=float(norm),
            iterations=settings.max_iters)

    def interface_flux(self, psi: np.ndarray) -> np.ndarray:
        """Outward normal flux integral over each top cell [m^2/s]."""
        top = self._top
        psi_mid = 0.5 * (psi[top["tl"]] + psi[top["tr"]])
        psi_below = 0.5 * (psi[top["bl"]] + psi[top["br"]])
        gradient = (psi_mid - psi_below) / self.grid.dz
        cond = self._top_bound.hydraulic_conductivity(psi_mid)
        return -cond * (gradient + 1.0) * self.grid.dx

    def water_volume(self, psi: np.ndarray) -> float:
        """Integral of theta over the domain by the assembly quadrature."""
        psi_qp = psi[self.conn] @ self.shape.T
        return float(self.weight * np.sum(self.bound.theta(psi_qp)))


# Module level wrappers matching the workspace methods, for one off calls.

_WORKSPACES: dict = {}


def _workspace(grid: Grid2D, material) -> RichardsWorkspace:
    try:
        key = (grid, material)
        cached = _WORKSPACES.get(key)
        if cached is None:
            cached = RichardsWorkspace(grid, material)
            if len(_WORKSPACES) > 16:
                _WORKSPACES.clear()
            _WORKSPACES[key] = cached
        return cached
    except TypeError:
        return RichardsWorkspace(grid, material)


def _psi_of(state) -> np.ndarray:
    if isinstance(state, SubsurfaceState):
        return state.psi
    return np.asarray(state, dtype=float)


def assemble_residual(state_new, state_old, dt, grid, material,
                      dirichlet: DirichletData | None) -> np.ndarray:
    return _workspace(grid, material).residual(
        _psi_of(state_new), _psi_of(state_old), dt, dirichlet)


def assemble_jacobian(state_new, dt, grid, material,
                      dirichlet: DirichletData | None) -> sparse.csr_matrix:
    return _workspace(grid, material).jacobian(_psi_of(state_new), dt,
                                               dirichlet)


def newton_step_solve(state_old, dt, grid, material,
                      dirichlet: DirichletData,
                      settings: NewtonSettings = NewtonSettings(),
                      ) -> tuple[SubsurfaceState, NewtonReport]:
    old = state_old if isinstance(state_old, SubsurfaceState) else \
        SubsurfaceState(np.asarray(state_old, dtype=float))
    psi, report = _workspace(grid, material).newton_step(
        old.psi, dt, dirichlet, settings)
    return SubsurfaceState(psi=psi, time=old.time + dt), report


def interface_flux(state, grid, material) -> np.ndarray:
    return _workspace(grid, material).interface_flux(_psi_of(state))


FIELD_COLUMNS = ("x", "z", "psi", "theta", "K")


def field_rows(state, grid: Grid2D, material) -> list[dict]:
    """Snapshot rows (x, z, psi, theta, K) in node index order."""
    psi = _psi_of(state)
    node_x, node_z = grid.node_coords()
    bound = material.at(node_x)
    theta = np.asarray(bound.theta(psi))
    cond = np.asarray(bound.hydraulic_conductivity(psi))
    return [{"x": node_x[i], "z": node_z[i], "psi": psi[i],
             "theta": theta[i], "K": cond[i]}
            for i in range(psi.size)]
