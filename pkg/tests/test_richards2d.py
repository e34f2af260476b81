"""Tests for the 2d variably saturated subsurface solver.

The assembled residual is checked against a from-scratch scalar loop over
elements and quadrature points, the Jacobian against central differences,
and the implicit step against regimes with known behaviour (hydrostatic
rest, fully saturated linear flow).
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from coupledflow.material import SOIL_PRESETS, MaterialField
from coupledflow.richards2d import (
    FIELD_COLUMNS,
    DirichletData,
    Grid2D,
    NewtonError,
    NewtonSettings,
    RichardsWorkspace,
    SubsurfaceState,
    assemble_residual,
    field_rows,
    interface_flux,
    newton_step_solve,
    top_dirichlet,
)

SILT = MaterialField.homogeneous(SOIL_PRESETS["silt-loam"])
CLAY = MaterialField.homogeneous(SOIL_PRESETS["beit-netofa-clay"])


def small_grid() -> Grid2D:
    return Grid2D(length_x=1.5, length_z=1.0, num_x=3, num_z=2)


def residual_oracle(grid: Grid2D, material, psi_new: np.ndarray,
                    psi_old: np.ndarray, dt: float) -> np.ndarray:
    """Scalar reassembly of the weak form, one quadrature point at a time."""
    corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
    g = 1.0 / np.sqrt(3.0)
    out = np.zeros(grid.num_nodes)
    weight = grid.dx * grid.dz / 4.0
    for element, nodes in enumerate(grid.connectivity()):
        ex = element % grid.num_x
        for xi, eta in [(-g, -g), (g, -g), (-g, g), (g, g)]:
            shape = np.array([(1.0 + xi * cx) * (1.0 + eta * cz) / 4.0
                              for cx, cz in corners])
            dshape_dx = np.array([cx * (1.0 + eta * cz) / 4.0
                                  for cx, cz in corners]) * 2.0 / grid.dx
            dshape_dz = np.array([(1.0 + xi * cx) * cz / 4.0
                                  for cx, cz in corners]) * 2.0 / grid.dz
            x_qp = (ex + (1.0 + xi) / 2.0) * grid.dx
            bound = material.at(np.array([x_qp]))
            psi_qp = float(shape @ psi_new[nodes])
            psi_old_qp = float(shape @ psi_old[nodes])
            theta_change = (bound.theta(np.array([psi_qp]))[0]
                            - bound.theta(np.array([psi_old_qp]))[0])
            cond = bound.hydraulic_conductivity(np.array([psi_qp]))[0]
            grad_x = float(dshape_dx @ psi_new[nodes])
            grad_z = float(dshape_dz @ psi_new[nodes])
            for local, node in enumerate(nodes):
                out[node] += weight * (
                    theta_change * shape[local]
                    + dt * cond * (grad_x * dshape_dx[local]
                                   + (grad_z + 1.0) * dshape_dz[local]))
    return out


class TestGrid:
    def test_indices_and_coords(self):
        grid = small_grid()
        assert grid.num_nodes == 12
        assert grid.node_index(2, 1) == 6
        x, z = grid.node_coords()
        assert_allclose(x[grid.node_index(2, 1)], 1.0, rtol=1e-15)
        assert_allclose(z[grid.node_index(2, 1)], 0.5, rtol=1e-15)
        assert list(grid.top_node_indices()) == [8, 9, 10, 11]

    def test_connectivity_counterclockwise(self):
        grid = Grid2D(length_x=1.0, length_z=1.0, num_x=2, num_z=2)
        # element 3 is the top right cell: BL, BR, TR, TL
        assert list(grid.connectivity()[3]) == [4, 5, 8, 7]

    def test_validation(self):
        with pytest.raises(ValueError):
            Grid2D(length_x=0.0, length_z=1.0, num_x=2, num_z=2)
        with pytest.raises(ValueError):
            Grid2D(length_x=1.0, length_z=1.0, num_x=0, num_z=2)


class TestDirichlet:
    def test_top_helper_broadcasts(self):
        data = top_dirichlet(small_grid(), 0.25)
        assert list(data.nodes) == [8, 9, 10, 11]
        assert_allclose(data.values, 0.25)

    def test_rejects_bad_data(self):
        with pytest.raises(ValueError):
            DirichletData(np.array([1, 1]), np.array([0.0, 0.0]))
        with pytest.raises(ValueError):
            DirichletData(np.array([1, 2]), np.array([0.0, np.nan]))
        with pytest.raises(ValueError):
            DirichletData(np.array([[1]]), np.array([[0.0]]))

    def test_merge(self):
        merged = DirichletData(np.array([0]), np.array([1.0])).merged_with(
            DirichletData(np.array([3]), np.array([2.0])))
        assert list(merged.nodes) == [0, 3]
        with pytest.raises(ValueError):
            merged.merged_with(DirichletData(np.array([0]), np.array([5.0])))


class TestResidual:
    def test_matches_scalar_oracle(self):
        grid = small_grid()
        rng = np.random.default_rng(17)
        psi_new = rng.uniform(-2.0, 0.5, grid.num_nodes)
        psi_old = rng.uniform(-2.0, 0.5, grid.num_nodes)
        work = RichardsWorkspace(grid, SILT)
        dt = 1.0e5
        got = work.residual(psi_new, psi_old, dt, dirichlet=None)
        want = residual_oracle(grid, SILT, psi_new, psi_old, dt)
        assert_allclose(got, want, rtol=1e-11,
                        atol=1e-14 * np.max(np.abs(want)))

    def test_oracle_with_blended_material(self):
        grid = small_grid()
        material = MaterialField.blended(
            SOIL_PRESETS["silt-loam"], SOIL_PRESETS["beit-netofa-clay"],
            center_x=0.75, steepness=4.0)
        rng = np.random.default_rng(18)
        psi_new = rng.uniform(-2.0, 0.2, grid.num_nodes)
        psi_old = rng.uniform(-2.0, 0.2, grid.num_nodes)
        work = RichardsWorkspace(grid, material)
        got = work.residual(psi_new, psi_old, 3.0e4, dirichlet=None)
        want = residual_oracle(grid, material, psi_new, psi_old, 3.0e4)
        assert_allclose(got, want, rtol=1e-11,
                        atol=1e-14 * np.max(np.abs(want)))

    def test_hydrostatic_field_is_stationary(self):
        """psi = C - z zeroes both the storage and the Darcy terms."""
        grid = Grid2D(length_x=2.0, length_z=2.0, num_x=4, num_z=5)
        _, z = grid.node_coords()
        psi = 0.5 - z
        work = RichardsWorkspace(grid, SILT)
        residual = work.residual(psi, psi, dt=1.0e6, dirichlet=None)
        assert np.max(np.abs(residual)) <= 1e-14

    def test_dirichlet_rows_replace_equations(self):
        grid = small_grid()
        psi = np.full(grid.num_nodes, -1.0)
        data = top_dirichlet(grid, -0.25)
        work = RichardsWorkspace(grid, SILT)
        residual = work.residual(psi, psi, 10.0, data)
        assert_allclose(residual[data.nodes], -0.75, rtol=1e-15)

    def test_mass_identity_without_constraints(self):
        """Sum of the unconstrained residual equals the storage change.

        Shape functions partition unity and their gradients sum to zero,
        so the Darcy part telescopes away for any field whatsoever.
        """
        grid = small_grid()
        rng = np.random.default_rng(19)
        work = RichardsWorkspace(grid, SILT)
        for _ in range(5):
            psi_new = rng.uniform(-3.0, 1.0, grid.num_nodes)
            psi_old = rng.uniform(-3.0, 1.0, grid.num_nodes)
            dt = 10.0 ** rng.uniform(0, 6)
            residual = work.residual(psi_new, psi_old, dt, dirichlet=None)
            change = work.water_volume(psi_new) - work.water_volume(psi_old)
            scale = np.sum(np.abs(residual)) + abs(change)
            assert abs(np.sum(residual) - change) <= 1e-13 * scale

    def test_rejects_nonfinite_state(self):
        grid = small_grid()
        work = RichardsWorkspace(grid, SILT)
        psi = np.full(grid.num_nodes, -1.0)
        bad = psi.copy()
        bad[4] = np.nan
        with pytest.raises(FloatingPointError):
            work.residual(bad, psi, 1.0, None)


class TestJacobian:
    def test_directional_finite_difference(self):
        grid = small_grid()
        rng = np.random.default_rng(23)
        # stay strictly unsaturated: the closures have a kink at psi = 0
        psi = rng.uniform(-3.0, -0.5, grid.num_nodes)
        psi_old = rng.uniform(-3.0, -0.5, grid.num_nodes)
        work = RichardsWorkspace(grid, SILT)
        dt = 1.0e5
        matrix = work.jacobian(psi, dt, dirichlet=None)
        for trial in range(3):
            direction = rng.normal(size=grid.num_nodes)
            direction /= np.max(np.abs(direction))
            h = 1e-6
            diff = (work.residual(psi + h * direction, psi_old, dt, None)
                    - work.residual(psi - h * direction, psi_old, dt, None)
                    ) / (2.0 * h)
            applied = matrix @ direction
            denom = np.max(np.abs(applied))
            assert np.max(np.abs(applied - diff)) <= 1e-5 * denom

    def test_saturated_jacobian_is_symmetric_stiffness(self):
        grid = small_grid()
        psi = np.full(grid.num_nodes, 2.0)
        work = RichardsWorkspace(grid, CLAY)
        dt = 50.0
        matrix = work.jacobian(psi, dt, dirichlet=None).toarray()
        assert np.max(np.abs(matrix - matrix.T)) <= 1e-12 * np.max(
            np.abs(matrix))
        # saturated capacity vanishes, so rows sum to zero as well
        assert np.max(np.abs(matrix.sum(axis=1))) <= 1e-12 * np.max(
            np.abs(matrix))

    def test_dirichlet_rows_become_identity(self):
        grid = small_grid()
        psi = np.full(grid.num_nodes, -0.5)
        data = top_dirichlet(grid, 0.1)
        work = RichardsWorkspace(grid, SILT)
        matrix = work.jacobian(psi, 1.0, data).toarray()
        for node in data.nodes:
            row = np.zeros(grid.num_nodes)
            row[node] = 1.0
            assert_allclose(matrix[node], row, atol=1e-15)


class TestNewtonStep:
    def test_saturated_linear_problem_needs_one_iteration(self):
        grid = small_grid()
        work = RichardsWorkspace(grid, CLAY)
        psi_old = np.full(grid.num_nodes, 2.0)
        values = 2.0 + 0.1 * np.linspace(-1.0, 1.0, grid.num_x + 1)
        psi, report = work.newton_step(psi_old, dt=36.0,
                                       dirichlet=top_dirichlet(grid, values))
        assert report.iterations == 1
        assert report.residual_norm <= 1e-12
        assert np.all(psi > 0.0)

    def test_hydrostatic_rest_is_converged_immediately(self):
        grid = Grid2D(length_x=1.0, length_z=2.0, num_x=2, num_z=4)
        _, z = grid.node_coords()
        psi_old = 0.5 - z
        data = top_dirichlet(grid, psi_old[grid.top_node_indices()])
        work = RichardsWorkspace(grid, SILT)
        psi, report = work.newton_step(psi_old, dt=1.0e4, dirichlet=data)
        assert report.iterations == 0
        assert_allclose(psi, psi_old, rtol=1e-15)

    def test_reports_failure_with_residual(self):
        grid = small_grid()
        work = RichardsWorkspace(grid, SILT)
        psi_old = np.full(grid.num_nodes, -10.0)
        with pytest.raises(NewtonError) as info:
            work.newton_step(psi_old, dt=1000.0,
                             dirichlet=top_dirichlet(grid, 0.5),
                             settings=NewtonSettings(max_iters=1, damping=0))
        assert info.value.iterations == 1
        assert info.value.residual_norm > 0.0

    def test_input_validation(self):
        grid = small_grid()
        work = RichardsWorkspace(grid, SILT)
        good = np.full(grid.num_nodes, -1.0)
        bad = good.copy()
        bad[0] = np.inf
        with pytest.raises(ValueError):
            work.newton_step(bad, 1.0, top_dirichlet(grid, 0.0))
        with pytest.raises(ValueError):
            work.newton_step(good, 0.0, top_dirichlet(grid, 0.0))


class TestDiagnostics:
    def test_interface_flux_single_element(self):
        grid = Grid2D(length_x=0.4, length_z=0.3, num_x=1, num_z=1)
        psi = np.array([0.0, 0.2, -0.3, -0.1])
        work = RichardsWorkspace(grid, SILT)
        psi_mid = 0.5 * (-0.1 + -0.3)
        psi_below = 0.5 * (0.0 + 0.2)
        cond = SILT.at(np.array([0.2])).hydraulic_conductivity(
            np.array([psi_mid]))[0]
        expected = -cond * ((psi_mid - psi_below) / 0.3 + 1.0) * 0.4
        assert_allclose(work.interface_flux(psi), [expected], rtol=1e-13)

    def test_saturated_hydrostatic_column_drains_at_ks(self):
        # psi = -z + top value > 0 gives unit head gradient... while
        # psi = const gives pure gravity drainage at K(psi_top)
        grid = Grid2D(length_x=1.0, length_z=1.0, num_x=2, num_z=2)
        psi = np.full(grid.num_nodes, 0.5)
        work = RichardsWorkspace(grid, CLAY)
        k_s = SOIL_PRESETS["beit-netofa-clay"].k_s
        assert_allclose(work.interface_flux(psi), -k_s * grid.dx, rtol=1e-13)

    def test_water_volume_saturated(self):
        grid = small_grid()
        work = RichardsWorkspace(grid, SILT)
        theta_s = SOIL_PRESETS["silt-loam"].theta_s
        assert_allclose(work.water_volume(np.full(grid.num_nodes, 1.0)),
                        theta_s * 1.5 * 1.0, rtol=1e-13)


class TestModuleWrappers:
    def test_state_and_array_forms_agree(self):
        grid = small_grid()
        rng = np.random.default_rng(29)
        psi_new = rng.uniform(-2.0, 0.0, grid.num_nodes)
        psi_old = rng.uniform(-2.0, 0.0, grid.num_nodes)
        from_arrays = assemble_residual(psi_new, psi_old, 100.0, grid, SILT,
                                        dirichlet=None)
        from_states = assemble_residual(SubsurfaceState(psi_new),
                                        SubsurfaceState(psi_old), 100.0,
                                        grid, SILT, dirichlet=None)
        assert np.array_equal(from_arrays, from_states)

    def test_wrapper_matches_workspace(self):
        grid = small_grid()
        psi = np.full(grid.num_nodes, -0.4)
        work = RichardsWorkspace(grid, SILT)
        assert_allclose(interface_flux(psi, grid, SILT),
                        work.interface_flux(psi), rtol=1e-15)

    def test_newton_wrapper_runs(self):
        grid = Grid2D(length_x=1.0, length_z=1.0, num_x=2, num_z=2)
        _, z = grid.node_coords()
        psi_old = 0.2 - z
        data = top_dirichlet(grid, psi_old[grid.top_node_indices()])
        state, report = newton_step_solve(psi_old, 100.0, grid, SILT,
                                          dirichlet=data)
        assert report.iterations == 0
        assert state.psi.shape == (grid.num_nodes,)
        assert state.time == 100.0

    def test_field_rows(self):
        grid = Grid2D(length_x=1.0, length_z=1.0, num_x=1, num_z=1)
        psi = np.array([-1.0, -1.0, -0.5, -0.5])
        rows = field_rows(SubsurfaceState(psi), grid, SILT)
        assert len(rows) == 4
        assert tuple(rows[0]) == FIELD_COLUMNS
        top = rows[3]
        bound = SILT.at(np.array([top["x"]]))
        assert_allclose(top["theta"],
                        bound.theta(np.array([top["psi"]]))[0], rtol=1e-14)
