"""Structured Q4 mesh, element matrices, assembly and load sampling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbadjoint.material import MaterialParams
from rbadjoint.mesh import (
    LoadCase,
    assemble,
    build_structured_mesh,
    element_mass,
    element_stiffness,
    evaluate_load,
    gather_elements,
)


def _reference_stiffness(E, nu, t, dx, dy, order=4):
    """Independent oracle: higher-order Gauss rule over physical-coordinate shape functions."""
    pts, wts = np.polynomial.legendre.leggauss(order)
    corners = np.array([[0, 0], [dx, 0], [dx, dy], [0, dy]], dtype=float)
    D = E / (1 - nu**2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
    ke = np.zeros((8, 8))
    for gx, wx in zip(pts, wts):
        for gy, wy in zip(pts, wts):
            x, y = (gx + 1) * dx / 2, (gy + 1) * dy / 2
            dNdx, dNdy = np.zeros(4), np.zeros(4)
            for k, (cx, cy) in enumerate(corners):
                sx = 1 if cx > 0 else -1
                sy = 1 if cy > 0 else -1
                fx = x / dx if sx > 0 else 1 - x / dx
                fy = y / dy if sy > 0 else 1 - y / dy
                dNdx[k] = sx / dx * fy
                dNdy[k] = sy / dy * fx
            B = np.zeros((3, 8))
            B[0, 0::2], B[1, 1::2] = dNdx, dNdy
            B[2, 0::2], B[2, 1::2] = dNdy, dNdx
            ke += B.T @ D @ B * wx * wy * dx * dy / 4 * t
    return ke


class TestMeshCounts:
    @pytest.mark.parametrize("nx,ny,nodes,elements", [(1, 1, 4, 1), (2, 1, 6, 2), (60, 30, 1891, 1800)])
    def test_counts(self, nx, ny, nodes, elements):
        mesh = build_structured_mesh(nx, ny, 4.0, 2.0, 0.01)
        assert mesh.n_nodes == nodes
        assert mesh.n_elements == elements

    @pytest.mark.parametrize("args", [(0, 1, 1.0, 1.0, 1.0), (1, 1, -1.0, 1.0, 1.0), (1, 1, 1.0, 1.0, 0.0)])
    def test_rejects_degenerate(self, args):
        with pytest.raises(ValueError):
            build_structured_mesh(*args)

    def test_row_major_numbering(self):
        mesh = build_structured_mesh(3, 2, 3.0, 2.0, 1.0)
        np.testing.assert_allclose(mesh.node_coords[mesh.node_id(2, 1)], [2.0, 1.0])
        np.testing.assert_array_equal(mesh.element_connectivity[0], [0, 1, 5, 4])

    def test_fixed_dofs_are_eliminated(self):
        mesh = build_structured_mesh(2, 1, 2.0, 1.0, 1.0)
        mesh = mesh.with_fixed_dofs(mesh.dofs_on("left"))
        assert mesh.n_free == 12 - 4
        assert np.all(mesh.full_to_free[mesh.dofs_on("left")] == mesh.n_free)


class TestElementMatrices:
    def test_stiffness_symmetric_with_rigid_modes(self):
        ke = element_stiffness(1.0, 0.3, 1.0, 1.0, 1.0)
        np.testing.assert_allclose(ke, ke.T, atol=1e-14)
        x = np.array([0, 1, 1, 0], float)
        y = np.array([0, 0, 1, 1], float)
        modes = [np.tile([1, 0], 4), np.tile([0, 1], 4), np.ravel(np.column_stack([-y, x]))]
        for u in modes:
            np.testing.assert_allclose(ke @ u, 0.0, atol=1e-12)
        eig = np.linalg.eigvalsh(ke)
        assert np.sum(np.abs(eig) < 1e-10 * eig.max()) == 3

    @pytest.mark.parametrize("dx,dy,nu", [(1.0, 1.0, 0.3), (0.5, 2.0, 0.0), (0.0667, 0.0667, 0.45)])
    def test_matches_higher_order_quadrature(self, dx, dy, nu):
        ke = element_stiffness(200e9, nu, 0.01, dx, dy)
        ref = _reference_stiffness(200e9, nu, 0.01, dx, dy)
        assert np.max(np.abs(ke - ref)) <= 1e-10 * np.max(np.abs(ref))

    def test_incompressible_rejected(self):
        with pytest.raises(ValueError):
            element_stiffness(1.0, 0.5, 1.0, 1.0, 1.0)

    def test_mass_total_and_positive_definite(self):
        me = element_mass(7800.0, 0.01, 0.5, 0.25)
        total = 7800.0 * 0.01 * 0.5 * 0.25
        assert me[0::2, 0::2].sum() == pytest.approx(total)
        assert me[1::2, 1::2].sum() == pytest.approx(total)
        assert np.linalg.eigvalsh(me).min() > 0


class TestAssembly:
    def test_void_design_scales_stiffness_by_floor(self):
        mesh = build_structured_mesh(3, 2, 3.0, 2.0, 0.1)
        mesh = mesh.with_fixed_dofs(mesh.dofs_on("left"))
        mat = MaterialParams()
        K0 = assemble(mesh, np.zeros(6), mat).K.toarray()
        K1 = assemble(mesh, np.ones(6), mat).K.toarray()
        np.testing.assert_allclose(K0, mat.ersatz * K1, rtol=1e-10, atol=1e-14 * np.abs(K0).max())

    def test_no_damping(self):
        mesh = build_structured_mesh(2, 2, 1.0, 1.0, 1.0).with_fixed_dofs([0, 1, 2])
        sysm = assemble(mesh, np.full(4, 0.7), MaterialParams(alpha_M=0.0, alpha_K=0.0))
        assert sysm.C.nnz == 0 or np.max(np.abs(sysm.C.data)) == 0.0

    def test_symmetric_positive_definite(self):
        mesh = build_structured_mesh(4, 2, 2.0, 1.0, 1.0)
        mesh = mesh.with_fixed_dofs(mesh.dofs_on("left"))
        sysm = assemble(mesh, np.linspace(0.1, 1, 8), MaterialParams())
        for A in (sysm.K, sysm.M):
            A = A.toarray()
            np.testing.assert_allclose(A, A.T, rtol=0, atol=1e-9 * np.abs(A).max())
            assert np.linalg.eigvalsh(A).min() > 0

    @pytest.mark.parametrize("n", [1, 2, 4, 8])
    def test_refinement_invariant_totals(self, n):
        mesh = build_structured_mesh(2 * n, n, 4.0, 2.0, 0.01)
        assert mesh.element_volumes.sum() == pytest.approx(0.08)
        sysm = assemble(mesh, np.ones(mesh.n_elements), MaterialParams())
        ux = np.tile([1.0, 0.0], mesh.n_nodes)
        assert ux @ (sysm.M @ ux) == pytest.approx(7800.0 * 0.08 * (1 - 1e-4) + 7800.0 * 0.08 * 1e-4)

    @settings(max_examples=10, deadline=None)
    @given(st.floats(0.1, 10.0))
    def test_stiffness_linear_in_modulus(self, scale):
        mesh = build_structured_mesh(2, 2, 1.0, 1.0, 1.0).with_fixed_dofs([0, 1, 6])
        b = np.array([0.2, 0.4, 0.6, 0.8])
        K1 = assemble(mesh, b, MaterialParams(E0=1e9)).K.toarray()
        Ks = assemble(mesh, b, MaterialParams(E0=scale * 1e9)).K.toarray()
        np.testing.assert_allclose(Ks, scale * K1, rtol=1e-12, atol=1e-6)

    def test_lumped_mass_added(self):
        mesh = build_structured_mesh(1, 1, 1.0, 1.0, 1.0).with_fixed_dofs([0, 1, 2, 3])
        b = np.ones(1)
        M0 = assemble(mesh, b, MaterialParams()).M.toarray()
        M1 = assemble(mesh, b, MaterialParams(), lumped_masses=((3, 50.0),)).M.toarray()
        diff = M1 - M0
        assert diff[2, 2] == pytest.approx(50.0) and diff[3, 3] == pytest.approx(50.0)
        assert np.abs(diff).sum() == pytest.approx(100.0)


class TestLoads:
    def test_half_sine_pulse(self):
        mesh = build_structured_mesh(2, 1, 2.0, 1.0, 1.0).with_fixed_dofs([0, 1])
        load = LoadCase("point_transient", (2,), 10.0, (0.0, -1.0), duration=1.0)
        sysm = assemble(mesh, np.ones(2), MaterialParams())
        hist = evaluate_load(load, mesh, sysm, [0.0, 0.5, 1.0, 1.5])
        col = mesh.full_to_free[5]
        np.testing.assert_allclose(hist.forces[:, col], [0.0, -10.0, 0.0, 0.0], atol=1e-12)
        assert not hist.design_dependent

    def test_rotating_load(self):
        mesh = build_structured_mesh(1, 1, 1.0, 1.0, 1.0)
        load = LoadCase("rotating_constant", (2,), 2.0, omega=np.pi)
        sysm = assemble(mesh, np.ones(1), MaterialParams())
        f = evaluate_load(load, mesh, sysm, [0.0, 0.5]).forces
        np.testing.assert_allclose(f[:, 4:6], [[2.0, 0.0], [0.0, 2.0]], atol=1e-12)

    def test_ground_acceleration_is_inertial(self):
        mesh = build_structured_mesh(2, 2, 1.0, 1.0, 1.0)
        mesh = mesh.with_fixed_dofs(mesh.dofs_on("bottom"))
        sysm = assemble(mesh, np.ones(4), MaterialParams())
        load = LoadCase("ground_acceleration", amplitude=5.0, direction=(1.0, 0.0), omega=2.5 * np.pi)
        hist = evaluate_load(load, mesh, sysm, [0.0, 0.2])
        assert hist.design_dependent
        np.testing.assert_allclose(hist.forces[1], -5.0 * np.sin(0.5 * np.pi) * (sysm.M @ hist.iota))

    @pytest.mark.parametrize("kw", [{"kind": "pressure"}, {"kind": "point_transient", "nodes": (1,)},
                                    {"kind": "rotating_constant", "nodes": (1,)}])
    def test_invalid_load(self, kw):
        with pytest.raises(ValueError):
            LoadCase(**kw)

    def test_gather_reads_constrained_as_zero(self):
        mesh = build_structured_mesh(1, 1, 1.0, 1.0, 1.0).with_fixed_dofs([0, 1])
        out = gather_elements(mesh, np.arange(1.0, 7.0))
        # connectivity is counter-clockwise: nodes 0, 1, 3, 2
        np.testing.assert_allclose(out[0], [0, 0, 1, 2, 5, 6, 3, 4])
