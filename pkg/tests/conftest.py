"""Shared fixtures: small cantilever problems built directly from the library."""

from __future__ import annotations

import numpy as np
import pytest

from rbadjoint.hht import HHTParams, TimeGrid
from rbadjoint.material import MaterialParams
from rbadjoint.mesh import LoadCase, build_structured_mesh
from rbadjoint.objectives import Objective
from rbadjoint.problem import DynamicProblem


def cantilever(nx=8, ny=4, n_steps=20, kind="squared_target_displacement", total_time=0.05,
               alpha=0.05, material=None) -> DynamicProblem:
    """Clamped-left 4 m x 2 m plate with a half-sine tip pulse at mid-height."""
    mesh = build_structured_mesh(nx, ny, 4.0, 2.0, 0.01)
    mesh = mesh.with_fixed_dofs(mesh.dofs_on("left"))
    node = mesh.node_id(nx, ny // 2)
    target = int(mesh.full_to_free[2 * node + 1])
    load = LoadCase("point_transient", (node,), 1000.0, (0.0, -1.0), total_time)
    return DynamicProblem(mesh, material or MaterialParams(), load, Objective(kind, target),
                          TimeGrid.from_total(n_steps, total_time), HHTParams.from_alpha(alpha))


@pytest.fixture(scope="session")
def make_cantilever():
    return cantilever


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
