"""Discrete adjoint sensitivities for transient topology optimization with a reduced-basis adjoint."""

from .hht import HHTParams, TimeGrid, hht_solve
from .material import MaterialParams
from .mesh import LoadCase, build_structured_mesh
from .objectives import Objective
from .problem import DynamicProblem

__version__ = "0.1.0"

__all__ = [
    "DynamicProblem",
    "HHTParams",
    "LoadCase",
    "MaterialParams",
    "Objective",
    "TimeGrid",
    "build_structured_mesh",
    "hht_solve",
]
