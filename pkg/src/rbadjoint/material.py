"""Density-to-property interpolation.

Element densities ``b`` are mapped to a projected volume fraction through a
smoothed Heaviside, to a relative stiffness through RAMP, and both results are
floored with an Ersatz value so that void elements never produce a singular
system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class MaterialParams:
    E0: float = 200e9
    nu: float = 0.3
    rho0: float = 7800.0
    chi: float = 8.0
    eta: float = 0.5
    kappa: float = 8.0
    ersatz: float = 1e-4
    alpha_M: float = 10.0
    alpha_K: float = 1e-5

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        if self.chi <= 0.0:
            raise ValueError(f"chi must be positive, got {self.chi}")
        if not 0.0 < self.ersatz < 1e-2:
            raise ValueError(f"ersatz must lie in (0, 1e-2), got {self.ersatz}")
        if self.kappa < 0.0:
            raise ValueError(f"kappa must be non-negative, got {self.kappa}")
        if self.E0 <= 0.0 or self.rho0 <= 0.0:
            raise ValueError("E0 and rho0 must be positive")
        if not 0.0 <= self.nu < 0.5:
            raise ValueError(f"nu must lie in [0, 0.5), got {self.nu}")


def volume_projection(b, chi: float, eta: float):
    """Smoothed Heaviside threshold projection of the raw density."""
    b = np.asarray(b, dtype=float)
    den = np.tanh(chi * eta) + np.tanh(chi * (1.0 - eta))
    return (np.tanh(chi * eta) + np.tanh(chi * (b - eta))) / den


def volume_projection_derivative(b, chi: float, eta: float):
    b = np.asarray(b, dtype=float)
    den = np.tanh(chi * eta) + np.tanh(chi * (1.0 - eta))
    return chi * (1.0 - np.tanh(chi * (b - eta)) ** 2) / den


def stiffness_interp(V, kappa: float):
    """RAMP law ``V / (1 + kappa (1 - V))``."""
    V = np.asarray(V, dtype=float)
    return V / (1.0 + kappa * (1.0 - V))


def stiffness_interp_derivative(V, kappa: float):
    V = np.asarray(V, dtype=float)
    return (1.0 + kappa) / (1.0 + kappa * (1.0 - V)) ** 2


def ersatz_blend(x, ersatz: float):
    return ersatz + (1.0 - ersatz) * np.asarray(x, dtype=float)


def interpolate(b, params: MaterialParams):
    """Return the floored volume and stiffness factors ``(V_bar, E_bar)``."""
    V = volume_projection(b, params.chi, params.eta)
    E = stiffness_interp(V, params.kappa)
    return ersatz_blend(V, params.ersatz), ersatz_blend(E, params.ersatz)


def interp_derivatives(b, params: MaterialParams):
    """Analytic ``(dV_bar/db, dE_bar/db)`` through projection, RAMP and Ersatz floor."""
    V = volume_projection(b, params.chi, params.eta)
    dV = volume_projection_derivative(b, params.chi, params.eta)
    dE = stiffness_interp_derivative(V, params.kappa) * dV
    scale = 1.0 - params.ersatz
    return scale * dV, scale * dE


class DensityFilter:
    """Linear cone filter ``b_tilde = H b / sum(H)`` on element centroids.

    Disabled by default; when enabled the optimizer passes filtered densities
    to the physics and maps gradients back with :meth:`backward`.
    """

    def __init__(self, centroids: np.ndarray, radius: float):
        if radius <= 0.0:
            raise ValueError("filter radius must be positive")
        tree = cKDTree(centroids)
        pairs = tree.query_pairs(radius, output_type="ndarray")
        n = len(centroids)
        rows = np.concatenate([pairs[:, 0], pairs[:, 1], np.arange(n)])
        cols = np.concatenate([pairs[:, 1], pairs[:, 0], np.arange(n)])
        dist = np.linalg.norm(centroids[rows] - centroids[cols], axis=1)
        H = sp.csr_matrix((radius - dist, (rows, cols)), shape=(n, n))
        self.H = H
        self.Hs = np.asarray(H.sum(axis=1)).ravel()

    def forward(self, b: np.ndarray) -> np.ndarray:
        return self.H @ b / self.Hs

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return self.H.T @ (grad / self.Hs)
