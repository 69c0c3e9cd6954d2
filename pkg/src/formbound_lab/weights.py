"""Polynomial decay weight rho(x) = (1 + kappa |x|^2)^(-theta) and weighted norms."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WeightParams:
    kappa: float
    theta: float
    d: int

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.theta <= self.d / 2.0:
            raise ValueError("theta must exceed d/2 for an integrable weight")


def rho(params, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r2 = np.sum(x * x, axis=1)
    return (1.0 + params.kappa * r2) ** (-params.theta)


def rho_on_grid(params, grid):
    r2 = grid.radii() ** 2
    return (1.0 + params.kappa * r2) ** (-params.theta)


def _pointwise_ratio(params, r):
    # |grad rho| / rho = 2 kappa theta r / (1 + kappa r^2)
    return 2.0 * params.kappa * params.theta * r / (1.0 + params.kappa * r * r)


@dataclass
class RatioBoundReport:
    bound: float
    maximizer_radius: float
    scan_max: float
    scan_argmax: float
    equality_gap: float
    holds: bool


def grad_rho_ratio_bound(params, scan_points=100_000, r_max=None):
    """The bound |grad rho| <= theta sqrt(kappa) rho, with a radial scan check.

    The pointwise ratio 2 kappa theta r / (1 + kappa r^2) attains its maximum
    theta sqrt(kappa) at r = 1/sqrt(kappa); the scan includes that radius
    exactly and verifies the bound within floating-point accuracy.
    """
    bound = params.theta * np.sqrt(params.kappa)
    r_star = 1.0 / np.sqrt(params.kappa)
    if r_max is None:
        r_max = 10.0 * r_star
    radii = np.linspace(0.0, r_max, scan_points)
    radii = np.append(radii, r_star)
    ratios = _pointwise_ratio(params, radii)
    idx = int(np.argmax(ratios))
    scan_max = float(ratios[idx])
    gap = abs(scan_max - bound)
    holds = scan_max <= bound * (1.0 + 1e-12) and gap <= 1e-10 * max(1.0, bound)
    return RatioBoundReport(float(bound), float(r_star), scan_max, float(radii[idx]),
                            float(gap), bool(holds))


def weighted_lp_norm(field_values, p, params, grid):
    """Midpoint quadrature of (integral |f|^p rho dx)^(1/p) on the grid."""
    if p < 1:
        raise ValueError("p must be >= 1")
    w = rho_on_grid(params, grid)
    total = np.sum(np.abs(field_values) ** p * w) * grid.cell_volume
    return float(total ** (1.0 / p))


def weighted_inner(f_values, g_values, params, grid):
    w = rho_on_grid(params, grid)
    return float(np.sum(f_values * g_values * w) * grid.cell_volume)


def weight_mass(params, grid):
    """<rho> on the grid (midpoint quadrature)."""
    return float(np.sum(rho_on_grid(params, grid)) * grid.cell_volume)
