"""Small numerical helpers: log-log fits, sphere quadrature, smoothstep."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FitError


@dataclass(frozen=True)
class PowerFit:
    """Result of a least-squares fit ``log y = slope * log x + intercept``."""

    slope: float
    intercept: float
    residuals: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residuals))) if self.residuals.size else 0.0


def loglog_fit(x, y, min_points: int = 2) -> PowerFit:
    """Fit a power law through positive data.

    Parameters
    ----------
    x, y : array_like
        Positive abscissae and ordinates.
    min_points : int
        Minimum number of points required.

    Returns
    -------
    PowerFit
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < max(min_points, 2):
        raise FitError(f"need at least {max(min_points, 2)} points, got {x.size}")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise FitError("log-log fit needs positive finite data")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    res = ly - (slope * lx + intercept)
    return PowerFit(float(slope), float(intercept), res)


def sphere_quadrature(n_theta: int = 24, n_phi: int | None = None):
    """Product rule on the unit sphere.

    Gauss-Legendre in ``cos(theta)`` times the trapezoidal rule in ``phi``;
    exact for spherical harmonics of degree < min(2 n_theta, n_phi).

    Returns
    -------
    normals : (N, 3) ndarray
        Unit vectors.
    weights : (N,) ndarray
        Weights summing to 4 pi.
    """
    if n_phi is None:
        n_phi = 2 * n_theta
    t, wt = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    st = np.sqrt(1.0 - t**2)
    normals = np.stack(
        [
            np.outer(st, np.cos(phi)).ravel(),
            np.outer(st, np.sin(phi)).ravel(),
            np.repeat(t, n_phi),
        ],
        axis=1,
    )
    weights = np.repeat(wt, n_phi) * (2.0 * np.pi / n_phi)
    return normals, weights


def smoothstep5(t):
    """Quintic smoothstep ``6t^5 - 15t^4 + 10t^3`` clamped to [0, 1], with derivative."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    s = t**3 * (10.0 - 15.0 * t + 6.0 * t**2)
    ds = 30.0 * t**2 * (1.0 - t) ** 2
    return s, ds


def levi_civita3() -> np.ndarray:
    """The 3-index permutation symbol."""
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1.0
    eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1.0
    return eps


def fibonacci_directions(n: int, rotation_seed: int = 0) -> np.ndarray:
    """Nearly uniform unit vectors (golden-spiral lattice), deterministically rotated."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z**2)
    phi = np.pi * (1.0 + 5**0.5) * i + 0.1 * rotation_seed
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
