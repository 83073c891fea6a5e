"""The glued triple: model harmonics, radial-gauge potentials, cutoffs and error sweeps.

Near a puncture with local offset ``x`` (``rho = |x|``) three Gibbons-Hawking
structures compete:

* the background ``h_eps = 1 + eps h`` of the torus,
* the model ``h_P = (1 + eps lam) + eps c/(2 rho) + eps ell.x``,
* the interior ``H = h_P + g(x/eps)`` of a rescaled ALF space, where ``g`` is a
  decaying harmonic function in the blown-up variable ``y = x/eps``.

Differences are written as ``d`` of 1-forms in the radial gauge: about the
puncture for the background (``delta_1 = h - c/(2 rho) - lam - ell.x`` is
smooth there) and from infinity for the interior profile.  A 2-form on the
base is stored as the vector field ``V`` with ``eta = sum V_i *dx_i``; the
2-form ``dx_i ^ beta + delta *dx_i`` is then ``e_i x beta + delta e_i``.

Triples are given in the chart coframe ``(-theta, dx)`` of some connection
(see :mod:`hkglue.triple_calculus`).  In the transition annulus the frame is
that of the model connection ``Theta_P`` and the coefficient rows are
``(eps e_i | h_P e_i + Z_i)`` with

``Z_i = chi (e_i x beta_P + g e_i) + (1 - chi) eps (e_i x beta_1 + delta_1 e_i)
+ chi' n x (a_P,i - a_gh,i)``.
"""
from __future__ import annotations

import functools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy import integrate

from .errors import (
    BoundViolatedError,
    ConfigError,
    DomainError,
    FitError,
    GeometryError,
    NotDefiniteError,
    UnsupportedRegionError,
)
from .lattice_harmonics import ChargeConfig, FlatTorus, HarmonicField, Puncture, generic_config, regular_part_direct
from .numerics import loglog_fit, smoothstep5, sphere_quadrature
from .triple_calculus import TwoFormTriple, gh_triple_sample, intersection_matrix

CUTOFF_CONSTANT = 15.0 / (8.0 * math.log(2.0))
DEFAULT_R0 = 16.0
GLUING_EXPONENT = 2.0 - 1.0 / 5.0
_EYE = np.eye(3)


# ---------------------------------------------------------------------------
# Cutoff and model harmonics
# ---------------------------------------------------------------------------


def transition_radii(epsilon: float) -> tuple[float, float]:
    r = epsilon ** 0.4
    return r, 2.0 * r


def cutoff(rho, epsilon: float):
    """Cutoff ``chi`` and ``d chi / d rho``.

    ``chi = 1 - S(log2(rho / eps^{2/5}))`` with the quintic smoothstep ``S``;
    so ``chi = 1`` for ``rho <= eps^{2/5}``, ``chi = 0`` for ``rho >= 2 eps^{2/5}``
    and ``|rho chi'| <= 15/(8 ln 2)``.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise DomainError("cutoff needs rho > 0")
    t = np.log2(rho / epsilon**0.4)
    s, ds = smoothstep5(t)
    return 1.0 - s, -ds / (rho * math.log(2.0))


@dataclass(frozen=True)
class ModelHarmonic:
    """``(1 + eps lam) + eps c/(2 rho) + eps ell.x`` in the local offset ``x``."""

    puncture: Puncture
    epsilon: float
    lam: float
    ell: np.ndarray
    charge: int

    @property
    def constant(self) -> float:
        return 1.0 + self.epsilon * self.lam

    def __call__(self, x, order: int = 1):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x, axis=1)
        e = self.epsilon
        h = self.constant + e * self.charge / (2.0 * r) + e * x @ self.ell
        if order == 0:
            return (h,)
        g = -0.5 * e * self.charge * x / r[:, None] ** 3 + e * self.ell
        return h, g


def model_harmonic(field: HarmonicField, puncture: int, epsilon: float, regular=None) -> ModelHarmonic:
    """Local model potential at a puncture (constant and linear term from the regular part).

    Raises
    ------
    DomainError
        If ``1 + eps lam`` leaves the window ``(1/2, 3/2)``.
    """
    p = field.config.punctures[puncture]
    if regular is None:
        lam, ell = regular_part_direct(field, puncture) if not field.trivial else (0.0, np.zeros(3))
    else:
        lam, ell = regular
    ell = np.zeros(3) if p.kind == "dihedral" else np.asarray(ell, dtype=float)
    c0 = 1.0 + epsilon * lam
    if not 0.5 < c0 < 1.5:
        raise DomainError(f"1 + eps*lambda = {c0:.4f} at {p.name} is outside (1/2, 3/2); decrease eps")
    return ModelHarmonic(p, float(epsilon), float(lam), ell, p.charge)


# ---------------------------------------------------------------------------
# Interior profiles in the blown-up variable y = x / eps
# ---------------------------------------------------------------------------

_POLE_AXIS = np.array([0.36, -0.48, 0.8])  # unit normal of the pole polygon
_QUAD_AXIS = np.array([2.0, 3.0, 6.0]) / 7.0  # axis of the synthetic quadrupole


def _polygon(k: int, axis) -> np.ndarray:
    axis = np.asarray(axis, float) / np.linalg.norm(axis)
    u = np.cross(axis, [1.0, 0.0, 0.0])
    u /= np.linalg.norm(u)
    w = np.cross(axis, u)
    ang = 2.0 * np.pi * np.arange(k) / k
    return np.cos(ang)[:, None] * u + np.sin(ang)[:, None] * w


@dataclass(frozen=True)
class InteriorProfile:
    """Decaying harmonic ``g(y)`` with ``H = h_P + g(x/eps)`` inside a puncture.

    kind is ``"multi_tn"`` (unit-weight poles, barycentre at 0) or
    ``"synthetic"`` (the quadrupole ``kappa |y|^-3 (3 (n.e)^2 - 1)``).
    """

    kind: str
    poles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    kappa: float = 0.0

    @property
    def trivial(self) -> bool:
        return self.kind == "multi_tn" and len(self.poles) <= 1

    def __call__(self, y, order: int = 1):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        r = np.linalg.norm(y, axis=1)
        if self.kind == "multi_tn":
            k = len(self.poles)
            d = y[:, None, :] - self.poles[None]
            s = np.linalg.norm(d, axis=2)
            g = (0.5 / s).sum(axis=1) - 0.5 * k / r
            if order == 0:
                return (g,)
            grad = -0.5 * (d / s[..., None] ** 3).sum(axis=1) + 0.5 * k * y / r[:, None] ** 3
            return g, grad
        e = _QUAD_AXIS
        ye = y @ e
        g = self.kappa * (3.0 * ye**2 / r**5 - 1.0 / r**3)
        if order == 0:
            return (g,)
        grad = self.kappa * (
            6.0 * ye[:, None] * e / r[:, None] ** 5
            - 15.0 * (ye**2)[:, None] * y / r[:, None] ** 7
            + 3.0 * y / r[:, None] ** 5
        )
        return g, grad


def multi_tn_profile(k: int, sign: int = 1) -> InteriorProfile:
    """``k`` unit poles: at the origin for ``k = 1``, else a unit regular polygon (mirrored for ``sign = -1``)."""
    if k < 1:
        raise ConfigError("cyclic weight must be >= 1")
    poles = np.zeros((1, 3)) if k == 1 else sign * _polygon(k, _POLE_AXIS)
    return InteriorProfile("multi_tn", poles)


@functools.lru_cache(maxsize=1)
def _synthetic_normalisation() -> float:
    """``1 / max |a|`` on the unit sphere for the unit-amplitude quadrupole."""
    prof = InteriorProfile("synthetic", kappa=1.0)
    normals, _ = sphere_quadrature(24)
    rays = RayProfile.infinity(normals, lambda y: prof(y, 1), v_max=1.0, degree=16)
    a = rays.potential(np.array([1.0]))
    return float(1.0 / np.max(np.linalg.norm(a, axis=-1)))


def synthetic_profile() -> InteriorProfile:
    """Tau-even harmonic quadrupole scaled so that ``|a_syn| rho^2 / eps^3 <= 1``.

    A non-physical stand-in for the exterior of a dihedral ALF space.
    """
    return InteriorProfile("synthetic", kappa=_synthetic_normalisation())


# ---------------------------------------------------------------------------
# Radial-gauge integration along rays
# ---------------------------------------------------------------------------


def _cheb_fit(t, values, degree):
    V = C.chebvander(t, degree)
    shape = values.shape
    flat = np.moveaxis(values, 1, 0).reshape(len(t), -1)
    coef = np.linalg.solve(V, flat) if V.shape[0] == V.shape[1] else np.linalg.lstsq(V, flat, rcond=None)[0]
    return coef.reshape((degree + 1, shape[0]) + shape[2:])


def _cheb_eval(coef, t):
    """Evaluate series of shape (deg+1, R, ...) at t (M,) -> (R, ..., M)."""
    return C.chebval(t, coef, tensor=True)


class RayProfile:
    """Chebyshev representation of a scalar profile and its radial-gauge potentials along rays.

    Use :meth:`center` for profiles smooth at the origin (integration from 0)
    and :meth:`infinity` for decaying profiles (integration from infinity in
    ``v = 1/rho``).  Given ``delta`` with vector field ``V = grad(delta)``:

    * ``beta`` solves ``curl beta = grad delta``,
    * ``a_i`` solves ``curl a_i = e_i x beta + delta e_i``,

    both with ``x . beta = x . a_i = 0``.
    """

    def __init__(self, directions, mode, coef_delta, coef_I, coef_J, lo, hi):
        self.directions = directions
        self.mode = mode
        self._cd, self._cI, self._cJ = coef_delta, coef_I, coef_J
        self._lo, self._hi = lo, hi

    @staticmethod
    def _nodes(degree, lo, hi):
        t = C.chebpts1(degree + 1)
        return t, lo + (hi - lo) * (t + 1.0) / 2.0

    def _t(self, s):
        return 2.0 * (np.asarray(s, float) - self._lo) / (self._hi - self._lo) - 1.0

    @classmethod
    def center(cls, directions, profile: Callable, r_max: float, degree: int = 24) -> "RayProfile":
        """``profile(points) -> (delta, grad delta)`` smooth on the ball of radius ``r_max``."""
        n = np.atleast_2d(np.asarray(directions, float))
        t, u = cls._nodes(degree, 0.0, r_max)
        pts = u[None, :, None] * n[:, None, :]
        d, g = profile(pts.reshape(-1, 3))
        d = d.reshape(len(n), len(u))
        g = g.reshape(len(n), len(u), 3)
        f1 = u[None, :, None] * np.cross(g, n[:, None, :])
        scl = r_max / 2.0
        cd = _cheb_fit(t, d, degree)
        cI = C.chebint(_cheb_fit(t, f1, degree), lbnd=-1, scl=scl)
        I_nodes = np.moveaxis(_cheb_eval(cI, t), -1, 1)  # (R, N, 3)
        en = np.cross(_EYE[None, :, :], n[:, None, :])  # (R, 3, 3): e_i x n
        f2 = n[:, None, :, None] * I_nodes[:, :, None, :] + (u[None, :] * d)[:, :, None, None] * en[:, None]
        cJ = C.chebint(_cheb_fit(t, f2, degree), lbnd=-1, scl=scl)
        return cls(n, "center", cd, cI, cJ, 0.0, r_max)

    @classmethod
    def infinity(cls, directions, profile: Callable, v_max: float, degree: int = 24) -> "RayProfile":
        """Decaying profile (``grad delta = O(rho^-4)``) on ``rho >= 1/v_max``."""
        n = np.atleast_2d(np.asarray(directions, float))
        t, v = cls._nodes(degree, 0.0, v_max)
        pts = (1.0 / v)[None, :, None] * n[:, None, :]
        d, g = profile(pts.reshape(-1, 3))
        d = d.reshape(len(n), len(v))
        g = g.reshape(len(n), len(v), 3)
        F1 = v[None, :, None] ** -3 * np.cross(g, n[:, None, :])
        scl = v_max / 2.0
        cd = _cheb_fit(t, d, degree)
        cI = C.chebint(_cheb_fit(t, F1, degree), lbnd=-1, scl=scl)
        I_nodes = np.moveaxis(_cheb_eval(cI, t), -1, 1)
        en = np.cross(_EYE[None, :, :], n[:, None, :])
        F2 = (
            -n[:, None, :, None] * (I_nodes / v[None, :, None] ** 2)[:, :, None, :]
            + (d / v[None, :] ** 3)[:, :, None, None] * en[:, None]
        )
        cJ = C.chebint(_cheb_fit(t, F2, degree), lbnd=-1, scl=scl)
        return cls(n, "infinity", cd, cI, cJ, 0.0, v_max)

    def _arg(self, rho):
        rho = np.asarray(rho, float)
        return rho if self.mode == "center" else 1.0 / rho

    def delta(self, rho) -> np.ndarray:
        """Profile values, shape (R, M)."""
        return _cheb_eval(self._cd, self._t(self._arg(rho)))

    def beta(self, rho) -> np.ndarray:
        """Connection difference ``beta``, shape (R, M, 3)."""
        rho = np.asarray(rho, float)
        s = self._arg(rho)
        I = np.moveaxis(_cheb_eval(self._cI, self._t(s)), -1, 1)
        if self.mode == "center":
            return I / rho[None, :, None]
        return -I / rho[None, :, None]

    def potential(self, rho) -> np.ndarray:
        """Potentials ``a_i``, shape (R, M, 3 (i), 3 (component))."""
        rho = np.asarray(rho, float)
        J = np.moveaxis(_cheb_eval(self._cJ, self._t(self._arg(rho))), -1, 1)
        sign = 1.0 if self.mode == "center" else -1.0
        return sign * J / rho[None, :, None, None]


@dataclass(frozen=True)
class RadialGaugePotential:
    """Primitive ``a`` of a closed 2-form ``V`` (vector form) in the radial gauge about ``center``.

    ``mode="infinity"``: ``a(x) = -(1/r) int_r^inf u V(c + u n) x n du`` with the
    tail beyond ``rho_max`` modelled as ``V(rho_max) rho_max^2 / (p - 2)`` for
    decay order ``p``.  ``mode="center"``: ``a(x) = (1/r) int_0^r u V x n du``.
    """

    field: Callable
    center: np.ndarray
    mode: str
    rho_max: float
    tail_order: float
    rtol: float = 1e-11

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        for k, p in enumerate(x):
            v = p - self.center
            r = float(np.linalg.norm(v))
            if r == 0:
                out[k] = 0.0
                continue
            n = v / r

            def f(u):
                return u * np.cross(self.field((self.center + u * n)[None])[0], n)

            if self.mode == "center":
                vec = integrate.quad_vec(f, 0.0, r, epsabs=0.0, epsrel=self.rtol, limit=200)[0]
            else:
                vec = np.zeros(3)
                if r < self.rho_max:
                    vec = integrate.quad_vec(f, r, self.rho_max, epsabs=0.0, epsrel=self.rtol, limit=200)[0]
                top = max(r, self.rho_max)
                vec = -(vec + f(top) * top / (self.tail_order - 2.0))
            out[k] = vec / r
        return out


def radial_potential(
    field: Callable,
    center=None,
    mode: str = "infinity",
    rho_start: float = 1.0,
    rho_max: float = 1e4,
    tail_order: float | None = None,
    n_probe: int = 6,
) -> RadialGaugePotential:
    """Radial-gauge primitive of a closed 2-form given as a divergence-free vector field.

    Parameters
    ----------
    field : callable
        ``field(points (N, 3)) -> (N, 3)``.
    center : 3-vector, optional
        Origin of the rays (default 0).
    mode : {"infinity", "center"}
    rho_start : float
        Inner radius of the domain (used for the decay probe).
    rho_max : float
        Upper quadrature limit; beyond it the leading power-law tail is used.
    tail_order : float, optional
        Decay order ``p`` of ``|V| ~ rho^-p``; estimated on probe rays if omitted.

    Raises
    ------
    BoundViolatedError
        In ``infinity`` mode if the fitted decay slope exceeds ``-2`` (the
        integral defining ``a`` diverges).
    """
    c = np.zeros(3) if center is None else np.asarray(center, dtype=float)
    if mode not in ("infinity", "center"):
        raise ConfigError(f"unknown mode {mode!r}")
    if mode == "infinity":
        dirs = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1], [-1, 2, 0.5], [0.3, -1, 2]], float)[:n_probe]
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        rho = np.geomspace(max(rho_start, 1e-300) * 4.0, rho_max, 8)
        pts = c + rho[None, :, None] * dirs[:, None, :]
        mag = np.linalg.norm(field(pts.reshape(-1, 3)), axis=1).reshape(len(dirs), len(rho))
        if np.all(mag == 0):
            p = 3.0 if tail_order is None else tail_order
        else:
            keep = np.all(mag > 0, axis=1)
            slope = np.mean([loglog_fit(rho, row).slope for row in mag[keep]])
            if slope > -2.0:
                raise BoundViolatedError(f"field decays like rho^{slope:.2f}; need faster than rho^-2")
            p = -slope if tail_order is None else tail_order
        return RadialGaugePotential(field, c, mode, rho_max, float(p))
    return RadialGaugePotential(field, c, mode, rho_max, 0.0)


def curl_fd(fun: Callable, x, step: float) -> np.ndarray:
    """Central-difference curl of a (N,3)->(N,3[,...]) field at one point; trailing axes are kept."""
    x = np.asarray(x, float)
    J = []
    for k in range(3):
        e = step * _EYE[k]
        J.append((np.asarray(fun((x + e)[None]))[0] - np.asarray(fun((x - e)[None]))[0]) / (2.0 * step))
    J = np.array(J)  # J[k, ..., i] = d_k a_i
    return np.stack([J[1, ..., 2] - J[2, ..., 1], J[2, ..., 0] - J[0, ..., 2], J[0, ..., 1] - J[1, ..., 0]], axis=-1)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

REGIONS = ("background", "dihedral_interior", "dihedral_transition", "cyclic_interior", "cyclic_transition")


@dataclass(frozen=True)
class RegionInfo:
    region: str
    puncture: int
    name: str
    rho: float
    offset: np.ndarray


@dataclass(frozen=True)
class TransitionSample:
    point: np.ndarray
    region: str
    puncture: str
    rho: float
    triple: TwoFormTriple
    Q: np.ndarray
    error: float
    frame: str


def _frobenius_error(Qn: np.ndarray) -> np.ndarray:
    return np.linalg.norm(Qn - _EYE, axis=(-2, -1))


def _normalised_Q(B: np.ndarray, hP: np.ndarray):
    """``Q`` (normalised to det 1) of rows ``(eps e_i | B_i)``; also min eigenvalue of the raw Q."""
    S = 0.5 * (B + np.swapaxes(B, -1, -2)) / hP[..., None, None]
    ev = np.linalg.eigvalsh(S)
    det = np.prod(ev, axis=-1)
    with np.errstate(invalid="ignore"):
        Qn = S / np.cbrt(det)[..., None, None]
    return Qn, ev.min(axis=-1)


class GluedTriple:
    """The approximate hyperkaehler triple for a configuration and one ``eps``.

    Parameters
    ----------
    config : ChargeConfig
    epsilon : float
    R0 : float
        Core radius (in units of ``eps``) of the ALF pieces; ``eps R0 <= rho0/8`` is enforced.
    synthetic_dihedral : bool
        Allow evaluation inside ``rho < eps R0`` of dihedral punctures using the
        synthetic exterior profile (non-physical).
    field : HarmonicField, optional
        Reuse an existing evaluator.
    degree : int
        Chebyshev degree of the ray representations.
    """

    def __init__(
        self,
        config: ChargeConfig,
        epsilon: float,
        R0: float = DEFAULT_R0,
        synthetic_dihedral: bool = False,
        field: HarmonicField | None = None,
        degree: int = 24,
        regular: dict | None = None,
    ):
        check_admissible(config, epsilon, R0)
        self.config = config
        self.epsilon = float(epsilon)
        self.R0 = float(R0)
        self.synthetic_dihedral = synthetic_dihedral
        self.field = (field or HarmonicField(config)).with_epsilon(epsilon)
        self.degree = degree
        regular = regular or {}
        self.models = tuple(
            model_harmonic(self.field, p.index, epsilon, regular.get(p.index)) for p in config.punctures
        )
        syn = synthetic_profile()
        self.profiles = tuple(
            syn if p.kind == "dihedral" else multi_tn_profile(p.weight, p.sign) for p in config.punctures
        )

    # -- regions ------------------------------------------------------------
    def region(self, x) -> RegionInfo:
        x = np.asarray(x, dtype=float).reshape(3)
        idx, d = self.config.nearest_puncture(x)
        i = int(idx[0])
        p = self.config.punctures[i]
        off = np.asarray(self.config.torus.minimal_image(x - p.position), float).reshape(3)
        rho = float(np.linalg.norm(off))
        r1, r2 = transition_radii(self.epsilon)
        if rho > r2:
            name = "background"
        elif rho >= r1:
            name = f"{p.kind}_transition"
        else:
            name = f"{p.kind}_interior"
        return RegionInfo(name, i, p.name, rho, off)

    def _delta1(self, i: int) -> Callable:
        p = self.config.punctures[i]
        lam, ell = self.models[i].lam, self.models[i].ell

        def prof(pts):
            if self.field.trivial:
                return np.zeros(len(pts)), np.zeros((len(pts), 3))
            v, g = self.field.regular(p.position + pts, i, order=1)
            return v - lam - pts @ ell, g - ell

        return prof

    def _interior_prof(self, i: int) -> Callable:
        prof = self.profiles[i]
        return lambda y: prof(y, 1)

    def rays(self, i: int, directions, r_max: float, v_max: float):
        """Center-mode rays for the background and infinity-mode rays for the interior profile."""
        bg = RayProfile.center(directions, self._delta1(i), r_max, self.degree)
        inner = None
        if not self.profiles[i].trivial:
            inner = RayProfile.infinity(directions, self._interior_prof(i), v_max, self.degree)
        return bg, inner

    # -- pointwise assembly -------------------------------------------------
    def transition_rows(self, i: int, bg: RayProfile, inner: RayProfile | None, rho, epsilon=None):
        """Coefficient block ``B`` (R, M, 3, 3) and ``h_P`` (R, M) in the model frame."""
        e = self.epsilon if epsilon is None else float(epsilon)
        mh = self.models[i]
        n = bg.directions
        rho = np.asarray(rho, float)
        x = rho[None, :, None] * n[:, None, :]
        lam_c = 1.0 + e * mh.lam
        hP = lam_c + e * mh.charge / (2.0 * rho)[None, :] + e * (x @ mh.ell)
        chi, dchi = cutoff(rho, e)
        d1 = bg.delta(rho)
        b1 = bg.beta(rho)
        a1 = bg.potential(rho)
        Z = (1.0 - chi)[None, :, None, None] * e * (
            np.cross(_EYE[None, None], b1[:, :, None, :]) + d1[..., None, None] * _EYE
        )
        da = -e * a1
        if inner is not None:
            y = rho / e
            g = inner.delta(y)
            bg_ = inner.beta(y)
            ag = inner.potential(y)
            Z = Z + chi[None, :, None, None] * (np.cross(_EYE[None, None], bg_[:, :, None, :]) + g[..., None, None] * _EYE)
            da = da + e * ag
        Z = Z + dchi[None, :, None, None] * np.cross(n[:, None, None, :], da)
        B = hP[..., None, None] * _EYE + Z
        return B, hP

    def sample(self, x, frame: str = "native") -> TransitionSample:
        """Assembled triple at a torus point.

        ``frame="native"`` uses each region's own Gibbons-Hawking connection;
        ``frame="model"`` expresses every region near a puncture in the frame of
        the model connection (continuous across region boundaries).
        """
        info = self.region(x)
        e = self.epsilon
        i = info.puncture
        x = np.asarray(x, float).reshape(3)
        r1, r2 = transition_radii(e)
        rho = info.rho
        transition = info.region.endswith("transition")
        if transition or (frame == "model" and rho < self.config.rho0):
            n = (info.offset / rho)[None]
            bg, inner = self.rays(i, n, max(rho, r2), e / min(rho, r1))
            r = np.array([rho])
            hP = float(self.models[i](info.offset[None], 0)[0][0])
            if transition:
                B = self.transition_rows(i, bg, inner, r)[0][0, 0]
            elif info.region == "background":
                B = float(self.field.h_eps(x)) * _EYE + e * np.cross(_EYE, bg.beta(r)[0, 0])
            else:
                B = self._interior_potential(i, info) * _EYE
                if inner is not None:
                    B = B + np.cross(_EYE, inner.beta(r / e)[0, 0])
            if np.any(np.linalg.eigvalsh(0.5 * (B + B.T)) <= 0):
                raise NotDefiniteError(f"assembled triple is not definite at {x}")
            triple = TwoFormTriple(np.hstack([e * _EYE, B]), e * hP)
            fr = "model"
        else:
            if info.region == "background":
                h = float(self.field.h_eps(x))
            else:
                h = self._interior_potential(i, info)
            triple = gh_triple_sample(h, e)
            fr = "native"
        data = intersection_matrix(triple)
        err = float(_frobenius_error(data.Q_normalized))
        return TransitionSample(x, info.region, info.name, rho, triple, data.Q_normalized, err, fr)

    def _interior_potential(self, i: int, info: RegionInfo) -> float:
        e = self.epsilon
        p = self.config.punctures[i]
        if p.kind == "dihedral" and info.rho < e * self.R0 and not self.synthetic_dihedral:
            raise UnsupportedRegionError(
                f"point at rho = {info.rho:.3e} < eps R0 inside {p.name}: no dihedral interior model configured"
            )
        hP = float(self.models[i](info.offset[None], 0)[0][0])
        g = float(self.profiles[i](info.offset[None] / e, 0)[0][0])
        H = hP + g
        if H <= 0:
            raise DomainError(f"interior potential is not positive at rho = {info.rho:.3e} ({p.name})")
        return H

    def correction(self, i: int, offsets) -> tuple[np.ndarray, np.ndarray]:
        """Interpolated potential ``chi a_P + (1 - chi) a_gh`` and the expected curl ``Z``.

        Returns arrays of shape (N, 3, 3) (row ``i`` is the 1-form for ``omega_i``).
        """
        offsets = np.atleast_2d(np.asarray(offsets, float))
        e = self.epsilon
        pots, Zs = [], []
        for v in offsets:
            rho = float(np.linalg.norm(v))
            n = (v / rho)[None]
            bg, inner = self.rays(i, n, rho, e / rho)
            a = (1.0 - cutoff(rho, e)[0]) * e * bg.potential(np.array([rho]))[0, 0]
            if inner is not None:
                a = a + cutoff(rho, e)[0] * e * inner.potential(np.array([rho / e]))[0, 0]
            B, hP = self.transition_rows(i, bg, inner, np.array([rho]))
            pots.append(a)
            Zs.append(B[0, 0] - hP[0, 0] * _EYE)
        return np.array(pots), np.array(Zs)


def check_admissible(config: ChargeConfig, epsilon: float, R0: float = DEFAULT_R0):
    """Require ``eps R0 <= rho0 / 8`` and ``eps^{2/5} <= rho0``."""
    if not epsilon > 0:
        raise ConfigError("epsilon must be positive")
    rho0 = config.rho0
    if epsilon * R0 > rho0 / 8.0 * (1.0 + 1e-12):
        raise ConfigError(f"eps*R0 = {epsilon * R0:.4g} exceeds rho0/8 = {rho0 / 8:.4g}")
    if epsilon**0.4 > rho0 * (1.0 + 1e-12):
        raise ConfigError(f"transition radius eps^(2/5) = {epsilon ** 0.4:.4g} exceeds rho0 = {rho0:.4g}")


def assemble_triple(config: ChargeConfig, epsilon: float, point, **kwargs) -> TwoFormTriple:
    """Value of the glued triple at a point (see :class:`GluedTriple`)."""
    return GluedTriple(config, epsilon, **kwargs).sample(point).triple


# ---------------------------------------------------------------------------
# Transition error and sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransitionError:
    epsilon: float
    sup_error: float
    argmax_puncture: str
    argmax_rho: float
    argmax_direction: np.ndarray
    per_puncture: tuple  # ((name, sup, rho_at_sup), ...)


def _annulus_radii(epsilon, n_rho):
    r1, r2 = transition_radii(epsilon)
    return np.linspace(r1, r2, n_rho)


def _puncture_errors(gl: GluedTriple, i: int, directions, eps_list, n_rho: int):
    e_max = max(eps_list)
    r_max = 2.0 * e_max**0.4
    v_max = max(e / e**0.4 for e in eps_list)
    bg, inner = gl.rays(i, directions, r_max, v_max)
    out = []
    for e in eps_list:
        rho = _annulus_radii(e, n_rho)
        B, hP = gl.transition_rows(i, bg, inner, rho, epsilon=e)
        if np.any(hP <= 0):
            raise NotDefiniteError(f"model potential not positive in the annulus of {gl.config.punctures[i].name}")
        Qn, emin = _normalised_Q(B, hP)
        if np.any(emin <= 0):
            r, m = np.unravel_index(np.argmin(emin), emin.shape)
            pt = gl.config.punctures[i].position + rho[m] * directions[r]
            raise NotDefiniteError(f"glued triple not definite at {pt} (eps = {e})")
        err = _frobenius_error(Qn)
        r, m = np.unravel_index(np.argmax(err), err.shape)
        out.append((float(err[r, m]), float(rho[m]), directions[r]))
    return out


def transition_errors(
    config: ChargeConfig,
    eps_list: Sequence[float],
    n_rho: int = 32,
    n_theta: int = 32,
    n_phi: int | None = None,
    R0: float = DEFAULT_R0,
    field: HarmonicField | None = None,
    workers: int = 1,
    degree: int = 24,
    regular: dict | None = None,
) -> list[TransitionError]:
    """``sup |Q_eps - id|`` (Frobenius, normalised ``Q``) over every transition annulus.

    Each annulus is sampled on ``n_rho`` radii times a ``n_theta x n_phi`` product
    grid of directions.  Ray potentials are built once per puncture and reused
    for every ``eps``.  Parallelism is over punctures with ordered reduction.
    """
    eps_list = [float(e) for e in eps_list]
    for e in eps_list:
        check_admissible(config, e, R0)
    field = field or HarmonicField(config)
    gl = GluedTriple(config, max(eps_list), R0, field=field, degree=degree, regular=regular)
    dirs, _ = sphere_quadrature(n_theta, n_phi or n_theta)
    idx = range(len(config.punctures))

    def job(i):
        return _puncture_errors(gl, i, dirs, eps_list, n_rho)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            per = list(ex.map(job, idx))
    else:
        per = [job(i) for i in idx]
    results = []
    for k, e in enumerate(eps_list):
        rows = tuple((config.punctures[i].name, per[i][k][0], per[i][k][1]) for i in idx)
        j = int(np.argmax([r[1] for r in rows]))
        results.append(TransitionError(e, rows[j][1], rows[j][0], rows[j][2], per[j][k][2], rows))
    return results


def transition_error(config: ChargeConfig, epsilon: float, **kwargs) -> TransitionError:
    """Supremum of ``|Q_eps - id|`` over all transition annuli at one ``eps``."""
    return transition_errors(config, [epsilon], **kwargs)[0]


@dataclass(frozen=True)
class SweepResult:
    slope: float
    intercept: float
    residuals: np.ndarray
    errors: tuple  # TransitionError per eps

    def rows(self):
        """CSV rows ``(epsilon, puncture, rho, sup_error, slope)``."""
        out = []
        for te in self.errors:
            for name, sup, rho in te.per_puncture:
                out.append((te.epsilon, name, rho, sup, self.slope))
        return out


def sweep_config() -> ChargeConfig:
    """The generic configuration on a cubic torus of side 32.

    The unit cube has ``rho0 = 1/8`` which cannot hold the annuli of the sweep
    range together with ``eps R0 <= rho0/8``; side 32 gives ``rho0 = 4``.
    """
    return generic_config(FlatTorus.cubic(32.0))


def error_sweep(config: ChargeConfig, eps_list: Sequence[float], min_points: int = 4, **kwargs) -> SweepResult:
    """Fit ``log sup |Q_eps - id|`` against ``log eps``; the expected slope is 9/5."""
    eps_list = sorted({float(e) for e in eps_list}, reverse=True)
    if len(eps_list) < min_points:
        raise FitError(f"error sweep needs at least {min_points} distinct eps values, got {len(eps_list)}")
    errs = transition_errors(config, eps_list, **kwargs)
    sup = np.array([t.sup_error for t in errs])
    fit = loglog_fit(np.array(eps_list), sup, min_points=min_points)
    return SweepResult(fit.slope, fit.intercept, fit.residuals, tuple(errs))


# ---------------------------------------------------------------------------
# Weight function and weighted norms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightFunction:
    """Piecewise weight: ``eps`` near punctures, ``rho`` on the neck, ``1`` far away.

    Interpolation is log-linear with the quintic smoothstep on
    ``[R0 eps, 2 R0 eps]`` and ``[rho0, 2 rho0]``; monotone when ``R0 >= 1`` and
    ``2 rho0 <= 1``.
    """

    epsilon: float
    R0: float = DEFAULT_R0
    rho0: float = 0.125

    def __post_init__(self):
        if self.R0 < 1 or 2 * self.rho0 > 1:
            raise ConfigError("weight function needs R0 >= 1 and 2 rho0 <= 1")
        if 2 * self.R0 * self.epsilon > self.rho0:
            raise ConfigError("weight function needs 2 R0 eps <= rho0")

    def __call__(self, rho) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        e = self.epsilon
        lr = np.log(np.maximum(rho, 1e-300))
        s1, _ = smoothstep5(np.log2(np.maximum(rho, 1e-300) / (self.R0 * e)))
        s2, _ = smoothstep5(np.log2(np.maximum(rho, 1e-300) / self.rho0))
        inner = (1.0 - s1) * math.log(e) + s1 * lr
        logw = np.where(rho < self.rho0, inner, (1.0 - s2) * lr)
        return np.exp(logw)


@dataclass(frozen=True)
class WeightedSample:
    """Samples with their region descriptor (distance to the nearest puncture)."""

    values: np.ndarray
    rho: np.ndarray
    derivatives: tuple = ()

    def __post_init__(self):
        if self.rho is None:
            raise DomainError("weighted samples need a region descriptor (rho)")
        v = np.asarray(self.values, float)
        r = np.asarray(self.rho, float)
        if r.shape != v.shape[: r.ndim] or np.any(~np.isfinite(r)) or np.any(r < 0):
            raise DomainError("region descriptor missing or malformed")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "rho", r)


def weighted_norm(sample: WeightedSample, delta: float, weight: WeightFunction) -> float:
    """Discrete ``C^k_delta`` norm: ``max rho_eps^{-delta+j} |nabla^j a|`` summed over ``j``."""
    w = weight(sample.rho)

    def mag(a):
        a = np.asarray(a, float)
        return np.abs(a) if a.ndim == w.ndim else np.linalg.norm(a.reshape(a.shape[: w.ndim] + (-1,)), axis=-1)

    total = float(np.max(w ** (-delta) * mag(sample.values)))
    for j, d in enumerate(sample.derivatives, start=1):
        total += float(np.max(w ** (j - delta) * mag(d)))
    return total


def weight_and_norm(values, rho, delta: float, epsilon: float, derivatives=(), R0=DEFAULT_R0, rho0=0.125) -> float:
    return weighted_norm(WeightedSample(values, rho, tuple(derivatives)), delta, WeightFunction(epsilon, R0, rho0))


def product_constant(u, v, rho, delta: float, weight: WeightFunction) -> float:
    """Smallest ``C`` with ``|uv|_{delta-1} <= C eps^{delta-1} |u|_{delta-1} |v|_{delta-1}`` on the samples."""
    su, sv = WeightedSample(u, rho), WeightedSample(v, rho)
    suv = WeightedSample(np.asarray(u) * np.asarray(v), rho)
    nu, nv = weighted_norm(su, delta - 1, weight), weighted_norm(sv, delta - 1, weight)
    if nu == 0 or nv == 0:
        return 0.0
    return weighted_norm(suv, delta - 1, weight) / (weight.epsilon ** (delta - 1) * nu * nv)


# ---------------------------------------------------------------------------
# Collapse profile
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CollapseProfile:
    eps: np.ndarray
    sup_h: np.ndarray
    sup_grad: np.ndarray
    exponent_h: float
    exponent_grad: float


def collapse_profile(
    field: HarmonicField, eps_list: Sequence[float], beta: float = 0.4, n_theta: int = 12, grid: int = 12
) -> CollapseProfile:
    """Sup of ``|h_eps - 1|`` and ``rho |grad h_eps|`` over ``{rho >= eps^beta}`` and fitted eps-exponents.

    Samples: spheres of radius ``eps^beta`` about every puncture plus a regular
    grid restricted to the region.  The expected exponent is ``1 - beta``.
    """
    if not 0 < beta < 1:
        raise DomainError("beta must lie in (0, 1)")
    eps = np.array(sorted(float(e) for e in eps_list))
    cfg = field.config
    sep = cfg.min_separation()
    if np.max(eps) ** beta >= min(0.5 * sep, field.torus.inj_radius):
        raise GeometryError("region {rho >= eps^beta} degenerates: eps^beta too large for the torus")
    if field.trivial:
        z = np.zeros(len(eps))
        return CollapseProfile(eps, z, z, float("nan"), float("nan"))
    normals, _ = sphere_quadrature(n_theta)
    f = (np.arange(grid) + 0.5) / grid
    gpts = field.torus.to_cartesian(np.stack(np.meshgrid(f, f, f, indexing="ij"), -1).reshape(-1, 3))
    _, gdist = cfg.nearest_puncture(gpts)
    sup_h, sup_g = [], []
    for e in eps:
        r = e**beta
        pts = np.concatenate([(p.position + r * normals) for p in cfg.punctures] + [gpts[gdist >= r]])
        _, dist = cfg.nearest_puncture(pts)
        h, g = field.evaluate(pts, 1)
        sup_h.append(float(np.max(np.abs(e * h))))
        sup_g.append(float(np.max(dist * e * np.linalg.norm(g, axis=1))))
    sup_h, sup_g = np.array(sup_h), np.array(sup_g)
    return CollapseProfile(eps, sup_h, sup_g, loglog_fit(eps, sup_h).slope, loglog_fit(eps, sup_g).slope)
