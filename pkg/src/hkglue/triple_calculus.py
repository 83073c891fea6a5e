"""Pointwise algebra of definite triples of 2-forms in four dimensions.

Conventions
-----------
A 2-form is stored by its six coefficients in the basis
``(e01, e02, e03, e23, e31, e12)`` of a coframe ``(e0, e1, e2, e3)``, with
``e0123`` positively oriented.  In this basis
``a ^ b = (a01 b23 + a02 b31 + a03 b12 + a23 b01 + a31 b02 + a12 b03) e0123``.

For Gibbons-Hawking data the chart coframe is ``(-theta, theta_1, theta_2,
theta_3)``: the fibre slot carries ``-theta`` so that ``e0 ^ e_i = theta_i ^ theta``
and ``e0123 = theta_123 ^ theta`` is the hyperkaehler orientation.  The
collapsed triple ``eps theta_i ^ theta + h theta_j ^ theta_k`` then has
coefficient rows ``(eps e_i | h e_i)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DegenerateBasisError, DomainError, GeometryError, NotDefiniteError
from .numerics import levi_civita3

PAIRS = ((0, 1), (0, 2), (0, 3), (2, 3), (3, 1), (1, 2))
WEDGE = np.block([[np.zeros((3, 3)), np.eye(3)], [np.eye(3), np.zeros((3, 3))]])
STANDARD_TRIPLE = np.hstack([np.eye(3), np.eye(3)])


def _levi_civita4() -> np.ndarray:
    eps = np.zeros((4, 4, 4, 4))
    for p in itertools.permutations(range(4)):
        eps[p] = np.linalg.det(np.eye(4)[list(p)])
    return eps


EPS3 = levi_civita3()
EPS4 = _levi_civita4()


def two_form_matrix(c) -> np.ndarray:
    """Antisymmetric 4x4 matrix(es) of 6-vector coefficient(s) (leading axes kept)."""
    c = np.asarray(c, dtype=float)
    A = np.zeros(c.shape[:-1] + (4, 4))
    for k, (a, b) in enumerate(PAIRS):
        A[..., a, b] = c[..., k]
        A[..., b, a] = -c[..., k]
    return A


def two_form_vector(A) -> np.ndarray:
    """Inverse of :func:`two_form_matrix`."""
    A = np.asarray(A, dtype=float)
    return np.stack([A[..., a, b] for a, b in PAIRS], axis=-1)


def wedge(a, b) -> np.ndarray:
    """Coefficient of ``e0123`` in ``a ^ b`` (broadcast over leading axes)."""
    return np.einsum("...i,ij,...j->...", np.asarray(a, float), WEDGE, np.asarray(b, float))


def wedge_gram(C) -> np.ndarray:
    """``(1/2) omega_i ^ omega_j`` for coefficient arrays of shape (..., 3, 6)."""
    C = np.asarray(C, dtype=float)
    return 0.5 * np.einsum("...ik,kl,...jl->...ij", C, WEDGE, C)


def transform_two_forms(C, E) -> np.ndarray:
    """Re-express 2-forms given in the coframe ``E`` (rows) in the ambient basis."""
    A = two_form_matrix(C)
    E = np.asarray(E, dtype=float)
    return two_form_vector(np.einsum("am,...ab,bn->...mn", E, A, E))


@dataclass(frozen=True)
class CoframeSample:
    """Four covectors (rows of ``matrix``) in a fixed ambient chart basis."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float).reshape(4, 4)
        if abs(np.linalg.det(m)) < 1e-300:
            raise DomainError("coframe matrix is singular")
        object.__setattr__(self, "matrix", m)

    @property
    def orientation(self) -> int:
        return int(np.sign(np.linalg.det(self.matrix)))

    @property
    def volume(self) -> float:
        return float(abs(np.linalg.det(self.matrix)))

    @classmethod
    def identity(cls) -> "CoframeSample":
        return cls(np.eye(4))


@dataclass(frozen=True)
class TwoFormTriple:
    """Three 2-forms (rows of ``coefficients``) and a reference volume ``mu0``."""

    coefficients: np.ndarray
    mu0: float = 1.0

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float).reshape(3, 6)
        object.__setattr__(self, "coefficients", c)
        if not self.mu0 > 0:
            raise DomainError("reference volume must be positive")

    def scaled(self, s: float) -> "TwoFormTriple":
        return TwoFormTriple(s * self.coefficients, self.mu0)


@dataclass(frozen=True)
class IntersectionData:
    Q: np.ndarray
    mu: float
    Q_normalized: np.ndarray
    definite: bool
    metric: np.ndarray | None = None


def intersection_matrix(triple: TwoFormTriple) -> IntersectionData:
    """Wedge Gram matrix ``Q``, associated volume ``mu`` and normalised ``Q``.

    Raises
    ------
    NotDefiniteError
        If ``det Q <= 0``.
    """
    Q = wedge_gram(triple.coefficients) / triple.mu0
    det = float(np.linalg.det(Q))
    if det <= 0:
        raise NotDefiniteError(f"triple is not definite (det Q = {det:.3e})")
    scale = det ** (1.0 / 3.0)
    definite = bool(np.all(np.linalg.eigvalsh(Q) > 0))
    return IntersectionData(Q, scale * triple.mu0, Q / scale, definite)


def hodge_star(metric, orientation: int = 1) -> np.ndarray:
    """Hodge star on 2-forms as a 6x6 matrix acting on coefficient vectors.

    Built in an orthonormal eigen-coframe of ``metric``, where the star is the
    constant block swap, and conjugated back to chart coefficients.
    """
    g = np.asarray(metric, dtype=float)
    if not np.allclose(g, g.T, atol=1e-12 * np.max(np.abs(g))):
        raise DomainError("metric must be symmetric positive definite")
    lam, V = np.linalg.eigh(0.5 * (g + g.T))
    if np.any(lam <= 0):
        raise DomainError("metric must be symmetric positive definite")
    E = np.sqrt(lam)[:, None] * V.T  # orthonormal coframe (rows)
    sign = orientation * np.sign(np.linalg.det(E))
    Einv = V / np.sqrt(lam)[None, :]
    basis = two_form_matrix(np.eye(6))
    T = two_form_vector(np.einsum("ma,kmn,nb->kab", Einv, basis, Einv)).T  # chart -> frame coefficients
    return np.linalg.solve(T, sign * WEDGE @ T)


def urbantke_tensor(C) -> np.ndarray:
    """``eps^{ijk} (w_i)_{ac} (w_j)_{bd} (w_k)_{ef} eps^{cdef}``; conformal to the metric."""
    W = two_form_matrix(C)
    return np.einsum("ijk,iac,jbd,kef,cdef->ab", EPS3, W, W, W, EPS4)


def recover_metric(triple: TwoFormTriple) -> np.ndarray:
    """Metric whose self-dual 2-forms are the span of the triple, with volume ``mu``.

    The cubic Urbantke-type contraction of the triple is a symmetric tensor
    conformal to the metric (its sign follows the orientation of the triple's
    frame); the conformal factor is fixed by ``sqrt(det g) = mu``.
    """
    data = intersection_matrix(triple)
    if not data.definite:
        raise NotDefiniteError("triple does not span a positive definite 3-plane")
    U = urbantke_tensor(triple.coefficients)
    U = 0.5 * (U + U.T)
    if np.trace(U) < 0:
        U = -U
    ev = np.linalg.eigvalsh(U)
    if np.any(ev <= 0):
        raise NotDefiniteError("recovered conformal structure is not Riemannian")
    c = np.sqrt(data.mu / np.sqrt(np.linalg.det(U)))
    return c * U


def to_chart_order(g) -> np.ndarray:
    """Reorder a 4x4 tensor from slot order (fibre, x1, x2, x3) to (x1, x2, x3, fibre)."""
    p = [1, 2, 3, 0]
    return np.asarray(g)[np.ix_(p, p)]


def selfdual_split(eta, triple: TwoFormTriple, metric=None, tol: float = 1e-8):
    """Decompose 2-forms into ``sum_j A_ij omega_j`` plus an anti-self-dual rest.

    Parameters
    ----------
    eta : array_like, shape (6,) or (m, 6)
    triple : TwoFormTriple
        Must be an SU(2)-structure (normalised ``Q`` within ``tol`` of the identity).
    metric : ndarray, optional
        If given, the anti-self-dual part is checked against its Hodge star.

    Returns
    -------
    A : ndarray, shape (3,) or (m, 3)
    eta_minus : ndarray, same shape as ``eta``
    """
    data = intersection_matrix(triple)
    if np.max(np.abs(data.Q_normalized - np.eye(3))) > tol:
        raise DegenerateBasisError("triple is not an SU(2)-structure; cannot split against it")
    eta = np.asarray(eta, dtype=float)
    C = triple.coefficients
    A = 0.5 * np.einsum("...k,kl,jl->...j", eta, WEDGE, C) / data.mu
    eta_minus = eta - A @ C
    if metric is not None:
        S = hodge_star(metric)
        if np.max(np.abs(eta_minus @ S.T + eta_minus)) > 1e-8 * (1.0 + np.max(np.abs(eta))):
            raise DegenerateBasisError("metric is not compatible with the triple")
    return A, eta_minus


def eta_star_eta(eta_minus, mu: float = 1.0, metric=None, tol: float = 1e-10) -> np.ndarray:
    """Symmetric matrix ``(1/2) eta_i ^ eta_j / mu`` of an anti-self-dual triple."""
    eta_minus = np.asarray(eta_minus, dtype=float).reshape(3, 6)
    if metric is not None:
        S = hodge_star(metric)
        if np.max(np.abs(eta_minus @ S.T + eta_minus)) > tol * (1.0 + np.max(np.abs(eta_minus))):
            raise DomainError("inputs are not anti-self-dual")
    E = wedge_gram(eta_minus) / mu
    return 0.5 * (E + E.T)


def gh_chart_triple(h, epsilon=1.0) -> np.ndarray:
    """Coefficients (..., 3, 6) of ``eps theta_i ^ theta + h theta_j ^ theta_k`` in the chart coframe."""
    h = np.asarray(h, dtype=float)
    eps = np.broadcast_to(np.asarray(epsilon, dtype=float), h.shape)
    C = np.zeros(h.shape + (3, 6))
    idx = np.arange(3)
    C[..., idx, idx] = eps[..., None]
    C[..., idx, idx + 3] = h[..., None]
    return C


def gh_triple_sample(h: float, epsilon: float = 1.0, coframe: CoframeSample | None = None) -> TwoFormTriple:
    """Exact collapsed Gibbons-Hawking triple at a point.

    Parameters
    ----------
    h : float
        Value of the (positive) Gibbons-Hawking potential.
    epsilon : float
        Fibre scale.
    coframe : CoframeSample, optional
        Rows ``(-theta, theta_1, theta_2, theta_3)`` in an ambient basis; must be
        positively oriented.  Defaults to the identity.

    Returns
    -------
    TwoFormTriple
        Coefficients in the ambient basis, ``mu0 = eps h (chart volume)`` so that
        ``Q`` is the identity.
    """
    if not h > 0:
        raise DomainError(f"Gibbons-Hawking potential must be positive, got {h}")
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    C = gh_chart_triple(h, epsilon)
    if coframe is None:
        return TwoFormTriple(C, epsilon * h)
    if coframe.orientation < 0:
        raise DomainError("coframe must be positively oriented")
    return TwoFormTriple(transform_two_forms(C, coframe.matrix), epsilon * h * coframe.volume)


def gh_metric(h, epsilon=1.0) -> np.ndarray:
    """``diag(eps^2/h, h, h, h)`` in the chart coframe slot order."""
    return np.diag([epsilon**2 / h, h, h, h])


# ---------------------------------------------------------------------------
# Finite-difference helpers
# ---------------------------------------------------------------------------


def laplacian_fd(fun: Callable, x, step: float) -> float:
    """Richardson-extrapolated 7-point Laplacian of a scalar function of 3 variables."""
    x = np.asarray(x, dtype=float)
    offs = np.vstack([np.eye(3), -np.eye(3)])

    def lap(s):
        pts = np.vstack([x[None, :], x + s * offs])
        v = np.asarray(fun(pts), dtype=float)
        return (v[1:].sum() - 6.0 * v[0]) / s**2

    return (4.0 * lap(0.5 * step) - lap(step)) / 3.0


@dataclass(frozen=True)
class ClosednessResult:
    residual: float
    residual_half_step: float
    step: float


def closedness_residual(field, point, step: float | None = None, full: bool = False):
    """``|Laplacian h_eps|`` at ``point`` by finite differences.

    Under the convention ``d theta = * dh`` this is the full obstruction to the
    closedness of the Gibbons-Hawking triple.

    Raises
    ------
    GeometryError
        If the point is inside an exclusion ball (``rho0/4``) of a charged
        puncture or the step would underflow.
    """
    x = np.asarray(point, dtype=float)
    if field.trivial:
        return ClosednessResult(0.0, 0.0, 0.0) if full else 0.0
    cfg = field.config
    charged = [p.position for p in cfg.punctures if p.charge != 0]
    d = float(np.min(field.torus.distance(np.array(charged), x)))
    if d < cfg.rho0 / 4.0:
        raise GeometryError(f"point at distance {d:.3e} lies inside an exclusion ball")
    if step is None:
        step = 1e-2 * min(d, field.torus.inj_radius)
    if step < 1e-8 * field.torus.inj_radius:
        raise GeometryError("finite-difference step underflow")
    fun = field.h_eps
    r1 = abs(laplacian_fd(fun, x, step))
    if not full:
        return r1
    r2 = abs(laplacian_fd(fun, x, 0.5 * step))
    return ClosednessResult(r1, r2, step)


# ---------------------------------------------------------------------------
# Gibbons-Hawking metric in coordinates and its connection
# ---------------------------------------------------------------------------

_GL_S, _GL_W = np.polynomial.legendre.leggauss(16)
_GL_S = 0.5 * (_GL_S + 1.0)
_GL_W = 0.5 * _GL_W


def radial_gauge_connection(potential: Callable, epsilon: float, center, pts) -> np.ndarray:
    """Connection 1-form ``A`` with ``dA = eps^{-1} * dH`` and ``A(center) = 0``.

    ``A(x) = eps^{-1} int_0^1 s grad H(c + s v) x v ds`` with ``v = x - c``
    (Poincare homotopy about ``center``), evaluated by Gauss-Legendre quadrature.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    c = np.asarray(center, dtype=float)
    v = pts - c
    nodes = c + _GL_S[None, :, None] * v[:, None, :]
    grad = potential(nodes.reshape(-1, 3), 1)[1].reshape(len(pts), len(_GL_S), 3)
    integrand = np.cross(grad, v[:, None, :]) * (_GL_S * _GL_W)[None, :, None]
    return integrand.sum(axis=1) / epsilon


def gh_coordinate_metric(potential: Callable, epsilon: float, center, pts) -> np.ndarray:
    """Gibbons-Hawking metric in coordinates ``(t, x1, x2, x3)``.

    ``g = H dx^2 + eps^2 H^{-1} (dt + A)^2`` with ``A`` in the radial gauge about
    ``center``.  ``potential(x, order)`` returns ``(H, grad H, ...)``.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    H = potential(pts, 0)[0]
    A = radial_gauge_connection(potential, epsilon, center, pts)
    theta = np.concatenate([np.ones((len(pts), 1)), A], axis=1)
    g = (epsilon**2 / H)[:, None, None] * theta[:, :, None] * theta[:, None, :]
    g[:, 1:, 1:] += H[:, None, None] * np.eye(3)
    return g


def christoffel_fd(metric_fn: Callable, x, step: float):
    """Christoffel symbols ``Gamma[n, m, l]`` (upper index first) of an S^1-invariant metric.

    ``metric_fn(pts)`` returns (N, 4, 4) metrics at spatial points (N, 3);
    derivatives in the fibre direction vanish.
    """
    x = np.asarray(x, dtype=float)
    pts = np.vstack([x, x + step * np.eye(3), x - step * np.eye(3)])
    g = metric_fn(pts)
    dg = np.zeros((4, 4, 4))  # dg[m, a, b] = d_m g_ab
    dg[1:] = (g[1:4] - g[4:7]) / (2.0 * step)
    gi = np.linalg.inv(g[0])
    T = dg.transpose(1, 0, 2) + dg.transpose(1, 2, 0) - dg  # [k, m, l]
    return 0.5 * np.einsum("nk,kml->nml", gi, T), g[0]


def riemann_fd(metric_fn: Callable, x, step: float):
    """Riemann tensor ``R[r, s, m, n]`` by nested central differences, plus the metric at x."""
    x = np.asarray(x, dtype=float)
    G0, g0 = christoffel_fd(metric_fn, x, step)
    dG = np.zeros((4, 4, 4, 4))  # dG[m, ...] = d_m Gamma
    for k in range(3):
        e = step * np.eye(3)[k]
        Gp, _ = christoffel_fd(metric_fn, x + e, step)
        Gm, _ = christoffel_fd(metric_fn, x - e, step)
        dG[k + 1] = (Gp - Gm) / (2.0 * step)
    # R^r_{s m n} = d_m G^r_{n s} - d_n G^r_{m s} + G^r_{m l} G^l_{n s} - G^r_{n l} G^l_{m s}
    R = (
        np.einsum("mrns->rsmn", dG)
        - np.einsum("nrms->rsmn", dG)
        + np.einsum("rml,lns->rsmn", G0, G0)
        - np.einsum("rnl,lms->rsmn", G0, G0)
    )
    return R, g0, G0


@dataclass(frozen=True)
class CurvatureDiagnostics:
    riemann: np.ndarray
    ricci: np.ndarray
    ricci_norm: float
    rm_norm: float
    step: float


def curvature_diagnostics(metric_fn: Callable, x, step: float) -> CurvatureDiagnostics:
    R, g, _ = riemann_fd(metric_fn, x, step)
    gi = np.linalg.inv(g)
    ric = np.einsum("rsrn->sn", R)
    ric_norm = np.sqrt(abs(np.einsum("ac,bd,ab,cd->", gi, gi, ric, ric)))
    Rlow = np.einsum("ra,asmn->rsmn", g, R)
    rm = np.sqrt(abs(np.einsum("ap,bq,cr,ds,abcd,pqrs->", gi, gi, gi, gi, Rlow, Rlow)))
    return CurvatureDiagnostics(R, ric, float(ric_norm), float(rm), step)


@dataclass(frozen=True)
class ConnectionData:
    """Closed-form Levi-Civita data of a Gibbons-Hawking metric at a point.

    ``gamma[a, b, c]`` is the ``X_c`` component of ``nabla_{X_a} X_b`` in the frame
    ``X = (xi, xi_1, xi_2, xi_3)`` (vertical field and horizontal lifts).
    ``nabla_xi_theta`` holds the components of ``nabla_xi theta`` in the coframe
    ``(theta, theta_1, theta_2, theta_3)``; ``nabla_xi_theta_i`` the same for each
    ``theta_i`` (rows).
    """

    gamma: np.ndarray
    nabla_xi_theta: np.ndarray
    nabla_xi_theta_i: np.ndarray
    H: float
    grad_H: np.ndarray
    curvature: CurvatureDiagnostics | None = None


def levi_civita_gh(
    potential: Callable,
    epsilon: float,
    point,
    curvature: bool = False,
    step: float | None = None,
) -> ConnectionData:
    """Levi-Civita connection of ``H g_flat + eps^2 H^{-1} theta^2`` with ``d theta = eps^{-1} * dH``.

    Parameters
    ----------
    potential : callable
        ``potential(x, order)`` returning ``(H, grad H[, Hess H])`` for points (N, 3).
    epsilon : float
    point : array_like, shape (3,)
    curvature : bool
        Also compute finite-difference Riemann/Ricci diagnostics.
    step : float, optional
        Finite-difference step (default ``1e-3``).
    """
    x = np.asarray(point, dtype=float)
    H, g = potential(x[None, :], 1)[:2]
    H, g = float(H[0]), np.asarray(g[0])
    if not H > 0:
        raise DomainError(f"Gibbons-Hawking potential must be positive, got {H}")
    e2 = epsilon**2
    F = np.einsum("ijk,k->ij", EPS3, g) / epsilon  # d theta(xi_i, xi_j)
    gamma = np.zeros((4, 4, 4))
    gamma[0, 0, 1:] = 0.5 * e2 * H**-3 * g
    for i in range(3):
        row = np.zeros(4)
        row[0] = -0.5 * g[i] / H
        row[1:] = 0.5 * e2 * H**-2 * F[i]
        gamma[i + 1, 0] = row
        gamma[0, i + 1] = row
    for j in range(3):
        for i in range(3):
            v = np.zeros(4)
            v[0] = 0.5 * F[i, j]
            v[1 + i] += 0.5 * g[j] / H
            v[1 + j] += 0.5 * g[i] / H
            if i == j:
                v[1:] -= 0.5 * g / H
            gamma[j + 1, i + 1] = v
    nx_theta = np.concatenate([[0.0], 0.5 * g / H])
    nx_theta_i = np.zeros((3, 4))
    for i in range(3):
        nx_theta_i[i, 0] = -0.5 * e2 * H**-3 * g[i]
        nx_theta_i[i, 1:] = 0.5 * e2 * H**-2 * F[i]
    curv = None
    if curvature:
        s = 1e-3 if step is None else step
        curv = curvature_diagnostics(lambda p: gh_coordinate_metric(potential, epsilon, x, p), x, s)
    return ConnectionData(gamma, nx_theta, nx_theta_i, H, g, curv)


def frame_connection_fd(potential: Callable, epsilon: float, point, step: float) -> np.ndarray:
    """Frame connection table from finite-difference Christoffel symbols.

    Uses coordinates ``(t, x)`` with the radial gauge about ``point``; the frame
    fields are ``xi = d_t`` and ``xi_i = d_i - A_i d_t``.  Returns an array with
    the layout of :attr:`ConnectionData.gamma`.
    """
    x = np.asarray(point, dtype=float)

    def metric_fn(p):
        return gh_coordinate_metric(potential, epsilon, x, p)

    Gam, _ = christoffel_fd(metric_fn, x, step)
    # frame vectors X_a^mu and their coordinate derivatives d_m X_a^mu
    pts = np.vstack([x, x + step * np.eye(3), x - step * np.eye(3)])
    A = radial_gauge_connection(potential, epsilon, x, pts)

    def frame(Ai):
        X = np.zeros((4, 4))
        X[0, 0] = 1.0
        for i in range(3):
            X[i + 1, i + 1] = 1.0
            X[i + 1, 0] = -Ai[i]
        return X

    X0 = frame(A[0])
    dX = np.zeros((4, 4, 4))  # dX[m, a, mu]
    for k in range(3):
        dX[k + 1] = (frame(A[1 + k]) - frame(A[4 + k])) / (2.0 * step)
    # nabla_{X_a} X_b = X_a^m (d_m X_b^nu + Gamma^nu_{m l} X_b^l)
    cov = np.einsum("am,mbn->abn", X0, dX) + np.einsum("am,nml,bl->abn", X0, Gam, X0)
    return cov @ np.linalg.inv(X0)


def nabla_xi_theta_fd(potential: Callable, epsilon: float, point, step: float) -> np.ndarray:
    """``nabla_xi theta`` from finite-difference Christoffels, in coordinate components.

    In the radial gauge about ``point`` (where ``A = 0``) the coordinate
    components ``(dt, dx_i)`` coincide with ``(theta, theta_i)``.
    """
    x = np.asarray(point, dtype=float)
    Gam, _ = christoffel_fd(lambda p: gh_coordinate_metric(potential, epsilon, x, p), x, step)
    # (nabla_t theta)_mu = -Gamma^t_{t mu} - A_i Gamma^i_{t mu}, A(x) = 0
    return -Gam[0, 0, :]
