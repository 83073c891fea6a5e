"""Asymptotic ALF models, multi-Taub-NUT spaces, decay fits and topology tables.

All metrics here are Gibbons-Hawking metrics ``h dx^2 + h^{-1} theta^2`` over
(an exterior domain of) R^3 with fibre length normalised by ``lambda = 1``.
Tensor components are reported in the slot order ``(dx1, dx2, dx3, theta)``
of the *model* connection; the connection of a different monopole is written
as ``theta_model + b`` with ``b`` a 1-form on the base in the radial gauge
from infinity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError, FitError, SingularityError
from .lattice_harmonics import ChargeConfig, check_balancing
from .numerics import loglog_fit
from .triple_calculus import gh_chart_triple

_GL_U, _GL_WU = np.polynomial.legendre.leggauss(64)
_GL_U = 0.5 * (_GL_U + 1.0)
_GL_WU = 0.5 * _GL_WU


def _points(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class GHSample:
    """Gibbons-Hawking data at points: potential, triple in the frame ``(-theta, dx)`` and metric.

    ``metric`` uses slot order ``(dx1, dx2, dx3, theta)``.
    """

    h: np.ndarray
    triple: np.ndarray
    metric: np.ndarray


def _gh_sample(h: np.ndarray) -> GHSample:
    if np.any(h <= 0):
        raise DomainError("Gibbons-Hawking potential is not positive at all samples")
    g = np.zeros(h.shape + (4, 4))
    g[..., [0, 1, 2], [0, 1, 2]] = h[..., None]
    g[..., 3, 3] = 1.0 / h
    return GHSample(h, gh_chart_triple(h, 1.0), g)


@dataclass(frozen=True)
class AsymptoticModel:
    """The model ``g_k`` with potential ``lambda + k/(2 rho)``."""

    k: int
    lam: float = 1.0
    dihedral: bool = False
    m: int | None = None

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigError("lambda must be positive")
        if self.dihedral:
            if self.k % 2:
                raise ConfigError("dihedral models need even k")
            if self.m is None:
                object.__setattr__(self, "m", (self.k + 4) // 2)
            elif 2 * self.m - 4 != self.k:
                raise ConfigError("dihedral model needs k = 2m - 4")

    @classmethod
    def dihedral_model(cls, m: int, lam: float = 1.0) -> "AsymptoticModel":
        return cls(2 * m - 4, lam, True, m)

    def potential(self, x, order: int = 1):
        """``(h, grad h)`` at points (N, 3)."""
        x = _points(x)
        r = np.linalg.norm(x, axis=1)
        if np.any(r == 0):
            raise SingularityError("model potential evaluated at the origin")
        h = self.lam + self.k / (2.0 * r)
        if order == 0:
            return (h,)
        return h, -0.5 * self.k * x / r[:, None] ** 3


def model_sample(model: AsymptoticModel, x) -> GHSample:
    """Gibbons-Hawking data of the asymptotic model at points ``x``.

    Raises
    ------
    DomainError
        Outside the positivity domain ``lambda + k/(2 rho) > 0``.
    """
    h = model.potential(x, 0)[0]
    return _gh_sample(h)


@dataclass(frozen=True)
class MultiTaubNut:
    """Monopole ``lambda + sum_j k_j / (2|x - p_j|) + ell . x`` on R^3."""

    poles: np.ndarray
    weights: tuple
    lam: float = 1.0
    ell: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.poles, dtype=float)).reshape(-1, 3)
        w = tuple(int(k) for k in self.weights)
        if len(w) != len(p):
            raise ConfigError("one weight per pole required")
        if any(k < 1 for k in w):
            raise ConfigError("pole weights must be >= 1")
        if len(p) > 1:
            d = np.linalg.norm(p[:, None] - p[None], axis=2)
            if np.min(d[np.triu_indices(len(p), 1)]) == 0:
                raise ConfigError("poles must be distinct")
        object.__setattr__(self, "poles", p)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "ell", np.asarray(self.ell, dtype=float).reshape(3))

    @property
    def total_weight(self) -> int:
        return int(sum(self.weights))

    def translated(self, v) -> "MultiTaubNut":
        return MultiTaubNut(self.poles + np.asarray(v, float), self.weights, self.lam, self.ell)

    def potential(self, x, order: int = 1):
        x = _points(x)
        d = x[:, None, :] - self.poles[None]
        r = np.linalg.norm(d, axis=2)
        if np.any(r == 0):
            raise SingularityError("multi-Taub-NUT potential evaluated at a pole")
        w = np.asarray(self.weights, dtype=float)
        h = self.lam + (0.5 * w / r).sum(axis=1) + x @ self.ell
        if order == 0:
            return (h,)
        g = -0.5 * np.einsum("j,nja->na", w, d / r[..., None] ** 3) + self.ell
        if order == 1:
            return h, g
        eye = np.eye(3)
        hess = 0.5 * np.einsum(
            "j,njab->nab",
            w,
            3.0 * d[..., :, None] * d[..., None, :] / r[..., None, None] ** 5 - eye / r[..., None, None] ** 3,
        )
        return h, g, hess


def multi_tn_sample(mtn: MultiTaubNut, x) -> GHSample:
    """Closed-form Gibbons-Hawking data of a multi-Taub-NUT potential at points ``x``."""
    return _gh_sample(mtn.potential(x, 0)[0])


def connection_difference(grad_delta, x) -> np.ndarray:
    """1-form ``b`` with ``curl b = grad(delta)`` in the radial gauge from infinity.

    ``b(x) = -int_1^inf s grad(delta)(s x) x x ds`` evaluated with ``u = 1/s`` and
    Gauss-Legendre quadrature; requires ``grad(delta) = O(r^-3)``.
    """
    x = _points(x)
    u = _GL_U
    pts = x[:, None, :] / u[None, :, None]
    g = grad_delta(pts.reshape(-1, 3)).reshape(len(x), len(u), 3)
    integrand = np.cross(g, x[:, None, :]) * (_GL_WU / u**3)[None, :, None]
    return -integrand.sum(axis=1)


def metric_difference(mtn: MultiTaubNut, model: AsymptoticModel, x) -> np.ndarray:
    """``g_mtn - g_model`` in the model frame ``(dx1, dx2, dx3, theta_model)``."""
    x = _points(x)
    h1, g1 = mtn.potential(x, 1)
    h0, g0 = model.potential(x, 1)

    def grad_delta(p):
        return mtn.potential(p, 1)[1] - model.potential(p, 1)[1]

    b = connection_difference(grad_delta, x)
    D = np.zeros((len(x), 4, 4))
    D[:, :3, :3] = (h1 - h0)[:, None, None] * np.eye(3) + b[:, :, None] * b[:, None, :] / h1[:, None, None]
    D[:, :3, 3] = D[:, 3, :3] = b / h1[:, None]
    D[:, 3, 3] = 1.0 / h1 - 1.0 / h0
    return D


def cube_rays(rotation_seed: int = 7) -> np.ndarray:
    """Eight unit directions: cube vertices under a fixed generic rotation."""
    v = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float) / np.sqrt(3.0)
    rng = np.random.default_rng(rotation_seed)
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return v @ q.T


@dataclass(frozen=True)
class DecayFit:
    exponent: float
    per_ray: np.ndarray
    spread: float
    max_residual: float
    degenerate: bool
    rho: np.ndarray
    norms: np.ndarray


def decay_exponent(
    mtn: MultiTaubNut,
    model: AsymptoticModel,
    rays=None,
    rho_range=(20.0, 200.0),
    n_rho: int = 12,
    origin=None,
    floor: float = 1e-13,
) -> DecayFit:
    """Fit ``|g_mtn - g_model| ~ rho^{-p}`` along rays; returns ``p`` (positive for decay).

    Parameters
    ----------
    rays : (R, 3) array, optional
        Unit directions; defaults to :func:`cube_rays`.
    origin : 3-vector, optional
        Centre of the model (rays start there); default 0.
    floor : float
        If every sampled difference is below this, the fit is flagged degenerate
        and ``exponent`` is NaN.
    """
    if mtn.total_weight != model.k:
        raise ConfigError(f"total weight {mtn.total_weight} differs from model k = {model.k}")
    rays = cube_rays() if rays is None else np.atleast_2d(np.asarray(rays, float))
    rays = rays / np.linalg.norm(rays, axis=1)[:, None]
    c = np.zeros(3) if origin is None else np.asarray(origin, float)
    rho = np.geomspace(rho_range[0], rho_range[1], n_rho)
    if origin is not None:
        mtn = mtn.translated(-c)
    pts = (rho[None, :, None] * rays[:, None, :]).reshape(-1, 3)
    D = metric_difference(mtn, model, pts)
    norms = np.linalg.norm(D, axis=(1, 2)).reshape(len(rays), n_rho)
    if np.all(norms < floor):
        return DecayFit(float("nan"), np.full(len(rays), np.nan), float("nan"), 0.0, True, rho, norms)
    slopes, res = [], []
    for row in norms:
        try:
            f = loglog_fit(rho, row)
        except FitError:
            raise FitError("difference underflows on part of a ray; cannot fit") from None
        slopes.append(-f.slope)
        res.append(f.max_residual)
    slopes = np.asarray(slopes)
    mean = loglog_fit(rho, norms.mean(axis=0))
    return DecayFit(-mean.slope, slopes, float(np.ptp(slopes)), float(max(res)), False, rho, norms)


# ---------------------------------------------------------------------------
# Dihedral involution
# ---------------------------------------------------------------------------


def coordinate_triple(potential, x, center=None) -> tuple[np.ndarray, np.ndarray]:
    """Potential and triple coefficients in the coordinate basis ``(x1, x2, x3, t)``.

    Uses ``theta = dt + A`` with ``A`` in the radial gauge about ``center``
    (default origin) and the chart coframe ``(-theta, dx1, dx2, dx3)``.
    """
    from .triple_calculus import radial_gauge_connection, transform_two_forms

    x = _points(x)
    c = np.zeros(3) if center is None else np.asarray(center, float)
    h = potential(x, 0)[0]
    A = radial_gauge_connection(potential, 1.0, c, x)
    out = np.empty((len(x), 3, 6))
    for n in range(len(x)):
        E = np.zeros((4, 4))
        E[0, :3] = -A[n]
        E[0, 3] = -1.0
        E[1:, :3] = np.eye(3)
        out[n] = transform_two_forms(gh_chart_triple(h[n]), E)
    return h, out


@dataclass(frozen=True)
class InvolutionCheck:
    residual: float
    h_residual: float
    triple_residual: float
    symmetric: bool


def dihedral_invariance_check(potential, points, phases=None, tol: float = 1e-12) -> InvolutionCheck:
    """Compare GH data at ``(x, t)`` with the pull-back under ``(x, t) -> (-x, -t)``.

    The involution acts by ``-1`` on every coordinate, so 2-form coefficients
    pull back unchanged; the data are S^1-invariant so ``phases`` only label
    the samples.  Returns the maximal discrepancy and whether it is below ``tol``.
    """
    x = _points(points)
    h1, c1 = coordinate_triple(potential, x)
    h2, c2 = coordinate_triple(potential, -x)
    dh = float(np.max(np.abs(h1 - h2)))
    dc = float(np.max(np.abs(c1 - c2)))
    res = max(dh, dc)
    return InvolutionCheck(res, dh, dc, res <= tol * (1.0 + float(np.max(np.abs(c1)))))


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ALFClass:
    kind: str  # "A" or "D"
    index: int

    def __post_init__(self):
        if self.kind not in ("A", "D"):
            raise ConfigError(f"unknown ALF family {self.kind!r}")
        lo = -1 if self.kind == "A" else 0
        if self.index < lo:
            raise ConfigError(f"{self.kind}_{self.index} is out of range (index >= {lo})")

    @property
    def name(self) -> str:
        return f"{self.kind}_{self.index}"


@dataclass(frozen=True)
class TopologyRecord:
    name: str
    pi1: str
    b2: int
    euler: int
    moduli_dim: int


def topology_table(cls: ALFClass) -> TopologyRecord:
    """Fundamental group, b2, Euler characteristic and moduli dimension (modulo scaling)."""
    k = cls.index
    if cls.kind == "A":
        if k == -1:
            return TopologyRecord(cls.name, "Z", 0, 0, 0)
        return TopologyRecord(cls.name, "1", k, k + 1, 3 * k)
    if k == 0:
        return TopologyRecord(cls.name, "Z2", 0, 1, 0)
    return TopologyRecord(cls.name, "1", k, k + 1, 3 * k)


def topology_csv(max_index: int = 16) -> str:
    lines = ["class,pi1,b2,euler,moduli_dim"]
    for kind, lo in (("A", -1), ("D", 0)):
        for k in range(lo, max_index + 1):
            r = topology_table(ALFClass(kind, k))
            lines.append(f"{r.name},{r.pi1},{r.b2},{r.euler},{r.moduli_dim}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class EulerParameters:
    euler: int
    parameters: int
    pieces: tuple


def euler_and_parameters(
    m: Sequence[int] | ChargeConfig, cyclic_weights: Sequence[int] | None = None
) -> EulerParameters:
    """Euler characteristic of the glued manifold and the parameter count.

    The circle-bundle piece contributes 0, each ``D_{m_j}`` its table value and
    each pair ``+-p_i`` one ``A_{k_i - 1}`` space.  Parameters: 6 (torus) +
    3n (positions) + 4 (epsilon and flat connection) + moduli of the pieces.
    """
    if isinstance(m, ChargeConfig):
        ks = [k for _, k in m.pairs]
        ms = list(m.dihedral_weights)
        valid = check_balancing(m.torus, ms, m.pairs).valid
    else:
        ms = [int(v) for v in m]
        ks = [int(v) for v in (cyclic_weights or [])]
        valid = len(ms) == 8 and all(v >= 0 for v in ms) and all(v >= 1 for v in ks) and sum(ms) + sum(ks) == 16
    if not valid:
        raise ConfigError(f"unbalanced configuration: sum m + sum k = {sum(ms) + sum(ks)} (need 16)")
    pieces = tuple(topology_table(ALFClass("D", v)) for v in ms) + tuple(
        topology_table(ALFClass("A", k - 1)) for k in ks
    )
    euler = 0 + sum(p.euler for p in pieces)
    params = 6 + 3 * len(ks) + 4 + sum(p.moduli_dim for p in pieces)
    return EulerParameters(euler, params, pieces)
