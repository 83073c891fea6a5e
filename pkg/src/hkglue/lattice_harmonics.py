"""Periodic harmonic functions with point singularities on a flat 3-torus.

The Green's function is normalised by ``Delta G = -2 pi (delta_0 - 1/V)`` so that
``G(x) ~ 1/(2|x|)`` near the origin, with the additive constant fixed by
``int_T G = 0``.  It is evaluated by Ewald summation,

    G(x) = 1/2 sum_L erfc(a|x+L|)/|x+L|
           + (2 pi / V) sum_{k != 0} exp(-|k|^2 / 4a^2) / |k|^2 cos(k.x)
           - pi / (2 a^2 V),

with analytic first and second derivatives in both sums.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import erf, erfc

from .errors import (
    AccuracyError,
    ConfigError,
    GeometryError,
    SingularityError,
    ThresholdNotFoundError,
)
from .numerics import sphere_quadrature

_SQRT_PI = np.sqrt(np.pi)
_CHUNK = 2048


# ---------------------------------------------------------------------------
# Torus and configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FlatTorus:
    """Flat torus ``R^3 / Lambda`` with lattice generators as the columns of ``basis``."""

    basis: np.ndarray
    volume: float = field(init=False)
    dual_basis: np.ndarray = field(init=False)
    inj_radius: float = field(init=False)

    def __post_init__(self):
        b = np.array(self.basis, dtype=float).reshape(3, 3)
        det = float(np.linalg.det(b))
        if det <= 0:
            raise ConfigError(f"torus basis must have positive determinant, got {det}")
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)
        object.__setattr__(self, "volume", det)
        dual = np.linalg.inv(b).T
        dual.setflags(write=False)
        object.__setattr__(self, "dual_basis", dual)
        n = np.array(list(itertools.product(range(-3, 4), repeat=3)), dtype=float)
        n = n[np.any(n != 0, axis=1)]
        shortest = np.min(np.linalg.norm(n @ b.T, axis=1))
        object.__setattr__(self, "inj_radius", 0.5 * float(shortest))

    @classmethod
    def cubic(cls, side: float = 1.0) -> "FlatTorus":
        return cls(side * np.eye(3))

    def scaled(self, factor: float) -> "FlatTorus":
        return FlatTorus(factor * self.basis)

    def to_fractional(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.dual_basis

    def to_cartesian(self, f) -> np.ndarray:
        return np.asarray(f, dtype=float) @ self.basis.T

    def reduce(self, d) -> np.ndarray:
        """Representative of ``d`` mod Lambda with fractional coordinates in [-1/2, 1/2)."""
        f = self.to_fractional(d)
        f = f - np.floor(f + 0.5)
        return self.to_cartesian(f)

    def minimal_image(self, d) -> np.ndarray:
        """Shortest representative of ``d`` mod Lambda."""
        d = np.atleast_2d(self.reduce(d))
        shifts = self.to_cartesian(np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=float))
        cand = d[:, None, :] + shifts[None, :, :]
        idx = np.argmin(np.einsum("nmi,nmi->nm", cand, cand), axis=1)
        return cand[np.arange(len(d)), idx]

    def distance(self, x, y) -> np.ndarray:
        """Torus distance between points (broadcast over leading axes)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        d = np.broadcast_to(x - y, np.broadcast_shapes(x.shape, y.shape))
        out = np.linalg.norm(self.minimal_image(d.reshape(-1, 3)), axis=1)
        return out.reshape(d.shape[:-1]) if d.ndim > 1 else float(out[0])

    def half_lattice_points(self) -> np.ndarray:
        """The eight points of ``(1/2) Lambda / Lambda`` in lexicographic order."""
        f = np.array(list(itertools.product((0.0, 0.5), repeat=3)))
        return self.to_cartesian(f)

    def cell_radius(self) -> float:
        """Largest norm of a reduced representative (half-diagonal bound)."""
        corners = self.to_cartesian(np.array(list(itertools.product((-0.5, 0.5), repeat=3))))
        return float(np.max(np.linalg.norm(corners, axis=1)))


@dataclass(frozen=True)
class Puncture:
    """One singular point of the harmonic function."""

    index: int
    name: str
    position: np.ndarray
    charge: int
    kind: str  # "dihedral" or "cyclic"
    weight: int  # m_j for dihedral, k_i for cyclic
    sign: int = 1  # +1 for p_i, -1 for its mirror -p_i, +1 for fixed points


@dataclass(frozen=True)
class BalancingReport:
    """Validity report for raw configuration weights and positions."""

    valid: bool
    weight_sum: int
    violations: tuple

    def __bool__(self):
        return self.valid


def check_balancing(torus: FlatTorus, dihedral_weights: Sequence[int], pairs: Sequence = ()) -> BalancingReport:
    """Check the balancing condition and positional constraints.

    Parameters
    ----------
    torus : FlatTorus
    dihedral_weights : sequence of 8 non-negative integers
        The weights ``m_j`` at the half-lattice points.
    pairs : sequence of (position, k)
        Cyclic punctures ``p_i`` (Cartesian) with weight ``k_i >= 1``; the mirror
        point ``-p_i`` is implicit.

    Returns
    -------
    BalancingReport
        ``valid`` is true iff all constraints hold; each violated constraint is
        listed by name.
    """
    violations = []
    m = list(dihedral_weights)
    if len(m) != 8:
        violations.append(f"dihedral_weights: expected 8 entries, got {len(m)}")
    for j, mj in enumerate(m):
        if int(mj) != mj or mj < 0:
            violations.append(f"dihedral_weights[{j}]: must be a non-negative integer, got {mj}")
    ks = []
    ps = []
    for i, pair in enumerate(pairs):
        p, k = pair
        if int(k) != k or k < 1:
            violations.append(f"pairs[{i}].k: must be an integer >= 1, got {k}")
        ks.append(k)
        ps.append(np.asarray(p, dtype=float).reshape(3))
    total = int(sum(m) + sum(ks))
    if total != 16:
        violations.append(f"balancing: sum m_j + sum k_i = {total}, must equal 16")
    tol = 1e-9 * torus.inj_radius
    q = torus.half_lattice_points()
    for i, p in enumerate(ps):
        dq = torus.distance(q, p)
        if np.any(dq < tol):
            j = int(np.argmin(dq))
            violations.append(f"position: pairs[{i}] coincides with fixed point q{j + 1}")
        for i2 in range(i):
            if torus.distance(p, ps[i2]) < tol or torus.distance(p, -ps[i2]) < tol:
                violations.append(f"position: pairs[{i}] coincides with +-pairs[{i2}]")
    return BalancingReport(not violations, total, tuple(violations))


@dataclass(frozen=True, eq=False)
class ChargeConfig:
    """Symmetric puncture configuration with derived charges.

    Charges are ``2 m_j - 4`` at the fixed points and ``k_i`` at ``+-p_i``.
    """

    torus: FlatTorus
    dihedral_weights: tuple
    pairs: tuple  # ((position, k), ...)
    punctures: tuple = field(init=False)

    def __post_init__(self):
        report = check_balancing(self.torus, self.dihedral_weights, self.pairs)
        if not report.valid:
            raise ConfigError("invalid charge configuration: " + "; ".join(report.violations))
        object.__setattr__(self, "dihedral_weights", tuple(int(m) for m in self.dihedral_weights))
        pairs = tuple((np.asarray(p, dtype=float).reshape(3), int(k)) for p, k in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        punct = []
        for j, (q, m) in enumerate(zip(self.torus.half_lattice_points(), self.dihedral_weights)):
            punct.append(Puncture(j, f"q{j + 1}", q, 2 * m - 4, "dihedral", m))
        for i, (p, k) in enumerate(pairs):
            punct.append(Puncture(len(punct), f"p{i + 1}+", p.copy(), k, "cyclic", k, +1))
            punct.append(Puncture(len(punct), f"p{i + 1}-", -p.copy(), k, "cyclic", k, -1))
        object.__setattr__(self, "punctures", tuple(punct))

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.position for p in self.punctures])

    @property
    def charges(self) -> np.ndarray:
        return np.array([p.charge for p in self.punctures], dtype=float)

    @property
    def is_trivial(self) -> bool:
        """True when every charge vanishes (the Kummer configuration)."""
        return not np.any(self.charges)

    def min_separation(self) -> float:
        pos = self.positions
        d = self.torus.distance(pos[:, None, :], pos[None, :, :])
        d = d + np.diag(np.full(len(pos), np.inf))
        return float(np.min(d))

    @property
    def rho0(self) -> float:
        """Working radius ``min(inj_radius/4, min separation/2)`` for local expansions."""
        return min(self.torus.inj_radius / 4.0, self.min_separation() / 2.0)

    def scaled(self, factor: float) -> "ChargeConfig":
        """Same weights on the torus scaled by ``factor`` (positions scaled too)."""
        return ChargeConfig(
            self.torus.scaled(factor),
            self.dihedral_weights,
            tuple((factor * p, k) for p, k in self.pairs),
        )

    def nearest_puncture(self, x):
        """Index of and distance to the nearest puncture for each point."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        pos = self.positions
        d = self.torus.distance(x[:, None, :], pos[None, :, :])
        idx = np.argmin(d, axis=1)
        return idx, d[np.arange(len(x)), idx]


def kummer_config(torus: FlatTorus | None = None) -> ChargeConfig:
    """All ``m_j = 2`` and no cyclic pairs: every charge vanishes."""
    torus = torus or FlatTorus.cubic()
    return ChargeConfig(torus, (2,) * 8, ())


GENERIC_PAIR_FRACTIONAL = np.array([0.27, 0.19, 0.33])


def generic_config(torus: FlatTorus | None = None) -> ChargeConfig:
    """``m = (1,1,2,2,2,2,2,2)`` with one cyclic pair of weight 2 at a generic point."""
    torus = torus or FlatTorus.cubic()
    p = torus.to_cartesian(GENERIC_PAIR_FRACTIONAL)
    return ChargeConfig(torus, (1, 1, 2, 2, 2, 2, 2, 2), ((p, 2),))


# ---------------------------------------------------------------------------
# Ewald summation
# ---------------------------------------------------------------------------


def _real_tail(alpha, R, volume):
    return np.pi * erfc(alpha * R) / (alpha**2 * volume)


def _recip_tail(alpha, K):
    return 2.0 * alpha**2 / (np.pi * K) * np.exp(-(K**2) / (4.0 * alpha**2))


@dataclass(frozen=True, eq=False)
class EwaldTable:
    """Precomputed image and reciprocal vectors for one torus and splitting parameter."""

    alpha: float
    real_cutoff: float
    reciprocal_cutoff: float
    lattice_vectors: np.ndarray  # (M, 3), includes 0
    kvectors: np.ndarray  # (K, 3), one of each +-k pair
    kcoef: np.ndarray  # (K,), coefficient of cos(k.x) in G
    constant: float
    tol: float


def build_ewald_table(
    torus: FlatTorus,
    alpha: float | None = None,
    tol: float = 1e-12,
    real_cutoff: float | None = None,
    reciprocal_cutoff: float | None = None,
) -> EwaldTable:
    """Choose cutoffs and enumerate the vectors needed for Ewald sums.

    Raises
    ------
    AccuracyError
        If user-supplied cutoffs leave tails above ``tol``.
    """
    V = torus.volume
    if alpha is None:
        alpha = _SQRT_PI / V ** (1.0 / 3.0)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if real_cutoff is None:
        R = 1.0 / alpha
        while _real_tail(alpha, R, V) > tol:
            R *= 1.05
        real_cutoff = R
    elif _real_tail(alpha, real_cutoff, V) > tol:
        raise AccuracyError(f"real-space cutoff {real_cutoff} leaves tail {_real_tail(alpha, real_cutoff, V):.3e} > {tol}")
    if reciprocal_cutoff is None:
        K = 2.0 * alpha
        while _recip_tail(alpha, K) > tol:
            K *= 1.05
        reciprocal_cutoff = K
    elif _recip_tail(alpha, reciprocal_cutoff) > tol:
        raise AccuracyError(
            f"reciprocal cutoff {reciprocal_cutoff} leaves tail {_recip_tail(alpha, reciprocal_cutoff):.3e} > {tol}"
        )

    reach = real_cutoff + torus.cell_radius()
    nmax = np.ceil(reach * np.linalg.norm(torus.dual_basis, axis=0)).astype(int) + 1
    grid = np.array(
        list(itertools.product(*(range(-n, n + 1) for n in nmax))),
        dtype=float,
    )
    L = grid @ torus.basis.T
    L = L[np.linalg.norm(L, axis=1) <= reach]

    recip = 2.0 * np.pi * torus.dual_basis
    kmax = np.ceil(reciprocal_cutoff * np.linalg.norm(torus.basis, axis=0) / (2.0 * np.pi)).astype(int) + 1
    kn = np.array(list(itertools.product(*(range(-n, n + 1) for n in kmax))), dtype=int)
    # keep one representative of each +-k pair
    first_nonzero = np.array([row[np.flatnonzero(row)[0]] if np.any(row) else 0 for row in kn])
    kn = kn[first_nonzero > 0]
    k = kn.astype(float) @ recip.T
    knorm2 = np.einsum("ij,ij->i", k, k)
    keep = knorm2 <= reciprocal_cutoff**2
    k, knorm2 = k[keep], knorm2[keep]
    # two members of each pair, each (2 pi / V) exp(..)/k^2
    kcoef = 4.0 * np.pi / V * np.exp(-knorm2 / (4.0 * alpha**2)) / knorm2
    constant = -np.pi / (2.0 * alpha**2 * V)
    for arr in (L, k, kcoef):
        arr.setflags(write=False)
    return EwaldTable(float(alpha), float(real_cutoff), float(reciprocal_cutoff), L, k, kcoef, constant, tol)


def _erf_over_r_series(r, alpha, nterms=18):
    """Series data for ``g(r) = -erf(alpha r)/r``: returns g, g'/r, (g'' - g'/r)/r^2."""
    n = np.arange(nterms)
    from math import factorial

    a = np.array([(-1.0) ** k / (factorial(k) * (2 * k + 1)) for k in range(nterms)])
    b = -(2.0 * alpha / _SQRT_PI) * a * alpha ** (2 * n)
    r2 = r**2
    powers = r2[..., None] ** n  # r^(2n)
    g = powers @ b
    g1 = powers[..., :-1] @ (2 * n[1:] * b[1:])
    g2 = powers[..., :-2] @ (4 * n[2:] * (n[2:] - 1) * b[2:])
    return g, g1, g2


def _radial_profile(r, alpha, singular: np.ndarray):
    """Return f, f'/r, (f'' - f'/r)/r^2 for the real-space kernel.

    ``f = erfc(alpha r)/(2r)`` where ``singular`` is true and the smooth
    ``f = -erf(alpha r)/(2r)`` elsewhere (the 1/(2r) part removed).
    """
    c = 2.0 * alpha / _SQRT_PI
    f = np.empty_like(r)
    f1r = np.empty_like(r)
    f2 = np.empty_like(r)
    s = singular
    if np.any(s):
        rs = r[s]
        e = np.exp(-(alpha * rs) ** 2)
        ec = erfc(alpha * rs)
        fs = ec / rs
        d1 = -ec / rs**2 - c * e / rs
        d2 = 2.0 * ec / rs**3 + 2.0 * c * e / rs**2 + 2.0 * alpha**2 * c * e
        f[s] = fs
        f1r[s] = d1 / rs
        f2[s] = (d2 - d1 / rs) / rs**2
    ns = ~s
    if np.any(ns):
        rr = r[ns]
        small = alpha * rr < 0.5
        g = np.empty_like(rr)
        g1r = np.empty_like(rr)
        g2 = np.empty_like(rr)
        if np.any(small):
            g[small], g1r[small], g2[small] = _erf_over_r_series(rr[small], alpha)
        big = ~small
        if np.any(big):
            rb = rr[big]
            e = np.exp(-(alpha * rb) ** 2)
            ef = erf(alpha * rb)
            d0 = -ef / rb
            d1 = ef / rb**2 - c * e / rb
            d2 = 2.0 * c * e / rb**2 - 2.0 * ef / rb**3 + 2.0 * alpha**2 * c * e
            g[big] = d0
            g1r[big] = d1 / rb
            g2[big] = (d2 - d1 / rb) / rb**2
        f[ns], f1r[ns], f2[ns] = g, g1r, g2
    return 0.5 * f, 0.5 * f1r, 0.5 * f2


def _real_space(table: EwaldTable, torus: FlatTorus, d: np.ndarray, order: int, regular: bool):
    """Real-space Ewald sum for displacements ``d`` (N, 3)."""
    n = len(d)
    dr = torus.reduce(d)
    vec = dr[:, None, :] + table.lattice_vectors[None, :, :]
    r2 = np.einsum("nmi,nmi->nm", vec, vec)
    inside = r2 <= table.real_cutoff**2
    if regular:
        zero = np.flatnonzero(np.all(table.lattice_vectors == 0.0, axis=1))
        inside[:, zero] = True
    rows, cols = np.nonzero(inside)
    v = vec[rows, cols]
    r = np.sqrt(r2[rows, cols])
    singular = np.ones_like(r, dtype=bool)
    if regular:
        singular = ~np.isin(cols, zero)
    if np.any(singular & (r < 1e-9 * torus.inj_radius)):
        raise SingularityError("evaluation point coincides with a singular point of the Green's function")
    f, f1r, f2 = _radial_profile(r, table.alpha, singular)
    val = np.bincount(rows, f, minlength=n)
    grad = hess = None
    if order >= 1:
        grad = np.stack([np.bincount(rows, f1r * v[:, i], minlength=n) for i in range(3)], axis=1)
    if order >= 2:
        hess = np.empty((n, 3, 3))
        for i in range(3):
            for j in range(i, 3):
                hij = np.bincount(rows, f2 * v[:, i] * v[:, j], minlength=n)
                hess[:, i, j] = hij
                hess[:, j, i] = hij
        hess += np.bincount(rows, f1r, minlength=n)[:, None, None] * np.eye(3)
    return val, grad, hess


def _reciprocal(table: EwaldTable, x: np.ndarray, cos_coef, sin_coef, order: int):
    """Reciprocal sum ``sum_k A_k (C_k cos k.x + S_k sin k.x)`` and derivatives."""
    phase = x @ table.kvectors.T
    cs, sn = np.cos(phase), np.sin(phase)
    a = table.kcoef
    even = cs * (a * cos_coef) + sn * (a * sin_coef)
    val = even.sum(axis=1)
    grad = hess = None
    if order >= 1:
        odd = -sn * (a * cos_coef) + cs * (a * sin_coef)
        grad = odd @ table.kvectors
    if order >= 2:
        hess = -np.einsum("nk,ki,kj->nij", even, table.kvectors, table.kvectors)
    return val, grad, hess


def _as_points(x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x), single


def ewald_green(torus: FlatTorus, x, derivs: int = 2, alpha: float | None = None, table: EwaldTable | None = None):
    """Periodic Green's function and its derivatives.

    Parameters
    ----------
    torus : FlatTorus
    x : array_like, shape (3,) or (N, 3)
    derivs : int
        Highest derivative order returned (0, 1 or 2).
    alpha : float, optional
        Splitting parameter; defaults to ``sqrt(pi) / V^(1/3)``.
    table : EwaldTable, optional
        Reuse a precomputed table (overrides ``alpha``).

    Returns
    -------
    tuple
        ``(G,)``, ``(G, grad G)`` or ``(G, grad G, Hess G)``.
    """
    table = table or build_ewald_table(torus, alpha)
    pts, single = _as_points(x)
    out = [[], [], []]
    K = len(table.kvectors)
    for s in range(0, len(pts), _CHUNK):
        chunk = pts[s : s + _CHUNK]
        rv, rg, rh = _real_space(table, torus, chunk, derivs, regular=False)
        kv, kg, kh = _reciprocal(table, chunk, np.ones(K), np.zeros(K), derivs)
        out[0].append(rv + kv + table.constant)
        if derivs >= 1:
            out[1].append(rg + kg)
        if derivs >= 2:
            out[2].append(rh + kh)
    res = tuple(np.concatenate(o) for o in out[: derivs + 1])
    if single:
        res = tuple(r[0] for r in res)
    return res


# ---------------------------------------------------------------------------
# Harmonic field
# ---------------------------------------------------------------------------


class HarmonicField:
    """Evaluator of ``h = sum_a c_a G(x - x_a)`` and ``h_eps = 1 + eps h``.

    Instances are immutable after construction and safe to share between threads.
    """

    def __init__(
        self,
        config: ChargeConfig,
        epsilon: float = 1.0,
        alpha: float | None = None,
        tol: float = 1e-12,
        table: EwaldTable | None = None,
    ):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.config = config
        self.torus = config.torus
        self.epsilon = float(epsilon)
        charges = config.charges
        self._src = np.flatnonzero(charges != 0)
        self._src_pos = config.positions[self._src]
        self._src_charge = charges[self._src]
        self.trivial = self._src.size == 0
        if self.trivial:
            self.table = table
            return
        self.table = table or build_ewald_table(self.torus, alpha, tol)
        phase = self._src_pos @ self.table.kvectors.T
        self._cos = self._src_charge @ np.cos(phase)
        self._sin = self._src_charge @ np.sin(phase)

    def with_epsilon(self, epsilon: float) -> "HarmonicField":
        other = object.__new__(HarmonicField)
        other.__dict__.update(self.__dict__)
        other.epsilon = float(epsilon)
        return other

    @property
    def torus_volume(self) -> float:
        return self.torus.volume

    def _evaluate(self, pts, order, regular_source=None):
        n = len(pts)
        val = np.zeros(n)
        grad = np.zeros((n, 3)) if order >= 1 else None
        hess = np.zeros((n, 3, 3)) if order >= 2 else None
        if self.trivial:
            return val, grad, hess
        for a, (pos, c) in enumerate(zip(self._src_pos, self._src_charge)):
            reg = regular_source is not None and self._src[a] == regular_source
            v, g, h = _real_space(self.table, self.torus, pts - pos, order, regular=reg)
            val += c * v
            if order >= 1:
                grad += c * g
            if order >= 2:
                hess += c * h
        v, g, h = _reciprocal(self.table, pts, self._cos, self._sin, order)
        val += v + self.table.constant * self._src_charge.sum()
        if order >= 1:
            grad += g
        if order >= 2:
            hess += h
        return val, grad, hess

    def evaluate(self, x, order: int = 2, regular_puncture: int | None = None):
        """Return ``h`` and derivatives up to ``order``.

        With ``regular_puncture`` set, the singular term ``c/(2|x - x_a|)`` of that
        puncture (nearest image) is removed analytically, so the result is smooth
        at ``x_a``.
        """
        pts, single = _as_points(x)
        chunks = [self._evaluate(pts[s : s + _CHUNK], order, regular_puncture) for s in range(0, len(pts), _CHUNK)]
        res = [np.concatenate([c[0] for c in chunks])]
        if order >= 1:
            res.append(np.concatenate([c[1] for c in chunks]))
        if order >= 2:
            res.append(np.concatenate([c[2] for c in chunks]))
        if single:
            res = [r[0] for r in res]
        return tuple(res)

    def h(self, x):
        return self.evaluate(x, 0)[0]

    def gradient(self, x):
        return self.evaluate(x, 1)[1]

    def hessian(self, x):
        return self.evaluate(x, 2)[2]

    def h_eps(self, x, order: int = 0):
        """``h_eps = 1 + eps h`` and derivatives up to ``order``."""
        res = self.evaluate(x, order)
        e = self.epsilon
        out = (1.0 + e * res[0],) + tuple(e * r for r in res[1:])
        return out if order > 0 else out[0]

    def regular(self, x, puncture: int, order: int = 2):
        """Regular part ``h - c/(2 rho)`` at puncture ``puncture`` and its derivatives."""
        if self.config.charges[puncture] == 0:
            return self.evaluate(x, order)
        return self.evaluate(x, order, regular_puncture=puncture)


def monopole_field(config: ChargeConfig, epsilon: float = 1.0, **kwargs) -> HarmonicField:
    """Build the harmonic field of a valid configuration (see :class:`HarmonicField`)."""
    return HarmonicField(config, epsilon, **kwargs)


# ---------------------------------------------------------------------------
# Flux and local expansion
# ---------------------------------------------------------------------------


def _exclusion_check(field: HarmonicField, center: np.ndarray, sigma: float, skip: int | None):
    torus = field.torus
    if sigma >= torus.inj_radius / 4.0:
        raise GeometryError(f"sphere radius {sigma} must be below inj_radius/4 = {torus.inj_radius / 4}")
    for p in field.config.punctures:
        if skip is not None and p.index == skip:
            continue
        d = torus.distance(center, p.position)
        if sigma >= 0.5 * d:
            raise GeometryError(f"sphere of radius {sigma} around the center meets the exclusion ball of {p.name}")


def flux(field: HarmonicField, center, sigma: float, n_theta: int = 24) -> float:
    """Outward flux ``-(1/2 pi) oint_{S_sigma} dh/dn dA``.

    Parameters
    ----------
    field : HarmonicField
    center : int or array_like
        Puncture index or an arbitrary point.
    sigma : float
        Sphere radius.
    n_theta : int
        Gauss-Legendre order in ``cos(theta)``.

    Returns
    -------
    float
        Equals the enclosed charge.
    """
    if isinstance(center, (int, np.integer)):
        idx = int(center)
        c = field.config.punctures[idx].position
    else:
        idx = None
        c = np.asarray(center, dtype=float)
    _exclusion_check(field, c, sigma, idx)
    normals, weights = sphere_quadrature(n_theta)
    if field.trivial:
        return 0.0
    grad = field.gradient(c + sigma * normals)
    dn = np.einsum("ni,ni->n", grad, normals)
    return float(-(sigma**2) * np.dot(weights, dn) / (2.0 * np.pi))


@dataclass(frozen=True)
class RegularPartData:
    """Constant and linear term of the regular part at a puncture."""

    puncture: int
    lam: float
    ell: np.ndarray
    radii: np.ndarray
    sphere_means: np.ndarray
    spread: float
    ell_raw: np.ndarray


def regular_part(field: HarmonicField, puncture: int, n_theta: int = 16, tol: float = 1e-6) -> RegularPartData:
    """Extract ``lambda`` and ``ell`` from sphere averages of ``h - c/(2 rho)``.

    The averages are taken on radii ``rho0 2^-s`` (s = 2..6) and extrapolated to
    ``rho = 0`` by a least-squares fit in ``rho^2``.  The linear coefficient is
    recovered from the first angular moment, ``ell = (3/rho) <(h - c/2rho) n>``.

    Raises
    ------
    AccuracyError
        If the sphere averages disagree with the extrapolated value by more than
        ``tol * (1 + |lambda|)``, or a fixed point shows a nonzero gradient.
    """
    p = field.config.punctures[puncture]
    if field.trivial:
        z = np.zeros(3)
        return RegularPartData(puncture, 0.0, z, np.zeros(0), np.zeros(0), 0.0, z)
    rho0 = field.config.rho0
    radii = rho0 * 2.0 ** -np.arange(2, 7)
    normals, weights = sphere_quadrature(n_theta)
    w = weights / (4.0 * np.pi)
    means, ells = [], []
    for r in radii:
        vals = field.h(p.position + r * normals) - p.charge / (2.0 * r)
        means.append(np.dot(w, vals))
        ells.append(3.0 / r * (w * vals) @ normals)
    means = np.array(means)
    A = np.stack([np.ones_like(radii), radii**2], axis=1)
    coef, *_ = np.linalg.lstsq(A, means, rcond=None)
    lam = float(coef[0])
    spread = float(np.max(np.abs(means - lam)))
    if spread > tol * (1.0 + abs(lam)):
        raise AccuracyError(f"regular-part extrapolation did not settle (spread {spread:.3e})")
    ell_raw = np.mean(ells, axis=0)
    if np.max(np.abs(np.array(ells) - ell_raw)) > tol * (1.0 + np.linalg.norm(ell_raw)):
        raise AccuracyError("first-moment estimates of ell disagree across radii")
    if p.kind == "dihedral":
        if np.linalg.norm(ell_raw) > tol:
            raise AccuracyError(f"gradient at fixed point {p.name} is {np.linalg.norm(ell_raw):.3e}, expected 0")
        ell = np.zeros(3)
    else:
        ell = ell_raw
    return RegularPartData(puncture, lam, ell, radii, means, spread, ell_raw)


def regular_part_direct(field: HarmonicField, puncture: int) -> tuple[float, np.ndarray]:
    """``lambda`` and ``ell`` from the analytically regularised evaluator at the puncture."""
    p = field.config.punctures[puncture]
    v, g = field.regular(p.position, puncture, order=1)
    return float(v), np.asarray(g)


# ---------------------------------------------------------------------------
# Positivity threshold
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdResult:
    epsilon0: float
    scan: tuple  # ((epsilon, min h_eps, valid), ...) in increasing epsilon
    grid: int


def positivity_threshold(
    field: HarmonicField,
    eps_scan: Sequence[float] | None = None,
    grid: int = 48,
    exclusion_factor: float = 8.0,
) -> ThresholdResult:
    """Largest scanned ``eps`` with ``h_eps > 1/2`` off the balls ``B_{8 eps}(q_j)``.

    Only fixed points with ``m_j in {0, 1}`` are excluded.  Validity is required
    for every smaller scanned value as well, so the answer is conservative.
    """
    if eps_scan is None:
        eps_scan = 2.0 ** -np.arange(3, 17)
    eps_scan = np.sort(np.asarray(eps_scan, dtype=float))
    if field.trivial:
        scan = tuple((float(e), 1.0, True) for e in eps_scan)
        return ThresholdResult(float(eps_scan[-1]), scan, grid)
    torus = field.torus
    f = (np.arange(grid) + 0.5) / grid
    frac = np.stack(np.meshgrid(f, f, f, indexing="ij"), axis=-1).reshape(-1, 3)
    pts = torus.to_cartesian(frac)
    cfg = field.config
    pos = cfg.positions
    dist = torus.distance(pts[:, None, :], pos[None, :, :])
    charges = cfg.charges
    near = np.any((dist < 1e-6 * torus.inj_radius) & (charges[None, :] != 0), axis=1)
    if np.any(near & np.any((dist < 1e-6 * torus.inj_radius) & (charges[None, :] < 0), axis=1)):
        raise SingularityError("sample grid hits a negatively charged puncture")
    h = np.full(len(pts), np.inf)
    h[~near] = field.h(pts[~near])
    bad = [p.index for p in cfg.punctures if p.kind == "dihedral" and p.weight in (0, 1)]
    dbad = np.min(dist[:, bad], axis=1) if bad else np.full(len(pts), np.inf)
    scan = []
    eps0 = None
    ok_so_far = True
    for e in eps_scan:
        mask = dbad >= exclusion_factor * e
        hmin = float(np.min(1.0 + e * h[mask])) if np.any(mask) else np.inf
        valid = hmin > 0.5
        scan.append((float(e), hmin, bool(valid)))
        if valid and ok_so_far:
            eps0 = float(e)
        else:
            ok_so_far = False
    if eps0 is None:
        raise ThresholdNotFoundError("no scanned epsilon keeps h_eps above 1/2 off the exclusion balls")
    return ThresholdResult(eps0, tuple(scan), grid)
