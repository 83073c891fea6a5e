"""Matrix solver F, pointwise renormalisation, the quadratic fixed-point iteration
and the Dirac-type operator of a collapsing Gibbons-Hawking metric.

1-forms on a Gibbons-Hawking region are written ``a = eps a0 theta + sum a_i theta_i``
(components ``(a0, a1, a2, a3)``).  Derivative data are horizontal: ``xi_i . a_mu``
is the derivative along the horizontal lift of ``d/dx_i`` and ``xi . a_mu`` the
derivative along the fibre.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConvergenceError, DomainError, GeometryError, HypothesisError
from .numerics import levi_civita3, loglog_fit, sphere_quadrature
from .triple_calculus import (
    TwoFormTriple,
    gh_chart_triple,
    gh_coordinate_metric,
    intersection_matrix,
    radial_gauge_connection,
    transform_two_forms,
    wedge,
)

EPS3 = levi_civita3()
# orientation convention on T^3: (theta_1, theta_2, theta_3) right-handed, so *(dx1 ^ dx2) = dx3
TORUS_ORIENTATION = +1


def _sym(A):
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def _opnorm(A) -> np.ndarray:
    """Spectral norm of symmetric matrices (batched)."""
    return np.max(np.abs(np.linalg.eigvalsh(_sym(A))), axis=-1)


# ---------------------------------------------------------------------------
# Matrix equation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MatrixEquationProblem:
    """``Q A^T + A Q + A Q A^T = S`` for symmetric ``A`` (batched over leading axes)."""

    Q: np.ndarray
    S: np.ndarray
    sigma: float = 0.25

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        S = np.asarray(self.S, dtype=float)
        if Q.shape[-2:] != (3, 3) or S.shape[-2:] != (3, 3):
            raise DomainError("Q and S must be 3x3 matrices")
        if np.max(np.abs(Q - np.swapaxes(Q, -1, -2)), initial=0) > 1e-12 * (1 + np.max(np.abs(Q))):
            raise DomainError("Q must be symmetric")
        object.__setattr__(self, "Q", _sym(Q))
        object.__setattr__(self, "S", _sym(S))

    def residual(self, A) -> np.ndarray:
        Q = self.Q
        At = np.swapaxes(A, -1, -2)
        return Q @ At + A @ Q + A @ Q @ At - self.S


def _sylvester_solver(Q):
    """Inverse of ``A -> Q A + A Q`` on symmetric matrices via the eigenbasis of ``Q``."""
    lam, V = np.linalg.eigh(Q)
    denom = lam[..., :, None] + lam[..., None, :]
    Vt = np.swapaxes(V, -1, -2)

    def solve(B):
        return V @ ((Vt @ B @ V) / denom) @ Vt

    return solve, 1.0 / np.min(denom, axis=(-2, -1))


def solve_F(problem: MatrixEquationProblem, tol: float = 1e-13, max_iter: int = 200, check: bool = True):
    """Symmetric solution ``A = F(S)`` of ``Q A^T + A Q + A Q A^T = S``.

    Iterates ``A <- L^{-1}(S - A Q A)`` with ``L(A) = Q A + A Q`` solved exactly in
    the eigenbasis of ``Q``.

    Raises
    ------
    DomainError
        If ``|Q - id| >= sigma`` or ``|S| > 1/8`` (with ``check``).
    ConvergenceError
        If the residual does not fall below ``tol``; carries the residual trace.
    """
    Q, S = problem.Q, problem.S
    if check:
        if np.max(_opnorm(Q - np.eye(3)), initial=0) >= problem.sigma:
            raise DomainError(f"|Q - id| must be < {problem.sigma}")
        if np.max(_opnorm(S), initial=0) > 0.125:
            raise DomainError("|S| must be <= 1/8 for the contraction")
    Linv, _ = _sylvester_solver(Q)
    A = Linv(S)
    trace = []
    for _ in range(max_iter):
        A_new = _sym(Linv(S - A @ Q @ A))
        res = float(np.max(np.abs(problem.residual(A_new)), initial=0))
        trace.append(res)
        A = A_new
        if res <= tol:
            return A
    raise ConvergenceError(f"solve_F did not converge (last residual {trace[-1]:.3e})", trace)


def pointwise_renormalize(triple: TwoFormTriple, tol: float = 1e-13):
    """Self-dual recombination ``omega' = (id + A) omega`` with ``A = F(id - Q_norm)``.

    The output has normalised intersection matrix ``id`` and the same associated
    volume as the input.  Returns ``(triple', A)``.
    """
    data = intersection_matrix(triple)
    A = solve_F(MatrixEquationProblem(data.Q_normalized, np.eye(3) - data.Q_normalized), tol=tol)
    out = TwoFormTriple((np.eye(3) + A) @ triple.coefficients, triple.mu0)
    return out, A


# ---------------------------------------------------------------------------
# Contraction solver
# ---------------------------------------------------------------------------


@dataclass
class ContractionProblem:
    """Data of ``Phi(x) = Phi(0) + L x + N(x)`` with the three quantitative hypotheses.

    ``sampler(rng, radius)`` draws random elements of norm at most ``radius``
    used to probe hypotheses (i) and (ii).
    """

    C: float
    q: float
    r: float
    phi0: np.ndarray
    apply_Linv: Callable
    apply_N: Callable
    norm: Callable = field(default=lambda v: float(np.max(np.abs(v))))
    apply_L: Callable | None = None
    sampler: Callable | None = None

    @property
    def phi0_norm(self) -> float:
        return float(self.norm(self.phi0))


@dataclass(frozen=True)
class IFTResult:
    x: np.ndarray
    iterations: int
    residual: float
    bound: float
    contraction: float
    trace: tuple  # ((iteration, step, factor), ...)


def check_hypotheses(problem: ContractionProblem, n_probe: int = 32, seed: int = 0, slack: float = 1e-9):
    """Probe (i) ``|L^-1| <= C``, (ii) the quadratic Lipschitz bound on ``B_r``, check (iii) exactly.

    Raises
    ------
    HypothesisError
        Naming the violated inequality.
    """
    P = problem
    if P.C <= 0 or P.q < 0 or P.r <= 0:
        raise HypothesisError("constants must satisfy C > 0, q >= 0, r > 0")
    bound = min(P.r / (2 * P.C), 1.0 / (4 * P.q * P.C**2) if P.q > 0 else np.inf)
    if not P.phi0_norm < bound:
        raise HypothesisError(
            f"(iii) violated: |Phi(0)| = {P.phi0_norm:.4g} >= min(r/2C, 1/4qC^2) = {bound:.4g}"
        )
    if P.sampler is None:
        return bound
    rng = np.random.default_rng(seed)
    for _ in range(n_probe):
        y = P.sampler(rng, 1.0)
        ny = P.norm(y)
        if ny > 0 and P.norm(P.apply_Linv(y)) > (P.C + slack) * ny:
            raise HypothesisError(f"(i) violated: |L^-1 y| > C |y| for a probe (C = {P.C})")
        x, z = P.sampler(rng, P.r), P.sampler(rng, P.r)
        lhs = P.norm(P.apply_N(x) - P.apply_N(z))
        rhs = P.q * P.norm(x + z) * P.norm(x - z)
        if lhs > rhs * (1 + slack) + 1e-300:
            raise HypothesisError(f"(ii) violated: |N(x) - N(y)| = {lhs:.4g} > q|x+y||x-y| = {rhs:.4g}")
    return bound


def quadratic_ift(problem: ContractionProblem, tol: float = 1e-13, max_iter: int = 500, probe: bool = True) -> IFTResult:
    """Solve ``Phi(x) = 0`` by ``x_{n+1} = -L^{-1}(Phi(0) + N(x_n))`` from ``x_0 = 0``.

    Refuses to run unless the hypotheses hold.  The returned solution satisfies
    ``|x| <= 2 C |Phi(0)|``.
    """
    P = problem
    check_hypotheses(P) if probe else None
    bound = 2.0 * P.C * P.phi0_norm
    x = np.zeros_like(np.asarray(P.phi0, dtype=float))
    trace = []
    prev_step = None
    worst = 0.0
    for it in range(1, max_iter + 1):
        x_new = -P.apply_Linv(P.phi0 + P.apply_N(x))
        step = P.norm(x_new - x)
        factor = step / prev_step if prev_step else 0.0
        worst = max(worst, factor)
        trace.append((it, step, factor))
        x = x_new
        if P.norm(x) > P.r:
            raise ConvergenceError("iterate left the ball B_r", [t[1] for t in trace])
        if step <= tol:
            break
        if prev_step is not None and step > prev_step and it > 3:
            raise ConvergenceError("iteration is not contracting", [t[1] for t in trace])
        prev_step = step
    else:
        raise ConvergenceError("fixed-point iteration did not converge", [t[1] for t in trace])
    if P.apply_L is not None:
        residual = P.norm(P.phi0 + P.apply_L(x) + P.apply_N(x))
    else:
        residual = P.norm(x + P.apply_Linv(P.phi0 + P.apply_N(x)))
    if P.norm(x) > bound * (1 + 1e-12):
        raise ConvergenceError("solution violates |x| <= 2C|Phi(0)|", [t[1] for t in trace])
    return IFTResult(x, len(trace), float(residual), bound, worst, tuple(trace))


def scalar_problem(delta: float, C: float = 1.0, q: float = 1.0, r: float = 0.5) -> ContractionProblem:
    """``Phi(x) = delta + x + x^2`` on R."""
    return ContractionProblem(
        C,
        q,
        r,
        np.array([float(delta)]),
        apply_Linv=lambda y: np.asarray(y, float),
        apply_N=lambda x: np.asarray(x, float) ** 2,
        norm=lambda v: float(np.max(np.abs(v))),
        apply_L=lambda x: np.asarray(x, float),
        sampler=lambda rng, rad: rng.uniform(-rad, rad, size=1),
    )


def renormalization_problem(Q_field) -> ContractionProblem:
    """Pointwise renormalisation on a sample grid as a single contraction problem.

    Unknown: a field of symmetric matrices ``A``; ``Phi(A) = -(id - Q) + (Q A + A Q) + A Q A``
    with the sup-over-grid spectral norm.  ``C = 1 / min(lam_i + lam_j)`` and
    ``q = max |Q|``.
    """
    Q = _sym(np.asarray(Q_field, dtype=float))
    S = np.eye(3) - Q
    Linv, cinv = _sylvester_solver(Q)
    C = float(np.max(cinv))
    q = float(np.max(_opnorm(Q)))

    def norm(A):
        return float(np.max(_opnorm(A), initial=0.0))

    def sampler(rng, rad):
        M = _sym(rng.normal(size=Q.shape))
        return M * (rad * rng.uniform() / max(norm(M), 1e-300))

    return ContractionProblem(
        C,
        q,
        1.0 / (4.0 * q * C),
        -S,
        apply_Linv=lambda B: _sym(Linv(B)),
        apply_N=lambda A: A @ Q @ A,
        norm=norm,
        apply_L=lambda A: Q @ A + A @ Q,
        sampler=sampler,
    )


def transition_Q_field(config, epsilon: float, n: int = 16, puncture: int = 0) -> np.ndarray:
    """Normalised intersection matrices of the glued triple on an ``n^3`` grid of a transition annulus.

    Grid: ``n`` radii in ``[eps^{2/5}, 2 eps^{2/5}]`` times an ``n x n`` product grid
    of directions about ``puncture``.  Returns shape ``(n * n, n, 3, 3)``.
    """
    from .gluing import GluedTriple, _normalised_Q, transition_radii

    gl = GluedTriple(config, epsilon)
    dirs, _ = sphere_quadrature(n, n)
    r1, r2 = transition_radii(epsilon)
    rho = np.linspace(r1, r2, n)
    bg, inner = gl.rays(puncture, dirs, r2, epsilon / r1)
    B, hP = gl.transition_rows(puncture, bg, inner, rho)
    return _normalised_Q(B, hP)[0]


# ---------------------------------------------------------------------------
# Dirac-type operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GHOneForm:
    """Components ``(a0, a1, a2, a3)`` of ``eps a0 theta + sum a_i theta_i`` with derivative evaluators.

    ``values(x) -> (N, 4)``; ``horizontal(x) -> (N, 4, 3)`` gives ``xi_k . a_mu``;
    ``fiber(x) -> (N, 4)`` gives ``xi . a_mu`` (``None`` for S^1-invariant forms).
    """

    values: Callable
    horizontal: Callable | None = None
    fiber: Callable | None = None

    @property
    def s1_invariant(self) -> bool:
        return self.fiber is None

    def norm_sq(self, x, h, epsilon: float) -> np.ndarray:
        """``|a|^2`` from the inverse metric in the coframe ``(theta, theta_1, theta_2, theta_3)``."""
        v = np.atleast_2d(self.values(np.atleast_2d(x)))
        h = np.broadcast_to(np.asarray(h, float), (len(v),))
        comps = np.concatenate([epsilon * v[:, :1], v[:, 1:]], axis=1)
        ginv = np.zeros((len(v), 4, 4))
        ginv[:, 0, 0] = h / epsilon**2
        ginv[:, [1, 2, 3], [1, 2, 3]] = (1.0 / h)[:, None]
        return np.einsum("na,nab,nb->n", comps, ginv, comps)


def dirac_gh(a: GHOneForm, potential: Callable, epsilon: float, point):
    """``(d^* a, c)`` with ``2 d^+ a = sum_i c_i omega_i`` for the metric ``h g_T + eps^2 h^{-1} theta^2``.

    Parameters
    ----------
    a : GHOneForm
    potential : callable
        ``potential(x, 1) -> (h, grad h)``, the Gibbons-Hawking potential ``h_eps``.
    epsilon : float
    point : array_like, shape (3,) or (N, 3)

    Returns
    -------
    dstar : ndarray (N,)
    c : ndarray (N, 3)
    """
    if a.horizontal is None:
        raise DomainError("dirac_gh needs horizontal derivative data")
    x = np.atleast_2d(np.asarray(point, float))
    h, gh = potential(x, 1)[:2]
    h = np.asarray(h, float).reshape(len(x))
    gh = np.asarray(gh, float).reshape(len(x), 3)
    if np.any(h <= 0):
        raise DomainError("Gibbons-Hawking potential must be positive")
    v = np.asarray(a.values(x), float).reshape(len(x), 4)
    J = np.asarray(a.horizontal(x), float).reshape(len(x), 4, 3)
    F = np.zeros((len(x), 4)) if a.fiber is None else np.asarray(a.fiber(x), float).reshape(len(x), 4)
    div = J[:, 1, 0] + J[:, 2, 1] + J[:, 3, 2]
    dstar = -(div + h**2 * F[:, 0] / epsilon) / h
    curl = np.einsum("ijk,nkj->ni", EPS3, J[:, 1:, :])  # (xi_j a_k - xi_k a_j)
    c = J[:, 0, :] + curl / h[:, None] + gh * (v[:, :1] / h[:, None]) - F[:, 1:] / epsilon
    return dstar, c


def dirac_flat_torus(f_grad, gamma_jac):
    """``D_0(f, gamma) = (d^* gamma, df + *d gamma)`` from derivative data.

    ``f_grad`` (..., 3) and ``gamma_jac`` (..., 3, 3) with ``gamma_jac[..., i, k] = d_k gamma_i``.
    Returns ``(-div gamma, grad f + curl gamma)``.
    """
    f_grad = np.asarray(f_grad, float)
    J = np.asarray(gamma_jac, float)
    div = np.trace(J, axis1=-2, axis2=-1)
    curl = TORUS_ORIENTATION * np.einsum("ijk,...kj->...i", EPS3, J)
    return -div, f_grad + curl


def dirac_gh_fd(values_tx: Callable, potential: Callable, epsilon: float, point, step: float, t0: float = 0.0):
    """Finite-difference oracle for :func:`dirac_gh` from the coordinate metric.

    ``values_tx(t, x) -> (4,)`` are the frame components ``(a0, a1, a2, a3)`` at
    fibre coordinate ``t`` and base point ``x``.  Uses coordinates
    ``(x1, x2, x3, t)``, ``theta = dt + A`` in the radial gauge about ``point``,
    ``d^* a = -|g|^{-1/2} d_mu(|g|^{1/2} g^{mu nu} a_nu)`` and
    ``c_i = (da ^ omega_i) / vol``, evaluated at fibre phase ``t0``.
    """
    p = np.asarray(point, float).reshape(3)
    perm = [1, 2, 3, 0]

    def coords_form(y):
        """Coordinate components (x1, x2, x3, t) of a at y = (x, t)."""
        x, t = y[:3], y[3]
        A = radial_gauge_connection(potential, epsilon, p, x[None])[0]
        v = np.asarray(values_tx(t, x), float)
        return np.concatenate([epsilon * v[0] * A + v[1:], [epsilon * v[0]]])

    def metric(y):
        g = gh_coordinate_metric(potential, epsilon, p, y[None, :3])[0]
        return g[np.ix_(perm, perm)]

    y0 = np.concatenate([p, [t0]])
    E = np.eye(4)
    dF = np.zeros((4, 4))  # dF[m, nu] = d_m a_nu
    flux = np.zeros(4)
    for m in range(4):
        yp, ym = y0 + step * E[m], y0 - step * E[m]
        ap, am = coords_form(yp), coords_form(ym)
        dF[m] = (ap - am) / (2 * step)
        gp, gm = metric(yp), metric(ym)
        jp = np.sqrt(np.linalg.det(gp)) * np.linalg.solve(gp, ap)
        jm = np.sqrt(np.linalg.det(gm)) * np.linalg.solve(gm, am)
        flux[m] = (jp[m] - jm[m]) / (2 * step)
    g0 = metric(y0)
    dstar = -flux.sum() / np.sqrt(np.linalg.det(g0))
    da = dF - dF.T  # da[m, n] = d_m a_n - d_n a_m
    from .triple_calculus import PAIRS

    da_vec = np.array([da[a, b] for a, b in PAIRS])
    h = float(potential(p[None], 0)[0][0])
    A0 = radial_gauge_connection(potential, epsilon, p, p[None])[0]
    Ef = np.zeros((4, 4))
    Ef[0, :3] = -A0
    Ef[0, 3] = -1.0
    Ef[1:, :3] = np.eye(3)
    omega = transform_two_forms(gh_chart_triple(h, epsilon), Ef)
    vol = epsilon * h * np.linalg.det(Ef)
    c = np.array([wedge(da_vec, omega[i]) for i in range(3)]) / vol
    return float(dstar), c


@dataclass(frozen=True)
class TrigForm:
    """Smooth periodic test 1-form on the unit torus with optional fibre modes."""

    fiber_mode: int = 0
    fiber_amp: float = 0.0

    def _base(self, x):
        x = np.atleast_2d(x)
        s = 2 * np.pi
        x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
        v = np.stack(
            [
                np.sin(s * x1) * np.cos(s * x2),
                np.cos(s * x3) + 0.5 * np.sin(s * x1),
                np.sin(s * (x1 + x3)),
                np.cos(s * x2) * np.sin(s * x1),
            ],
            axis=1,
        )
        J = np.zeros((len(x), 4, 3))
        J[:, 0, 0] = s * np.cos(s * x1) * np.cos(s * x2)
        J[:, 0, 1] = -s * np.sin(s * x1) * np.sin(s * x2)
        J[:, 1, 0] = 0.5 * s * np.cos(s * x1)
        J[:, 1, 2] = -s * np.sin(s * x3)
        J[:, 2, 0] = J[:, 2, 2] = s * np.cos(s * (x1 + x3))
        J[:, 3, 0] = s * np.cos(s * x2) * np.cos(s * x1)
        J[:, 3, 1] = -s * np.sin(s * x2) * np.sin(s * x1)
        return v, J

    def values(self, x):
        return self._base(x)[0]

    def horizontal(self, x):
        return self._base(x)[1]

    def values_tx(self, t, x):
        v = self._base(np.asarray(x)[None])[0][0]
        if self.fiber_amp:
            v = v + self.fiber_amp * np.cos(self.fiber_mode * t) * np.array([1.0, 0.5, -0.25, 0.75])
        return v

    def one_form(self) -> GHOneForm:
        return GHOneForm(self.values, self.horizontal)

    def at_phase(self, t: float) -> GHOneForm:
        """The fibre slice at phase ``t`` with its fibre derivative (for non-invariant forms)."""
        w = np.array([1.0, 0.5, -0.25, 0.75])
        k, amp = self.fiber_mode, self.fiber_amp

        def values(x):
            return self._base(x)[0] + amp * np.cos(k * t) * w

        def fiber(x):
            return np.broadcast_to(-amp * k * np.sin(k * t) * w, (len(np.atleast_2d(x)), 4))

        return GHOneForm(values, self.horizontal, fiber)


@dataclass(frozen=True)
class ConvergenceFit:
    eps: np.ndarray
    residual: np.ndarray  # sup over probes of |D_eps a - D_0 a|, per eps
    sup_h: np.ndarray  # sup over probes of |h_eps - 1|
    bound_ratio: float  # max over all probes of residual / triangle bound
    exponent: float
    n_probes: tuple


def _probe_set(field, rmin: float, n_grid: int, n_theta: int) -> np.ndarray:
    """Grid points with ``rho >= rmin`` plus spheres of radius ``rmin`` about each puncture."""
    cfg = field.config
    f = (np.arange(n_grid) + 0.5) / n_grid
    pts = field.torus.to_cartesian(np.stack(np.meshgrid(f, f, f, indexing="ij"), -1).reshape(-1, 3))
    normals, _ = sphere_quadrature(n_theta)
    sph = np.concatenate([p.position + rmin * (1 + 1e-12) * normals for p in cfg.punctures])
    pts = np.concatenate([sph, pts])
    _, d = cfg.nearest_puncture(pts)
    return pts[d >= rmin]


def operator_convergence(field, eps_list: Sequence[float], form: GHOneForm | None = None, probes=None,
                         tau: float = 0.5, c: float = 0.1, n_grid: int = 8, n_theta: int = 8) -> ConvergenceFit:
    """``sup |D_eps a - D_0 a|`` over probes with ``rho >= c eps^{(1 - tau)/2}`` for S^1-invariant ``a``.

    Without explicit ``probes`` each ``eps`` uses its own admissible probe set
    (see :func:`_probe_set`).  The residual is compared with the term-wise
    triangle bound ``|h-1|/h (|div a| + |curl a|) + |grad h|/h |a0|``.

    Raises
    ------
    GeometryError
        If a supplied probe lies too close to a puncture.
    """
    if not 0 < tau < 1:
        raise DomainError("tau must lie in (0, 1)")
    form = form or TrigForm().one_form()
    eps = np.array(sorted(float(e) for e in eps_list))
    cfg = field.config
    res, suph, ratios, counts = [], [], [], []
    for e in eps:
        rmin = c * e ** ((1.0 - tau) / 2.0)
        if probes is None:
            pts = _probe_set(field, rmin, n_grid, n_theta)
        else:
            pts = np.atleast_2d(np.asarray(probes, float))
            _, d = cfg.nearest_puncture(pts)
            if np.any(d < rmin):
                raise GeometryError(f"probe at distance {d.min():.3e} < c eps^((1-tau)/2) = {rmin:.3e}")
        if len(pts) == 0:
            raise GeometryError("no probes satisfy the distance restriction")
        v = form.values(pts)
        J = form.horizontal(pts)
        d0 = dirac_flat_torus(J[:, 0, :], J[:, 1:, :])
        fe = field.with_epsilon(e)
        h, g = fe.h_eps(pts, 1)
        pot = lambda x, order=1, _h=h, _g=g: (_h, _g)
        ds, cc = dirac_gh(form, pot, e, pts)
        diff = np.sqrt((ds - d0[0]) ** 2 + np.sum((cc - d0[1]) ** 2, axis=1))
        div = np.abs(np.trace(J[:, 1:, :], axis1=1, axis2=2))
        curl = np.linalg.norm(np.einsum("ijk,nkj->ni", EPS3, J[:, 1:, :]), axis=1)
        b = np.abs(h - 1) / h * (div + curl) + np.linalg.norm(g, axis=1) / h * np.abs(v[:, 0])
        res.append(float(diff.max()))
        suph.append(float(np.max(np.abs(h - 1))))
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.where(diff == 0, 0.0, diff / b)
        ratios.append(float(r.max()))
        counts.append(len(pts))
    res = np.array(res)
    expo = float("nan") if np.all(res == 0) else loglog_fit(eps, res).slope
    return ConvergenceFit(eps, res, np.array(suph), max(ratios), expo, tuple(counts))


# ---------------------------------------------------------------------------
# Fibre Fourier split
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FourierSplit:
    invariant: np.ndarray
    oscillatory: np.ndarray
    parseval_residual: float
    poincare_ratio: float


def fourier_split(samples, fiber_length: float = 2 * np.pi, derivative=None, axis: int = -1) -> FourierSplit:
    """Split equispaced fibre samples into mean and oscillatory parts.

    ``parseval_residual`` compares the discrete mean square with the sum of the
    parts; ``poincare_ratio = |Pi_perp a| / ((L / 2 pi) |d_t a|)`` (L^2 norms),
    which is at most 1.  The derivative is spectral unless supplied.
    """
    s = np.moveaxis(np.asarray(samples, dtype=float), axis, -1)
    n = s.shape[-1]
    if n < 8:
        raise DomainError(f"need at least 8 fibre samples, got {n}")
    mean = s.mean(axis=-1, keepdims=True)
    osc = s - mean
    ms = np.mean(s**2)
    pars = abs(ms - (np.mean(np.broadcast_to(mean, s.shape) ** 2) + np.mean(osc**2)))
    if derivative is None:
        k = np.fft.fftfreq(n, d=1.0 / n) * (2 * np.pi / fiber_length)
        if n % 2 == 0:
            k[n // 2] = 0.0
        derivative = np.fft.ifft(1j * k * np.fft.fft(s, axis=-1), axis=-1).real
    else:
        derivative = np.moveaxis(np.asarray(derivative, float), axis, -1)
    num = np.sqrt(np.mean(osc**2))
    den = fiber_length / (2 * np.pi) * np.sqrt(np.mean(derivative**2))
    ratio = 0.0 if num == 0 else (np.inf if den == 0 else float(num / den))
    return FourierSplit(
        np.moveaxis(np.broadcast_to(mean, s.shape), -1, axis).copy(),
        np.moveaxis(osc, -1, axis),
        float(pars),
        ratio,
    )
