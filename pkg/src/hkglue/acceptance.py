"""The twelve acceptance checks, shared by the ``report`` subcommand and the test suite.

Each check returns a :class:`Record`; ``run_all`` evaluates them in order.
Profile ``strict`` uses the stated sample counts, ``fast`` reduces them for
smoke runs (tolerances are never relaxed).
"""
from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import alf_models, deformation, gluing, lattice_harmonics as lh, triple_calculus as tc
from .errors import ConfigError
from .numerics import fibonacci_directions


@dataclass(frozen=True)
class Record:
    name: str
    passed: bool
    measured: str
    expected: str
    source: str  # where the expected value comes from: theory, analytic or oracle
    seconds: float = 0.0

    @property
    def status(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def line(self) -> str:
        return f"[{self.status}] {self.name}: measured {self.measured}; expected {self.expected}"


PROFILES = {
    "strict": dict(n_sweep=32, n_triple=1000, n_solve=10_000, n_topology=200, n_harm=100),
    "fast": dict(n_sweep=12, n_triple=200, n_solve=1000, n_topology=50, n_harm=30),
}


def _timed(fn):
    def wrapper(*args, **kwargs):
        t = time.perf_counter()
        rec = fn(*args, **kwargs)
        return Record(rec.name, rec.passed, rec.measured, rec.expected, rec.source, time.perf_counter() - t)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def check_flux(profile="strict", field=None) -> Record:
    """Flux around every puncture of the generic configuration at two radii."""
    t = time.perf_counter()
    field = field or lh.monopole_field(lh.generic_config())
    cfg = field.config
    worst = 0.0
    for p in cfg.punctures:
        for r in (cfg.rho0 / 2, cfg.rho0 / 4):
            worst = max(worst, abs(lh.flux(field, p.index, r) - p.charge))
    dt = time.perf_counter() - t
    return Record("C1 flux quantization", worst <= 1e-6 and dt < 30, f"max |flux - c| = {worst:.2e} in {dt:.1f} s",
                  "<= 1e-6 in < 30 s", "theory")


@_timed
def check_harmonicity(profile="strict", field=None) -> Record:
    """Relative finite-difference Laplacian at probes away from punctures, two steps."""
    n = PROFILES[profile]["n_harm"]
    field = field or lh.monopole_field(lh.generic_config())
    cfg = field.config
    rng = np.random.default_rng(11)
    probes = []
    while len(probes) < n:
        x = field.torus.to_cartesian(rng.uniform(size=3))
        if cfg.nearest_puncture(x)[1][0] >= cfg.rho0 / 2:
            probes.append(x)
    worst = 0.0
    for x in probes:
        res = tc.closedness_residual(field, x, full=True)
        scale = np.sum(np.abs(np.diag(field.with_epsilon(1.0).hessian(x))))
        worst = max(worst, res.residual / scale, res.residual_half_step / scale)
    return Record("C2 harmonicity", worst <= 1e-6, f"max relative |Laplacian h| = {worst:.2e} ({n} probes, 2 steps)",
                  "<= 1e-6", "theory")


def random_frame(rng, spread: float = 0.2) -> np.ndarray:
    """Well-conditioned coframe with positive orientation: rotation times ``I + spread * noise``."""
    Qm, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    if np.linalg.det(Qm) < 0:
        Qm[:, 0] *= -1
    M = np.eye(4) + spread * rng.uniform(-1, 1, size=(4, 4)) / 4
    E = Qm @ M
    return E if np.linalg.det(E) > 0 else E[[1, 0, 2, 3]]


@_timed
def check_su2(profile="strict") -> Record:
    """Exact Gibbons-Hawking samples at random (h, eps, frame)."""
    n = PROFILES[profile]["n_triple"]
    rng = np.random.default_rng(3)
    q_err = star_err = 0.0
    for _ in range(n):
        h = rng.uniform(0.5, 3.0)
        e = 10 ** rng.uniform(-1, 0)
        E = random_frame(rng)
        tri = tc.gh_triple_sample(h, e, tc.CoframeSample(E))
        data = tc.intersection_matrix(tri)
        q_err = max(q_err, float(np.max(np.abs(data.Q_normalized - np.eye(3)))))
        g = tc.recover_metric(tri)
        S = tc.hodge_star(g)
        star_err = max(star_err, float(np.max(np.abs(S @ S - np.eye(6)))))
    ok = q_err <= 1e-12 and star_err <= 1e-12
    return Record("C3 SU(2) identities", ok, f"|Q - id| = {q_err:.1e}, |star^2 - id| = {star_err:.1e} ({n} draws)",
                  "both <= 1e-12", "analytic")


SWEEP_EPS = tuple(2.0**-k for k in range(5, 10))


@_timed
def check_gluing_rate(profile="strict", workers: int = 4) -> Record:
    """Slope of log sup |Q_eps - id| against log eps over every transition annulus."""
    n = PROFILES[profile]["n_sweep"]
    t = time.perf_counter()
    res = gluing.error_sweep(gluing.sweep_config(), SWEEP_EPS, n_rho=n, n_theta=n, workers=workers)
    dt = time.perf_counter() - t
    ok = 1.6 <= res.slope <= 2.0 and dt < 600
    return Record("C4 gluing-error rate", ok, f"slope {res.slope:.4f} ({n}^3 per annulus, {dt:.1f} s)",
                  "slope in [1.6, 2.0], < 600 s", "theory")


@_timed
def check_alf_decay(profile="strict") -> Record:
    model = alf_models.AsymptoticModel(2)
    centred = alf_models.MultiTaubNut(np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]), (1, 1))
    shifted = centred.translated(np.array([5.0, 0.0, 0.0]))
    p0 = alf_models.decay_exponent(centred, model).exponent
    p1 = alf_models.decay_exponent(shifted, model).exponent
    ok = abs(p0 - 3.0) <= 0.3 and abs(p1 - 2.0) <= 0.3
    return Record("C5 ALF decay", ok, f"centred {p0:.3f}, translated {p1:.3f}", "3.0 +- 0.3 and 2.0 +- 0.3", "theory")


def random_balanced(rng, torus=None):
    """Random balanced weights and generic pair positions."""
    torus = torus or lh.FlatTorus.cubic()
    n = int(rng.integers(0, 5))
    ks = [1] * n
    budget = 16 - n
    m = np.zeros(8, dtype=int)
    cuts = np.sort(rng.integers(0, budget + 1, size=8 + n - 1))
    parts = np.diff(np.concatenate([[0], cuts, [budget]]))
    m += parts[:8]
    ks = [k + int(x) for k, x in zip(ks, parts[8:])]
    pairs = [(torus.to_cartesian(rng.uniform(0.05, 0.45, size=3) * rng.choice([-1, 1], size=3)), k) for k in ks]
    return list(m), pairs


@_timed
def check_topology(profile="strict") -> Record:
    n = PROFILES[profile]["n_topology"]
    rng = np.random.default_rng(5)
    bad = 0
    for _ in range(n):
        m, pairs = random_balanced(rng)
        ep = alf_models.euler_and_parameters(lh.ChargeConfig(lh.FlatTorus.cubic(), m, pairs))
        bad += (ep.euler, ep.parameters) != (24, 58)
    rejected = 0
    for _ in range(n):
        m, pairs = random_balanced(rng)
        m[int(rng.integers(0, 8))] += int(rng.choice([-1, 1, 2]))
        if min(m) < 0:
            m[int(np.argmin(m))] = 1
        if sum(m) + sum(k for _, k in pairs) == 16:
            m[0] += 1
        try:
            lh.ChargeConfig(lh.FlatTorus.cubic(), m, pairs)
        except ConfigError:
            try:
                alf_models.euler_and_parameters(m, [k for _, k in pairs])
            except ConfigError:
                rejected += 1
    ok = bad == 0 and rejected == n
    return Record("C6 topology and parameters", ok, f"{n - bad}/{n} balanced give (24, 58); {rejected}/{n} unbalanced rejected",
                  "all", "theory")


def transition_points(config, eps: float, n: int = 6) -> np.ndarray:
    """A few points in the transition annuli of every puncture."""
    r1, r2 = gluing.transition_radii(eps)
    dirs = fibonacci_directions(n)
    pts = []
    for k, p in enumerate(config.punctures):
        d = dirs[k % len(dirs)]
        pts.append(p.position + (r1 + (k + 1) / (len(config.punctures) + 2) * (r2 - r1)) * d)
    return np.array(pts)


@_timed
def check_matrix_solver(profile="strict") -> Record:
    n = PROFILES[profile]["n_solve"]
    rng = np.random.default_rng(9)
    Q = np.eye(3) + 0.06 * deformation._sym(rng.uniform(-1, 1, size=(n, 3, 3)))
    S = 0.035 * deformation._sym(rng.uniform(-1, 1, size=(n, 3, 3)))
    prob = deformation.MatrixEquationProblem(Q, S)
    A = deformation.solve_F(prob)
    res = float(np.max(np.abs(prob.residual(A))))
    gl = gluing.GluedTriple(gluing.sweep_config(), 2.0**-6)
    q_err = idem = 0.0
    for x in transition_points(gl.config, gl.epsilon):
        s = gl.sample(x)
        out, _ = deformation.pointwise_renormalize(s.triple)
        q_err = max(q_err, float(np.linalg.norm(tc.intersection_matrix(out).Q_normalized - np.eye(3))))
        out2, _ = deformation.pointwise_renormalize(out)
        idem = max(idem, float(np.max(np.abs(out2.coefficients - out.coefficients))))
    ok = res <= 1e-12 and q_err <= 1e-10 and idem <= 1e-12
    return Record("C7 matrix solver", ok,
                  f"residual {res:.1e} ({n} instances), renormalised |Q - id| {q_err:.1e}, idempotence {idem:.1e}",
                  "<= 1e-12, <= 1e-10, <= 1e-12", "oracle")


@_timed
def check_contraction(profile="strict") -> Record:
    scalar = deformation.quadratic_ift(deformation.scalar_problem(0.01))
    exact = (-1 + np.sqrt(1 - 0.04)) / 2
    Qf = deformation.transition_Q_field(gluing.sweep_config(), 2.0**-6, n=16)
    P = deformation.renormalization_problem(Qf)
    grid = deformation.quadratic_ift(P)
    A = grid.x
    sub = float(np.max(np.abs(Qf @ A + A @ Qf + A @ Qf @ A - (np.eye(3) - Qf))))
    ok = (
        scalar.residual <= 1e-10
        and abs(scalar.x[0] - exact) <= 1e-12
        and abs(scalar.x[0]) <= scalar.bound
        and grid.residual <= 1e-10
        and sub <= 1e-10
        and P.norm(A) <= grid.bound
    )
    return Record("C8 contraction solver", ok,
                  f"scalar x = {scalar.x[0]:.8f} (res {scalar.residual:.1e}), grid res {grid.residual:.1e}, "
                  f"|x|/2C|Phi(0)| = {P.norm(A) / grid.bound:.3f}",
                  "hypotheses hold, |x| <= 2C|Phi(0)|, residual <= 1e-10", "oracle")


def dirac_fd_order(eps: float = 0.05, point=(0.61, 0.42, 0.77), steps=(0.02, 0.01, 0.005), phase: float = 0.7):
    field = lh.monopole_field(lh.generic_config(), eps)

    def pot(x, order=1):
        return field.h_eps(x, max(order, 1))

    form = deformation.TrigForm(fiber_mode=1, fiber_amp=0.3)
    p = np.asarray(point, float)
    ds, c = deformation.dirac_gh(form.at_phase(phase), pot, eps, p)
    errs = []
    for s in steps:
        d2, c2 = deformation.dirac_gh_fd(form.values_tx, pot, eps, p, s, phase)
        errs.append(abs(d2 - ds[0]) + float(np.max(np.abs(c2 - c[0]))))
    errs = np.array(errs)
    return float(np.min(np.log2(errs[:-1] / errs[1:]))), errs


@_timed
def check_operator(profile="strict") -> Record:
    order, _ = dirac_fd_order()
    kum = lh.monopole_field(lh.kummer_config())
    form = deformation.TrigForm().one_form()
    pts = np.random.default_rng(2).uniform(size=(50, 3))
    ds, c = deformation.dirac_gh(form, lambda x, order=1: kum.h_eps(x, 1), 0.1, pts)
    J = form.horizontal(pts)
    d0 = deformation.dirac_flat_torus(J[:, 0, :], J[:, 1:, :])
    flat = float(max(np.max(np.abs(ds - d0[0])), np.max(np.abs(c - d0[1]))))
    fit = deformation.operator_convergence(lh.monopole_field(lh.generic_config()), [2.0**-k for k in range(8, 14)])
    ok = order >= 1.8 and flat <= 1e-12 and fit.exponent > 0
    return Record("C9 operator consistency", ok,
                  f"FD order {order:.2f}, flat reduction {flat:.1e}, convergence exponent {fit.exponent:.3f}",
                  "order >= 1.8, exact flat reduction, exponent > 0", "oracle")


COLLAPSE_EPS = tuple(2.0**-k for k in range(10, 16))


@_timed
def check_collapse(profile="strict") -> Record:
    prof = gluing.collapse_profile(lh.monopole_field(lh.generic_config()), COLLAPSE_EPS, beta=0.4)
    ok = abs(prof.exponent_h - 0.6) <= 0.1
    return Record("C10 collapse profile", ok, f"exponent {prof.exponent_h:.3f}", "0.6 +- 0.1", "theory")


def levi_civita_order(eps: float = 0.3, point=(0.61, 0.42, 0.77), steps=(0.04, 0.02, 0.01)):
    field = lh.monopole_field(lh.generic_config(), eps)

    def pot(x, order=1):
        return field.h_eps(x, max(order, 1))

    exact = tc.levi_civita_gh(pot, eps, np.asarray(point))
    errs = []
    for s in steps:
        fd = tc.frame_connection_fd(pot, eps, np.asarray(point), s)
        errs.append(float(np.max(np.abs(fd - exact.gamma))))
    errs = np.array(errs)
    return float(np.min(np.log2(errs[:-1] / errs[1:]))), errs


def taub_nut_ricci(step: float = 1e-3, point=(0.7, -0.4, 0.5)) -> float:
    def pot(x, order=1):
        x = np.atleast_2d(x)
        r = np.linalg.norm(x, axis=1)
        return 1.0 + 0.5 / r, -0.5 * x / r[:, None] ** 3

    x = np.asarray(point, float)
    diag = tc.curvature_diagnostics(lambda p: tc.gh_coordinate_metric(pot, 1.0, x, p), x, step)
    return diag.ricci_norm


@_timed
def check_curvature(profile="strict") -> Record:
    order, _ = levi_civita_order()
    ric = taub_nut_ricci()
    ok = order >= 1.8 and ric <= 1e-4
    return Record("C11 curvature closed forms", ok, f"FD order {order:.2f}, Taub-NUT |Ric| {ric:.1e}",
                  "order >= 1.8, |Ric| <= 1e-4", "analytic")


@_timed
def check_determinism(profile="strict") -> Record:
    from .cli import main

    outputs = []
    with tempfile.TemporaryDirectory() as tmp:
        for k, threads in enumerate((1, 4, 1, 3)):
            out = Path(tmp) / f"run{k}"
            for cmd in (["error-sweep"], ["topology"], ["monopole"]):
                code = main(cmd + ["--out", str(out), "--threads", str(threads), "--tol-profile", "fast", "--quiet"])
                if code != 0:
                    return Record("C12 determinism", False, f"{cmd[0]} exited {code}", "byte-identical CSVs", "analytic")
            outputs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    same = all(o == outputs[0] for o in outputs[1:]) and len(outputs[0]) >= 3
    return Record("C12 determinism", same, f"{len(outputs[0])} CSVs over 4 runs (threads 1, 4, 1, 3)",
                  "byte-identical CSVs", "analytic")


CHECKS = (
    check_flux,
    check_harmonicity,
    check_su2,
    check_gluing_rate,
    check_alf_decay,
    check_topology,
    check_matrix_solver,
    check_contraction,
    check_operator,
    check_collapse,
    check_curvature,
    check_determinism,
)


def run_all(profile: str = "strict", include_determinism: bool = True) -> list[Record]:
    checks = CHECKS if include_determinism else CHECKS[:-1]
    return [chk(profile) for chk in checks]
