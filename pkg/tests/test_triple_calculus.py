import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hkglue.errors import DegenerateBasisError, DomainError, GeometryError, NotDefiniteError
from hkglue.lattice_harmonics import generic_config, kummer_config, monopole_field
from hkglue.triple_calculus import (
    PAIRS,
    STANDARD_TRIPLE,
    CoframeSample,
    TwoFormTriple,
    closedness_residual,
    curvature_diagnostics,
    eta_star_eta,
    frame_connection_fd,
    gh_coordinate_metric,
    gh_metric,
    gh_triple_sample,
    hodge_star,
    intersection_matrix,
    levi_civita_gh,
    nabla_xi_theta_fd,
    recover_metric,
    selfdual_split,
    to_chart_order,
    transform_two_forms,
    wedge,
)
from oracles import hodge_brute, wedge_brute

ASD = np.array([[1, 0, 0, -1, 0, 0], [0, 1, 0, 0, -1, 0], [0, 0, 1, 0, 0, -1]], float)
seeds = st.integers(0, 2**31 - 1)


def random_coframe(rng, spread=0.2):
    Qm, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    if np.linalg.det(Qm) < 0:
        Qm[:, 0] *= -1
    E = Qm @ (np.eye(4) + spread * rng.uniform(-1, 1, size=(4, 4)) / 4)
    return E if np.linalg.det(E) > 0 else E[[1, 0, 2, 3]]


def random_definite_triple(rng):
    """Standard triple in a random coframe, mixed by a random SPD matrix."""
    E = random_coframe(rng)
    M = rng.normal(size=(3, 3))
    A = np.eye(3) + 0.2 * (M + M.T)
    C = A @ transform_two_forms(STANDARD_TRIPLE, E)
    return TwoFormTriple(C, abs(np.linalg.det(E))), E


# -- wedge and star ------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_wedge_against_brute_force(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 6))
    assert wedge(a, b) == pytest.approx(wedge_brute(a, b), abs=1e-12)


def test_pairs_order_contract():
    assert PAIRS == ((0, 1), (0, 2), (0, 3), (2, 3), (3, 1), (1, 2))


def test_euclidean_star():
    S = hodge_star(np.eye(4))
    e01 = np.eye(6)[0]
    assert np.allclose(S @ e01, np.eye(6)[3])
    assert np.allclose(hodge_star(np.eye(4), -1), -S)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_star_against_index_formula(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(4, 4))
    g = M @ M.T + 0.5 * np.eye(4)
    S = hodge_star(g)
    assert np.allclose(S, hodge_brute(g), atol=1e-9 * np.linalg.cond(g))
    assert np.max(np.abs(S @ S - np.eye(6))) <= 1e-12 * np.linalg.cond(g)
    ev = np.sort(np.linalg.eigvals(S).real)
    assert np.allclose(ev, [-1, -1, -1, 1, 1, 1], atol=1e-8)


def test_star_rejects_indefinite():
    with pytest.raises(DomainError):
        hodge_star(np.diag([1.0, 1.0, 1.0, -1.0]))


# -- intersection matrix --------------------------------------------------------


def test_standard_triple_is_identity():
    data = intersection_matrix(TwoFormTriple(STANDARD_TRIPLE))
    assert np.allclose(data.Q, np.eye(3)) and data.mu == pytest.approx(1.0) and data.definite


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(0.05, 1.0), seeds)
def test_gh_identity(h, eps, seed):
    E = random_coframe(np.random.default_rng(seed))
    tri = gh_triple_sample(h, eps, CoframeSample(E))
    data = intersection_matrix(tri)
    assert np.max(np.abs(data.Q_normalized - np.eye(3))) <= 1e-12
    assert np.max(np.abs(data.Q - np.eye(3))) <= 1e-12
    assert data.mu == pytest.approx(eps * h * np.linalg.det(E), rel=1e-12)
    # wedge oracle: omega_i ^ omega_i = 2 eps h (chart volume)
    chart = gh_triple_sample(h, eps).coefficients
    assert np.allclose([wedge(c, c) for c in chart], 2 * eps * h, rtol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10.0), seeds)
def test_scaling_invariance(lam, seed):
    tri, _ = random_definite_triple(np.random.default_rng(seed))
    a = intersection_matrix(tri).Q_normalized
    b = intersection_matrix(tri.scaled(lam)).Q_normalized
    assert np.allclose(a, b, atol=1e-12)


def test_not_definite():
    with pytest.raises(NotDefiniteError):
        intersection_matrix(TwoFormTriple(ASD))
    with pytest.raises(DomainError):
        TwoFormTriple(STANDARD_TRIPLE, 0.0)


def test_gh_sample_domain():
    assert np.allclose(gh_triple_sample(1.0, 1.0).coefficients, STANDARD_TRIPLE)
    with pytest.raises(DomainError):
        gh_triple_sample(0.0)
    with pytest.raises(DomainError):
        gh_triple_sample(1.0, 1.0, CoframeSample(np.diag([-1.0, 1, 1, 1])))


# -- metric recovery ---------------------------------------------------------------


def test_recover_flat():
    assert np.allclose(recover_metric(TwoFormTriple(STANDARD_TRIPLE)), np.eye(4), atol=1e-14)


def test_recover_gh_h2():
    g = recover_metric(gh_triple_sample(2.0, 1.0))
    assert np.allclose(to_chart_order(g), np.diag([2, 2, 2, 0.5]), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 4.0), st.floats(0.1, 1.0))
def test_recover_gh_metric(h, eps):
    g = recover_metric(gh_triple_sample(h, eps))
    assert np.allclose(g, gh_metric(h, eps), atol=1e-10 * h / eps)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_recover_random_definite(seed):
    tri, _ = random_definite_triple(np.random.default_rng(seed))
    g = recover_metric(tri)
    S = hodge_star(g)
    data = intersection_matrix(tri)
    assert np.max(np.abs(S @ S - np.eye(6))) <= 1e-10
    assert np.allclose(tri.coefficients @ S.T, tri.coefficients, atol=1e-10)
    assert np.sqrt(np.linalg.det(g)) == pytest.approx(data.mu, rel=1e-10)
    # round trip: intersection against the recovered volume reproduces Q_normalized
    Q = 0.5 * np.array([[wedge(a, b) for b in tri.coefficients] for a in tri.coefficients])
    Q /= np.sqrt(np.linalg.det(g))
    assert np.allclose(Q, data.Q_normalized, atol=1e-10)


# -- self-dual split ------------------------------------------------------------------


def test_split_examples():
    tri = TwoFormTriple(STANDARD_TRIPLE)
    A, em = selfdual_split(STANDARD_TRIPLE[1], tri)
    assert np.allclose(A, [0, 1, 0]) and np.allclose(em, 0)
    A, em = selfdual_split(ASD[2], tri)
    assert np.allclose(A, 0) and np.allclose(em, ASD[2])


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_split_reconstruction(seed):
    rng = np.random.default_rng(seed)
    E = random_coframe(rng)
    h, eps = rng.uniform(0.5, 3), rng.uniform(0.2, 1)
    tri = gh_triple_sample(h, eps, CoframeSample(E))
    g = recover_metric(tri)
    eta = rng.normal(size=(4, 6))
    A, em = selfdual_split(eta, tri, metric=g)
    assert np.max(np.abs(eta - A @ tri.coefficients - em)) <= 1e-12
    S = hodge_star(g)
    assert np.max(np.abs(em @ S.T + em)) <= 1e-9


def test_split_rejects_non_su2():
    tri = TwoFormTriple(np.diag([1.0, 2.0, 1.0]) @ STANDARD_TRIPLE)
    with pytest.raises(DegenerateBasisError):
        selfdual_split(STANDARD_TRIPLE[0], tri)


# -- eta * eta ---------------------------------------------------------------------------


def test_eta_star_eta_examples():
    assert np.all(eta_star_eta(np.zeros((3, 6))) == 0)
    em = np.zeros((3, 6))
    em[0] = ASD[0]
    E = eta_star_eta(em, metric=np.eye(4))
    expect = np.zeros((3, 3))
    expect[0, 0] = -1.0
    assert np.allclose(E, expect)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_eta_star_eta_random(seed):
    rng = np.random.default_rng(seed)
    em = rng.normal(size=(3, 3)) @ ASD
    E = eta_star_eta(em, metric=np.eye(4))
    brute = np.array([[0.5 * wedge_brute(a, b) for b in em] for a in em])
    assert np.allclose(E, brute, atol=1e-12)
    assert np.allclose(E, E.T)
    assert np.max(np.linalg.eigvalsh(E)) <= 1e-12


def test_eta_star_eta_rejects_self_dual():
    with pytest.raises(DomainError):
        eta_star_eta(STANDARD_TRIPLE, metric=np.eye(4))


# -- closedness and connection ----------------------------------------------------------


def test_closedness_kummer_zero():
    assert closedness_residual(monopole_field(kummer_config(), 0.5), [0.2, 0.3, 0.4]) == 0.0


def test_closedness_step_underflow():
    f = monopole_field(generic_config())
    with pytest.raises(GeometryError):
        closedness_residual(f, [0.61, 0.42, 0.77], step=1e-12)


def _flat(x, order=1):
    x = np.atleast_2d(x)
    return np.ones(len(x)), np.zeros((len(x), 3))


def _taub_nut(x, order=1):
    x = np.atleast_2d(x)
    r = np.linalg.norm(x, axis=1)
    return 1.0 + 0.5 / r, -0.5 * x / r[:, None] ** 3


def test_connection_vanishes_for_flat():
    data = levi_civita_gh(_flat, 0.7, np.array([0.1, 0.2, 0.3]))
    assert np.all(data.gamma == 0) and np.all(data.nabla_xi_theta == 0) and np.all(data.nabla_xi_theta_i == 0)


def test_connection_rejects_nonpositive_potential():
    with pytest.raises(DomainError):
        levi_civita_gh(lambda x, o=1: (-np.ones(1), np.zeros((1, 3))), 1.0, np.zeros(3))


@pytest.mark.parametrize("point", [(0.7, -0.4, 0.5), (-0.3, 0.9, 0.2)])
def test_taub_nut_ricci_flat(point):
    x = np.array(point)
    diag = curvature_diagnostics(lambda p: gh_coordinate_metric(_taub_nut, 1.0, x, p), x, 1e-3)
    assert diag.ricci_norm <= 1e-4
    assert diag.rm_norm > 1e-2  # not flat


@pytest.mark.parametrize("potential,eps,point", [
    (_taub_nut, 1.0, (0.7, -0.4, 0.5)),
    ("generic", 0.3, (0.61, 0.42, 0.77)),
])
def test_connection_matches_fd_at_second_order(potential, eps, point):
    if potential == "generic":
        field = monopole_field(generic_config(), eps)

        def potential(x, order=1):
            return field.h_eps(x, max(order, 1))

    x = np.array(point)
    exact = levi_civita_gh(potential, eps, x)
    steps = np.array([0.04, 0.02, 0.01])
    errs = np.array([np.max(np.abs(frame_connection_fd(potential, eps, x, s) - exact.gamma)) for s in steps])
    slope = np.polyfit(np.log(steps), np.log(errs), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.2)
    errs = np.array([np.max(np.abs(nabla_xi_theta_fd(potential, eps, x, s) - exact.nabla_xi_theta)) for s in steps])
    assert np.polyfit(np.log(steps), np.log(errs), 1)[0] == pytest.approx(2.0, abs=0.2)


def test_curvature_bounded_under_collapse():
    field = monopole_field(generic_config())
    probes = [np.array([0.75, 0.6, 0.85]), np.array([0.6, 0.8, 0.2])]
    cfg = field.config
    for x in probes:
        assert cfg.nearest_puncture(x)[1][0] >= cfg.rho0
    rm = []
    for k in range(4, 11, 2):
        e = 2.0**-k
        f = field.with_epsilon(e)

        def pot(p, order=1, f=f):
            return f.h_eps(p, max(order, 1))

        rm.append(max(curvature_diagnostics(lambda p: gh_coordinate_metric(pot, e, x, p), x, 1e-3).rm_norm
                      for x in probes))
    assert max(rm) <= 10.0 * rm[0]
    assert rm[-1] <= rm[0]
