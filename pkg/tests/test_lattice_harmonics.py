import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hkglue.errors import AccuracyError, ConfigError, GeometryError, SingularityError, ThresholdNotFoundError
from hkglue.lattice_harmonics import (
    ChargeConfig,
    FlatTorus,
    build_ewald_table,
    check_balancing,
    ewald_green,
    flux,
    generic_config,
    kummer_config,
    monopole_field,
    positivity_threshold,
    regular_part,
    regular_part_direct,
)
from hkglue.triple_calculus import closedness_residual
from oracles import fd_laplacian, sharp_image_difference, spectral_green

UNIT = FlatTorus.cubic()
PAIR = UNIT.to_cartesian(np.array([0.27, 0.19, 0.33]))

coords = st.floats(0.05, 0.95)
points = st.tuples(coords, coords, coords).map(np.array)


@pytest.fixture(scope="module")
def generic_field():
    return monopole_field(generic_config())


@pytest.fixture(scope="module")
def k16_config():
    return ChargeConfig(UNIT, (0,) * 8, ((PAIR, 16),))


# -- torus ------------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-0.3, 0.3), min_size=9, max_size=9))
def test_torus_invariants(perturb):
    B = np.eye(3) + np.array(perturb).reshape(3, 3)
    T = FlatTorus(B)
    assert np.linalg.det(T.basis) > 0
    assert np.allclose(T.dual_basis.T @ T.basis, np.eye(3), atol=1e-12)
    n = np.array([[i, j, k] for i in range(-4, 5) for j in range(-4, 5) for k in range(-4, 5) if (i, j, k) != (0, 0, 0)])
    assert T.inj_radius == pytest.approx(0.5 * np.min(np.linalg.norm(n @ B.T, axis=1)), rel=1e-12)


def test_torus_rejects_negative_orientation():
    with pytest.raises(ConfigError):
        FlatTorus(np.diag([1.0, 1.0, -1.0]))


# -- Green's function ---------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(points)
def test_green_parity(x):
    assert ewald_green(UNIT, x, 0)[0] == pytest.approx(ewald_green(UNIT, -x, 0)[0], abs=1e-12)


def test_green_body_centre_against_reciprocal_oracle():
    x = np.array([0.5, 0.5, 0.5])
    g = ewald_green(UNIT, x, 0)[0]
    assert abs(g - spectral_green(x)) <= 1e-8
    assert g == pytest.approx(-0.40096798501, abs=1e-10)


def test_green_differences_against_image_sum():
    x = np.array([0.5, 0.5, 0.5])
    y = np.array([0.1, 0.27, 0.33])
    d = ewald_green(UNIT, x, 0)[0] - ewald_green(UNIT, y, 0)[0]
    assert abs(d - sharp_image_difference(x, y, R=40)) <= 5e-7


def test_green_sheared_torus_against_reciprocal_oracle():
    B = np.array([[1.0, 0.2, 0.0], [0.0, 1.1, 0.1], [0.0, 0.0, 0.9]])
    x = np.array([0.4, 0.3, 0.45])
    assert abs(ewald_green(FlatTorus(B), x, 0)[0] - spectral_green(x, basis=B)) <= 1e-9


def test_green_laplacian_is_background_density():
    x = np.array([0.31, 0.22, 0.4])
    for side in (1.0, 1.7):
        T = FlatTorus.cubic(side)
        lap = fd_laplacian(lambda p: ewald_green(T, side * p / side, 0)[0], x * side, 1e-3 * side)
        assert lap == pytest.approx(2 * np.pi / T.volume, rel=1e-5)


def test_green_analytic_hessian_trace():
    x = np.array([[0.31, 0.22, 0.4], [0.7, 0.1, 0.55]])
    _, _, H = ewald_green(UNIT, x, 2)
    assert np.allclose(np.trace(H, axis1=1, axis2=2), 2 * np.pi, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(points, st.floats(0.6, 1.2))
def test_splitting_invariance(x, scale):
    a0 = np.sqrt(np.pi)
    g1 = ewald_green(UNIT, x, 1, alpha=a0)
    g2 = ewald_green(UNIT, x, 1, alpha=a0 * scale)
    assert abs(g1[0] - g2[0]) <= 1e-10
    assert np.max(np.abs(g1[1] - g2[1])) <= 1e-9


def test_green_zero_mean():
    f = (np.arange(16) + 0.5) / 16
    pts = np.stack(np.meshgrid(f, f, f, indexing="ij"), -1).reshape(-1, 3)
    # the midpoint rule is spectrally accurate away from the singular cell; the
    # lattice point sits on a cell corner so the 1/r singularity is integrable
    assert abs(np.mean(ewald_green(UNIT, pts, 0)[0])) < 2e-3


def test_green_errors():
    with pytest.raises(SingularityError):
        ewald_green(UNIT, np.array([1.0, 0.0, 1e-12]), 0)
    with pytest.raises(AccuracyError):
        build_ewald_table(UNIT, real_cutoff=0.5)
    with pytest.raises(AccuracyError):
        build_ewald_table(UNIT, reciprocal_cutoff=3.0)


# -- balancing and configurations --------------------------------------------


def test_balancing_examples():
    assert check_balancing(UNIT, (2,) * 8).valid
    assert check_balancing(UNIT, (0,) * 8, [(PAIR, 16)]).valid
    bad = check_balancing(UNIT, (2,) * 8, [(PAIR, 1)])
    assert not bad.valid and bad.weight_sum == 17
    assert any("balancing" in v for v in bad.violations)


def test_balancing_positional_violations():
    q = UNIT.half_lattice_points()[3]
    r = check_balancing(UNIT, (2,) * 7 + (0,), [(q, 2)])
    assert any("coincides with fixed point q4" in v for v in r.violations)
    r = check_balancing(UNIT, (1,) * 8, [(PAIR, 4), (-PAIR + np.array([1.0, 0, 0]), 4)])
    assert any("coincides with +-pairs[0]" in v for v in r.violations)
    r = check_balancing(UNIT, (2,) * 7, [])
    assert any("expected 8 entries" in v for v in r.violations)
    r = check_balancing(UNIT, (2,) * 7 + (-1,), [(PAIR, 3)])
    assert any("non-negative" in v for v in r.violations)


def test_charge_config_invariants():
    cfg = generic_config()
    assert cfg.charges.sum() == 0
    pos = cfg.positions
    d = UNIT.distance(pos[:, None], pos[None]) + np.eye(len(pos))
    assert np.min(d) > 0
    assert cfg.rho0 == pytest.approx(0.125)
    with pytest.raises(ConfigError):
        ChargeConfig(UNIT, (2,) * 8, ((PAIR, 1),))


# -- harmonic field -----------------------------------------------------------


def test_kummer_field_is_trivial():
    f = monopole_field(kummer_config(), epsilon=0.3)
    x = np.random.default_rng(0).uniform(size=(20, 3))
    assert np.all(f.h(x) == 0) and np.all(f.h_eps(x) == 1)


@settings(max_examples=25, deadline=None)
@given(points)
def test_tau_invariance(x):
    f = monopole_field(generic_config())
    if generic_config().nearest_puncture(x)[1][0] < 0.02:
        return
    assert f.h(x) == pytest.approx(f.h(-x), abs=1e-11)


def test_field_against_reciprocal_oracle(generic_field):
    cfg = generic_field.config
    x = np.array([0.71, 0.38, 0.12])
    ref = spectral_green(x, cfg.positions, cfg.charges, t=4e-4, n=45)
    assert abs(generic_field.h(x) - ref) <= 1e-7


def test_field_bounded_minus_pole(generic_field):
    cfg = generic_field.config
    normals = np.array([[0.6, 0.0, 0.8], [0.0, -1.0, 0.0]])
    for p in cfg.punctures:
        if p.charge == 0:
            continue
        lam, ell = regular_part_direct(generic_field, p.index)
        for r in (1e-2, 1e-4, 1e-6):
            x = p.position + r * normals
            rho = np.linalg.norm(x - p.position, axis=1)  # the offset actually represented
            rem = generic_field.h(x) - p.charge / (2 * rho) - lam
            assert np.max(np.abs(rem)) <= 2 * r * (1 + np.linalg.norm(ell))


def test_harmonicity(generic_field):
    rng = np.random.default_rng(3)
    cfg = generic_field.config
    count = 0
    while count < 20:
        x = rng.uniform(size=3)
        if cfg.nearest_puncture(x)[1][0] < cfg.rho0 / 2:
            continue
        H = generic_field.hessian(x)
        r = closedness_residual(generic_field, x, full=True)
        scale = 1.0 + np.sum(np.abs(np.diag(H)))
        assert r.residual <= 1e-6 * scale
        assert r.residual_half_step <= 1e-6 * scale
        count += 1


def test_closedness_errors(generic_field):
    assert closedness_residual(monopole_field(kummer_config()), [0.3, 0.3, 0.3]) == 0.0
    q = generic_field.config.punctures[0].position
    with pytest.raises(GeometryError):
        closedness_residual(generic_field, q + 1e-3)


# -- flux ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def k3_field():
    return monopole_field(ChargeConfig(UNIT, (2, 2, 2, 2, 2, 1, 0, 2), ((PAIR, 3),)))


def test_flux_k3(k3_field):
    rho0 = k3_field.config.rho0
    vals = [flux(k3_field, 8, rho0 / s) for s in (8, 4)]
    assert np.allclose(vals, 3.0, atol=1e-6)
    assert abs(vals[0] - vals[1]) <= 1e-6


def test_flux_all_punctures_and_neutrality(k3_field):
    cfg = k3_field.config
    total = 0.0
    for p in cfg.punctures:
        for s in (2, 4):
            v = flux(k3_field, p.index, cfg.rho0 / s)
            assert v == pytest.approx(p.charge, abs=1e-6)
        total += v
    assert abs(total) <= 1e-6


def test_flux_charge_free_point(k3_field):
    assert abs(flux(k3_field, np.array([0.75, 0.7, 0.8]), 0.02)) <= 1e-10


def test_flux_geometry_error(k3_field):
    with pytest.raises(GeometryError):
        flux(k3_field, 0, 0.2)
    with pytest.raises(GeometryError):
        flux(k3_field, PAIR + np.array([0.01, 0, 0]), 0.02)


# -- regular part --------------------------------------------------------------


def test_regular_part_fixed_points_have_no_gradient(generic_field):
    for j in range(8):
        assert np.all(regular_part(generic_field, j).ell == 0)
        assert np.linalg.norm(regular_part_direct(generic_field, j)[1]) < 1e-9


def test_regular_part_kummer():
    f = monopole_field(kummer_config())
    assert all(regular_part(f, j).lam == 0 for j in range(8))


def test_regular_part_single_pair(k16_config):
    f = monopole_field(k16_config)
    data = regular_part(f, 0)
    direct, _ = regular_part_direct(f, 0)
    assert abs(data.lam - direct) <= 1e-6
    assert data.lam == pytest.approx(6.3931082266, abs=1e-6)
    cyc = regular_part(f, 8)
    assert abs(cyc.lam - regular_part_direct(f, 8)[0]) <= 1e-6


def test_regular_part_generic_matches_direct(generic_field):
    for i in range(len(generic_field.config.punctures)):
        a = regular_part(generic_field, i)
        lam, ell = regular_part_direct(generic_field, i)
        assert abs(a.lam - lam) <= 1e-6 * (1 + abs(lam))
        assert np.allclose(a.ell, ell, atol=1e-6)


def test_near_puncture_remainder_is_quadratic(generic_field):
    p = generic_field.config.punctures[8]
    lam, ell = regular_part_direct(generic_field, 8)
    rho0 = generic_field.config.rho0
    n = np.array([[0.48, 0.6, 0.64], [-0.8, 0.0, 0.6], [0.0, 0.28, -0.96]])
    radii = np.geomspace(rho0 / 16, rho0 / 4, 6)
    sup = []
    for r in radii:
        x = r * n
        rem = generic_field.h(p.position + x) - p.charge / (2 * r) - lam - x @ ell
        sup.append(np.max(np.abs(rem)))
    slope = np.polyfit(np.log(radii), np.log(sup), 1)[0]
    assert slope >= 1.8


# -- positivity threshold --------------------------------------------------------


def test_positivity_kummer():
    res = positivity_threshold(monopole_field(kummer_config()))
    assert res.epsilon0 == max(e for e, _, _ in res.scan)


def test_positivity_with_bad_fixed_point(k3_field):
    res = positivity_threshold(k3_field, grid=24)
    assert 0 < res.epsilon0 < np.inf
    # independent dense oracle on a shifted grid
    cfg = k3_field.config
    f = np.arange(20) / 20 + 0.013
    pts = np.stack(np.meshgrid(f, f, f, indexing="ij"), -1).reshape(-1, 3)
    idx, dist = cfg.nearest_puncture(pts)
    pts = pts[dist > 1e-3]
    h = k3_field.h(pts)
    bad = [p.position for p in cfg.punctures if p.kind == "dihedral" and p.weight in (0, 1)]
    dbad = np.min(UNIT.distance(pts[:, None], np.array(bad)[None]), axis=1)
    for e, hmin, valid in res.scan:
        if e > res.epsilon0:
            break
        mask = dbad >= 8 * e
        if np.any(mask):
            assert np.min(1 + e * h[mask]) > 0.5


def test_positivity_monotone(k3_field):
    res = positivity_threshold(k3_field, grid=16)
    flags = [v for _, _, v in res.scan]
    for a, b in zip(flags[1:], flags[:-1]):
        assert (not a) or b  # valid at eps implies valid at eps/2


def test_positivity_not_found(k3_field):
    with pytest.raises(ThresholdNotFoundError):
        positivity_threshold(k3_field, eps_scan=[1.0, 2.0], grid=16, exclusion_factor=0.01)
