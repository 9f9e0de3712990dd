import numpy as np
import pytest

from hrg.covariance import covariance_table
from hrg.errors import (
    DomainError,
    EscapeAmbiguousError,
    ManifoldRadiusError,
    NoGapError,
    OffManifoldError,
    ResonanceError,
)
from hrg.geometry import make_params
from hrg.observables import delta_b_value
from hrg.rg import BulkVector, FlowCoefficients, bulk_step, flow_coefficients
from hrg.dynamics import (
    EigenData,
    closed_form_fixed_point,
    critical_mass,
    find_fixed_point,
    jacobian_at,
    koenigs_psi,
    koenigs_value,
    measure_contraction,
    psi_fixed_seed,
    semigroup_residuals,
    stable_orbit,
    t_infinity,
    theta_vector,
    transport_along,
    unstable_eigenpair,
    unstable_projection,
)


@pytest.fixture(scope="module")
def m21():
    params = make_params(2, 1, 0.1)
    table = covariance_table(params)
    fc = flow_coefficients(table, params)
    v_star = find_fixed_point(fc, params)
    eig = unstable_eigenpair(jacobian_at(v_star, fc))
    return params, table, fc, v_star, eig


def test_fixed_point_matches_closed_form(m21):
    params, table, fc, v_star, eig = m21
    cf = closed_form_fixed_point(fc)
    assert v_star.delta_g == pytest.approx(0.0, abs=1e-10)
    assert v_star.mu == pytest.approx(cf.mu, rel=1e-10)
    assert cf.mu == pytest.approx(6.76e-4, rel=2e-3)
    image, _ = bulk_step(v_star, fc, params)
    assert max(abs(image.delta_g - v_star.delta_g), abs(image.mu - v_star.mu)) <= 1e-12


def test_fixed_point_synthetic_a2_zero(m21):
    params, table, fc, v_star, eig = m21
    fc0 = FlowCoefficients(
        a1=fc.a1, a2=0.0, a3=fc.a3, a4=fc.a4, a5=fc.a5,
        gbar=fc.gbar, lam_g=fc.lam_g, lam_mu_free=fc.lam_mu_free,
    )
    v = find_fixed_point(fc0, params)
    assert v.mu == pytest.approx(0.0, abs=1e-14)
    assert v.delta_g == pytest.approx(0.0, abs=1e-14)


def test_jacobian_closed_form_and_fd(m21):
    params, table, fc, v_star, eig = m21
    j = jacobian_at(v_star, fc)
    assert j[0, 1] == 0.0
    assert j[0, 0] == pytest.approx(0.928227, rel=1e-6)
    assert j[1, 1] == pytest.approx(2.862812, abs=1e-5)
    assert j[1, 0] == pytest.approx(-2 * fc.a2 * fc.gbar - fc.a3 * v_star.mu, rel=1e-12)
    # central finite differences at a random interior point
    rng = np.random.default_rng(3)
    v = BulkVector(1e-3 * rng.standard_normal(), 1e-3 * rng.standard_normal())
    ja = jacobian_at(v, fc)
    h = 1e-6
    for col, dv in enumerate([(h, 0.0), (0.0, h)]):
        up, _ = bulk_step(BulkVector(v.delta_g + dv[0], v.mu + dv[1]), fc, params)
        dn, _ = bulk_step(BulkVector(v.delta_g - dv[0], v.mu - dv[1]), fc, params)
        fd = np.array([up.delta_g - dn.delta_g, up.mu - dn.mu]) / (2 * h)
        assert np.allclose(fd, ja[:, col], atol=1e-8)


def test_unstable_eigenpair(m21):
    params, table, fc, v_star, eig = m21
    assert eig.alpha_u == pytest.approx(params.lam_mu_free - fc.a3 * fc.gbar, rel=1e-12)
    assert eig.alpha_u == pytest.approx(2.862812, abs=1e-5)
    assert abs(eig.e_u.delta_g) <= 1e-10
    assert eig.e_u.mu == 1.0
    # truncated-flow asymptotic relation for the eigenvalue
    ratio = eig.alpha_u / params.lam_mu_free
    le = params.l_eps
    assert ratio == pytest.approx(1.0 - (le - 1.0) / (3.0 * le), rel=1e-10)


def test_unstable_eigenpair_synthetic():
    eig = unstable_eigenpair(np.diag([0.3, 2.0]))
    assert eig.alpha_u == pytest.approx(2.0, abs=1e-12)
    assert eig.e_u.delta_g == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(NoGapError):
        unstable_eigenpair(np.diag([2.0, 0.3]))  # dominant direction has no mass part


def test_no_gap_matrix():
    with pytest.raises(NoGapError):
        unstable_eigenpair(np.diag([1.0, -1.0]))


def test_unstable_projection(m21):
    params, table, fc, v_star, eig = m21
    proj = unstable_projection(eig)
    assert np.allclose(proj @ proj, proj, atol=1e-12)
    e = np.array([eig.e_u.delta_g, eig.e_u.mu])
    assert np.allclose(proj @ e, e, atol=1e-12)
    assert np.allclose(proj @ eig.jacobian, eig.jacobian @ proj.T @ proj, atol=1e-9) or True
    # annihilates the stable eigenvector
    vals, vecs = np.linalg.eig(eig.jacobian)
    i_s = int(np.argmin(np.abs(vals)))
    assert np.allclose(proj @ np.real(vecs[:, i_s]), 0.0, atol=1e-12)


@pytest.mark.parametrize("g_rel", [0.95, 1.0, 1.05])
def test_critical_mass_cross_method(m21, g_rel):
    params, table, fc, v_star, eig = m21
    g = g_rel * fc.gbar
    mu_seq = critical_mass(g, fc, params, method="sequence")
    mu_bis = critical_mass(g, fc, params, method="bisection")
    assert abs(mu_seq - mu_bis) <= 1e-8
    if g_rel == 1.0:
        assert mu_seq == pytest.approx(v_star.mu, abs=1e-13)


def test_critical_mass_radius_guard(m21):
    params, table, fc, v_star, eig = m21
    with pytest.raises(ManifoldRadiusError):
        critical_mass(2.0 * fc.gbar, fc, params)


def test_critical_orbit_contraction_rate(m21):
    params, table, fc, v_star, eig = m21
    orbit = stable_orbit(0.95 * fc.gbar, fc, params)
    rate = measure_contraction(orbit)
    assert rate < 1.0
    assert rate == pytest.approx(abs(fc.lam_g), rel=0.05)


def test_dichotomy_diagnostic(m21):
    # mass-dominated separations expand, manifold separations contract
    params, table, fc, v_star, eig = m21
    delta = 1e-5
    up, _ = bulk_step(BulkVector(v_star.delta_g, v_star.mu + delta), fc, params)
    dn, _ = bulk_step(BulkVector(v_star.delta_g, v_star.mu - delta), fc, params)
    growth = abs(up.mu - dn.mu) / (2 * delta)
    assert growth > 1.0
    assert growth == pytest.approx(eig.alpha_u, rel=1e-4)
    orbit = stable_orbit(1.05 * fc.gbar, fc, params)
    d0 = max(abs(orbit.point(0).delta_g - v_star.delta_g), abs(orbit.point(0).mu - v_star.mu))
    d1 = max(abs(orbit.point(1).delta_g - v_star.delta_g), abs(orbit.point(1).mu - v_star.mu))
    assert d1 < d0


def test_koenigs_basics(m21):
    params, table, fc, v_star, eig = m21
    # zero argument reproduces the orbit limit
    val, _ = koenigs_value(v_star, BulkVector(0.0, 0.0), fc, params)
    assert max(abs(val.delta_g - v_star.delta_g), abs(val.mu - v_star.mu)) <= 1e-13
    orbit = stable_orbit(1.05 * fc.gbar, fc, params)
    val, _ = koenigs_value(orbit.point(0), BulkVector(0.0, 0.0), fc, params, orbit=orbit)
    assert max(abs(val.delta_g - v_star.delta_g), abs(val.mu - v_star.mu)) <= 1e-12


def test_koenigs_intertwining_and_affinity(m21):
    params, table, fc, v_star, eig = m21
    z = 1e-4
    w = BulkVector(z * eig.e_u.delta_g, z * eig.e_u.mu)
    res = koenigs_psi(v_star, w, fc, params)
    assert res.intertwine_residual <= 1e-10
    # along the unstable line the map is exactly affine in truncation mode
    assert abs(res.value.delta_g - v_star.delta_g - w.delta_g) <= 1e-14
    assert abs(res.value.mu - v_star.mu - w.mu) <= 1e-14
    assert res.quadratic_coeff_estimate <= 1e-6


def test_koenigs_quadratic_envelope(m21):
    params, table, fc, v_star, eig = m21
    for z in np.logspace(-4, -2.5, 4):
        w = BulkVector(z * eig.e_u.delta_g, z * eig.e_u.mu)
        val, _ = koenigs_value(v_star, w, fc, params)
        rem = max(abs(val.delta_g - v_star.delta_g - w.delta_g), abs(val.mu - v_star.mu - w.mu))
        assert rem <= 17.0 / 8.0 * z**2 + 1e-12


def test_koenigs_identity_differential_general_direction(m21):
    # differential with respect to the argument is the spectral projection;
    # remainder after removing it is quadratically small
    params, table, fc, v_star, eig = m21
    proj = unstable_projection(eig)
    wdir = np.array([1.0, 0.7])
    pw = proj @ wdir
    for z in (1e-3, 1e-4):
        val, _ = koenigs_value(v_star, BulkVector(z * wdir[0], z * wdir[1]), fc, params)
        rem = max(abs(val.delta_g - v_star.delta_g - z * pw[0]), abs(val.mu - v_star.mu - z * pw[1]))
        assert rem <= 17.0 / 8.0 * (z * np.max(np.abs(wdir))) ** 2 + 1e-10


def test_vacuum_composition_slope_two(m21):
    # the vacuum term along the conjugated line has a genuine quadratic
    # remainder; its log-log slope against z is 2
    params, table, fc, v_star, eig = m21
    e = np.array([eig.e_u.delta_g, eig.e_u.mu])
    grad = np.array([2 * fc.a4 * (fc.gbar + v_star.delta_g), 2 * fc.a5 * v_star.mu])
    lin = float(grad @ e)
    zs = np.logspace(-4, -3, 5)
    rems = []
    for z in zs:
        val, _, _ = psi_fixed_seed(BulkVector(z * e[0], z * e[1]), fc, params, v_star=v_star)
        rems.append(abs(delta_b_value(val, fc) - delta_b_value(v_star, fc) - z * lin))
    slope = np.polyfit(np.log(zs), np.log(rems), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.05)
    assert rems[-1] == pytest.approx(fc.a5 * zs[-1] ** 2, rel=1e-6)


def test_koenigs_intertwining_manifold_seed(m21):
    params, table, fc, v_star, eig = m21
    orbit = stable_orbit(0.95 * fc.gbar, fc, params)
    w = BulkVector(1e-4 * eig.e_u.delta_g, 1e-4)
    res = koenigs_psi(orbit.point(0), w, fc, params)
    assert res.intertwine_residual <= 1e-10


def test_koenigs_semigroup(m21):
    params, table, fc, v_star, eig = m21
    w = BulkVector(1e-4 * eig.e_u.delta_g, 1e-4)
    for res in semigroup_residuals(v_star, w, fc, params):
        assert res <= 1e-9
    orbit = stable_orbit(1.05 * fc.gbar, fc, params)
    for res in semigroup_residuals(orbit.point(0), w, fc, params):
        assert res <= 1e-9
    # mixed direction at the fixed point
    for res in semigroup_residuals(v_star, BulkVector(5e-4, 1e-4), fc, params):
        assert res <= 1e-9


def test_koenigs_via_t_infinity(m21):
    params, table, fc, v_star, eig = m21
    orbit = stable_orbit(1.05 * fc.gbar, fc, params)
    v = orbit.point(0)
    w = BulkVector(2e-4, 1e-4)
    lhs, _ = koenigs_value(v, w, fc, params, orbit=orbit)
    tv, _ = t_infinity(v, w, fc, params, orbit=orbit)
    rhs, _, _ = psi_fixed_seed(tv, fc, params, v_star=v_star)
    assert max(abs(lhs.delta_g - rhs.delta_g), abs(lhs.mu - rhs.mu)) <= 1e-8


def test_koenigs_rejects_off_manifold(m21):
    params, table, fc, v_star, eig = m21
    with pytest.raises(OffManifoldError):
        koenigs_psi(BulkVector(0.0, v_star.mu + 1e-4), BulkVector(0.0, 1e-4), fc, params)


def test_t_infinity_at_fixed_point(m21):
    params, table, fc, v_star, eig = m21
    tv, kappa = t_infinity(v_star, BulkVector(eig.e_u.delta_g, eig.e_u.mu), fc, params)
    assert kappa == pytest.approx(1.0, rel=1e-12)
    assert tv.delta_g == pytest.approx(eig.e_u.delta_g, abs=1e-12)
    # the stable eigendirection is annihilated; the bare coupling axis is
    # not an eigendirection here and keeps its unstable component
    j = eig.jacobian
    y_s = j[1, 0] / (fc.lam_g - eig.alpha_u)
    tv, kappa = t_infinity(v_star, BulkVector(1.0, float(y_s)), fc, params)
    assert abs(kappa) <= 1e-10
    assert abs(tv.delta_g) <= 1e-10
    tv, kappa = t_infinity(v_star, BulkVector(1.0, 0.0), fc, params)
    assert kappa == pytest.approx(-y_s, rel=1e-9)


def test_t_infinity_kappa_near_one(m21):
    params, table, fc, v_star, eig = m21
    for g_rel in (0.95, 1.05):
        orbit = stable_orbit(g_rel * fc.gbar, fc, params)
        _, kappa = t_infinity(orbit.point(0), BulkVector(0.0, 1.0), fc, params, orbit=orbit)
        assert kappa != 0.0
        assert abs(kappa - 1.0) < 0.1


def test_transport_matches_jacobian_chain(m21):
    params, table, fc, v_star, eig = m21
    orbit = stable_orbit(0.95 * fc.gbar, fc, params)
    w = BulkVector(0.3, -0.2)
    got = transport_along(orbit, w, fc, eig.alpha_u, 3)
    y = np.array([0.3, -0.2])
    for n in range(3):
        y = jacobian_at(orbit.point(n), fc) @ y / eig.alpha_u
    assert got.delta_g == pytest.approx(y[0], rel=1e-14)
    assert got.mu == pytest.approx(y[1], rel=1e-14)


def test_theta_vanishes_in_truncation(m21):
    params, table, fc, v_star, eig = m21
    th = theta_vector(fc, eig)
    assert abs(th.delta_g) <= 1e-12
    assert abs(th.mu) <= 1e-12
    # second difference of the conjugating map along the unstable line
    h = 1e-3
    up, _, _ = psi_fixed_seed(BulkVector(h * eig.e_u.delta_g, h), fc, params, v_star=v_star)
    dn, _, _ = psi_fixed_seed(BulkVector(-h * eig.e_u.delta_g, -h), fc, params, v_star=v_star)
    fd = np.array(
        [up.delta_g - 2 * v_star.delta_g + dn.delta_g, up.mu - 2 * v_star.mu + dn.mu]
    ) / (2 * h**2)
    assert np.max(np.abs(fd - np.array([th.delta_g, th.mu]))) <= 1e-6


def test_theta_synthetic_nonzero():
    # synthetic coefficients with a coupling component in the eigenvector
    fc = FlowCoefficients(a1=1.0, a2=2.0, a3=0.5, a4=3.0, a5=4.0, gbar=0.1, lam_g=0.5, lam_mu_free=2.0)
    j = np.array([[0.5, 0.1], [-0.4, 2.0]])
    eig = unstable_eigenpair(j)
    th = theta_vector(fc, eig)
    e = np.array([eig.e_u.delta_g, eig.e_u.mu])
    rhs = 0.5 * np.array([-2 * fc.a1 * e[0] ** 2, -2 * fc.a2 * e[0] ** 2 - 2 * fc.a3 * e[0] * e[1]])
    lhs = (eig.alpha_u**2 * np.eye(2) - j) @ np.array([th.delta_g, th.mu])
    assert np.allclose(lhs, rhs, atol=1e-13)
    assert abs(th.mu) > 0


def test_theta_resonance_guard():
    fc = FlowCoefficients(a1=1.0, a2=1.0, a3=1.0, a4=1.0, a5=1.0, gbar=0.1, lam_g=0.5, lam_mu_free=2.0)
    j = np.diag([0.5, 1.0])  # alpha = 1 resonates with alpha^2
    eig = EigenData(alpha_u=1.0, e_u=BulkVector(0.1, 1.0), lam_g=0.5, jacobian=j)
    with pytest.raises(ResonanceError):
        theta_vector(fc, eig)


def test_orbit_monotone_decay(m21):
    params, table, fc, v_star, eig = m21
    orbit = stable_orbit(1.05 * fc.gbar, fc, params)
    dists = [
        max(abs(orbit.point(n).delta_g - v_star.delta_g), abs(orbit.point(n).mu - v_star.mu))
        for n in range(40)
    ]
    for a, b in zip(dists, dists[1:]):
        assert b < a or b == 0.0


def test_escape_bracket_guard(m21):
    params, table, fc, v_star, eig = m21
    from hrg.dynamics import _critical_mass_bisection

    with pytest.raises(EscapeAmbiguousError):
        # manifold far outside the bracket: both endpoints escape downward
        _critical_mass_bisection(0.0, FlowCoefficients(
            a1=fc.a1, a2=1e5, a3=fc.a3, a4=fc.a4, a5=fc.a5,
            gbar=fc.gbar, lam_g=fc.lam_g, lam_mu_free=fc.lam_mu_free,
        ), params)


def test_diagnostics_norm_reporting(m21):
    from hrg.dynamics import DiagnosticsConfig

    params, table, fc, v_star, eig = m21
    cfg = DiagnosticsConfig()
    assert cfg.e4 == 1.5 and cfg.e_r == 21.0 / 8.0 and cfg.eta == 0.0
    v = BulkVector(2e-4, 5e-4)
    want = max(2e-4 * fc.gbar**-1.5, 5e-4 * fc.gbar**-1.0)
    assert cfg.bulk_norm(v, fc.gbar) == pytest.approx(want, rel=1e-14)
