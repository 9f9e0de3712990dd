"""Fixed point, eigen-structure, stable manifold, and partial linearization
of the bulk flow.

The truncated flow is two dimensional and lower triangular at the fixed
point: the coupling direction contracts with multiplier 2 - L^eps and the
mass direction expands with the unstable eigenvalue.  Orbits on the stable
manifold are represented by the self-consistent sequence solution (solved
with boundary data on both ends), not by naive forward iteration: forward
iteration amplifies the seed's rounding error along the unstable direction
and leaves the manifold after a few dozen steps.  The conjugating map is
evaluated by transporting its argument along that trajectory with chained
Jacobians and taking the limit at the fixed point, which is where the
defining double iteration is numerically stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConvergenceError,
    DomainError,
    EscapeAmbiguousError,
    ManifoldRadiusError,
    NewtonError,
    NoGapError,
    OffManifoldError,
    ResonanceError,
)
from .geometry import ModelParams
from .rg import BulkVector, FlowCoefficients, bulk_step

E_PHI2 = BulkVector(0.0, 1.0)

DEFAULT_MANIFOLD_RADIUS = 0.5  # relative to gbar
ESCAPE_GUARD_FACTOR = 1e3
ESCAPE_MAX_STEPS = 10_000
MEMBERSHIP_ATOL = 1e-10


@dataclass(frozen=True)
class EigenData:
    """Unstable eigenvalue and direction of the linearized flow."""

    alpha_u: float
    e_u: BulkVector
    lam_g: float
    jacobian: np.ndarray


@dataclass(frozen=True)
class KoenigsResult:
    value: BulkVector
    n_used: int
    intertwine_residual: float
    quadratic_coeff_estimate: float


@dataclass(frozen=True)
class DiagnosticsConfig:
    """Norm exponents used only for reporting sizes in calibrator units."""

    eta: float = 0.0
    e1: float = 1.0
    e2: float = 1.0
    e3: float = 1.0
    e4: float = 1.5
    e_w: float = 2.0
    e_r: float = 21.0 / 8.0

    def bulk_norm(self, v: BulkVector, gbar: float) -> float:
        return max(abs(v.delta_g) * gbar**-self.e4, abs(v.mu) * gbar**-self.e2)


def _norm(v: BulkVector) -> float:
    return max(abs(v.delta_g), abs(v.mu))


def _diff(a: BulkVector, b: BulkVector) -> float:
    return max(abs(a.delta_g - b.delta_g), abs(a.mu - b.mu))


def closed_form_fixed_point(fc: FlowCoefficients) -> BulkVector:
    """Exact fixed point of the truncated flow: delta_g = 0 on the invariant line."""
    denom = fc.lam_mu_free - 1.0 - fc.a3 * fc.gbar
    if denom <= 0.0:
        raise DomainError("unstable multiplier too close to 1; fixed-point formula invalid")
    return BulkVector(0.0, fc.a2 * fc.gbar**2 / denom)


def find_fixed_point(
    fc: FlowCoefficients,
    params: ModelParams,
    tol: float = 1e-12,
    max_iter: int = 100,
) -> BulkVector:
    """Newton iteration for the fixed point, seeded at the origin."""
    if fc.lam_mu_free - 1.0 - fc.a3 * fc.gbar <= 0.0:
        raise DomainError("unstable multiplier too close to 1 for a Newton solve")
    v = BulkVector(0.0, 0.0)
    for _ in range(max_iter):
        image, _ = bulk_step(v, fc, params)
        res = np.array([image.delta_g - v.delta_g, image.mu - v.mu])
        if not np.all(np.isfinite(res)):
            raise NewtonError("Newton iterate diverged", last=v)
        if np.max(np.abs(res)) <= tol:
            return v
        j = jacobian_at(v, fc) - np.eye(2)
        try:
            step = np.linalg.solve(j, -res)
        except np.linalg.LinAlgError as exc:
            raise NewtonError(f"singular Newton system: {exc}", last=v) from exc
        v = BulkVector(v.delta_g + step[0], v.mu + step[1])
    raise NewtonError(f"no convergence in {max_iter} Newton steps", last=v)


def jacobian_at(v: BulkVector, fc: FlowCoefficients) -> np.ndarray:
    """Analytic 2x2 Jacobian of the bulk step at v."""
    from .rg import _require_zero_remainder

    _require_zero_remainder(v)
    g = fc.gbar + v.delta_g
    return np.array(
        [
            [fc.lam_g - 2.0 * fc.a1 * v.delta_g, 0.0],
            [-2.0 * fc.a2 * g - fc.a3 * v.mu, fc.lam_mu_free - fc.a3 * g],
        ]
    )


def unstable_eigenpair(j: np.ndarray, max_iter: int = 200, tol: float = 1e-12) -> EigenData:
    """Dominant eigenpair by power iteration; e_u normalized to mu-component 1."""
    x = np.array([1.0, 1.0]) / np.sqrt(2.0)
    lam = 0.0
    for _ in range(max_iter):
        y = j @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            raise NoGapError("matrix annihilates the iterate")
        y = y / ny
        lam = float(y @ j @ y) / float(y @ y)
        if np.linalg.norm(j @ y - lam * y) <= tol * max(1.0, abs(lam)):
            x = y
            break
        x = y
    else:
        raise NoGapError(f"power iteration did not settle in {max_iter} steps")
    # polish with the exact characteristic root nearest the iterate; long
    # chained-Jacobian products need the eigenvalue at machine precision
    tr = float(j[0, 0] + j[1, 1])
    disc = (j[0, 0] - j[1, 1]) ** 2 + 4.0 * j[0, 1] * j[1, 0]
    if disc >= 0.0:
        root = np.sqrt(disc)
        cands = [(tr + root) / 2.0, (tr - root) / 2.0]
        lam = min(cands, key=lambda c: abs(c - lam))
        scale = max(1.0, abs(lam))
        if abs(j[0, 0] - lam) > 1e-9 * scale:
            x = np.array([-j[0, 1] / (j[0, 0] - lam), 1.0])
        elif abs(j[1, 1] - lam) > 1e-9 * scale:
            x = np.array([1.0, -j[1, 0] / (j[1, 1] - lam)])
    if abs(x[1]) < 1e-12:
        raise NoGapError("dominant direction has no mu-component; cannot normalize")
    e = x / x[1]
    lam_other = tr - lam
    return EigenData(alpha_u=lam, e_u=BulkVector(float(e[0]), 1.0), lam_g=lam_other, jacobian=j.copy())


def unstable_projection(eig: EigenData) -> np.ndarray:
    """Spectral projection onto the unstable line along the stable one."""
    vals, vecs = np.linalg.eig(eig.jacobian)
    i_u = int(np.argmax(np.abs(vals)))
    i_s = 1 - i_u
    basis = np.stack([vecs[:, i_s], vecs[:, i_u]], axis=1)
    coords = np.linalg.inv(basis)
    return np.real(np.outer(basis[:, 1], coords[1, :]))


# ---------------------------------------------------------------------------
# stable manifold: sequence solution and shadowed orbits


@dataclass(frozen=True)
class ManifoldOrbit:
    """Shadowed orbit on the stable manifold; the tail is pinned to the
    fixed point once the solved trajectory reaches it at float resolution."""

    points: tuple
    v_star: BulkVector
    settle_index: int

    def point(self, n: int) -> BulkVector:
        if n < len(self.points):
            return self.points[n]
        return self.v_star

    @property
    def mu0(self) -> float:
        return self.points[0].mu


def _sequence_depth(delta_g0: float, fc: FlowCoefficients) -> int:
    lam = abs(fc.lam_g)
    if lam >= 1.0:
        raise DomainError("coupling multiplier not contracting; eps too large")
    scale = abs(delta_g0)
    if lam == 0.0 or scale == 0.0:
        # constant trajectory; the backward mass solve needs no extra depth
        return 200
    depth = int(np.ceil(np.log(scale / 1e-22) / -np.log(lam))) + 10
    return min(max(depth, 200), 50_000)


def stable_orbit(
    g: float,
    fc: FlowCoefficients,
    params: ModelParams,
    radius: float = DEFAULT_MANIFOLD_RADIUS,
    depth: int | None = None,
) -> ManifoldOrbit:
    """Solve the one-sided sequence equations for the critical trajectory
    above the coupling g.

    The coupling component runs forward from its boundary value and the mass
    component backward from the fixed-point tail, so the solution cannot
    drift off the manifold the way a forward orbit does.  Damped iteration
    with factor 1/2.
    """
    delta_g0 = g - fc.gbar
    if abs(delta_g0) > radius * fc.gbar:
        raise ManifoldRadiusError(
            f"|g - gbar| = {abs(delta_g0):.3e} outside radius {radius * fc.gbar:.3e}"
        )
    if depth is None:
        depth = _sequence_depth(delta_g0, fc)
    v_star = find_fixed_point(fc, params)
    lam_s = fc.lam_g
    lam_u = fc.lam_mu_free
    dg = np.zeros(depth + 1)
    mu = np.full(depth + 1, v_star.mu)
    dg[0] = delta_g0
    damping = 0.5
    last_change = np.inf
    stall = 0
    for _ in range(5000):
        xi4 = -fc.a1 * dg**2
        new_dg = np.empty_like(dg)
        new_dg[0] = delta_g0
        for n in range(1, depth + 1):
            new_dg[n] = lam_s * new_dg[n - 1] + xi4[n - 1]
        gs = fc.gbar + dg
        xi_mu = -fc.a2 * gs**2 - fc.a3 * gs * mu
        new_mu = np.empty_like(mu)
        # frozen geometric tail beyond the truncation depth
        new_mu[depth] = -xi_mu[depth] / (lam_u - 1.0)
        for n in range(depth - 1, -1, -1):
            new_mu[n] = (new_mu[n + 1] - xi_mu[n]) / lam_u
        new_dg = (1.0 - damping) * dg + damping * new_dg
        new_mu = (1.0 - damping) * mu + damping * new_mu
        change = max(np.max(np.abs(new_dg - dg)), np.max(np.abs(new_mu - mu)))
        dg, mu = new_dg, new_mu
        if change == 0.0:
            break
        if change < 1e-17:
            break
        if change >= last_change:
            stall += 1
            if stall > 8:
                break
        else:
            stall = 0
        last_change = change
    else:
        raise ConvergenceError("sequence iteration for the stable orbit did not settle")

    snap = 256.0 * np.finfo(float).eps * max(abs(v_star.mu), fc.gbar)
    settle = depth
    for n in range(depth + 1):
        if abs(dg[n]) <= snap and abs(mu[n] - v_star.mu) <= snap:
            settle = n
            break
    points = [BulkVector(float(dg[n]), float(mu[n])) for n in range(settle)]
    points.append(v_star)
    return ManifoldOrbit(points=tuple(points), v_star=v_star, settle_index=settle)


def critical_mass(
    g: float,
    fc: FlowCoefficients,
    params: ModelParams,
    method: str = "sequence",
    radius: float = DEFAULT_MANIFOLD_RADIUS,
    depth: int | None = None,
) -> float:
    """Mass on the stable manifold above the coupling g.

    sequence: boundary value of the solved critical trajectory.
    bisection: bisect the starting mass on the orbit escape criterion.
    """
    delta_g0 = g - fc.gbar
    if abs(delta_g0) > radius * fc.gbar:
        raise ManifoldRadiusError(
            f"|g - gbar| = {abs(delta_g0):.3e} outside radius {radius * fc.gbar:.3e}"
        )
    if method == "sequence":
        return stable_orbit(g, fc, params, radius=radius, depth=depth).mu0
    if method == "bisection":
        return _critical_mass_bisection(delta_g0, fc, params)
    raise DomainError(f"unknown method {method!r}")


def _critical_mass_bisection(delta_g0: float, fc: FlowCoefficients, params: ModelParams) -> float:
    guard = ESCAPE_GUARD_FACTOR * fc.gbar

    def escape_side(mu0: float) -> int:
        # 0 marks a float-exact manifold point whose orbit never escapes
        v = BulkVector(delta_g0, mu0)
        for _ in range(ESCAPE_MAX_STEPS):
            if abs(v.mu) > guard:
                return 1 if v.mu > 0 else -1
            nxt, _ = bulk_step(v, fc, params)
            if nxt == v:
                return 0
            v = nxt
        return 0

    lo, hi = -10.0 * fc.gbar, 10.0 * fc.gbar
    side_lo, side_hi = escape_side(lo), escape_side(hi)
    if side_lo == side_hi or side_lo == 0 or side_hi == 0:
        raise EscapeAmbiguousError("initial bracket does not straddle the stable manifold")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        side = escape_side(mid)
        if side == side_lo:
            lo = mid
        else:
            # non-escaping midpoints sit on the manifold to float accuracy
            hi = mid
    return 0.5 * (lo + hi)


def orbit_for_seed(
    v: BulkVector,
    fc: FlowCoefficients,
    params: ModelParams,
    atol: float = MEMBERSHIP_ATOL,
) -> ManifoldOrbit:
    """Shadowed orbit through a seed, verifying it lies on the manifold.

    The manifold is the graph of the critical mass over the coupling; a
    seed whose mass disagrees beyond atol is rejected.
    """
    orbit = stable_orbit(fc.gbar + v.delta_g, fc, params)
    if abs(v.mu - orbit.mu0) > atol * max(1.0, abs(orbit.mu0)):
        raise OffManifoldError(
            f"seed mass {v.mu!r} differs from the manifold value {orbit.mu0!r}"
        )
    return orbit


def measure_contraction(
    orbit: ManifoldOrbit, n_lo: int = 20, n_hi: int = 30
) -> float:
    """Geometric decay ratio of the trajectory's distance to the fixed point."""
    dists = [_diff(orbit.point(n), orbit.v_star) for n in range(n_hi + 2)]
    ratios = [dists[n + 1] / dists[n] for n in range(n_lo, n_hi) if dists[n] > 0]
    if not ratios:
        raise DomainError("trajectory already at the fixed point in the sampled window")
    return float(np.mean(ratios))


# ---------------------------------------------------------------------------
# partial linearization


def _psi_stage(v: BulkVector, w: BulkVector, alpha_u: float, n: int, fc, params) -> BulkVector:
    scale = alpha_u**-n
    cur = BulkVector(v.delta_g + scale * w.delta_g, v.mu + scale * w.mu)
    for _ in range(n):
        cur, _ = bulk_step(cur, fc, params)
    return cur


def psi_fixed_seed(
    w: BulkVector,
    fc: FlowCoefficients,
    params: ModelParams,
    v_star: BulkVector | None = None,
    tol: float = 1e-12,
    n_max: int = 2000,
):
    """Defining double iteration seeded at the fixed point.

    Successive stages are compared in the Cauchy sense; once rounding of
    the fixed point starts re-amplifying (stage differences grow instead of
    shrinking), the best stage is returned.  Returns (value, n_used,
    achieved_difference).
    """
    if v_star is None:
        v_star = find_fixed_point(fc, params)
    eig = unstable_eigenpair(jacobian_at(v_star, fc))
    alpha = eig.alpha_u
    prev = None
    best = None
    best_diff = np.inf
    best_n = 0
    grow = 0
    for n in range(n_max):
        cur = _psi_stage(v_star, w, alpha, n, fc, params)
        if prev is not None:
            d = _diff(cur, prev)
            if d < tol:
                return cur, n, d
            if d < best_diff:
                best, best_diff, best_n = cur, d, n
                grow = 0
            elif d > 10.0 * best_diff:
                grow += 1
                if grow >= 3:
                    return best, best_n, best_diff
        prev = cur
    raise ConvergenceError(f"no Cauchy convergence within {n_max} stages", n_used=n_max)


def transport_along(
    orbit: ManifoldOrbit, w: BulkVector, fc: FlowCoefficients, alpha_u: float, q: int
) -> BulkVector:
    """alpha_u^-q times the q-step chained Jacobian along the orbit, applied to w."""
    y = np.array([w.delta_g, w.mu])
    for n in range(q):
        y = (jacobian_at(orbit.point(n), fc) @ y) / alpha_u
    return BulkVector(float(y[0]), float(y[1]))


def koenigs_value(
    v: BulkVector,
    w: BulkVector,
    fc: FlowCoefficients,
    params: ModelParams,
    tol: float = 1e-12,
    orbit: ManifoldOrbit | None = None,
):
    """Conjugating map value at (v, w); returns (value, n_used).

    The argument is transported to the fixed point along the shadowed orbit
    through v (the conjugation semigroup identity), where the defining
    limit is evaluated.  For v at the fixed point this is the plain double
    iteration.
    """
    if orbit is None:
        orbit = orbit_for_seed(v, fc, params)
    eig = unstable_eigenpair(jacobian_at(orbit.v_star, fc))
    q = orbit.settle_index
    w_t = transport_along(orbit, w, fc, eig.alpha_u, q)
    value, n_used, _ = psi_fixed_seed(w_t, fc, params, v_star=orbit.v_star, tol=tol)
    return value, q + n_used


def koenigs_psi(
    v: BulkVector,
    w: BulkVector,
    fc: FlowCoefficients,
    params: ModelParams,
    tol: float = 1e-12,
) -> KoenigsResult:
    """Conjugating map with intertwining and curvature diagnostics."""
    orbit = orbit_for_seed(v, fc, params)
    eig = unstable_eigenpair(jacobian_at(orbit.v_star, fc))
    alpha = eig.alpha_u
    value, n_used = koenigs_value(v, w, fc, params, tol=tol, orbit=orbit)
    shrunk, _ = koenigs_value(
        v, BulkVector(w.delta_g / alpha, w.mu / alpha), fc, params, tol=tol, orbit=orbit
    )
    image, _ = bulk_step(shrunk, fc, params)
    intertwine = _diff(image, value)
    half, _ = koenigs_value(v, BulkVector(0.5 * w.delta_g, 0.5 * w.mu), fc, params, tol=tol, orbit=orbit)
    base = orbit.v_star
    wnorm = _norm(w)
    second = max(
        abs(value.delta_g - 2.0 * half.delta_g + base.delta_g),
        abs(value.mu - 2.0 * half.mu + base.mu),
    )
    quad = 2.0 * second / wnorm**2 if wnorm > 0 else 0.0
    return KoenigsResult(
        value=value,
        n_used=n_used,
        intertwine_residual=intertwine,
        quadratic_coeff_estimate=quad,
    )


def t_infinity(
    v: BulkVector,
    w: BulkVector,
    fc: FlowCoefficients,
    params: ModelParams,
    tol: float = 1e-13,
    orbit: ManifoldOrbit | None = None,
) -> tuple:
    """Limit of chained Jacobians along the orbit of v, divided by alpha_u^n.

    Returns (limit vector, kappa) with kappa its mu-component; the limit is
    proportional to the unstable direction, so with e_u normalized to
    mu-component 1 the proportionality constant is exactly that component.
    """
    if orbit is None:
        orbit = orbit_for_seed(v, fc, params)
    eig = unstable_eigenpair(jacobian_at(orbit.v_star, fc))
    alpha = eig.alpha_u
    y = np.array([w.delta_g, w.mu])
    n_settle = orbit.settle_index
    prev = y.copy()
    n = 0
    for n in range(1, n_settle + 400):
        y = (jacobian_at(orbit.point(n - 1), fc) @ y) / alpha
        if n > max(2, n_settle) and np.max(np.abs(y - prev)) < tol * max(1.0, float(np.max(np.abs(y)))):
            return BulkVector(float(y[0]), float(y[1])), float(y[1])
        prev = y.copy()
    raise ConvergenceError(f"chained Jacobians did not converge within {n} steps", n_used=n)


def semigroup_residuals(
    v: BulkVector,
    w: BulkVector,
    fc: FlowCoefficients,
    params: ModelParams,
    qs=(1, 2, 3),
    tol: float = 1e-12,
) -> list:
    """Residuals of the conjugation semigroup identity at the given shifts."""
    orbit = orbit_for_seed(v, fc, params)
    eig = unstable_eigenpair(jacobian_at(orbit.v_star, fc))
    base, _ = koenigs_value(v, w, fc, params, tol=tol, orbit=orbit)
    out = []
    for q in qs:
        shifted_w = transport_along(orbit, w, fc, eig.alpha_u, q)
        shifted_orbit = ManifoldOrbit(
            points=tuple(orbit.point(n) for n in range(q, max(q + 1, orbit.settle_index + 1))),
            v_star=orbit.v_star,
            settle_index=max(0, orbit.settle_index - q),
        )
        other, _ = koenigs_value(orbit.point(q), shifted_w, fc, params, tol=tol, orbit=shifted_orbit)
        out.append(_diff(base, other))
    return out


def second_derivative_map(fc: FlowCoefficients, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear second differential of the bulk step (constant in v)."""
    return np.array(
        [
            -2.0 * fc.a1 * x[0] * y[0],
            -2.0 * fc.a2 * x[0] * y[0] - fc.a3 * (x[0] * y[1] + x[1] * y[0]),
        ]
    )


def theta_vector(fc: FlowCoefficients, eig: EigenData) -> BulkVector:
    """Quadratic coefficient of the conjugating map along the unstable line.

    Solves (alpha_u^2 I - J) theta = (1/2) D2[e_u, e_u]; resonance cannot
    occur for the physical flow (alpha_u > 1) but is guarded for synthetic
    coefficient sets.
    """
    e = np.array([eig.e_u.delta_g, eig.e_u.mu])
    rhs = 0.5 * second_derivative_map(fc, e, e)
    m = eig.alpha_u**2 * np.eye(2) - eig.jacobian
    if abs(np.linalg.det(m)) < 1e-14 * max(1.0, eig.alpha_u**4):
        raise ResonanceError("alpha_u^2 resonates with the Jacobian spectrum")
    sol = np.linalg.solve(m, rhs)
    return BulkVector(float(sol[0]), float(sol[1]))
