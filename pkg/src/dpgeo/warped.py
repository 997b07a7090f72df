"""Doubly-warped building-block metrics and their curvature.

The metric family lives on ``R_+ x S^{n-1} x R`` and has the form::

    g = dr^2 + f(r)^2 h + phi(r)^2 dx^2

with ``h`` the round metric on ``S^{n-1}``.  Profiles are carried with
analytic first and second derivatives so curvature can be evaluated from
closed-form expressions.  The planar power metric ``dx^2 + |x|^{2 alpha} dy^2``
is provided as well.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

ArrayFn = Callable[[np.ndarray], np.ndarray]

# |zeta'|^2 + |zeta''| must stay below this (cutoff requirement).
ZETA_BOUND = 100.0
# sigma_0 = 1e4 * n * delta has to stay below 1 for f~ to be increasing.
ODE_GAIN = 1.0e4


# ----------------------------------------------------------------------------
# smooth blending primitives
# ----------------------------------------------------------------------------

def smoothstep(s):
    """Quintic smoothstep ``6s^5 - 15s^4 + 10s^3`` clamped to [0, 1]."""
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


def smoothstep_d1(s):
    s = np.clip(s, 0.0, 1.0)
    return 30.0 * s**2 * (1.0 - s) ** 2


def smoothstep_d2(s):
    s = np.clip(s, 0.0, 1.0)
    return 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s)


def smoothstep_integral(s):
    """Antiderivative of :func:`smoothstep` vanishing at 0 (valid on [0, 1])."""
    s = np.clip(s, 0.0, 1.0)
    return s**6 - 3.0 * s**5 + 2.5 * s**4


def zeta(x, deriv: int = 0):
    """Non-increasing cutoff: 1 on [0, 1/2], 0 on [1, inf), C^2 in between."""
    x = np.asarray(x, dtype=float)
    s = 2.0 * x - 1.0
    if deriv == 0:
        return 1.0 - smoothstep(s)
    if deriv == 1:
        return -2.0 * smoothstep_d1(s)
    if deriv == 2:
        return -4.0 * smoothstep_d2(s)
    raise ValueError("deriv must be 0, 1 or 2")


def check_zeta_bound(num: int = 20001) -> float:
    """Return max of |zeta'|^2 + |zeta''| on a fine grid; raise if above bound."""
    x = np.linspace(0.0, 1.2, num)
    val = float(np.max(zeta(x, 1) ** 2 + np.abs(zeta(x, 2))))
    if val > ZETA_BOUND:
        raise ArithmeticError(f"cutoff derivative bound violated: {val}")
    return val


# ----------------------------------------------------------------------------
# profile containers
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Profile:
    """A scalar radial function with analytic first and second derivatives."""

    value: ArrayFn
    d1: ArrayFn
    d2: ArrayFn
    name: str = ""

    def __call__(self, r, deriv: int = 0):
        r = np.asarray(r, dtype=float)
        return (self.value, self.d1, self.d2)[deriv](r)

    def jet(self, r):
        r = np.asarray(r, dtype=float)
        return self.value(r), self.d1(r), self.d2(r)


@dataclass(frozen=True)
class ProfilePair:
    f: Profile
    phi: Profile
    r_max: float = 10.0

    def sample(self, r):
        """Return ``(f, f', f'', phi, phi', phi'')`` at the radii ``r``."""
        return (*self.f.jet(r), *self.phi.jet(r))


@dataclass(frozen=True)
class BuildingBlockParams:
    n: int
    delta: float
    epsilon: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise ValueError(f"n must be an integer >= 3, got {self.n}")
        if not 0.0 <= self.delta < 0.25:
            raise ValueError(f"delta must lie in [0, 1/4), got {self.delta}")
        if not 0.0 < self.epsilon < 0.25:
            raise ValueError(f"epsilon must lie in (0, 1/4), got {self.epsilon}")

    @property
    def sigma0(self) -> float:
        return ODE_GAIN * self.n * self.delta


# ----------------------------------------------------------------------------
# phi
# ----------------------------------------------------------------------------

def _phi_eps_jet(r, eps):
    """Value and two derivatives of the un-powered profile phi_eps.

    Branches: eps on r <= eps/2, psi_1 on [eps/2, 2 eps], r on [2 eps, 1/2],
    psi_2 on [1/2, 2], 1 beyond.  psi_1 has slope S + S'/6 in the local
    variable, psi_2 has slope (1-s)^4 (1+4s); both are C^2 at the joins and
    non-decreasing, psi_2 is concave.
    """
    r = np.asarray(r, dtype=float)
    v = np.empty_like(r)
    d1 = np.zeros_like(r)
    d2 = np.zeros_like(r)

    b0 = r <= 0.5 * eps
    b1 = (r > 0.5 * eps) & (r < 2.0 * eps)
    b2 = (r >= 2.0 * eps) & (r <= 0.5)
    b3 = (r > 0.5) & (r < 2.0)
    b4 = r >= 2.0

    v[b0] = eps

    w1 = 1.5 * eps
    s = (r[b1] - 0.5 * eps) / w1
    v[b1] = eps + w1 * (smoothstep_integral(s) + smoothstep(s) / 6.0)
    d1[b1] = smoothstep(s) + smoothstep_d1(s) / 6.0
    d2[b1] = (smoothstep_d1(s) + smoothstep_d2(s) / 6.0) / w1

    v[b2] = r[b2]
    d1[b2] = 1.0

    s = (r[b3] - 0.5) / 1.5
    q = 1.0 - s
    v[b3] = 0.5 + 1.5 * (1.0 / 3.0 - q**5 + (2.0 / 3.0) * q**6)
    d1[b3] = q**4 * (1.0 + 4.0 * s)
    d2[b3] = -20.0 * s * q**3 / 1.5

    v[b4] = 1.0
    return v, d1, d2


def check_psi_bounds(eps: float, num: int = 20001) -> None:
    """Verify the interpolant derivative bounds on a fine grid."""
    r1 = np.linspace(0.5 * eps, 2.0 * eps, num)
    v, d1, d2 = _phi_eps_jet(r1, eps)
    ok1 = (np.all(np.abs(v) <= 8.0 * eps) and np.all(np.abs(d1) <= 8.0)
           and np.all(np.abs(d2) <= 8.0 / eps) and np.all(d1 >= 0.0))
    r2 = np.linspace(0.5, 2.0, num)
    v, d1, d2 = _phi_eps_jet(r2, eps)
    ok2 = (np.all(np.abs(v) <= 1.0 + 1e-12) and np.all(np.abs(d1) <= 4.0)
           and np.all(np.abs(d2) <= 16.0) and np.all(d1 >= 0.0)
           and np.all(d2 <= 1e-14))
    if not (ok1 and ok2):
        raise ArithmeticError(f"interpolant bounds violated for eps={eps}")


def make_phi(params: BuildingBlockParams) -> Profile:
    """phi_{delta,eps} = phi_eps ** delta with analytic derivatives."""
    delta, eps = params.delta, params.epsilon
    check_psi_bounds(eps)

    def value(r):
        return _phi_eps_jet(r, eps)[0] ** delta

    def d1(r):
        v, a1, _ = _phi_eps_jet(r, eps)
        return delta * v ** (delta - 1.0) * a1

    def d2(r):
        v, a1, a2 = _phi_eps_jet(r, eps)
        return v**delta * (delta * (delta - 1.0) * (a1 / v) ** 2 + delta * a2 / v)

    return Profile(value, d1, d2, name=f"phi(delta={delta:g}, eps={eps:g})")


# ----------------------------------------------------------------------------
# f
# ----------------------------------------------------------------------------

def _deficit_integral(r, eps):
    """int_0^r (1 - zeta(t / 100 eps)) dt by adaptive quadrature."""
    lo, hi = 50.0 * eps, 100.0 * eps

    def integrand(t):
        return 1.0 - zeta(t / hi)

    full, _ = integrate.quad(integrand, lo, hi, epsabs=1e-13, epsrel=1e-12)
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    mid = (r > lo) & (r < hi)
    for idx in np.flatnonzero(mid):
        out.flat[idx] = integrate.quad(integrand, lo, r.flat[idx],
                                       epsabs=1e-13, epsrel=1e-12)[0]
    high = r >= hi
    out[high] = full + (r[high] - hi)
    return out


def make_f(params: BuildingBlockParams) -> Profile:
    """Sphere warping f = zeta(r/4) f~ + (1 - zeta(r/4)) r.

    ``f~`` solves ``f~' = 1 - sigma0 (1 - zeta(r / 100 eps))`` with ``f~(0) = 0``.
    """
    n, eps, sigma0 = params.n, params.epsilon, params.sigma0
    if sigma0 >= 1.0:
        raise ValueError(
            f"1e4*n*delta = {sigma0:g} >= 1: f~ would stop increasing and the "
            "metric degenerates; choose delta < 1e-4/n")
    check_zeta_bound()
    scale = 100.0 * eps

    def ft(r):
        return r - sigma0 * _deficit_integral(r, eps)

    def ft1(r):
        return 1.0 - sigma0 * (1.0 - zeta(r / scale))

    def ft2(r):
        return sigma0 * zeta(r / scale, 1) / scale

    def value(r):
        z = zeta(r / 4.0)
        return z * ft(r) + (1.0 - z) * r

    def d1(r):
        z, z1 = zeta(r / 4.0), zeta(r / 4.0, 1) / 4.0
        return z1 * (ft(r) - r) + z * (ft1(r) - 1.0) + 1.0

    def d2(r):
        z, z1, z2 = zeta(r / 4.0), zeta(r / 4.0, 1) / 4.0, zeta(r / 4.0, 2) / 16.0
        return z2 * (ft(r) - r) + 2.0 * z1 * (ft1(r) - 1.0) + z * ft2(r)

    return Profile(value, d1, d2, name=f"f(n={n}, delta={params.delta:g}, eps={eps:g})")


def make_building_block(params: BuildingBlockParams, r_max: float = 10.0) -> ProfilePair:
    return ProfilePair(make_f(params), make_phi(params), r_max=r_max)


def power_profile(c: float = 1.0, k: float = 1.0, name: str = "") -> Profile:
    """Profile ``c * r**k`` (handy for cones and flat checks)."""
    return Profile(lambda r: c * r**k,
                   lambda r: c * k * r ** (k - 1.0),
                   lambda r: c * k * (k - 1.0) * r ** (k - 2.0),
                   name=name or f"{c:g}*r^{k:g}")


def constant_profile(c: float = 1.0) -> Profile:
    return Profile(lambda r: np.full_like(r, c, dtype=float),
                   lambda r: np.zeros_like(r, dtype=float),
                   lambda r: np.zeros_like(r, dtype=float),
                   name=f"const {c:g}")


# ----------------------------------------------------------------------------
# curvature
# ----------------------------------------------------------------------------

def _checked_sample(profiles: ProfilePair, r):
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise ValueError("curvature requested at r <= 0: the origin is a "
                         "coordinate singularity, sample r > 0")
    f, f1, f2, p, p1, p2 = profiles.sample(r)
    if np.any(f <= 0.0) or np.any(p <= 0.0):
        raise ValueError("profiles must be positive where curvature is evaluated")
    return f, f1, f2, p, p1, p2


def scalar_curvature(profiles: ProfilePair, n: int, r):
    """Scalar curvature of ``dr^2 + f^2 h_{S^{n-1}} + phi^2 dx^2``."""
    f, f1, f2, p, p1, p2 = _checked_sample(profiles, r)
    ff2 = 2.0 * (f1**2 + f * f2)  # (f^2)''
    return ((n - 1) / f**2 * (2.0 - ff2)
            + (n - 4) * (n - 1) / f**2 * (1.0 - f1**2)
            - 2.0 * p2 / p
            - 2.0 * (n - 1) * p1 * f1 / (p * f))


def ricci_components(profiles: ProfilePair, n: int, r):
    """Return ``(R_rr, R_sph, R_xx)``.

    ``R_sph`` is the coefficient of ``h_ij`` in the sphere block, so the sphere
    part of the Ricci tensor is ``R_sph * h``.
    """
    f, f1, f2, p, p1, p2 = _checked_sample(profiles, r)
    r_rr = -(n - 1) * f2 / f - p2 / p
    r_sph = (n - 2) - (f * f2 + (n - 2) * f1**2 + p1 * f * f1 / p)
    r_xx = -p * p2 - (n - 1) * p * p1 * f1 / f
    return r_rr, r_sph, r_xx


def trace_ricci(profiles: ProfilePair, n: int, r):
    """g^{AB} R_AB assembled from :func:`ricci_components`."""
    f, _, _, p, _, _ = _checked_sample(profiles, r)
    r_rr, r_sph, r_xx = ricci_components(profiles, n, r)
    return r_rr + (n - 1) * r_sph / f**2 + r_xx / p**2


def ricci_norm_sq(profiles: ProfilePair, n: int, r):
    """|Ric|^2 for the diagonal Ricci tensor of the warped metric."""
    f, _, _, p, _, _ = _checked_sample(profiles, r)
    r_rr, r_sph, r_xx = ricci_components(profiles, n, r)
    return r_rr**2 + (n - 1) * (r_sph / f**2) ** 2 + (r_xx / p**2) ** 2


def warped_metric_fn(profiles: ProfilePair, n: int):
    """Full (n+1)-dim metric in coordinates ``(r, theta_1..theta_{n-1}, x)``.

    The sphere uses standard hyperspherical angles; evaluate away from the
    poles.  Returned function maps a point (length n+1) to an (n+1)x(n+1) array.
    """
    def metric(pt):
        pt = np.asarray(pt, dtype=float)
        r, thetas = pt[0], pt[1:n]
        f = float(profiles.f(np.array([r]))[0])
        p = float(profiles.phi(np.array([r]))[0])
        g = np.zeros((n + 1, n + 1))
        g[0, 0] = 1.0
        w = 1.0
        for i in range(n - 1):
            g[i + 1, i + 1] = f**2 * w
            w *= np.sin(thetas[i]) ** 2
        g[n, n] = p**2
        return g

    return metric


# ----------------------------------------------------------------------------
# sweep report
# ----------------------------------------------------------------------------

CASE_NAMES = ("case1 r<=eps/2", "case2 eps/2<r<=2", "case3 r>2")


@dataclass
class CurvatureReport:
    params: BuildingBlockParams
    r_samples: np.ndarray
    R: np.ndarray
    ric_rr: np.ndarray
    ric_sphere: np.ndarray
    ric_xx: np.ndarray
    profile_columns: tuple = field(repr=False, default=())
    min_R: float = float("nan")
    argmin_r: float = float("nan")
    case_breakdown: dict = field(default_factory=dict)
    origin_regular: bool = True

    COLUMNS = ("r", "f", "f'", "f''", "phi", "phi'", "phi''", "R", "R_rr", "R_sph", "R_xx")

    def rows(self):
        cols = [self.r_samples, *self.profile_columns, self.R,
                self.ric_rr, self.ric_sphere, self.ric_xx]
        return np.column_stack(cols)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for row in self.rows():
                w.writerow([repr(float(x)) for x in row])

    def summary(self) -> dict:
        return {
            "n": self.params.n, "delta": self.params.delta,
            "epsilon": self.params.epsilon, "min_R": self.min_R,
            "argmin_r": self.argmin_r, "cases": dict(self.case_breakdown),
            "origin_regular": self.origin_regular,
        }


def case_masks(r, eps):
    r = np.asarray(r)
    return (r <= 0.5 * eps, (r > 0.5 * eps) & (r <= 2.0), r > 2.0)


def min_scalar_report(params: BuildingBlockParams, r_max: float = 10.0,
                      samples: int = 20000, r_min: float | None = None) -> CurvatureReport:
    """Sample R densely on (0, r_max] and split the minimum by proof case."""
    eps = params.epsilon
    if r_min is None:
        r_min = max(min(1e-6, 0.01 * eps), 1e-12)
    r = np.geomspace(r_min, r_max, samples)
    # make sure every branch junction is represented
    joints = [0.5 * eps, 2 * eps, 50 * eps, 75 * eps, 100 * eps, 0.5, 1.0, 2.0, 3.0, 4.0]
    r = np.unique(np.concatenate([r, [j for j in joints if r_min <= j <= r_max]]))
    pair = make_building_block(params, r_max=r_max)
    cols = pair.sample(r)
    R = scalar_curvature(pair, params.n, r)
    rr, rs, rx = ricci_components(pair, params.n, r)

    cases = {}
    for name, mask in zip(CASE_NAMES, case_masks(r, eps)):
        cases[name] = float(np.min(R[mask])) if np.any(mask) else float("nan")
    k = int(np.argmin(R))
    # regular at the axis when the sphere warping is linear with unit slope
    # and the fibre warping is flat there
    f1_0 = cols[1][0]
    p1_0 = cols[4][0]
    regular = bool(abs(f1_0 - 1.0) < 1e-9 and abs(p1_0) < 1e-9)
    return CurvatureReport(params, r, R, rr, rs, rx, profile_columns=cols,
                           min_R=float(R[k]), argmin_r=float(r[k]),
                           case_breakdown=cases, origin_regular=regular)


def sweep_min_scalar(n: int, deltas, epsilons, r_max: float = 10.0,
                     samples: int = 20000):
    """Run :func:`min_scalar_report` over a (delta, eps) grid.

    Pairs for which the construction is invalid (1e4 n delta >= 1) are
    reported with ``min_R = None`` and a reason.
    """
    out = []
    for d in deltas:
        for e in epsilons:
            params = BuildingBlockParams(n, d, e)
            try:
                rep = min_scalar_report(params, r_max=r_max, samples=samples)
            except ValueError as exc:
                out.append({"n": n, "delta": d, "epsilon": e, "min_R": None,
                            "reason": str(exc)})
                continue
            out.append(rep.summary())
    return out


# ----------------------------------------------------------------------------
# planar power metric
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerMetricParams:
    alpha: float

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")


@dataclass(frozen=True)
class PowerMetric:
    """``g = dx^2 + |x|^{2 alpha} dy^2`` on the plane."""

    alpha: float
    det_threshold: float = 1e-12

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        x = pts[..., 0]
        g = np.zeros(pts.shape[:-1] + (2, 2))
        g[..., 0, 0] = 1.0
        g[..., 1, 1] = np.abs(x) ** (2.0 * self.alpha) if self.alpha > 0 else 1.0
        return g

    def degenerate(self, pts):
        return np.linalg.det(self(pts)) < self.det_threshold


def make_power_metric(alpha: float) -> PowerMetric:
    PowerMetricParams(alpha)
    return PowerMetric(float(alpha))
