"""Desk-scale Ricci flow integrators.

Two reductions of ``d_t g = -2 Ric`` are provided:

* conformal flow on a flat 2-torus, ``g = e^{2u} g_flat``, where the flow is
  ``d_t u = e^{-2u} Lap u`` and ``R = -2 e^{-2u} Lap u``;
* doubly-warped flow ``g = ds^2 + f^2 h + phi^2 dx^2``, integrated with the
  area radius ``rho = f`` as coordinate and re-sampled to arclength on demand.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .warped import BuildingBlockParams, Profile, ProfilePair, make_building_block, make_phi

CFL_SAFETY = 0.2


class FlowError(RuntimeError):
    """Raised on CFL violations."""


@dataclass
class FlowReport:
    """Per-step history plus residual summaries."""

    rows: list = field(default_factory=list)

    COLUMNS = ("t", "min_R", "max_abs_R", "volume", "scalar_residual", "volume_residual")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for row in self.rows:
                w.writerow([repr(float(row.get(k, np.nan))) for k in self.COLUMNS])


# ----------------------------------------------------------------------------
# conformal flow on the flat torus
# ----------------------------------------------------------------------------

def _lap_periodic(u, h):
    out = -2 * u.ndim * u
    for ax in range(u.ndim):
        out = out + np.roll(u, 1, axis=ax) + np.roll(u, -1, axis=ax)
    return out / h**2


@dataclass
class ConformalFlowState:
    u: np.ndarray
    spacing: float
    t: float = 0.0
    dt: float | None = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if not np.all(np.isfinite(self.u)):
            raise ValueError("u must be finite")
        if not self.history:
            self.history.append(self.snapshot())

    def scalar(self, u=None) -> np.ndarray:
        u = self.u if u is None else u
        return -2.0 * np.exp(-2 * u) * _lap_periodic(u, self.spacing)

    def volume(self, u=None) -> float:
        u = self.u if u is None else u
        return float(np.exp(2 * u).sum() * self.spacing**2)

    def cfl(self) -> float:
        return CFL_SAFETY * self.spacing**2 * float(np.exp(2 * self.u).min())

    def snapshot(self) -> dict:
        R = self.scalar()
        return {"t": self.t, "min_R": float(R.min()), "max_abs_R": float(np.abs(R).max()),
                "volume": self.volume(), "u": self.u.copy()}


def conformal_rhs(u, h):
    return np.exp(-2 * u) * _lap_periodic(u, h)


def conformal_step(state: ConformalFlowState, dt: float | None = None) -> ConformalFlowState:
    """One Heun (RK2) step; the state is updated in place and returned."""
    limit = state.cfl()
    dt = limit if dt is None else dt
    if dt > limit * (1 + 1e-12):
        raise FlowError(f"dt={dt:g} exceeds the CFL bound {limit:g}")
    h = state.spacing
    k1 = conformal_rhs(state.u, h)
    k2 = conformal_rhs(state.u + dt * k1, h)
    state.u = state.u + 0.5 * dt * (k1 + k2)
    state.t += dt
    state.dt = dt
    state.history.append(state.snapshot())
    return state


def _balanced_step(remaining: float, limit: float) -> float:
    """Largest step below ``limit`` that splits ``remaining`` into equal parts."""
    k = max(1, int(np.ceil(remaining / limit - 1e-9)))
    return remaining / k


def run_conformal(u0, spacing: float, t_end: float, dt: float | None = None,
                  keep_fields: bool = False) -> ConformalFlowState:
    state = ConformalFlowState(u0, spacing)
    while state.t < t_end - 1e-15:
        limit = state.cfl() if dt is None else min(dt, state.cfl())
        conformal_step(state, _balanced_step(t_end - state.t, limit))
        if not keep_fields:
            for snap in state.history[:-2]:
                snap.pop("u", None)
    return state


def conformal_monitor(state: ConformalFlowState) -> dict:
    """Consistency of the last two slices with the scalar and volume evolution.

    In two dimensions ``|Ric|^2 = R^2/2`` so ``d_t R = Lap_g R + R^2``.
    """
    snaps = [s for s in state.history if "u" in s]
    if len(snaps) < 2:
        raise ValueError("need two stored time slices")
    a, b = snaps[-2], snaps[-1]
    dt = b["t"] - a["t"]
    h = state.spacing
    Ra, Rb = state.scalar(a["u"]), state.scalar(b["u"])

    def rhs(u, R):
        return np.exp(-2 * u) * _lap_periodic(R, h) + R * R

    dRdt = (Rb - Ra) / dt
    res = dRdt - 0.5 * (rhs(a["u"], Ra) + rhs(b["u"], Rb))
    scale = max(np.abs(dRdt).max(), np.abs(Ra).max(), 1e-300)
    dvol = (b["volume"] - a["volume"]) / dt
    intR = 0.5 * h**2 * (np.sum(Ra * np.exp(2 * a["u"])) + np.sum(Rb * np.exp(2 * b["u"])))
    return {"scalar_residual": float(np.abs(res).max()),
            "scalar_residual_rel": float(np.abs(res).max() / scale),
            "volume_rate": dvol, "minus_int_R": -intR,
            "volume_residual": float(abs(dvol + intR))}


# ----------------------------------------------------------------------------
# warped flow
# ----------------------------------------------------------------------------
#
# With rho = f as coordinate the metric reads rho^2 h + phi^2 dx^2 plus
# d rho^2 / psi^2, where psi = df/ds.  Modulo the diffeomorphism that keeps
# f = rho fixed, Ricci flow becomes the local parabolic system
#
#   psi_t = psi^2 psi'' + (n-3) psi^2 psi'/rho - (n-2) psi' (psi^2-1)/rho
#           - (n-2) psi (psi^2-1)/rho^2 - psi^3 (phi'/phi)^2
#   phi_t = psi^2 phi'' + (n-1) psi^2 phi'/rho - (n-2)(psi^2-1) phi'/rho
#           - psi^2 phi'^2/phi
#
# (' = d/d rho).  Smoothness on the axis is psi(0) = 1 with phi even.


def _centred(x, h):
    d1 = np.empty_like(x)
    d2 = np.empty_like(x)
    d1[1:-1] = (x[2:] - x[:-2]) / (2 * h)
    d2[1:-1] = (x[2:] - 2 * x[1:-1] + x[:-2]) / h**2
    return d1, d2


@dataclass
class WarpedFlowState:
    """Profiles on the area-radius grid ``rho_i = i h``, ``i = 0..N``.

    Node 0 is the axis (``psi = 1``, ``phi`` even); node N sits at
    ``rho_max`` where the flat profile ``psi = phi = 1`` is imposed.
    """

    psi: np.ndarray
    phi: np.ndarray
    h: float
    n: int
    t: float = 0.0
    history: list = field(default_factory=list)
    singular: str | None = None

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        if not self.history:
            self.history.append(self.snapshot())

    @property
    def rho(self) -> np.ndarray:
        return np.arange(self.psi.size) * self.h

    def _derivs(self, psi, phi):
        h = self.h
        ps1, ps2 = _centred(psi, h)
        ph1, ph2 = _centred(phi, h)
        # axis: psi_rho(0) = 0, phi even
        ps1[0] = 0.0
        ps2[0] = 2 * (psi[1] - psi[0]) / h**2
        ph1[0] = 0.0
        ph2[0] = 2 * (phi[1] - phi[0]) / h**2
        return ps1, ps2, ph1, ph2

    def rhs(self, psi, phi):
        n = self.n
        rho = self.rho
        ps1, ps2, ph1, ph2 = self._derivs(psi, phi)
        dpsi = np.zeros_like(psi)
        dphi = np.zeros_like(phi)
        i = slice(1, -1)
        r, s, p = rho[i], psi[i], phi[i]
        q = s * s - 1
        dpsi[i] = (s * s * ps2[i] + (n - 3) * s * s * ps1[i] / r
                   - (n - 2) * ps1[i] * q / r - (n - 2) * s * q / r**2
                   - s**3 * (ph1[i] / p) ** 2)
        dphi[i] = (s * s * ph2[i] + (n - 1) * s * s * ph1[i] / r
                   - (n - 2) * q * ph1[i] / r - s * s * ph1[i] ** 2 / p)
        # axis value of phi: phi_t = n phi'' (psi = 1, phi' = 0)
        dphi[0] = n * ph2[0]
        return dpsi, dphi

    def curvature(self, psi=None, phi=None) -> dict:
        """Orthonormal-frame Ricci components and R at nodes ``1..N-1``."""
        psi = self.psi if psi is None else psi
        phi = self.phi if phi is None else phi
        n = self.n
        ps1, ps2, ph1, ph2 = self._derivs(psi, phi)
        i = slice(1, -1)
        r, s, p = self.rho[i], psi[i], phi[i]
        phi_ss = s * s * ph2[i] + s * ps1[i] * ph1[i]
        phi_s = s * ph1[i]
        f_ss = s * ps1[i]
        R_ss = -(n - 1) * f_ss / r - phi_ss / p
        R_sph = (-r * f_ss + (n - 2) * (1 - s * s) - r * s * phi_s / p) / r**2
        R_xx = -phi_ss / p - (n - 1) * phi_s * s / (p * r)
        R = R_ss + (n - 1) * R_sph + R_xx
        return {"rho": r, "R_ss": R_ss, "R_sph": R_sph, "R_xx": R_xx, "R": R,
                "ric_sq": R_ss**2 + (n - 1) * R_sph**2 + R_xx**2}

    def volume_density(self, psi=None, phi=None) -> np.ndarray:
        """``dvol / (d rho dx d omega)`` = ``rho^{n-1} phi / psi``."""
        psi = self.psi if psi is None else psi
        phi = self.phi if phi is None else phi
        return self.rho ** (self.n - 1) * phi / psi

    def volume(self) -> float:
        v = self.volume_density()
        return float(np.sum(0.5 * (v[1:] + v[:-1])) * self.h)

    def arclength(self) -> np.ndarray:
        """``s(rho) = int_0^rho d rho / psi`` (trapezoid)."""
        w = 1.0 / self.psi
        return np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * self.h)])

    def arclength_profiles(self, ds: float | None = None):
        """Profiles re-gauged to a uniform arclength grid (``a = 1``).

        Returns ``(s, f, phi)`` sampled by cubic splines of ``f(s)`` and
        ``phi(s)``.
        """
        s = self.arclength()
        ds = self.h if ds is None else ds
        grid = np.arange(0.0, s[-1] + 1e-12, ds)
        f = CubicSpline(s, self.rho)(grid)
        phi = CubicSpline(s, self.phi, bc_type=((1, 0.0), "not-a-knot"))(grid)
        return grid, f, phi

    def profiles(self) -> ProfilePair:
        """Current state as a ProfilePair in the arclength variable."""
        s = self.arclength()
        fs = CubicSpline(s, self.rho)
        ps = CubicSpline(s, self.phi, bc_type=((1, 0.0), "not-a-knot"))
        return ProfilePair(Profile(fs, fs.derivative(1), fs.derivative(2), name="f"),
                           Profile(ps, ps.derivative(1), ps.derivative(2), name="phi"),
                           r_max=float(s[-1]))

    def snapshot(self) -> dict:
        c = self.curvature()
        return {"t": self.t, "min_R": float(c["R"].min()),
                "max_abs_R": float(np.abs(c["R"]).max()), "volume": self.volume(),
                "psi": self.psi.copy(), "phi": self.phi.copy(), "R": c["R"]}

    def cfl(self) -> float:
        return CFL_SAFETY * self.h**2 / float(np.max(self.psi) ** 2)


def warped_state(profiles: ProfilePair, n: int, h: float, r_max: float = 10.0,
                 oversample: int = 64) -> WarpedFlowState:
    """Sample profiles onto the area-radius grid.

    ``f`` must be increasing; it is inverted on a fine radial grid.
    """
    if r_max < 10.0:
        raise ValueError("the far field needs r_max >= 10")
    r = np.linspace(0.0, r_max, int(round(r_max / h)) * oversample + 1)
    r[0] = 0.0
    f = profiles.f(r)
    if np.any(np.diff(f) <= 0):
        raise ValueError("f must be strictly increasing for the area-radius gauge")
    rho_max = float(f[-1])
    N = int(round(rho_max / h))
    h_eff = rho_max / N
    rho = np.arange(N + 1) * h_eff
    r_of_rho = np.interp(rho, f, r)
    # one Newton polish of the inversion
    rr = np.maximum(r_of_rho, 1e-300)
    r_of_rho = np.where(rho > 0, rr - (profiles.f(rr) - rho) / profiles.f(rr, 1), 0.0)
    psi = profiles.f(np.maximum(r_of_rho, 1e-12), 1)
    phi = profiles.phi(np.maximum(r_of_rho, 1e-12))
    psi[0] = 1.0
    psi[-1], phi[-1] = 1.0, 1.0
    return WarpedFlowState(psi, phi, h_eff, n)


def flow_profiles(params: BuildingBlockParams) -> ProfilePair:
    """Building-block profiles, falling back to ``f = r`` when f~ is undefined."""
    try:
        return make_building_block(params)
    except ValueError:
        ident = Profile(lambda r: np.asarray(r, dtype=float),
                        lambda r: np.ones_like(np.asarray(r, dtype=float)),
                        lambda r: np.zeros_like(np.asarray(r, dtype=float)), name="r")
        return ProfilePair(ident, make_phi(params), r_max=10.0)


def warped_step(state: WarpedFlowState, dt: float | None = None) -> WarpedFlowState:
    """One Heun step; flags a singularity if psi or phi leaves (0, inf).

    Also records the pointwise volume-form ratio along the flow, which must
    stay below ``1 + 2 delta dt`` when ``R >= -delta``.
    """
    if state.singular:
        return state
    limit = state.cfl()
    dt = limit if dt is None else dt
    if dt > limit * (1 + 1e-12):
        raise FlowError(f"dt={dt:g} exceeds the CFL bound {limit:g}")
    ps0, ph0 = state.psi, state.phi
    R0 = state.curvature()["R"]
    k1 = state.rhs(ps0, ph0)
    ps1, ph1 = ps0 + dt * k1[0], ph0 + dt * k1[1]
    k2 = state.rhs(ps1, ph1)
    ps_new = ps0 + 0.5 * dt * (k1[0] + k2[0])
    ph_new = ph0 + 0.5 * dt * (k1[1] + k2[1])
    if not (np.all(ps_new > 0) and np.all(ph_new > 0) and np.all(np.isfinite(ps_new))):
        state.singular = f"profile degenerated at t={state.t + dt:g}"
        return state
    R_mid = state.curvature(ps1, ph1)["R"]
    # d_t log dvol = -R at material points
    ratio = np.exp(-0.5 * dt * (R0 + R_mid))
    delta = max(0.0, -float(R0.min()))
    state.psi, state.phi = ps_new, ph_new
    state.t += dt
    snap = state.snapshot()
    snap["vol_excess"] = float(np.max(ratio - (1 + 2 * delta * dt)))
    snap["dt"] = dt
    state.history.append(snap)
    return state


def run_warped(state: WarpedFlowState, steps: int | None = None, t_end: float | None = None,
               dt: float | None = None, keep_fields: int = 2) -> WarpedFlowState:
    """Advance by ``steps`` steps, or up to ``t_end`` in near-equal steps below the CFL bound."""
    if steps is None and t_end is None:
        raise ValueError("give steps or t_end")
    k = 0
    while True:
        if steps is not None and k >= steps:
            break
        if t_end is not None and state.t >= t_end - 1e-15:
            break
        limit = state.cfl() if dt is None else min(dt, state.cfl())
        step = limit if t_end is None else _balanced_step(t_end - state.t, limit)
        warped_step(state, step)
        k += 1
        if state.singular:
            break
        for snap in state.history[:-keep_fields]:
            for key in ("psi", "phi", "R"):
                snap.pop(key, None)
    return state


def warped_monitor(state: WarpedFlowState, skip: int = 2) -> dict:
    """Residual of the scalar-curvature evolution between the last two slices.

    At fixed area radius ``d_t R = Lap R + 2|Ric|^2 - B R'`` where ``B`` is
    the coordinate velocity of material points,
    ``B = psi psi' + (n-2)(psi^2-1)/rho + psi^2 phi'/phi``.
    Nodes within ``skip`` of either end are excluded.
    """
    snaps = [s for s in state.history if "psi" in s]
    if len(snaps) < 2:
        raise ValueError("need two stored time slices")
    a, b = snaps[-2], snaps[-1]
    dt = b["t"] - a["t"]
    h, n = state.h, state.n

    def evo(psi, phi):
        c = state.curvature(psi, phi)
        R = c["R"]
        ps1, _, ph1, _ = state._derivs(psi, phi)
        i = slice(1, -1)
        rho, s, p = state.rho[i], psi[i], phi[i]
        R1 = np.full_like(R, np.nan)
        R2 = np.full_like(R, np.nan)
        R1[1:-1] = (R[2:] - R[:-2]) / (2 * h)
        R2[1:-1] = (R[2:] - 2 * R[1:-1] + R[:-2]) / h**2
        lap = s * s * R2 + s * ps1[i] * R1 + ((n - 1) / rho + ph1[i] / p) * s * s * R1
        B = s * ps1[i] + (n - 2) * (s * s - 1) / rho + s * s * ph1[i] / p
        return R, lap + 2 * c["ric_sq"] - B * R1

    Ra, ea = evo(a["psi"], a["phi"])
    Rb, eb = evo(b["psi"], b["phi"])
    res = (Rb - Ra) / dt - 0.5 * (ea + eb)
    keep = slice(skip, -skip)
    scale = max(float(np.abs(Ra).max()), 1e-300)
    r = np.abs(res[keep])
    dvol = (b["volume"] - a["volume"]) / dt

    def int_R(psi, phi):
        R = state.curvature(psi, phi)["R"]
        v = state.volume_density(psi, phi)[1:-1]
        # trapezoid on nodes 1..N-1; node 0 carries zero density when n > 1
        return float(np.sum(R * v) * h - 0.5 * h * R[-1] * v[-1])

    minus_int_R = -0.5 * (int_R(a["psi"], a["phi"]) + int_R(b["psi"], b["phi"]))
    return {"scalar_residual": float(np.nanmax(r)),
            "scalar_residual_rel": float(np.nanmax(r) / scale),
            "scalar_residual_l2": float(np.sqrt(np.nanmean(r**2))),
            "volume_rate": float(dvol), "minus_int_R": minus_int_R,
            "volume_rate_rel": float(abs(dvol - minus_int_R) / max(abs(minus_int_R), 1e-300))}


def history_report(history) -> FlowReport:
    rows = [{k: v for k, v in s.items() if np.isscalar(v)} for s in history]
    return FlowReport(rows)
