"""Perelman's W-functional, mu- and nu-entropy on closed grids.

With ``u^2 = (4 pi tau)^{-d/2} e^{-f}`` and ``int u^2 dvol = 1`` the functional
becomes

    W = int (4 tau |grad u|^2 + tau R u^2 - u^2 log u^2) dvol - d - d/2 log(4 pi tau)

and a constrained minimizer satisfies

    -4 tau Lap u + tau R u - 2 u log u - (d + d/2 log(4 pi tau) + mu) u = 0.

The discrete Dirichlet form is the grid stiffness matrix ``K`` and the mass is
lumped onto the node volume weights ``V``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .grid import GridManifold, scalar_curvature_fd, write_field_csv

log = logging.getLogger(__name__)


def _require_closed(grid: GridManifold):
    if not grid.closed:
        raise ValueError("entropy needs a closed (fully periodic) grid")


def scalar_field(grid: GridManifold) -> np.ndarray:
    """Analytic scalar curvature when the grid carries one, else finite differences."""
    if grid.scalar is not None:
        R = np.asarray(grid.scalar, dtype=float)
    else:
        R = scalar_curvature_fd(grid)
    return np.nan_to_num(R.reshape(-1), nan=0.0)


class _Problem:
    """Discrete W objective in the u variable (flattened, active nodes only)."""

    def __init__(self, grid: GridManifold, tau: float, R=None):
        _require_closed(grid)
        if tau <= 0:
            raise ValueError("tau must be positive")
        self.grid = grid
        self.tau = float(tau)
        self.d = grid.dim
        V = grid.vol_weight.reshape(-1)
        self.active = V > 1e-14 * V.max()
        idx = np.flatnonzero(self.active)
        self.V = V[idx]
        K = grid.stiffness
        self.K = K[idx][:, idx].tocsr()
        R = scalar_field(grid) if R is None else np.asarray(R, dtype=float).reshape(-1)
        self.R = R[idx]
        self.const = -self.d - 0.5 * self.d * np.log(4 * np.pi * self.tau)

    # objective of u with the constraint assumed
    def value(self, u) -> float:
        t = self.tau
        u2 = u * u
        ent = np.where(u2 > 0, u2 * np.log(np.where(u2 > 0, u2, 1.0)), 0.0)
        return float(4 * t * u @ (self.K @ u) + t * np.dot(self.V, self.R * u2)
                     - np.dot(self.V, ent) + self.const)

    def grad_u(self, u) -> np.ndarray:
        t = self.tau
        return (8 * t * (self.K @ u) + 2 * t * self.V * self.R * u
                - self.V * (2 * u * np.log(u * u) + 2 * u))

    def from_w(self, w):
        e = np.exp(w - w.max())
        return e / np.sqrt(np.dot(self.V, e * e))

    def fun_w(self, w):
        u = self.from_w(w)
        gu = self.grad_u(u)
        gw = u * gu - np.dot(gu, u) * self.V * u * u
        return self.value(u), gw

    def residual(self, u, mu) -> np.ndarray:
        t = self.tau
        lap_term = 4 * t * (self.K @ u) / self.V
        return (lap_term + t * self.R * u - 2 * u * np.log(u)
                - (self.d + 0.5 * self.d * np.log(4 * np.pi * t) + mu) * u)

    def norm(self, v) -> float:
        return float(np.sqrt(np.dot(self.V, v * v)))

    def scatter(self, vals, fill=0.0) -> np.ndarray:
        out = np.full(self.grid.n_nodes, fill, dtype=float)
        out[self.active] = vals
        return out.reshape(self.grid.shape)


def w_functional(grid: GridManifold, f, tau: float, R=None) -> float:
    """``(4 pi tau)^{-d/2} int (tau(|grad f|^2 + R) + f - d) e^{-f} dvol``.

    Evaluated through the u substitution so that both forms share one
    quadrature; ``f`` need not satisfy the normalization.
    """
    _require_closed(grid)
    d = grid.dim
    f = np.asarray(f, dtype=float).reshape(-1)
    V = grid.vol_weight.reshape(-1)
    R = scalar_field(grid) if R is None else np.broadcast_to(
        np.asarray(R, dtype=float), grid.shape).reshape(-1)
    c = (4 * np.pi * tau) ** (-d / 2)
    u = np.sqrt(c) * np.exp(-f / 2)
    grad_term = 4 * tau * u @ (grid.stiffness @ u)
    rest = np.dot(V, (tau * R + f - d) * c * np.exp(-f))
    return float(grad_term + rest)


@dataclass
class MuOptions:
    max_iter: int = 5000
    gtol: float = 1e-12
    polish_steps: int = 30
    seed: int = 0
    restarts: int = 0              # extra random initializations
    bump: bool | None = None       # Gaussian bump start at max R; default on


@dataclass
class EntropyResult:
    mu: float
    tau: float
    minimizer_u: np.ndarray
    w_value: float
    el_residual: float
    constraint_error: float
    iterations: int
    converged: bool = True
    candidates: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"tau": self.tau, "mu": self.mu, "el_residual": self.el_residual,
                "constraint_error": self.constraint_error,
                "iterations": self.iterations, "converged": self.converged}

    def to_json(self, path, nu: float | None = None) -> None:
        d = self.to_dict()
        d["nu"] = nu
        with open(path, "w") as fh:
            json.dump(d, fh, indent=2)

    def minimizer_csv(self, path, grid: GridManifold) -> None:
        write_field_csv(path, grid, {"u": self.minimizer_u})


def _polish(prob: _Problem, u, steps: int):
    """Newton-like fixed point on the EL equation, accepted only when W drops.

    Each step solves the linearized equation with the current multiplier
    frozen, then renormalizes.
    """
    from scipy.sparse import diags
    from scipy.sparse.linalg import spsolve

    t = prob.tau
    best = prob.value(u)
    for _ in range(steps):
        mu = prob.value(u)
        lam = prob.d + 0.5 * prob.d * np.log(4 * np.pi * t) + mu
        r = prob.residual(u, mu)
        if prob.norm(r) < 1e-13:
            break
        # Jacobian of V*r in u (multiplier fixed): symmetric
        J = (4 * t * prob.K + diags(prob.V * (t * prob.R - 2 * np.log(u) - 2 - lam))).tocsc()
        try:
            du = spsolve(J, -prob.V * r)
        except Exception:  # singular Jacobian: stop polishing
            break
        # remove the component along u (tangent to the constraint)
        du -= np.dot(prob.V * u, du) * u
        accepted = False
        for step in (1.0, 0.5, 0.25, 0.125):
            cand = u + step * du
            if np.any(cand <= 0):
                continue
            cand /= prob.norm(cand)
            val = prob.value(cand)
            if val <= best + 1e-15 * max(1.0, abs(best)):
                u, best, accepted = cand, val, True
                break
        if not accepted:
            break
    return u


def _initial_guesses(prob: _Problem, opts: MuOptions):
    n = prob.V.size
    guesses = [("constant", np.zeros(n))]
    # the constant is a critical point on homogeneous metrics but only a
    # saddle once tau is small, so a concentrated start is always tried
    bump = True if opts.bump is None else opts.bump
    coords = prob.grid.coords().reshape(-1, prob.d)[prob.active]
    ext = np.array(prob.grid.extent)
    if bump:
        c = coords[np.argmax(prob.R)]
        diff = coords - c
        diff -= ext * np.round(diff / ext)
        r2 = np.sum(diff * diff, axis=-1)
        guesses.append(("bump", -r2 / (8 * prob.tau)))
    rng = np.random.default_rng(opts.seed)
    for k in range(opts.restarts):
        guesses.append((f"random{k}", 0.3 * rng.standard_normal(n)))
    return guesses


def mu_entropy(grid: GridManifold, tau: float, opts: MuOptions | None = None,
               R=None) -> EntropyResult:
    """Minimize W over positive ``u`` with ``int u^2 = 1``."""
    opts = opts or MuOptions()
    prob = _Problem(grid, tau, R)
    best = None
    candidates = []
    for name, w0 in _initial_guesses(prob, opts):
        res = optimize.minimize(prob.fun_w, w0, jac=True, method="L-BFGS-B",
                                options={"maxiter": opts.max_iter, "gtol": opts.gtol,
                                         "ftol": 1e-15, "maxcor": 20})
        u = _polish(prob, prob.from_w(res.x), opts.polish_steps)
        val = prob.value(u)
        candidates.append((name, val))
        log.debug("mu start %s: %.10g (%d its)", name, val, res.nit)
        if best is None or val < best[0]:
            best = (val, u, res)
    val, u, res = best
    resid = prob.norm(prob.residual(u, val))
    cerr = abs(float(np.dot(prob.V, u * u)) - 1.0)
    conv = bool(resid <= 1e-4)
    return EntropyResult(mu=val, tau=float(tau), minimizer_u=prob.scatter(u),
                         w_value=val, el_residual=resid, constraint_error=cerr,
                         iterations=int(res.nit), converged=conv, candidates=candidates)


def nu_entropy(grid: GridManifold, tau: float, tau_grid_size: int = 16,
               tau_min: float | None = None, opts: MuOptions | None = None):
    """Minimum of mu over a log-spaced grid in ``(tau_min, tau]``.

    Returns ``(nu, tau_star, taus, mus)``.
    """
    _require_closed(grid)
    if tau_min is None:
        tau_min = max(min(grid.spacing) ** 2, tau * 1e-3)
    taus = np.geomspace(tau_min, tau, tau_grid_size)
    mus = np.array([mu_entropy(grid, t, opts).mu for t in taus])
    k = int(np.argmin(mus))
    return float(mus[k]), float(taus[k]), taus, mus


def el_residual(grid: GridManifold, u, tau: float, mu: float, R=None) -> float:
    """Weighted L2 norm of the Euler-Lagrange residual."""
    prob = _Problem(grid, tau, R)
    u = np.asarray(u, dtype=float).reshape(-1)[prob.active]
    if np.any(u <= 0):
        raise ValueError("u must be positive")
    return prob.norm(prob.residual(u, mu))


def constant_w(grid: GridManifold, tau: float) -> float:
    """W at the constant normalized ``u`` (an upper bound for mu)."""
    prob = _Problem(grid, tau)
    u = np.full(prob.V.size, 1.0 / np.sqrt(prob.V.sum()))
    return prob.value(u)
