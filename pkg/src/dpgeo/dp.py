"""d_p distances by constrained p-energy minimization.

For ``p > 1`` the distance

    d_p(x, y) = sup { |f(x) - f(y)| : int |grad f|^p <= 1 }

equals ``E*^{-1/p}`` where ``E*`` is the least p-energy of a field with
``f(x) = 0`` and ``f(y) = 1`` (both problems are related by homogeneity).
The minimization is done by iteratively reweighted least squares with an
exact line search on the true energy.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as spla

from .grid import GridManifold, write_field_csv

log = logging.getLogger(__name__)


# ----------------------------------------------------------------------------
# energy model
# ----------------------------------------------------------------------------

class EnergyForm:
    """Quadrature form ``E_p(f) = sum_q w_q (D_q f . A_q D_q f)^{p/2}``.

    ``ops[k]`` maps node values to the k-th gradient component at every
    quadrature item; each row has exactly two nonzeros.  ``inv`` holds the
    (clamped) inverse metric per item.
    """

    def __init__(self, ops, weights, inv, grid: GridManifold | None = None):
        self.ops = [sparse.csr_matrix(op) for op in ops]
        self.weights = np.asarray(weights, dtype=float)
        self.inv = np.asarray(inv, dtype=float)
        self.grid = grid
        self.dim = len(self.ops)
        self.n_nodes = self.ops[0].shape[1]
        self.n_items = self.ops[0].shape[0]
        off = ~np.eye(self.dim, dtype=bool)
        self.diagonal = not np.any(self.inv[:, off])
        self._build_assembler()

    @classmethod
    def from_grid(cls, grid: GridManifold) -> "EnergyForm":
        cached = grid.meta.get("_energy_form")
        if cached is None:
            ops, w, inv = grid.gradient_ops
            cached = cls(ops, w, inv, grid=grid)
            grid.meta["_energy_form"] = cached
        return cached

    @classmethod
    def from_graph(cls, n_nodes: int, edges, weights=None) -> "EnergyForm":
        """Weighted graph energy ``sum_e w_e |f(a) - f(b)|^p``."""
        edges = np.asarray(edges, dtype=int).reshape(-1, 2)
        m = len(edges)
        w = np.ones(m) if weights is None else np.asarray(weights, dtype=float)
        rows = np.repeat(np.arange(m), 2)
        vals = np.tile([1.0, -1.0], m)
        op = sparse.csr_matrix((vals, (rows, edges.reshape(-1))), shape=(m, n_nodes))
        return cls([op], w, np.ones((m, 1, 1)))

    # -- assembly ------------------------------------------------------------
    def _two_entries(self, op):
        if not np.all(np.diff(op.indptr) == 2):
            raise ValueError("difference operators need exactly two entries per row")
        return op.indices.reshape(-1, 2), op.data.reshape(-1, 2)

    def _build_assembler(self):
        entries = [self._two_entries(op) for op in self.ops]
        pairs = [(k, k) for k in range(self.dim)] if self.diagonal else \
            [(k, l) for k in range(self.dim) for l in range(self.dim)]
        rows, cols, prods, src = [], [], [], []
        for pi, (k, l) in enumerate(pairs):
            ck, vk = entries[k]
            cl, vl = entries[l]
            for a in (0, 1):
                for b in (0, 1):
                    rows.append(ck[:, a])
                    cols.append(cl[:, b])
                    prods.append(vk[:, a] * vl[:, b])
                    src.append(pi * self.n_items + np.arange(self.n_items))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        keys = rows.astype(np.int64) * self.n_nodes + cols
        uniq, pos = np.unique(keys, return_inverse=True)
        self._pairs = pairs
        self._pos = pos
        self._prods = np.concatenate(prods)
        self._src = np.concatenate(src)
        self._pattern = (uniq // self.n_nodes, uniq % self.n_nodes)
        self._nnz = len(uniq)

    def laplacian(self, item_weights) -> sparse.csr_matrix:
        """``sum_q c_q D_q^T A_q D_q`` for per-item weights ``c``."""
        coef = np.concatenate([item_weights * self.inv[:, k, l] for k, l in self._pairs])
        data = np.bincount(self._pos, weights=self._prods * coef[self._src],
                           minlength=self._nnz)
        return sparse.csr_matrix((data, self._pattern), shape=(self.n_nodes,) * 2)

    # -- energy ----------------------------------------------------------------
    def gradients(self, f) -> np.ndarray:
        return np.stack([op @ f for op in self.ops], axis=-1)

    def density(self, grads) -> np.ndarray:
        if self.diagonal:
            diag = np.diagonal(self.inv, axis1=1, axis2=2)
            return np.einsum("qk,qk,qk->q", grads, grads, diag)
        return np.einsum("qk,qkl,ql->q", grads, self.inv, grads)

    def energy(self, f, p: float) -> float:
        e = self.density(self.gradients(np.asarray(f, dtype=float).reshape(-1)))
        return float(np.dot(self.weights, e ** (p / 2.0)))

    def energy_gradient(self, f, p: float) -> np.ndarray:
        f = np.asarray(f, dtype=float).reshape(-1)
        grads = self.gradients(f)
        e = self.density(grads)
        safe = np.where(e > 0, e, 1.0)
        coef = p * self.weights * np.where(e > 0, safe ** (p / 2.0 - 1.0), 0.0)
        flux = np.einsum("qkl,ql->qk", self.inv, grads) * coef[:, None]
        return sum(self.ops[k].T @ flux[:, k] for k in range(self.dim))

    def components(self) -> np.ndarray:
        """Connected-component label per node (edges with positive weight)."""
        L = self.laplacian(self.weights)
        adj = L.copy()
        adj.setdiag(0)
        adj.eliminate_zeros()
        adj.data = np.abs(adj.data)
        return csgraph.connected_components(adj, directed=False)[1]


def _as_form(obj) -> EnergyForm:
    if isinstance(obj, EnergyForm):
        return obj
    if isinstance(obj, GridManifold):
        return EnergyForm.from_grid(obj)
    raise TypeError(f"expected GridManifold or EnergyForm, got {type(obj).__name__}")


# ----------------------------------------------------------------------------
# solver
# ----------------------------------------------------------------------------

@dataclass
class DpOptions:
    tol: float = 1e-9              # relative energy change
    max_iter: int = 500
    reg_start: float = 1e-8        # times the mean energy density
    reg_floor: float = 1e-14
    linear_solver: str = "auto"    # "cg", "direct", "amg" or "auto"
    linear_tol: float = 1e-10
    line_search: bool = True


@dataclass
class DpSolveResult:
    value: float
    potential: np.ndarray | None
    energy: float
    iterations: int
    residual: float
    converged: bool
    p: float
    estimated_S: float | None = None
    non_physical: bool = False
    eta_clamp: float | None = None
    x: int | None = None
    y: int | None = None
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("potential")
        d.pop("history")
        return d

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def potential_csv(self, path, grid: GridManifold) -> None:
        write_field_csv(path, grid, {"potential": self.potential})


def _solve_spd(A, b, x0, method, tol):
    n = A.shape[0]
    if method == "auto":
        method = "direct" if n <= 400_000 else "cg"
    if method == "direct":
        # symmetric fill-reducing ordering suits the SPD pinned Laplacian
        return spla.spsolve(A.tocsc(), b, permc_spec="MMD_AT_PLUS_A")
    if method == "amg":
        import pyamg

        ml = pyamg.smoothed_aggregation_solver(A.tocsr())
        return ml.solve(b, x0=x0, tol=tol, accel="cg")
    if method == "cg":
        d = A.diagonal()
        M = sparse.diags(1.0 / np.where(d > 0, d, 1.0))
        x, info = spla.cg(A, b, x0=x0, rtol=tol, atol=0.0, M=M, maxiter=20 * n)
        if info != 0:
            log.warning("CG stopped with info=%d", info)
        return x
    raise ValueError(f"unknown linear solver {method!r}")


def _pinned_solve(L, free, x, y, guess, opts):
    A = L[free][:, free]
    b = -np.asarray(L[free][:, [y]].todense()).ravel()
    x0 = None if guess is None else guess[free]
    out = np.zeros(L.shape[0])
    out[y] = 1.0
    out[free] = _solve_spd(A, b, x0, opts.linear_solver, opts.linear_tol)
    return out


def minimize_pinned(form: EnergyForm, x: int, y: int, p: float,
                    opts: DpOptions | None = None, nodes=None):
    """Minimize ``E_p`` with ``f(x) = 0``, ``f(y) = 1``.

    ``nodes`` restricts the unknowns to a node subset containing x and y
    (used to drop components that do not touch the pair).  Returns
    ``(f, energy, iterations, residual, converged, history)``.
    """
    opts = opts or DpOptions()
    n = form.n_nodes
    keep = np.ones(n, dtype=bool) if nodes is None else np.isin(np.arange(n), nodes)
    keep[[x, y]] = True
    free = np.flatnonzero(keep)
    free = free[(free != x) & (free != y)]

    f = _pinned_solve(form.laplacian(form.weights), free, x, y, None, opts)
    E = form.energy(f, p)
    history = [E]
    if p == 2.0:
        return f, E, 1, _residual(form, f, p, E, free), True, history

    mean_density = float(np.dot(form.weights, form.density(form.gradients(f)))
                         / max(form.weights.sum(), 1e-300))
    reg = opts.reg_start * max(mean_density, 1e-300)
    floor = opts.reg_floor
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        e = form.density(form.gradients(f))
        w = form.weights * (e + reg) ** (p / 2.0 - 1.0)
        cand = _pinned_solve(form.laplacian(w), free, x, y, f, opts)
        step = cand - f
        if opts.line_search:
            res = optimize.minimize_scalar(lambda t: form.energy(f + t * step, p),
                                           bounds=(0.0, 2.0), method="bounded",
                                           options={"xatol": 1e-6})
            t = res.x if res.fun < form.energy(cand, p) else 1.0
        else:
            t = 1.0
        f_new = f + t * step
        E_new = form.energy(f_new, p)
        if E_new > E:  # never accept an increase
            f_new, E_new = f, E
        rel = abs(E - E_new) / max(E, 1e-300)
        f, E = f_new, E_new
        history.append(E)
        reg = max(0.5 * reg, floor)
        if rel < opts.tol and it > 1:
            converged = True
            break
    return f, E, it, _residual(form, f, p, E, free), converged, history


def _residual(form, f, p, E, free) -> float:
    g = form.energy_gradient(f, p)
    return float(np.abs(g[free]).sum() / max(p * E, 1e-300))


def _resolve_node(grid, node) -> int:
    if isinstance(node, (int, np.integer)):
        return int(node)
    if grid is None:
        raise TypeError("coordinate points need a grid")
    return grid.nearest_node(node)


def dp_distance(grid, x, y, p: float, opts: DpOptions | None = None) -> DpSolveResult:
    """d_p distance between two nodes (indices or coordinate points)."""
    if p <= 1:
        raise ValueError("p must exceed 1")
    form = _as_form(grid)
    g = grid if isinstance(grid, GridManifold) else form.grid
    xi, yi = _resolve_node(g, x), _resolve_node(g, y)
    non_physical = form.grid is not None and p <= form.grid.dim
    if non_physical:
        warnings.warn(f"p={p} does not exceed the dimension {form.grid.dim}: "
                      "the continuum d_p is infinite", RuntimeWarning, stacklevel=2)
    eta = form.grid.eta_clamp if form.grid is not None else None
    if g is not None:
        deg = g.degenerate_mask.reshape(-1)
        if deg[xi] or deg[yi]:
            # cell-centred quadrature keeps the pinned problem well posed
            log.info("d_p endpoint on a degenerate node")
    if xi == yi:
        return DpSolveResult(0.0, np.zeros(form.n_nodes), np.inf, 0, 0.0, True, p,
                             non_physical=non_physical, eta_clamp=eta, x=xi, y=yi)
    labels = form.components()
    if labels[xi] != labels[yi]:
        return DpSolveResult(np.inf, None, 0.0, 0, 0.0, True, p,
                             non_physical=non_physical, eta_clamp=eta, x=xi, y=yi)
    nodes = np.flatnonzero(labels == labels[xi])
    f, E, it, resid, conv, hist = minimize_pinned(form, xi, yi, p, opts, nodes=nodes)
    value = E ** (-1.0 / p)
    potential = f * value  # unit energy, attains 0 at x and d_p at y
    S = None
    if g is not None and g.meta.get("flat"):
        sep = np.linalg.norm(_coord_delta(g, xi, yi))
        S = value / sep ** (1.0 - g.dim / p)
    if not conv:
        log.warning("d_p solve did not converge in %d iterations", it)
    shape = g.shape if g is not None else (form.n_nodes,)
    return DpSolveResult(value, potential.reshape(shape), E, it, resid, conv, p,
                         estimated_S=S, non_physical=non_physical, eta_clamp=eta,
                         x=xi, y=yi, history=hist)


def _coord_delta(grid, a, b):
    d = grid.node_coord(b) - grid.node_coord(a)
    for ax in range(grid.dim):
        if grid.periodic[ax]:
            L = grid.extent[ax]
            d[ax] -= L * round(d[ax] / L)
    return d


def dp_matrix(grid, points: Sequence, p: float, opts: DpOptions | None = None,
              return_results: bool = False):
    """Pairwise d_p matrix over a list of nodes or coordinate points."""
    if len(points) < 2:
        raise ValueError("need at least two points")
    form = _as_form(grid)
    g = grid if isinstance(grid, GridManifold) else form.grid
    idx = [_resolve_node(g, pt) for pt in points]
    m = len(idx)
    D = np.zeros((m, m))
    results = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for i in range(m):
            for j in range(i + 1, m):
                r = dp_distance(grid, idx[i], idx[j], p, opts)
                D[i, j] = D[j, i] = r.value
                results[i, j] = r
    return (D, results) if return_results else D


def dp_from(grid, center, targets, p: float, opts: DpOptions | None = None) -> np.ndarray:
    """d_p from ``center`` to each target node (one solve per target)."""
    g = grid if isinstance(grid, GridManifold) else _as_form(grid).grid
    c = _resolve_node(g, center)
    out = np.empty(len(targets))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for k, t in enumerate(targets):
            out[k] = dp_distance(grid, c, int(t), p, opts).value
    return out


def probe_nodes(grid: GridManifold, stride: int) -> np.ndarray:
    """Every ``stride``-th node along each axis, skipping degenerate nodes."""
    axes = [np.arange(0, n, stride) for n in grid.shape]
    multi = np.meshgrid(*axes, indexing="ij")
    idx = np.ravel_multi_index(tuple(m.reshape(-1) for m in multi), grid.shape)
    return idx[~grid.degenerate_mask.reshape(-1)[idx]]


def dp_ball(grid: GridManifold, center, radius: float, p: float, probe_stride: int = 4,
            opts: DpOptions | None = None, distances=None) -> np.ndarray:
    """Probe nodes whose d_p distance to ``center`` is below ``radius``.

    ``distances`` may carry precomputed ``(probes, values)`` so several radii
    reuse the same solves.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    c = _resolve_node(grid, center)
    if distances is None:
        probes = probe_nodes(grid, probe_stride)
        probes = probes[probes != c]
        vals = dp_from(grid, c, probes, p, opts)
    else:
        probes, vals = distances
    inside = probes[np.asarray(vals) < radius]
    return np.union1d([c], inside).astype(int)


# ----------------------------------------------------------------------------
# brute force oracle
# ----------------------------------------------------------------------------

def brute_force_dp(grid, x, y, p: float, starts: int = 8, iters: int = 4000,
                   seed: int = 0) -> float:
    """Maximize ``f(y) - f(x)`` on the unit energy sphere directly.

    Riemannian gradient ascent: the linear objective's gradient is projected
    onto the tangent space of the energy level set, a step is taken and the
    iterate is pulled back radially (the energy is p-homogeneous).  Steps
    shrink on failure.  Independent of the IRLS path; meant for tiny problems.
    """
    form = _as_form(grid)
    if form.n_nodes > 60:
        raise ValueError("brute force is limited to 60 nodes")
    g = grid if isinstance(grid, GridManifold) else form.grid
    xi, yi = _resolve_node(g, x), _resolve_node(g, y)
    if xi == yi:
        return 0.0
    rng = np.random.default_rng(seed)
    c = np.zeros(form.n_nodes)
    c[yi], c[xi] = 1.0, -1.0

    def normalize(f):
        f = f - f.mean()
        E = form.energy(f, p)
        return f / E ** (1.0 / p) if E > 0 else f

    best = 0.0
    for _ in range(starts):
        f = normalize(rng.standard_normal(form.n_nodes) + c)
        val = c @ f
        step = 1.0
        for _ in range(iters):
            n = form.energy_gradient(f, p)
            nn = n @ n
            if nn == 0:
                break
            t = c - (c @ n) / nn * n
            if np.linalg.norm(t) < 1e-13:
                break
            trial = normalize(f + step * t)
            tv = c @ trial
            if tv > val:
                f, val = trial, tv
                step *= 1.5
            else:
                step *= 0.5
                if step < 1e-14:
                    break
        best = max(best, val)
    return float(best)
