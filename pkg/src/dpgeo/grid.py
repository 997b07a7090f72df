"""Structured grids carrying a (possibly degenerate) metric tensor field.

Nodes sit on the vertices of a rectangular lattice.  The metric used for
quadrature is sampled at cell centres, so a metric that vanishes on a
coordinate line through vertices is never sampled exactly there.  Gradients
are taken per cell from the 2^d corner-based one-sided difference stencils;
averaging over the corners keeps the discrete energy free of checkerboard
null modes.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .warped import Profile

MetricFn = Callable[[np.ndarray], np.ndarray]

DEGENERATE_DET = 1e-12


# ----------------------------------------------------------------------------
# small tensor helpers
# ----------------------------------------------------------------------------

def clamped_inverse(g, floor):
    """Inverse of symmetric PSD tensors with eigenvalues clamped below ``floor``.

    Returns ``(g_inv, sqrt_det)``; the determinant uses the unclamped
    eigenvalues (negative round-off is cut to zero).
    """
    lam, vec = np.linalg.eigh(g)
    inv_lam = 1.0 / np.maximum(lam, floor)
    g_inv = np.einsum("...ik,...k,...jk->...ij", vec, inv_lam, vec)
    sqrt_det = np.sqrt(np.prod(np.maximum(lam, 0.0), axis=-1))
    return g_inv, sqrt_det


def _is_diagonal(g) -> bool:
    d = g.shape[-1]
    off = ~np.eye(d, dtype=bool)
    return not np.any(g[..., off])


# ----------------------------------------------------------------------------
# grid
# ----------------------------------------------------------------------------

@dataclass
class GridManifold:
    """Metric on a structured grid.

    ``metric`` holds the node tensors, ``cell_metric`` the tensors at cell
    centres (used for every integral).  ``vol_weight`` is the dual-cell volume
    share of each node, so ``vol_weight.sum()`` is the total volume.
    """

    shape: tuple
    spacing: tuple
    periodic: tuple
    origin: tuple
    metric: np.ndarray
    cell_metric: np.ndarray
    metric_fn: MetricFn | None = None
    scalar: np.ndarray | None = None
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.spacing = tuple(float(h) for h in self.spacing)
        self.periodic = tuple(bool(p) for p in self.periodic)
        self.origin = tuple(float(o) for o in self.origin)
        if self.dim not in (2, 3, 4):
            raise ValueError("grid dimension must be 2, 3 or 4")
        if self.metric.shape != self.shape + (self.dim, self.dim):
            raise ValueError("node metric has the wrong shape")
        if self.cell_metric.shape != self.cell_shape + (self.dim, self.dim):
            raise ValueError("cell metric has the wrong shape")

    # -- geometry ------------------------------------------------------------
    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_shape(self) -> tuple:
        return tuple(n if p else n - 1 for n, p in zip(self.shape, self.periodic))

    @property
    def closed(self) -> bool:
        return all(self.periodic)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def extent(self) -> tuple:
        return tuple(h * (n if p else n - 1)
                     for h, n, p in zip(self.spacing, self.shape, self.periodic))

    @property
    def eta_clamp(self) -> float:
        """Eigenvalue floor used when inverting the metric."""
        return min(self.spacing) ** 2

    def axes(self):
        return [o + h * np.arange(n) for o, h, n in zip(self.origin, self.spacing, self.shape)]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (dim,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def node_index(self, multi) -> int:
        return int(np.ravel_multi_index(tuple(int(m) for m in multi), self.shape))

    def node_multi(self, idx) -> tuple:
        return tuple(int(i) for i in np.unravel_index(int(idx), self.shape))

    def nearest_node(self, point) -> int:
        """Flat index of the node closest to ``point`` in coordinates."""
        multi = []
        for x, o, h, n, p in zip(point, self.origin, self.spacing, self.shape, self.periodic):
            i = int(round((x - o) / h))
            i = i % n if p else min(max(i, 0), n - 1)
            multi.append(i)
        return self.node_index(multi)

    def node_coord(self, idx) -> np.ndarray:
        m = self.node_multi(idx)
        return np.array([o + h * i for o, h, i in zip(self.origin, self.spacing, m)])

    # -- derived measures ------------------------------------------------------
    @cached_property
    def _cell_inverse(self):
        return clamped_inverse(self.cell_metric, self.eta_clamp)

    @property
    def cell_inv_metric(self) -> np.ndarray:
        return self._cell_inverse[0]

    @property
    def cell_sqrt_det(self) -> np.ndarray:
        return self._cell_inverse[1]

    @cached_property
    def vol_weight(self) -> np.ndarray:
        cell_vol = self.cell_sqrt_det * self.cell_volume / 2**self.dim
        w = np.zeros(self.shape)
        for corner in itertools.product((0, 1), repeat=self.dim):
            idx = self._corner_nodes(corner)
            np.add.at(w.reshape(-1), idx.reshape(-1), cell_vol.reshape(-1))
        return w

    @property
    def total_volume(self) -> float:
        return float(self.vol_weight.sum())

    @cached_property
    def degenerate_mask(self) -> np.ndarray:
        return np.linalg.det(self.metric) < DEGENERATE_DET

    @cached_property
    def cell_degenerate_mask(self) -> np.ndarray:
        return np.linalg.det(self.cell_metric) < DEGENERATE_DET

    # -- stencils ------------------------------------------------------------
    def _corner_nodes(self, corner) -> np.ndarray:
        """Flat node index of the given corner of every cell (cell-shaped)."""
        grids = np.meshgrid(*[np.arange(c) for c in self.cell_shape], indexing="ij")
        multi = []
        for ax, (g, c) in enumerate(zip(grids, corner)):
            m = g + c
            if self.periodic[ax]:
                m = m % self.shape[ax]
            multi.append(m)
        return np.ravel_multi_index(tuple(multi), self.shape)

    @cached_property
    def gradient_ops(self):
        """Per-axis sparse difference operators over quadrature items.

        Item ordering is corner-major: all cells for corner 0, then corner 1...
        Returns ``(ops, weights, inv_metric)`` where ``ops[k] @ f`` gives the
        k-th derivative at each item, ``weights`` the quadrature weights and
        ``inv_metric`` the clamped inverse metric per item.
        """
        d = self.dim
        n_cells = int(np.prod(self.cell_shape))
        corners = list(itertools.product((0, 1), repeat=d))
        rows, cols, vals = [[] for _ in range(d)], [[] for _ in range(d)], [[] for _ in range(d)]
        base_rows = np.arange(n_cells)
        for ci, corner in enumerate(corners):
            here = self._corner_nodes(corner).reshape(-1)
            r = base_rows + ci * n_cells
            for k in range(d):
                flipped = list(corner)
                flipped[k] = 1 - corner[k]
                there = self._corner_nodes(tuple(flipped)).reshape(-1)
                sign = 1.0 if corner[k] == 0 else -1.0
                inv_h = sign / self.spacing[k]
                rows[k] += [r, r]
                cols[k] += [there, here]
                vals[k] += [np.full(n_cells, inv_h), np.full(n_cells, -inv_h)]
        n_items = n_cells * len(corners)
        ops = [sparse.csr_matrix((np.concatenate(vals[k]),
                                  (np.concatenate(rows[k]), np.concatenate(cols[k]))),
                                 shape=(n_items, self.n_nodes)) for k in range(d)]
        w_cell = (self.cell_sqrt_det * self.cell_volume / len(corners)).reshape(-1)
        weights = np.tile(w_cell, len(corners))
        inv = np.tile(self.cell_inv_metric.reshape(n_cells, d, d), (len(corners), 1, 1))
        return ops, weights, inv

    @cached_property
    def diagonal_metric(self) -> bool:
        return _is_diagonal(self.cell_metric)

    def gradients(self, values) -> np.ndarray:
        """Stacked per-item gradients, shape ``(n_items, dim)``."""
        ops = self.gradient_ops[0]
        v = np.asarray(values, dtype=float).reshape(-1)
        return np.stack([op @ v for op in ops], axis=-1)

    def grad_norm_sq(self, grads) -> np.ndarray:
        inv = self.gradient_ops[2]
        if self.diagonal_metric:
            return np.einsum("qk,qk,qk->q", grads, grads,
                             np.diagonal(inv, axis1=1, axis2=2))
        return np.einsum("qk,qkl,ql->q", grads, inv, grads)

    def weighted_laplacian(self, item_weights) -> sparse.csr_matrix:
        """Assemble ``sum_q w_q D_q^T A_q D_q`` (symmetric, PSD)."""
        ops, _, inv = self.gradient_ops
        d = self.dim
        out = None
        pairs = [(k, k) for k in range(d)] if self.diagonal_metric else \
            [(k, l) for k in range(d) for l in range(d)]
        for k, l in pairs:
            coef = item_weights * inv[:, k, l]
            term = ops[k].T @ sparse.diags(coef) @ ops[l]
            out = term if out is None else out + term
        return out.tocsr()

    @cached_property
    def stiffness(self) -> sparse.csr_matrix:
        """Dirichlet form matrix: ``f @ K @ f`` equals ``int |grad f|^2``."""
        return self.weighted_laplacian(self.gradient_ops[1])

    # -- transforms ----------------------------------------------------------
    def rescaled(self, rho: float) -> "GridManifold":
        """Same grid with metric ``rho^{-2} g``."""
        fn = None
        if self.metric_fn is not None:
            base = self.metric_fn
            fn = lambda pts: base(pts) / rho**2  # noqa: E731
        scalar = None if self.scalar is None else self.scalar * rho**2
        # cached operators belong to the old metric, and a rescaled flat grid
        # no longer has the unit metric
        meta = {k: v for k, v in self.meta.items() if not k.startswith("_") and k != "flat"}
        if meta.get("scalar_pointwise") is not None:
            meta["scalar_pointwise"] = meta["scalar_pointwise"] * rho**2
        return GridManifold(self.shape, self.spacing, self.periodic, self.origin,
                            self.metric / rho**2, self.cell_metric / rho**2,
                            metric_fn=fn, scalar=scalar,
                            label=f"{self.label} rescaled {rho:g}", meta=meta)

    # -- io ------------------------------------------------------------------
    def save(self, path) -> None:
        """Write the grid file format (header line + one row per node)."""
        d = self.dim
        iu = np.triu_indices(d)
        with open(path, "w") as fh:
            fh.write(" ".join([str(d), "x".join(map(str, self.shape)),
                               ",".join(repr(h) for h in self.spacing),
                               ",".join(str(int(p)) for p in self.periodic)]) + "\n")
            flat_g = self.metric.reshape(-1, d, d)
            vw = self.vol_weight.reshape(-1)
            deg = self.degenerate_mask.reshape(-1)
            for i in range(self.n_nodes):
                parts = [str(i)] + [repr(float(x)) for x in flat_g[i][iu]]
                parts += [repr(float(vw[i])), str(int(deg[i]))]
                fh.write(" ".join(parts) + "\n")

    @classmethod
    def load(cls, path, origin=None) -> "GridManifold":
        """Read a grid file; cell metrics are rebuilt by corner averaging."""
        with open(path) as fh:
            head = fh.readline().split()
            d = int(head[0])
            shape = tuple(int(s) for s in head[1].split("x"))
            spacing = tuple(float(s) for s in head[2].split(","))
            periodic = tuple(bool(int(s)) for s in head[3].split(","))
            data = np.loadtxt(fh, ndmin=2)
        iu = np.triu_indices(d)
        g = np.zeros((data.shape[0], d, d))
        g[:, iu[0], iu[1]] = data[:, 1:1 + len(iu[0])]
        g[:, iu[1], iu[0]] = data[:, 1:1 + len(iu[0])]
        g = g.reshape(shape + (d, d))
        return from_node_metric(g, spacing, periodic,
                                origin=origin or (0.0,) * d, label=str(path))


@dataclass
class DiscreteField:
    values: np.ndarray
    grid: GridManifold

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)

    def to_csv(self, path, name: str = "value") -> None:
        write_field_csv(path, self.grid, {name: self.values})


def write_field_csv(path, grid: GridManifold, fields: dict) -> None:
    coords = grid.coords().reshape(-1, grid.dim)
    names = list(fields)
    cols = [np.asarray(fields[k]).reshape(-1) for k in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node"] + [f"x{k}" for k in range(grid.dim)] + names)
        for i in range(grid.n_nodes):
            w.writerow([i] + [repr(float(c)) for c in coords[i]]
                       + [repr(float(c[i])) for c in cols])


# ----------------------------------------------------------------------------
# construction
# ----------------------------------------------------------------------------

def _cell_centres(shape, spacing, periodic, origin):
    cell_shape = tuple(n if p else n - 1 for n, p in zip(shape, periodic))
    axes = [o + h * (np.arange(c) + 0.5) for o, h, c in zip(origin, spacing, cell_shape)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def from_metric_fn(metric_fn: MetricFn, lower: Sequence[float], upper: Sequence[float],
                   cells: Sequence[int], periodic: Sequence[bool] | bool = False,
                   label: str = "", scalar_fn: Callable | None = None,
                   meta: dict | None = None) -> GridManifold:
    """Sample an analytic metric on the box ``[lower, upper]``.

    ``cells`` counts cells per axis.  Periodic axes get ``cells`` nodes with
    the last node wrapping to the first; open axes get ``cells + 1`` nodes.
    """
    d = len(cells)
    if isinstance(periodic, bool):
        periodic = (periodic,) * d
    if any(c < 4 for c in cells):
        raise ValueError("need at least 4 cells per axis")
    spacing = tuple((u - l) / c for l, u, c in zip(lower, upper, cells))
    shape = tuple(c if p else c + 1 for c, p in zip(cells, periodic))
    origin = tuple(lower)
    axes = [o + h * np.arange(n) for o, h, n in zip(origin, spacing, shape)]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    centres = _cell_centres(shape, spacing, periodic, origin)
    scalar = None if scalar_fn is None else np.asarray(scalar_fn(nodes), dtype=float)
    return GridManifold(shape, spacing, periodic, origin,
                        np.asarray(metric_fn(nodes), dtype=float),
                        np.asarray(metric_fn(centres), dtype=float),
                        metric_fn=metric_fn, scalar=scalar, label=label,
                        meta=dict(meta or {}))


def from_node_metric(g, spacing, periodic, origin=None, label: str = "") -> GridManifold:
    """Build a grid from node tensors only; cell tensors average their corners."""
    g = np.asarray(g, dtype=float)
    d = g.shape[-1]
    shape = g.shape[:-2]
    periodic = tuple(periodic)
    origin = origin or (0.0,) * d
    cell = None
    for corner in itertools.product((0, 1), repeat=d):
        sl = []
        part = g
        for ax, c in enumerate(corner):
            if periodic[ax]:
                part = np.roll(part, -c, axis=ax)
            else:
                idx = [slice(None)] * part.ndim
                idx[ax] = slice(c, shape[ax] - 1 + c)
                part = part[tuple(idx)]
        cell = part if cell is None else cell + part
    cell = cell / 2**d
    return GridManifold(shape, spacing, periodic, origin, g, cell, label=label)


def flat_grid(cells: Sequence[int], lower=None, upper=None, periodic=False,
              label: str = "flat") -> GridManifold:
    d = len(cells)
    lower = lower if lower is not None else (0.0,) * d
    upper = upper if upper is not None else (1.0,) * d

    def metric(pts):
        return np.broadcast_to(np.eye(d), pts.shape[:-1] + (d, d)).copy()

    return from_metric_fn(metric, lower, upper, cells, periodic, label=label,
                          scalar_fn=lambda pts: np.zeros(pts.shape[:-1]),
                          meta={"flat": True})


def discretize_power(alpha: float, domain=((-1.0, 1.0), (-1.0, 1.0)),
                     resolution=(64, 64)) -> GridManifold:
    """Grid for ``dx^2 + |x|^{2 alpha} dy^2``; ``resolution`` counts cells.

    With an even number of cells across a domain symmetric about ``x = 0`` the
    degenerate line runs through vertices and no cell centre lies on it.
    """
    from .warped import make_power_metric

    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    if any(r < 4 for r in resolution):
        raise ValueError("resolution must be at least 4 per axis")
    pm = make_power_metric(alpha)
    lower = tuple(d[0] for d in domain)
    upper = tuple(d[1] for d in domain)
    return from_metric_fn(pm, lower, upper, resolution, periodic=False,
                          label=f"power alpha={alpha:g}", meta={"alpha": alpha})


# ----------------------------------------------------------------------------
# strips
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Strip:
    """Tube of radius ``r0`` around an axis-parallel line.

    ``axis`` is the direction of the line (the fibre that degenerates);
    ``centre`` gives the line's coordinates on the remaining axes in order.
    Inside the tube the fibre coefficient is ``phi(5 r / r0)^2``.
    """

    axis: int
    centre: tuple
    r0: float
    phi: Profile


def _transverse_offsets(pts, strip: Strip, lengths, periodic):
    d = pts.shape[-1]
    others = [k for k in range(d) if k != strip.axis]
    diffs = []
    for k, c in zip(others, strip.centre):
        dk = pts[..., k] - c
        if periodic[k]:
            L = lengths[k]
            dk = dk - L * np.round(dk / L)
        diffs.append(dk)
    return np.stack(diffs, axis=-1)


def _check_disjoint(strips, dim, lengths, periodic):
    for a, b in itertools.combinations(strips, 2):
        gap = a.r0 + b.r0
        if a.axis == b.axis:
            others = [k for k in range(dim) if k != a.axis]
            diff = []
            for k, ca, cb in zip(others, a.centre, b.centre):
                dk = ca - cb
                if periodic[k]:
                    dk -= lengths[k] * round(dk / lengths[k])
                diff.append(dk)
            if np.hypot.reduce(diff) < gap:
                raise ValueError(f"strips overlap: {a} / {b}")
        else:
            if dim == 2:
                raise ValueError("non-parallel strips always cross in two dimensions")
            third = ({0, 1, 2} - {a.axis, b.axis}).pop()
            oa = [k for k in range(dim) if k != a.axis]
            ob = [k for k in range(dim) if k != b.axis]
            dk = a.centre[oa.index(third)] - b.centre[ob.index(third)]
            if periodic[third]:
                dk -= lengths[third] * round(dk / lengths[third])
            if abs(dk) < gap:
                raise ValueError(f"strips overlap: {a} / {b}")


def strip_metric_fn(strips: Sequence[Strip], dim: int, lengths, periodic):
    """Metric and analytic scalar curvature for a flat base with strips."""
    strips = list(strips)
    _check_disjoint(strips, dim, lengths, periodic)

    def metric(pts):
        pts = np.asarray(pts, dtype=float)
        g = np.broadcast_to(np.eye(dim), pts.shape[:-1] + (dim, dim)).copy()
        for st in strips:
            r = np.linalg.norm(_transverse_offsets(pts, st, lengths, periodic), axis=-1)
            s = 5.0 * r / st.r0
            inside = s < 2.0
            if np.any(inside):
                g[..., st.axis, st.axis][inside] = st.phi(s[inside]) ** 2
        return g

    def scalar(pts):
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1])
        m = dim - 1  # transverse dimension
        for st in strips:
            r = np.linalg.norm(_transverse_offsets(pts, st, lengths, periodic), axis=-1)
            s = 5.0 * r / st.r0
            inside = s < 2.0
            if not np.any(inside):
                continue
            si, ri = s[inside], r[inside]
            p, p1, p2 = st.phi.jet(si)
            k = 5.0 / st.r0
            lap = k**2 * p2
            if m > 1:
                safe = ri > 0
                extra = np.zeros_like(ri)
                extra[safe] = (m - 1) * k * p1[safe] / ri[safe]
                extra[~safe] = (m - 1) * k**2 * p2[~safe]
                lap = lap + extra
            out[inside] = -2.0 * lap / p
        return out

    return metric, scalar


def discretize_strip_metric(strips: Sequence[Strip], cells: Sequence[int],
                            lower=None, upper=None, periodic: bool = True,
                            label: str = "strips") -> GridManifold:
    """Flat plane or torus with building-block strips glued in."""
    d = len(cells)
    lower = lower if lower is not None else (0.0,) * d
    upper = upper if upper is not None else (1.0,) * d
    per = (periodic,) * d if isinstance(periodic, bool) else tuple(periodic)
    lengths = tuple(u - l for l, u in zip(lower, upper))
    metric, scalar = strip_metric_fn(strips, d, lengths, per)
    grid = from_metric_fn(metric, lower, upper, cells, per, label=label,
                          scalar_fn=scalar, meta={"strips": list(strips)})
    if d == 2:
        grid.meta["scalar_pointwise"] = grid.scalar
        grid.scalar = _strip_scalar_dual(grid, strips, lengths, per)
    return grid


def lattice_line_offsets(dim: int, spacing: float) -> np.ndarray:
    """Offsets ``o[j, k]`` of the lattice of lines parallel to axis ``j``.

    Lines along ``j`` pass through ``x_k = o[j, k] + spacing * Z`` for
    ``k != j``.  Offsets ``((j - k) mod dim) * spacing / dim`` keep lines of
    different directions at least ``spacing / dim`` apart.
    """
    j, k = np.meshgrid(np.arange(dim), np.arange(dim), indexing="ij")
    return np.mod(j - k, dim) * spacing / dim


def lattice_strip_metric_fn(dim: int, spacing: float, r0: float, phi: Profile, origin=None):
    """Strips of radius ``r0`` around every line of a cubic lattice of lines.

    One family of parallel lines per axis, spaced ``spacing`` apart in the
    transverse coordinates (see ``lattice_line_offsets``).  Strips of
    different families are disjoint when ``r0 < spacing / (2 dim)``.
    """
    if dim < 3:
        raise ValueError("lines of different directions cross in two dimensions")
    if not r0 < spacing / (2 * dim):
        raise ValueError("strips overlap: need r0 < spacing / (2 dim)")
    off = lattice_line_offsets(dim, spacing)
    origin = np.zeros(dim) if origin is None else np.asarray(origin, dtype=float)

    def metric(pts):
        pts = np.asarray(pts, dtype=float) - origin
        g = np.broadcast_to(np.eye(dim), pts.shape[:-1] + (dim, dim)).copy()
        for j in range(dim):
            r2 = np.zeros(pts.shape[:-1])
            for k in range(dim):
                if k == j:
                    continue
                dk = pts[..., k] - off[j, k]
                dk = dk - spacing * np.round(dk / spacing)
                r2 += dk * dk
            s = 5.0 * np.sqrt(r2) / r0
            inside = s < 2.0
            if np.any(inside):
                g[..., j, j][inside] = phi(s[inside]) ** 2
        return g

    return metric


def discretize_lattice_strips(spacing: float, r0: float, phi: Profile, cells: Sequence[int],
                              lower=None, upper=None, periodic: bool = False,
                              label: str = "lattice-strips") -> GridManifold:
    """Flat box with strips glued around a lattice of lines in every direction."""
    d = len(cells)
    lower = lower if lower is not None else (0.0,) * d
    upper = upper if upper is not None else (1.0,) * d
    metric = lattice_strip_metric_fn(d, spacing, r0, phi)
    return from_metric_fn(metric, lower, upper, cells, periodic, label=label,
                          meta={"line_spacing": spacing, "r0": r0})


def _strip_scalar_dual(grid: GridManifold, strips, lengths, periodic) -> np.ndarray:
    """Dual-cell average of R for two-dimensional strip sections.

    There ``R dvol = -2 d_u^2 phi(5|u|/r0) du dv`` with ``u`` the signed
    transverse offset, so the integral over a node's dual cell is a flux
    difference.  Dividing by the node volume weight gives a nodal R whose
    weighted sum reproduces the exact total curvature, even when the
    eps-scale features of the profile fall between nodes.
    """
    coords = grid.coords()
    flux = np.zeros(grid.shape)
    for st in strips:
        t = 1 - st.axis
        h_t, h_a = grid.spacing[t], grid.spacing[st.axis]
        u = coords[..., t] - st.centre[0]
        if periodic[t]:
            u = u - lengths[t] * np.round(u / lengths[t])
        k = 5.0 / st.r0

        def slope(v):
            s = k * np.abs(v)
            out = np.zeros_like(v)
            inside = s < 2.0
            out[inside] = np.sign(v[inside]) * k * st.phi(s[inside], 1)
            return out

        flux += -2.0 * h_a * (slope(u + h_t / 2) - slope(u - h_t / 2))
    return flux / grid.vol_weight


# ----------------------------------------------------------------------------
# energies
# ----------------------------------------------------------------------------

def p_energy(grid: GridManifold, values, p: float) -> float:
    """Discrete ``int |grad f|_g^p dvol_g``."""
    if p <= 1:
        raise ValueError("p must exceed 1")
    grads = grid.gradients(values)
    e = grid.grad_norm_sq(grads)
    return float(np.dot(grid.gradient_ops[1], e ** (p / 2.0)))


def p_energy_gradient(grid: GridManifold, values, p: float) -> np.ndarray:
    ops, w, inv = grid.gradient_ops
    grads = grid.gradients(values)
    e = grid.grad_norm_sq(grads)
    coef = p * w * e ** (p / 2.0 - 1.0) if p >= 2 else \
        p * w * np.where(e > 0, e, 1.0) ** (p / 2.0 - 1.0) * (e > 0)
    flux = np.einsum("qkl,ql->qk", inv, grads) * coef[:, None]
    return sum(ops[k].T @ flux[:, k] for k in range(grid.dim))


# ----------------------------------------------------------------------------
# geodesic graph
# ----------------------------------------------------------------------------

def _stencil_offsets(dim):
    offs = [o for o in itertools.product((-1, 0, 1), repeat=dim) if any(o)]
    # keep one of each +/- pair
    return [o for o in offs if next(x for x in o if x) > 0]


def geodesic_graph(grid: GridManifold) -> sparse.csr_matrix:
    """Undirected graph over nodes with the full diagonal stencil.

    Edge length is the metric length of the straight segment, evaluated with
    the metric at its midpoint.
    """
    cached = grid.meta.get("_geodesic_graph")
    if cached is not None:
        return cached
    d = grid.dim
    coords = grid.coords()
    idx = np.arange(grid.n_nodes).reshape(grid.shape)
    rows, cols, lens = [], [], []
    lengths = grid.extent
    for off in _stencil_offsets(d):
        src = idx
        dst = idx
        mid = coords.copy()
        valid = np.ones(grid.shape, dtype=bool)
        for ax, o in enumerate(off):
            if o == 0:
                continue
            dst = np.roll(dst, -o, axis=ax)
            if not grid.periodic[ax]:
                sl = [slice(None)] * d
                sl[ax] = slice(grid.shape[ax] - 1, None) if o > 0 else slice(0, 1)
                valid[tuple(sl)] = False
            mid[..., ax] = mid[..., ax] + 0.5 * o * grid.spacing[ax]
            if grid.periodic[ax]:
                lo = grid.origin[ax]
                mid[..., ax] = lo + np.mod(mid[..., ax] - lo, lengths[ax])
        vec = np.array(off, dtype=float) * np.array(grid.spacing)
        if grid.metric_fn is not None:
            g_mid = grid.metric_fn(mid[valid])
        else:
            g_mid = 0.5 * (grid.metric[valid] + grid.metric.reshape(-1, d, d)[dst[valid]])
        ell = np.sqrt(np.maximum(np.einsum("i,...ij,j->...", vec, g_mid, vec), 0.0))
        rows.append(src[valid])
        cols.append(dst[valid])
        lens.append(np.maximum(ell, 1e-300))  # explicit zeros would drop the edge
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    lens = np.concatenate(lens)
    graph = sparse.csr_matrix((lens, (rows, cols)), shape=(grid.n_nodes, grid.n_nodes))
    graph = graph.maximum(graph.T).tocsr()
    grid.meta["_geodesic_graph"] = graph
    return graph


def geodesic_distances(grid: GridManifold, source) -> np.ndarray:
    """Single- or multi-source shortest path distances (node-shaped)."""
    graph = geodesic_graph(grid)
    src = np.atleast_1d(source)
    dist = csgraph.dijkstra(graph, directed=False, indices=src)
    dist[dist < 1e-250] = 0.0
    if np.ndim(source) == 0:
        return dist[0].reshape(grid.shape)
    return dist.reshape((len(src),) + grid.shape)


# ----------------------------------------------------------------------------
# curvature oracles
# ----------------------------------------------------------------------------

def _ricci_from_derivs(g_inv, dg, ddg):
    """Ricci tensor from metric, first and second derivatives.

    ``dg[..., k, i, j] = d_k g_ij`` and ``ddg[..., k, l, i, j] = d_k d_l g_ij``.
    """
    gam1 = _christoffel_first(dg)  # [l, i, j] = Gamma_{l i j}
    gam =np.einsum("...ml,...lij->...mij", g_inv, gam1)
    dgam1 = _christoffel_first_deriv(ddg)  # [k, l, i, j] = d_k Gamma_{lij}
    # d_k g^{ml} = -g^{ma} d_k g_ab g^{bl}
    dg_inv = -np.einsum("...ma,...kab,...bl->...kml", g_inv, dg, g_inv)
    dgam = (np.einsum("...kml,...lij->...kmij", dg_inv, gam1)
            + np.einsum("...ml,...klij->...kmij", g_inv, dgam1))
    term1 = np.einsum("...kkij->...ij", dgam)
    term2 = np.einsum("...jkik->...ij", dgam)
    term3 = np.einsum("...kkl,...lij->...ij", gam, gam)
    term4 = np.einsum("...kjl,...lik->...ij", gam, gam)
    return term1 - term2 + term3 - term4


def _christoffel_first(dg):
    # Gamma_{l i j} = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
    a = np.einsum("...ijl->...lij", dg)  # d_i g_jl placed at [l,i,j]
    b = np.einsum("...jil->...lij", dg)  # d_j g_il
    return 0.5 * (a + b - dg)


def _christoffel_first_deriv(ddg):
    a = np.einsum("...kijl->...klij", ddg)
    b = np.einsum("...kjil->...klij", ddg)
    return 0.5 * (a + b - ddg)


def _fd4(fn, x, k, h):
    e = np.zeros_like(x)
    e[k] = h
    return (fn(x - 2 * e) - 8 * fn(x - e) + 8 * fn(x + e) - fn(x + 2 * e)) / (12 * h)


def ricci_at(metric_fn, point, h: float = 1e-3) -> np.ndarray:
    """Ricci tensor of an analytic metric at one point.

    Uses fourth-order central differences for the first and (nested) second
    derivatives of the metric.
    """
    x = np.asarray(point, dtype=float)
    d = x.size
    g = metric_fn(x)
    g_inv = np.linalg.inv(g)

    def first(y):
        return np.stack([_fd4(metric_fn, y, k, h) for k in range(d)])

    dg = first(x)
    ddg = np.stack([_fd4(first, x, k, h) for k in range(d)])
    ddg = 0.5 * (ddg + np.swapaxes(ddg, 0, 1))
    return _ricci_from_derivs(g_inv, dg, ddg)


def scalar_curvature_at(metric_fn, point, h: float = 1e-3) -> float:
    ric = ricci_at(metric_fn, point, h)
    g_inv = np.linalg.inv(metric_fn(np.asarray(point, dtype=float)))
    return float(np.einsum("ij,ij->", g_inv, ric))


def _grid_diff(arr, ax, h, periodic):
    if periodic:
        return (np.roll(arr, -1, axis=ax) - np.roll(arr, 1, axis=ax)) / (2 * h)
    return np.gradient(arr, h, axis=ax, edge_order=2)


def scalar_curvature_fd(grid: GridManifold) -> np.ndarray:
    """Second-order finite-difference scalar curvature at the nodes.

    Nodes whose stencil touches a degenerate node are returned as NaN.
    """
    d = grid.dim
    g = grid.metric
    dg = np.stack([_grid_diff(g, ax, grid.spacing[ax], grid.periodic[ax])
                   for ax in range(d)], axis=d)  # shape + (k, i, j)
    ddg = np.stack([_grid_diff(dg, ax, grid.spacing[ax], grid.periodic[ax])
                    for ax in range(d)], axis=d)  # shape + (l, k, i, j)
    ddg = 0.5 * (ddg + np.swapaxes(ddg, d, d + 1))
    mask = grid.degenerate_mask.copy()
    safe = np.where(mask[..., None, None], np.eye(d), g)
    g_inv = np.linalg.inv(safe)
    ric = _ricci_from_derivs(g_inv, dg, ddg)
    R = np.einsum("...ij,...ij->...", g_inv, ric)
    bad = mask.copy()
    for ax in range(d):
        for shift in (1, 2):
            for sgn in (1, -1):
                rolled = np.roll(mask, sgn * shift, axis=ax)
                if not grid.periodic[ax]:
                    sl = [slice(None)] * d
                    sl[ax] = slice(0, shift) if sgn > 0 else slice(-shift, None)
                    rolled[tuple(sl)] = False
                bad |= rolled
    R[bad] = np.nan
    return R


def lq_scalar_norm(grid: GridManifold, q: float, R=None) -> float:
    """Volume average of ``|R|^q`` on a closed grid."""
    if not grid.closed:
        raise ValueError("the L^q scalar average needs a closed (fully periodic) grid")
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    if R is None:
        R = grid.scalar if grid.scalar is not None else scalar_curvature_fd(grid)
    R = np.broadcast_to(np.asarray(R, dtype=float), grid.shape)
    w = grid.vol_weight
    ok = np.isfinite(R)
    return float(np.sum(np.abs(R[ok]) ** q * w[ok]) / np.sum(w[ok]))
