"""Finite metric spaces sampled from grids and Gromov-Hausdorff style comparisons.

Spaces carry a distance matrix (geodesic or d_p), coordinates for reporting
and a volume weight per point.  The comparisons are the usual cheap bounds on
the Gromov-Hausdorff distance plus the paired-net test behind d_p
convergence: pairwise distance gaps and p-ball volume ratios.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dp import DpOptions, dp_from, dp_matrix, probe_nodes
from .grid import GridManifold, geodesic_distances

log = logging.getLogger(__name__)

TRIANGLE_TOL = 1e-9
EXACT_GH_MAX = 9


@dataclass
class FiniteMetricSpace:
    points: np.ndarray
    dist: np.ndarray
    weights: np.ndarray
    mode: str = "given"
    nodes: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        D = np.asarray(self.dist, dtype=float)
        if D.ndim != 2 or D.shape[0] != D.shape[1]:
            raise ValueError("distance matrix must be square")
        if not np.allclose(D, D.T, rtol=0, atol=1e-12 * max(1.0, np.abs(D).max(initial=0))):
            raise ValueError("distance matrix must be symmetric")
        if np.any(np.diag(D) != 0):
            raise ValueError("distance matrix must have a zero diagonal")
        if np.any(D < 0) or not np.all(np.isfinite(D)):
            raise ValueError("distances must be finite and nonnegative")
        self.dist = 0.5 * (D + D.T)
        tol = TRIANGLE_TOL * max(1.0, float(self.dist.max(initial=0)))
        gap = triangle_violation(self.dist)
        if gap > tol:
            raise ValueError(f"triangle inequality violated by {gap:.3g}")
        self.points = np.asarray(self.points, dtype=float).reshape(len(D), -1)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.weights.size != len(D) or np.any(self.weights < 0):
            raise ValueError("need one nonnegative weight per point")

    @property
    def size(self) -> int:
        return self.dist.shape[0]

    @property
    def diameter(self) -> float:
        return float(self.dist.max(initial=0.0))

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    @classmethod
    def from_points(cls, points, norm_ord=2, weights=None) -> "FiniteMetricSpace":
        """Space of coordinate points under an l^q norm."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        D = np.linalg.norm(pts[:, None, :] - pts[None, :, :], ord=norm_ord, axis=-1)
        w = np.ones(len(pts)) if weights is None else weights
        return cls(pts, D, w, mode=f"l{norm_ord}")

    def to_csv(self, path) -> None:
        k, d = self.points.shape
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["i"] + [f"x{a}" for a in range(d)] + ["weight"]
                        + [f"d{j}" for j in range(k)])
            for i in range(k):
                wr.writerow([i] + [repr(float(v)) for v in self.points[i]]
                            + [repr(float(self.weights[i]))]
                            + [repr(float(v)) for v in self.dist[i]])


def triangle_violation(D) -> float:
    """Largest ``D[i, j] - D[i, k] - D[k, j]`` over all triples (0 if none)."""
    D = np.asarray(D, dtype=float)
    worst = 0.0
    for k in range(D.shape[0]):
        worst = max(worst, float(np.max(D - D[:, k:k + 1] - D[k:k + 1, :])))
    return worst


# ----------------------------------------------------------------------------
# sampling
# ----------------------------------------------------------------------------

def _coordinate_distances(grid: GridManifold, src: int) -> np.ndarray:
    """Flat (periodic-aware) coordinate distance from node ``src`` to all nodes."""
    c = grid.coords().reshape(-1, grid.dim)
    diff = c - c[src]
    for ax in range(grid.dim):
        if grid.periodic[ax]:
            L = grid.extent[ax]
            diff[:, ax] -= L * np.round(diff[:, ax] / L)
    return np.linalg.norm(diff, axis=1)


def farthest_point_nodes(grid: GridManifold, k: int, seed: int = 0,
                         fps: str = "coordinate") -> np.ndarray:
    """Farthest-point sampling of ``k`` non-degenerate nodes.

    The first node is drawn with ``seed``.  ``fps="coordinate"`` measures
    farness in the flat coordinates, so two grids of the same shape yield the
    same nodes (the sampling correspondence); ``fps="geodesic"`` uses the
    grid's own geodesic distance.
    """
    if k < 2:
        raise ValueError("need k >= 2")
    ok = ~grid.degenerate_mask.reshape(-1)
    cand = np.flatnonzero(ok)
    if cand.size < k:
        raise ValueError("not enough non-degenerate nodes")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.choice(cand))]
    far = np.full(grid.n_nodes, np.inf)
    for _ in range(k - 1):
        if fps == "geodesic":
            d = geodesic_distances(grid, chosen[-1]).reshape(-1)
        elif fps == "coordinate":
            d = _coordinate_distances(grid, chosen[-1])
        else:
            raise ValueError(f"unknown fps mode {fps!r}")
        far = np.minimum(far, d)
        far_ok = np.where(ok, far, -np.inf)
        chosen.append(int(np.argmax(far_ok)))
    return np.array(chosen)


def _probe_blocks(grid: GridManifold, probes: np.ndarray) -> np.ndarray:
    """Volume of the coordinate Voronoi block around each probe node."""
    c = grid.coords().reshape(-1, grid.dim)
    pc = c[probes]
    owner = np.empty(grid.n_nodes, dtype=int)
    best = np.full(grid.n_nodes, np.inf)
    for j in range(len(probes)):
        diff = c - pc[j]
        for ax in range(grid.dim):
            if grid.periodic[ax]:
                L = grid.extent[ax]
                diff[:, ax] -= L * np.round(diff[:, ax] / L)
        d = np.einsum("ij,ij->i", diff, diff)
        better = d < best
        owner[better] = j
        best[better] = d[better]
    return np.bincount(owner, weights=grid.vol_weight.reshape(-1), minlength=len(probes))


def _voronoi_weights(grid: GridManifold, rows: np.ndarray, cols=None, col_weight=None):
    """Sum of volume per sample over the columns nearest to it."""
    owner = np.argmin(rows, axis=0)
    w = grid.vol_weight.reshape(-1) if col_weight is None else col_weight
    return np.bincount(owner, weights=w, minlength=rows.shape[0])


def sample_space(grid: GridManifold, k: int, mode: str = "geodesic", p: float | None = None,
                 seed: int = 0, nodes=None, fps: str = "coordinate", weights: str = "voronoi",
                 probe_stride: int | None = None, opts: DpOptions | None = None,
                 allow_degenerate: bool = False) -> FiniteMetricSpace:
    """Sample ``k`` nodes and their pairwise distances.

    ``mode`` is ``"geodesic"`` or ``"dp"`` (then ``p`` is required and
    ``k <= 12``).  Weights are Voronoi volume shares under the same distance;
    in dp mode the cells are resolved on probe nodes every ``probe_stride``
    nodes.  ``weights="uniform"`` splits the volume evenly and skips those
    solves.
    """
    if mode not in ("geodesic", "dp"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "dp":
        if p is None:
            raise ValueError("dp mode needs p")
        if (k if nodes is None else len(nodes)) > 12:
            raise ValueError("dp mode is limited to 12 points")
    if nodes is None:
        idx = farthest_point_nodes(grid, k, seed, fps)
    else:
        idx = np.array([grid.nearest_node(n) if np.ndim(n) else int(n) for n in nodes])
        if len(idx) < 2:
            raise ValueError("need at least two points")
        if len(set(idx.tolist())) < len(idx):
            raise ValueError("sample points must be distinct nodes")
        if not allow_degenerate and np.any(grid.degenerate_mask.reshape(-1)[idx]):
            raise ValueError("degenerate sample point")
    k = len(idx)
    total = grid.total_volume
    if mode == "geodesic":
        rows = geodesic_distances(grid, idx).reshape(k, -1)
        D = rows[:, idx]
        D = 0.5 * (D + D.T)
        np.fill_diagonal(D, 0.0)
        w = _voronoi_weights(grid, rows) if weights == "voronoi" else np.full(k, total / k)
    else:
        D = dp_matrix(grid, list(idx), p, opts)
        if weights == "voronoi":
            stride = probe_stride or max(1, int(np.ceil(max(grid.shape) / 8)))
            probes = probe_nodes(grid, stride)
            rows = np.empty((k, probes.size))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                for i in range(k):
                    rows[i] = dp_from(grid, idx[i], probes, p, opts)
                    rows[i, probes == idx[i]] = 0.0
            w = _voronoi_weights(grid, rows, col_weight=_probe_blocks(grid, probes))
        else:
            w = np.full(k, total / k)
    pts = grid.coords().reshape(-1, grid.dim)[idx]
    meta = {"seed": seed, "p": p, "grid": grid.label, "shape": list(grid.shape)}
    return FiniteMetricSpace(pts, D, w, mode=mode, nodes=idx, meta=meta)


# ----------------------------------------------------------------------------
# Gromov-Hausdorff bounds
# ----------------------------------------------------------------------------

def _distortion(DX, DY, perm) -> float:
    return float(np.max(np.abs(DX - DY[np.ix_(perm, perm)])))


def _exact_bijection(DX, DY):
    n = DX.shape[0]
    iu = np.triu_indices(n, 1)
    dx = DX[iu]
    best, best_perm = np.inf, None
    # enumerate permutations in chunks to keep memory bounded
    it = itertools.permutations(range(n))
    while True:
        chunk = np.array(list(itertools.islice(it, 40320)), dtype=np.intp)
        if chunk.size == 0:
            break
        if n < 2:
            return 0.0, np.arange(n)
        dy = DY[chunk[:, iu[0]], chunk[:, iu[1]]]
        dis = np.max(np.abs(dy - dx), axis=1)
        j = int(np.argmin(dis))
        if dis[j] < best:
            best, best_perm = float(dis[j]), chunk[j]
    return best, best_perm


def _profile_match(DX, DY):
    """Greedy bijection pairing points with similar sorted distance rows."""
    n = DX.shape[0]
    sx, sy = np.sort(DX, axis=1), np.sort(DY, axis=1)
    cost = np.max(np.abs(sx[:, None, :] - sy[None, :, :]), axis=-1)
    perm = np.full(n, -1)
    used = np.zeros(n, dtype=bool)
    for i in np.argsort(cost.min(axis=1)):
        c = np.where(used, np.inf, cost[i])
        j = int(np.argmin(c))
        perm[i], used[j] = j, True
    return perm


def _two_swap(DX, DY, perm, max_rounds: int = 50):
    perm = perm.copy()
    cur = _distortion(DX, DY, perm)
    n = len(perm)
    for _ in range(max_rounds):
        improved = False
        for a in range(n):
            for b in range(a + 1, n):
                perm[a], perm[b] = perm[b], perm[a]
                val = _distortion(DX, DY, perm)
                if val < cur - 1e-15:
                    cur, improved = val, True
                else:
                    perm[a], perm[b] = perm[b], perm[a]
        if not improved:
            break
    return cur, perm


def _relation_distortion(DX, DY, pairs) -> float:
    a = np.array([i for i, _ in pairs])
    b = np.array([j for _, j in pairs])
    return float(np.max(np.abs(DX[np.ix_(a, a)] - DY[np.ix_(b, b)])))


def gh_upper_bound(X: FiniteMetricSpace, Y: FiniteMetricSpace, exact: bool | None = None,
                   return_info: bool = False):
    """Half the smallest distortion found over correspondences.

    Equal sizes up to 9 points enumerate every bijection (``exact``); larger or
    unequal spaces use a greedy profile matching refined by 2-swaps, and the
    result is flagged heuristic.
    """
    DX, DY = X.dist, Y.dist
    n, m = DX.shape[0], DY.shape[0]
    if exact is None:
        exact = n == m and n <= EXACT_GH_MAX
    if exact:
        if n != m:
            raise ValueError("exact mode needs spaces of equal size")
        if n > EXACT_GH_MAX:
            raise ValueError(f"exact mode is limited to {EXACT_GH_MAX} points")
        dis, perm = _exact_bijection(DX, DY)
        info = {"method": "exact-bijection", "exact": True, "correspondence": perm.tolist()}
    elif n == m:
        dis, perm = _two_swap(DX, DY, _profile_match(DX, DY))
        info = {"method": "greedy+2swap", "exact": False, "correspondence": perm.tolist()}
    else:
        # relation: every point of X to a partner in Y and vice versa
        fwd = _profile_match_rect(DX, DY)
        bwd = _profile_match_rect(DY, DX)
        pairs = sorted({(i, int(fwd[i])) for i in range(n)} | {(int(bwd[j]), j) for j in range(m)})
        dis = _relation_distortion(DX, DY, pairs)
        info = {"method": "greedy-relation", "exact": False, "correspondence": pairs}
    val = 0.5 * dis
    return (val, info) if return_info else val


def _profile_match_rect(DA, DB):
    """For each point of A the point of B with the closest distance quantiles."""
    q = np.linspace(0, 1, 17)
    qa = np.quantile(DA, q, axis=1).T
    qb = np.quantile(DB, q, axis=1).T
    cost = np.max(np.abs(qa[:, None, :] - qb[None, :, :]), axis=-1)
    return np.argmin(cost, axis=1)


def _hausdorff_1d(a, b) -> float:
    a, b = np.sort(a), np.sort(b)

    def one_sided(u, v):
        pos = np.clip(np.searchsorted(v, u), 1, len(v) - 1) if len(v) > 1 else np.zeros(len(u), int)
        left = np.abs(u - v[np.maximum(pos - 1, 0)])
        right = np.abs(u - v[pos])
        return float(np.max(np.minimum(left, right)))

    return max(one_sided(a, b), one_sided(b, a))


def gh_lower_bound(X: FiniteMetricSpace, Y: FiniteMetricSpace) -> float:
    """``max(|diam X - diam Y|, H(dist X, dist Y)) / 2``.

    ``H`` is the Hausdorff distance between the sets of distance values
    (zero included).  Any correspondence of distortion ``t`` matches each
    value of one set within ``t`` of a value of the other, so this bounds the
    Gromov-Hausdorff distance from below.  For equal sizes it is also at most
    the sorted-multiset bottleneck distance.
    """
    a = np.concatenate([[0.0], X.dist[np.triu_indices(X.size, 1)]])
    b = np.concatenate([[0.0], Y.dist[np.triu_indices(Y.size, 1)]])
    return 0.5 * max(abs(X.diameter - Y.diameter), _hausdorff_1d(a, b))


def bottleneck_sorted(X: FiniteMetricSpace, Y: FiniteMetricSpace) -> float:
    """Bottleneck distance of the sorted distance multisets (equal sizes)."""
    if X.size != Y.size:
        raise ValueError("bottleneck of multisets needs equal sizes")
    a = np.sort(X.dist[np.triu_indices(X.size, 1)])
    b = np.sort(Y.dist[np.triu_indices(Y.size, 1)])
    return float(np.max(np.abs(a - b), initial=0.0))


# ----------------------------------------------------------------------------
# paired-net check
# ----------------------------------------------------------------------------

def probe_radii(epsilon: float, count: int = 8) -> np.ndarray:
    """Log-spaced radii in ``[epsilon, 1]``."""
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    return np.geomspace(epsilon, 1.0, count)


def ball_volumes(grid: GridManifold, centres, radii, mode: str = "geodesic",
                 p: float | None = None, probe_stride: int = 8,
                 opts: DpOptions | None = None) -> np.ndarray:
    """Volumes of metric balls, shape ``(len(centres), len(radii))``.

    Geodesic balls are summed over all nodes.  p-balls are resolved on probe
    nodes every ``probe_stride`` nodes, each probe standing for its
    coordinate Voronoi block; the centre always counts.
    """
    centres = np.asarray(centres, dtype=int)
    radii = np.asarray(radii, dtype=float)
    out = np.empty((len(centres), len(radii)))
    if mode == "geodesic":
        V = grid.vol_weight.reshape(-1)
        rows = geodesic_distances(grid, centres).reshape(len(centres), -1)
        for i in range(len(centres)):
            out[i] = [V[rows[i] < r].sum() for r in radii]
        return out
    if mode != "dp" or p is None:
        raise ValueError("mode must be 'geodesic' or 'dp' with p given")
    probes = probe_nodes(grid, probe_stride)
    blocks = _probe_blocks(grid, probes)
    for i, c in enumerate(centres):
        others = probes != c
        vals = np.zeros(probes.size)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            vals[others] = dp_from(grid, int(c), probes[others], p, opts)
        # the centre lies in the block of its nearest probe
        vals[int(np.argmin(_coordinate_distances(grid, int(c))[probes]))] = 0.0
        out[i] = [blocks[vals < r].sum() for r in radii]
    return out


@dataclass
class CloseCheck:
    passed: bool
    worst_pair_gap: float
    worst_volume_ratio: float
    epsilon: float
    radii: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"pass": self.passed, "worst_pair_gap": self.worst_pair_gap,
                "worst_volume_ratio": self.worst_volume_ratio, "epsilon": self.epsilon,
                "radii": list(map(float, self.radii)), **self.details}

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def __getitem__(self, key):
        return self.to_dict()[key]


def dp_close_check(X: FiniteMetricSpace, Y: FiniteMetricSpace, epsilon: float,
                   ball_volumes_X=None, ball_volumes_Y=None, radii=None) -> CloseCheck:
    """Paired-net closeness at scale ``epsilon``.

    Passes when every matched pair distance differs by at most ``epsilon``
    and every matched ball-volume ratio lies in ``[1 - epsilon, 1 + epsilon]``.
    Volumes are arrays ``(centres, radii)`` measured at the same radii on
    both sides; ``worst_volume_ratio`` is the ratio farthest from 1.
    """
    if X.size != Y.size:
        raise ValueError("matched point lists must have the same size")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    gap = float(np.max(np.abs(X.dist - Y.dist)))
    worst_ratio = 1.0
    if (ball_volumes_X is None) != (ball_volumes_Y is None):
        raise ValueError("give ball volumes for both spaces or neither")
    if ball_volumes_X is not None:
        vx = np.asarray(ball_volumes_X, dtype=float)
        vy = np.asarray(ball_volumes_Y, dtype=float)
        if vx.shape != vy.shape:
            raise ValueError("ball volume arrays must match")
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(vy > 0, vx / vy, np.where(vx > 0, np.inf, 1.0))
        k = np.unravel_index(np.argmax(np.abs(ratio - 1.0)), ratio.shape)
        worst_ratio = float(ratio[k])
    tol = 1e-12
    ok = gap <= epsilon + tol and abs(worst_ratio - 1.0) <= epsilon + tol
    radii = [] if radii is None else list(radii)
    return CloseCheck(bool(ok), gap, worst_ratio, float(epsilon), radii)


def taxicab_deviation(space: FiniteMetricSpace, pairs=None) -> float:
    """Max relative gap between the distance and the l^1 coordinate distance."""
    pts = space.points
    k = space.size
    pairs = itertools.combinations(range(k), 2) if pairs is None else pairs
    worst = 0.0
    for i, j in pairs:
        l1 = float(np.abs(pts[i] - pts[j]).sum())
        if l1 == 0:
            continue
        worst = max(worst, abs(space.dist[i, j] - l1) / l1)
    return worst
