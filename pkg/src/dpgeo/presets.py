"""Preset experiments.

Each preset takes a resolved config (``grid``, ``metric``, ``solver``,
``sweep``, ``check`` sections merged over its defaults) and returns a dict
with ``summary`` (JSON-able scalars), ``tables`` (name -> (columns, rows)),
``checks`` (name -> bool) and ``converged``.
"""

from __future__ import annotations

import copy
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import compare, dp, entropy, flow, grid as G, warped as W

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """A solver did not converge; ``partial`` carries what was computed."""

    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


def _pmap(fn, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _dp_opts(solver: dict) -> dp.DpOptions:
    return dp.DpOptions(tol=solver.get("tol", 1e-9), max_iter=solver.get("max_iter", 500),
                        linear_solver=solver.get("linear_solver", "auto"))


def _fit_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _default_delta(eps: float) -> float:
    """``delta = (-log eps)^{-1/2}``."""
    return float((-np.log(eps)) ** -0.5)


def _strip_torus(r0: float, delta: float, eps: float, cells: int, count: int = 1,
                 n: int = 3) -> G.GridManifold:
    """Unit 2-torus with ``count`` equally spaced strips along the second axis."""
    ph = W.make_phi(W.BuildingBlockParams(n, delta, eps))
    gap = 1.0 / count
    strips = [G.Strip(1, (gap * (k + 0.5),), r0, ph) for k in range(count)]
    return G.discretize_strip_metric(strips, (cells, cells), label=f"strips r0={r0:g}")


# ----------------------------------------------------------------------------
# euclid-scaling
# ----------------------------------------------------------------------------

def _euclid_one(args):
    cells, lower, upper, p, dists, solver = args
    g = G.flat_grid((cells, cells), lower, upper)
    rows = []
    for d in dists:
        a = g.nearest_node((-d / 2, 0.0))
        b = g.nearest_node((d / 2, 0.0))
        sep = float(np.linalg.norm(g.node_coord(b) - g.node_coord(a)))
        r = dp.dp_distance(g, a, b, p, _dp_opts(solver))
        rows.append((cells, sep, r.value, r.iterations, r.converged))
    return rows


def euclid_scaling(cfg: dict, workers: int = 1) -> dict:
    grid, solver, sweep, chk = cfg["grid"], cfg["solver"], cfg["sweep"], cfg["check"]
    p = solver["p"]
    expected = 1.0 - 2.0 / p
    jobs = [(c, tuple(grid["lower"]), tuple(grid["upper"]), p, sweep["distances"], solver)
            for c in grid["cells"]]
    rows = [r for chunk in _pmap(_euclid_one, jobs, workers) for r in chunk]
    slopes = {}
    for c in grid["cells"]:
        sub = [r for r in rows if r[0] == c]
        slopes[c] = _fit_slope([r[1] for r in sub], [r[2] for r in sub])
    err = {c: abs(s - expected) / abs(expected) for c, s in slopes.items()}
    at = chk["at_cells"]
    finer = [c for c in grid["cells"] if c > at]
    checks = {}
    if at in err:
        checks["slope_within_tol"] = bool(err[at] <= chk["slope_rtol"])
    if at in err and finer:
        checks["trend_improving"] = bool(err[min(finer)] < err[at])
    return {"summary": {"p": p, "expected_exponent": expected,
                        "slopes": {str(k): v for k, v in slopes.items()},
                        "relative_errors": {str(k): v for k, v in err.items()}},
            "tables": {"dp_pairs": (("cells", "separation", "d_p", "iterations", "converged"), rows)},
            "checks": checks, "converged": all(r[4] for r in rows)}


# ----------------------------------------------------------------------------
# power-degeneracy
# ----------------------------------------------------------------------------

def _power_one(args):
    alpha, cells, p, pts, solver = args
    g = G.discretize_power(alpha, resolution=cells)
    a, b = g.nearest_node(pts[0]), g.nearest_node(pts[1])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        r = dp.dp_distance(g, a, b, p, _dp_opts(solver))
    return (alpha, cells, r.value, r.iterations, r.converged)


def power_degeneracy(cfg: dict, workers: int = 1) -> dict:
    grid, metric, solver, chk = cfg["grid"], cfg["metric"], cfg["solver"], cfg["check"]
    p = solver["p"]
    pts = [tuple(q) for q in metric["points"]]
    jobs = [(a, c, p, pts, solver) for a in metric["alphas"] for c in grid["cells"]]
    rows = _pmap(_power_one, jobs, workers)
    ratios, checks = {}, {}
    for a in metric["alphas"]:
        vals = [r[2] for r in rows if r[0] == a]
        rat = [vals[i + 1] / vals[i] for i in range(len(vals) - 1)]
        ratios[str(a)] = rat
        if a * p >= 1:
            checks[f"alpha={a:g} decreases"] = bool(all(q <= 1 - chk["min_decrease"] for q in rat))
        else:
            checks[f"alpha={a:g} stable"] = bool(abs(rat[-1] - 1) <= chk["max_last_change"])
    return {"summary": {"p": p, "ratios": ratios},
            "tables": {"dp_by_resolution": (("alpha", "cells", "d_p", "iterations", "converged"), rows)},
            "checks": checks, "converged": all(r[4] for r in rows)}


# ----------------------------------------------------------------------------
# building-block-curvature
# ----------------------------------------------------------------------------

def building_block_curvature(cfg: dict, workers: int = 1) -> dict:
    metric, sweep, chk = cfg["metric"], cfg["sweep"], cfg["check"]
    n = metric["n"]
    res = W.sweep_min_scalar(n, sweep["deltas"], sweep["epsilons"], r_max=metric["r_max"],
                             samples=metric["samples"])
    rows, witness = [], None
    for r in res:
        cases = r.get("cases", {})
        c1 = cases.get(W.CASE_NAMES[0], np.nan)
        c2 = cases.get(W.CASE_NAMES[1], np.nan)
        rows.append((r["delta"], r["epsilon"], r["min_R"], c1, c2,
                     cases.get(W.CASE_NAMES[2], np.nan), r.get("reason", "")))
        if r["min_R"] is None or r["delta"] > chk["max_delta"] or r["epsilon"] > chk["max_eps"]:
            continue
        if r["min_R"] >= chk["min_R"] and (witness is None or r["min_R"] > witness["min_R"]):
            witness = r
    pos = witness is not None and witness["cases"][W.CASE_NAMES[0]] > 0 \
        and witness["cases"][W.CASE_NAMES[1]] > 0
    report = None
    best = witness or max((r for r in res if r["min_R"] is not None),
                          key=lambda r: r["min_R"], default=None)
    if best is not None:
        report = W.min_scalar_report(W.BuildingBlockParams(n, best["delta"], best["epsilon"]),
                                     r_max=metric["r_max"], samples=metric["samples"])
    tables = {"sweep": (("delta", "epsilon", "min_R", "case1_min", "case2_min", "case3_min",
                         "reason"), rows)}
    if report is not None:
        tables["curvature_report"] = (W.CurvatureReport.COLUMNS, report.rows().tolist())
    return {"summary": {"n": n, "witness": witness,
                        "min_R": None if report is None else report.min_R},
            "tables": tables,
            "checks": {"min_R_bound": witness is not None, "case12_positive": bool(pos)},
            "converged": True}


# ----------------------------------------------------------------------------
# torus-collapse
# ----------------------------------------------------------------------------

def _collapsed_diameter(g: G.GridManifold, columns: int = 16) -> float:
    """Max over x of the geodesic distance from (x, 0) to (x, 1/2)."""
    xs = np.linspace(0, 1, columns, endpoint=False)
    src = np.array([g.nearest_node((x, 0.0)) for x in xs])
    dst = [g.nearest_node((x, 0.5)) for x in xs]
    D = G.geodesic_distances(g, src).reshape(len(src), -1)
    return float(max(D[i, dst[i]] for i in range(len(src))))


def torus_collapse(cfg: dict, workers: int = 1) -> dict:
    grid, metric, solver, sweep, chk = (cfg["grid"], cfg["metric"], cfg["solver"],
                                        cfg["sweep"], cfg["check"])
    cells, p = grid["cells"], solver["p"]
    r0s, epss = sweep["r0"], sweep["epsilons"]
    deltas = sweep.get("deltas") or [_default_delta(e) for e in epss]
    rows, grids = [], []
    for r0, e, d in zip(r0s, epss, deltas):
        count = int(round(1.0 / (metric["strip_gap"] * r0)))
        g = _strip_torus(r0, d, e, cells, count=count, n=metric["n"])
        rows.append((r0, e, d, count, _collapsed_diameter(g), g.total_volume))
        grids.append(g)
    flat = G.flat_grid((cells, cells), (0, 0), (1, 1), periodic=True)
    fine = grids[-1]
    nodes = compare.farthest_point_nodes(flat, chk["points"], seed=cfg["seed"])
    radii = compare.probe_radii(chk["epsilon"])
    centres = nodes[:chk["ball_centres"]]
    opts = _dp_opts(solver)
    X = compare.sample_space(fine, len(nodes), "dp", p=p, nodes=nodes, weights="uniform", opts=opts)
    Y = compare.sample_space(flat, len(nodes), "dp", p=p, nodes=nodes, weights="uniform", opts=opts)
    bx = compare.ball_volumes(fine, centres, radii, "dp", p=p, probe_stride=chk["probe_stride"], opts=opts)
    by = compare.ball_volumes(flat, centres, radii, "dp", p=p, probe_stride=chk["probe_stride"], opts=opts)
    dp_check = compare.dp_close_check(X, Y, chk["epsilon"], bx, by, radii)
    Xg = compare.sample_space(fine, len(nodes), "geodesic", nodes=nodes)
    Yg = compare.sample_space(flat, len(nodes), "geodesic", nodes=nodes)
    geo_check = compare.dp_close_check(Xg, Yg, chk["epsilon"],
                                       compare.ball_volumes(fine, centres, radii),
                                       compare.ball_volumes(flat, centres, radii), radii)
    diam = [r[4] for r in rows]
    checks = {"diameter_collapse": bool(diam[0] / diam[-1] >= chk["min_diameter_ratio"]),
              "dp_close_passes": dp_check.passed,
              "geodesic_close_fails": not geo_check.passed}
    return {"summary": {"p": p, "collapsed_diameters": diam,
                        "diameter_ratio": diam[0] / diam[-1],
                        "dp_check": dp_check.to_dict(), "geodesic_check": geo_check.to_dict(),
                        "gh_upper_geodesic": compare.gh_upper_bound(Xg, Yg),
                        "gh_lower_geodesic": compare.gh_lower_bound(Xg, Yg)},
            "tables": {"sweep": (("r0", "epsilon", "delta", "strips", "collapsed_diameter",
                                  "volume"), rows),
                       "dp_distances_strips": (tuple(f"d{j}" for j in range(X.size)), X.dist.tolist()),
                       "dp_distances_flat": (tuple(f"d{j}" for j in range(Y.size)), Y.dist.tolist())},
            "checks": checks, "converged": True}


# ----------------------------------------------------------------------------
# taxicab
# ----------------------------------------------------------------------------

def taxicab(cfg: dict, workers: int = 1) -> dict:
    grid, metric, sweep, chk = cfg["grid"], cfg["metric"], cfg["sweep"], cfg["check"]
    ph = W.make_phi(W.BuildingBlockParams(metric["n"], metric["delta"], metric["epsilon"]))
    core = float(ph(np.array([0.0]))[0])
    lo, hi = tuple(grid["lower"]), tuple(grid["upper"])
    rows = []
    for s in sweep["line_spacings"]:
        g = G.discretize_lattice_strips(s, metric["r0_factor"] * s, ph, grid["cells"], lo, hi)
        off = G.lattice_line_offsets(3, s)
        a = np.array(metric["start"], dtype=float) + np.array([0.0, off[0, 1], off[0, 2]])
        b = a + np.array(metric["offset"], dtype=float)
        ia, ib = g.nearest_node(a), g.nearest_node(b)
        d = float(G.geodesic_distances(g, ia).reshape(-1)[ib])
        pts = np.stack([g.node_coord(ia), g.node_coord(ib)])
        # distances in units of the core fibre length, where lines have unit speed
        space = compare.FiniteMetricSpace(pts, np.array([[0, d], [d, 0]]) / core, np.ones(2),
                                          mode="geodesic")
        rows.append((s, d, d / core, float(np.abs(pts[1] - pts[0]).sum()),
                     compare.taxicab_deviation(space)))
    dev = [r[4] for r in rows]
    checks = {"monotone": bool(all(dev[i + 1] < dev[i] for i in range(len(dev) - 1))),
              "finest_below": bool(dev[-1] < chk["max_finest"])}
    return {"summary": {"core_fibre": core, "deviations": dev},
            "tables": {"generations": (("line_spacing", "geodesic", "rescaled", "l1",
                                        "deviation"), rows)},
            "checks": checks, "converged": True}


# ----------------------------------------------------------------------------
# entropy
# ----------------------------------------------------------------------------

def _mu_row(g, tau, seed):
    res = entropy.mu_entropy(g, tau, entropy.MuOptions(seed=seed))
    return res


def entropy_flat_torus(cfg: dict, workers: int = 1) -> dict:
    grid, sweep, chk = cfg["grid"], cfg["sweep"], cfg["check"]
    c = grid["cells"]
    g = G.flat_grid((c, c), (0, 0), (1, 1), periodic=True)
    rows = []
    for tau in sweep["taus"]:
        r = _mu_row(g, tau, cfg["seed"])
        norm_u = float(np.sqrt(np.sum(g.vol_weight * r.minimizer_u**2)))
        rows.append((tau, r.mu, -2 - np.log(4 * np.pi * tau), r.el_residual, norm_u, r.converged))
    mus = [r[1] for r in rows]
    checks = {"nonpositive": bool(all(m <= chk["mu_max"] for m in mus)),
              "increasing": bool(all(mus[i + 1] > mus[i] for i in range(len(mus) - 1))),
              "el_residual": bool(all(r[3] <= chk["el_rtol"] * r[4] for r in rows))}
    return {"summary": {"mu": mus},
            "tables": {"mu": (("tau", "mu", "mu_flat_constant", "el_residual", "norm_u",
                               "converged"), rows)},
            "checks": checks, "converged": all(r[5] for r in rows)}


def entropy_strip_sweep(cfg: dict, workers: int = 1) -> dict:
    grid, metric, sweep = cfg["grid"], cfg["metric"], cfg["sweep"]
    c, tau = grid["cells"], metric["tau"]
    flat = G.flat_grid((c, c), (0, 0), (1, 1), periodic=True)
    mu_flat = _mu_row(flat, tau, cfg["seed"]).mu
    rows = []
    for d, e in zip(sweep["deltas"], sweep["epsilons"]):
        g = _strip_torus(metric["r0"], d, e, c, n=metric["n"])
        r = _mu_row(g, tau, cfg["seed"])
        rows.append((d, e, r.mu, r.el_residual, r.converged))
    mus = [r[2] for r in rows]
    checks = {"increasing": bool(all(mus[i + 1] > mus[i] for i in range(len(mus) - 1))),
              "approaches_flat": bool(abs(mus[-1] - mu_flat) < abs(mus[0] - mu_flat))}
    return {"summary": {"tau": tau, "mu_flat": mu_flat, "mu": mus},
            "tables": {"mu": (("delta", "epsilon", "mu", "el_residual", "converged"), rows)},
            "checks": checks, "converged": all(r[4] for r in rows)}


# ----------------------------------------------------------------------------
# flows
# ----------------------------------------------------------------------------

def flow_conformal(cfg: dict, workers: int = 1) -> dict:
    grid, metric, chk = cfg["grid"], cfg["metric"], cfg["check"]
    c = grid["cells"]
    h = 1.0 / c
    x = np.arange(c) * h
    X, Y = np.meshgrid(x, x, indexing="ij")
    u0 = metric["amplitude"] * np.sin(2 * np.pi * X) * np.sin(2 * np.pi * Y)
    st = flow.run_conformal(u0, h, metric["t_end"])
    minR = np.array([s["min_R"] for s in st.history])
    drop = float(np.min(np.diff(minR))) if len(minR) > 1 else 0.0
    osc = float(np.abs(st.u - st.u.mean()).max())
    mon = flow.conformal_monitor(st)
    rows = [(s["t"], s["min_R"], s["max_abs_R"], s["volume"]) for s in st.history[::max(1, len(st.history) // 2000)]]
    checks = {"min_R_monotone": bool(drop >= -chk["min_R_tol"]),
              "converges_to_flat": bool(osc <= chk["max_oscillation"])}
    return {"summary": {"steps": len(st.history) - 1, "worst_min_R_drop": drop,
                        "final_oscillation": osc, "monitor": mon},
            "tables": {"history": (("t", "min_R", "max_abs_R", "volume"), rows)},
            "checks": checks, "converged": True}


def _warped_run(params, h, steps=None, t_end=None):
    st = flow.warped_state(flow.flow_profiles(params), params.n, h)
    flow.run_warped(st, steps=steps, t_end=t_end)
    return st


def flow_warped(cfg: dict, workers: int = 1) -> dict:
    metric, grid, chk = cfg["metric"], cfg["grid"], cfg["check"]
    params = W.BuildingBlockParams(metric["n"], metric["delta"], metric["epsilon"])
    h = grid["h"]
    st = _warped_run(params, h, steps=metric["steps"])
    if st.singular:
        raise ConvergenceError(st.singular)
    minR = np.array([s["min_R"] for s in st.history])
    drop = float(np.min(np.diff(minR)))
    vol_excess = float(max(s["vol_excess"] for s in st.history[1:]))
    # consistency: the same horizon with spacing^2 and dt halved
    t_res = metric["residual_time"]
    res = []
    for hh in (h, h / np.sqrt(2.0)):
        s2 = _warped_run(params, hh, t_end=t_res)
        res.append(flow.warped_monitor(s2)["scalar_residual"])
    # smoothing of the eps-scale feature by t = eps^2
    eps = params.epsilon
    s3 = flow.warped_state(flow.flow_profiles(params), params.n, h)
    rho = s3.rho[1:-1]
    band = (rho >= eps / 2) & (rho <= 2 * eps)
    R0 = float(np.abs(s3.history[0]["R"][band]).max())
    flow.run_warped(s3, t_end=eps**2)
    R1 = float(np.abs(s3.history[-1]["R"][band]).max())
    checks = {"min_R_monotone": bool(drop >= -chk["min_R_tol"]),
              "volume_inequality": bool(vol_excess <= chk["volume_tol"]),
              "residual_halves": bool(res[1] <= 0.5 * res[0])}
    rows = [(s["t"], s["min_R"], s["max_abs_R"], s["volume"], s.get("vol_excess", 0.0))
            for s in st.history]
    return {"summary": {"fallback_f_equals_r": params.sigma0 >= 1,
                        "worst_min_R_drop": drop, "worst_volume_excess": vol_excess,
                        "scalar_residuals": res, "residual_ratio": res[1] / res[0],
                        "smoothing_factor": R0 / R1},
            "tables": {"history": (("t", "min_R", "max_abs_R", "volume", "volume_excess"), rows)},
            "checks": checks, "converged": True}


def lq_scalar(cfg: dict, workers: int = 1) -> dict:
    grid, metric, sweep = cfg["grid"], cfg["metric"], cfg["sweep"]
    c = grid["cells"]
    rows = []
    for d, e in zip(sweep["deltas"], sweep["epsilons"]):
        g = _strip_torus(metric["r0"], d, e, c, n=metric["n"])
        for q in metric["q"]:
            rows.append((d, e, q, G.lq_scalar_norm(g, q)))
    vals = [r[3] for r in rows]
    checks = {"finite": bool(np.all(np.isfinite(vals)) and min(vals) >= 0)}
    return {"summary": {"values": vals},
            "tables": {"lq": (("delta", "epsilon", "q", "mean_abs_R_q"), rows)},
            "checks": checks, "converged": True}


# ----------------------------------------------------------------------------
# registry
# ----------------------------------------------------------------------------

PRESETS = {
    "euclid-scaling": (euclid_scaling, "d_p between point pairs on a flat square; log-log exponent vs 1 - n/p", {
        "grid": {"cells": [64, 128, 256], "lower": [-1.0, -1.0], "upper": [1.0, 1.0]},
        "solver": {"p": 3.0, "tol": 1e-9},
        "sweep": {"distances": [0.25, 0.5, 1.0]},
        "check": {"slope_rtol": 0.05, "at_cells": 128}}),
    "power-degeneracy": (power_degeneracy, "d_p across the degenerate line of dx^2 + |x|^(2 alpha) dy^2 under refinement", {
        "grid": {"cells": [32, 64, 128, 256]},
        "metric": {"alphas": [0.5, 0.1], "points": [[0.0, -0.5], [0.0, 0.5]]},
        "solver": {"p": 3.0, "tol": 1e-9},
        "check": {"min_decrease": 0.25, "max_last_change": 0.05}}),
    "building-block-curvature": (building_block_curvature, "scalar curvature sweep of the building-block metric", {
        "metric": {"n": 3, "r_max": 10.0, "samples": 20000},
        "sweep": {"deltas": [1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8], "epsilons": [1e-3, 1e-4]},
        "check": {"min_R": -0.1, "max_delta": 1e-3, "max_eps": 1e-3}}),
    "torus-collapse": (torus_collapse, "torus with collapsing strips: geodesic collapse vs d_p closeness to the flat torus", {
        "grid": {"cells": 128},
        "metric": {"n": 3, "strip_gap": 10.0},
        "solver": {"p": 3.0, "tol": 1e-8},
        "sweep": {"r0": [0.05, 0.025, 0.0125], "epsilons": [1e-8, 1e-12, 1e-16], "deltas": None},
        "check": {"epsilon": 0.1, "points": 6, "ball_centres": 2, "probe_stride": 32,
                  "min_diameter_ratio": 3.0}}),
    "taxicab": (taxicab, "lattice of collapsed lines in a 3-D box: geodesic distance vs l1", {
        "grid": {"cells": [96, 96, 96], "lower": [0.0, 0.0, 0.0], "upper": [2.0, 2.0, 2.0]},
        "metric": {"n": 3, "delta": 0.24, "epsilon": 1e-3, "r0_factor": 0.125,
                   "start": [0.5, 0.5, 0.5], "offset": [1.0, 1.0, 1.0]},
        "sweep": {"line_spacings": [0.25, 0.125, 0.0625]},
        "check": {"max_finest": 0.15}}),
    "entropy-flat-torus": (entropy_flat_torus, "mu entropy of the flat unit torus over tau", {
        "grid": {"cells": 64},
        "sweep": {"taus": [0.5, 0.1, 0.02]},
        "check": {"mu_max": 1e-3, "el_rtol": 1e-4}}),
    "entropy-strip-sweep": (entropy_strip_sweep, "mu entropy of a torus with one strip as (delta, eps) shrink", {
        "grid": {"cells": 64},
        "metric": {"n": 3, "r0": 0.2, "tau": 0.1},
        "sweep": {"deltas": [0.1, 0.05, 0.02, 0.01], "epsilons": [0.1, 0.05, 0.02, 0.01]}}),
    "flow-conformal": (flow_conformal, "conformal Ricci flow on the 2-torus from a small perturbation", {
        "grid": {"cells": 64},
        "metric": {"amplitude": 0.1, "t_end": 2.0},
        "check": {"min_R_tol": 1e-6, "max_oscillation": 0.01}}),
    "flow-warped": (flow_warped, "doubly-warped Ricci flow of the building block", {
        "grid": {"h": 0.005},
        "metric": {"n": 3, "delta": 0.05, "epsilon": 0.05, "steps": 50, "residual_time": 5e-4},
        "check": {"min_R_tol": 1e-6, "volume_tol": 1e-12}}),
    "lq-scalar": (lq_scalar, "volume-averaged |R|^q on strip tori", {
        "grid": {"cells": 64},
        "metric": {"n": 3, "r0": 0.2, "q": [0.5]},
        "sweep": {"deltas": [0.1, 0.05, 0.02, 0.01], "epsilons": [0.1, 0.05, 0.02, 0.01]}}),
}

SECTIONS = ("grid", "metric", "solver", "sweep", "check")


def defaults(name: str) -> dict:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}")
    base = {s: {} for s in SECTIONS}
    base.update(copy.deepcopy(PRESETS[name][2]))
    return base


def run_preset(name: str, cfg: dict, workers: int = 1) -> dict:
    fn = PRESETS[name][0]
    t0 = time.perf_counter()
    out = fn(cfg, workers)
    log.info("%s finished in %.1f s", name, time.perf_counter() - t0)
    return out
