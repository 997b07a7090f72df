import itertools
import json

import numpy as np
import pytest

from dpgeo import compare as C
from dpgeo import grid as G


def _space(D, pts=None):
    D = np.asarray(D, dtype=float)
    pts = np.zeros((len(D), 1)) if pts is None else pts
    return C.FiniteMetricSpace(pts, D, np.ones(len(D)))


def _brute_gh_upper(DX, DY):
    n = len(DX)
    best = np.inf
    for perm in itertools.permutations(range(n)):
        p = list(perm)
        best = min(best, np.max(np.abs(DX - DY[np.ix_(p, p)])))
    return 0.5 * best


def test_space_validation():
    with pytest.raises(ValueError):
        _space([[0, 1], [2, 0]])
    with pytest.raises(ValueError):
        _space([[1, 1], [1, 0]])
    with pytest.raises(ValueError):
        _space([[0, 1, 5], [1, 0, 1], [5, 1, 0]])
    with pytest.raises(ValueError):
        C.FiniteMetricSpace(np.zeros((2, 1)), [[0, 1], [1, 0]], [1.0, -1.0])
    X = _space([[0, 1, 2], [1, 0, 1], [2, 1, 0]])
    assert X.size == 3 and X.diameter == 2 and X.total_weight == 3


def test_gh_examples():
    X = C.FiniteMetricSpace.from_points([[0, 0], [1, 0], [0, 2]])
    assert C.gh_upper_bound(X, X) == 0.0 and C.gh_lower_bound(X, X) == 0.0
    A, B = _space([[0, 1], [1, 0]]), _space([[0, 3], [3, 0]])
    assert C.gh_upper_bound(A, B) == pytest.approx(1.0)
    assert C.gh_lower_bound(A, B) == pytest.approx(1.0)


def test_gh_unit_square_vs_double():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    X = C.FiniteMetricSpace.from_points(sq)
    Y = C.FiniteMetricSpace.from_points(2 * sq)
    val, info = C.gh_upper_bound(X, Y, return_info=True)
    assert info["exact"]
    assert val == pytest.approx(_brute_gh_upper(X.dist, Y.dist))
    assert val == pytest.approx(np.sqrt(2) / 2)


def test_gh_point_vs_diameter():
    P = _space([[0.0]])
    Y = C.FiniteMetricSpace.from_points([[0, 0], [3, 0], [1, 1]])
    assert C.gh_lower_bound(P, Y) == pytest.approx(1.5)
    assert C.gh_upper_bound(P, Y) == pytest.approx(1.5)


def test_gh_exact_mode_errors():
    A = C.FiniteMetricSpace.from_points(np.arange(3)[:, None])
    B = C.FiniteMetricSpace.from_points(np.arange(4)[:, None])
    with pytest.raises(ValueError):
        C.gh_upper_bound(A, B, exact=True)
    big = C.FiniteMetricSpace.from_points(np.arange(10)[:, None])
    with pytest.raises(ValueError):
        C.gh_upper_bound(big, big, exact=True)
    val, info = C.gh_upper_bound(big, big, return_info=True)
    assert not info["exact"] and val == 0.0


def test_lower_bound_below_bottleneck_and_upper():
    rng = np.random.default_rng(0)
    for _ in range(20):
        X = C.FiniteMetricSpace.from_points(rng.random((5, 2)))
        Y = C.FiniteMetricSpace.from_points(rng.random((5, 2)))
        lo, hi = C.gh_lower_bound(X, Y), C.gh_upper_bound(X, Y)
        assert lo <= hi + 1e-12
        assert lo <= 0.5 * max(C.bottleneck_sorted(X, Y), abs(X.diameter - Y.diameter)) + 1e-12


def test_sample_space_geodesic():
    g = G.flat_grid((32, 32))
    X = C.sample_space(g, 2, "geodesic", nodes=[(0.25, 0.5), (0.75, 0.5)])
    assert X.dist[0, 1] == pytest.approx(0.5, abs=g.spacing[0])
    Y = C.sample_space(g, 5, seed=3)
    Z = C.sample_space(g, 5, seed=3)
    assert np.array_equal(Y.dist, Z.dist) and np.array_equal(Y.nodes, Z.nodes)
    assert Y.total_weight == pytest.approx(g.total_volume)


def test_sample_space_dp_limits():
    g = G.flat_grid((8, 8))
    with pytest.raises(ValueError):
        C.sample_space(g, 13, "dp", p=3.0)
    with pytest.raises(ValueError):
        C.sample_space(g, 3, "dp")
    with pytest.raises(ValueError):
        C.sample_space(g, 3, "fast")
    X = C.sample_space(g, 3, "dp", p=3.0, probe_stride=4)
    assert X.size == 3 and X.total_weight == pytest.approx(g.total_volume)


def test_sample_space_rejects_degenerate_nodes():
    g = G.discretize_power(1.0, resolution=16)
    with pytest.raises(ValueError):
        C.sample_space(g, 2, nodes=[(0.0, 0.0), (0.5, 0.5)])
    X = C.sample_space(g, 2, nodes=[(0.0, 0.0), (0.5, 0.5)], allow_degenerate=True)
    assert X.size == 2
    fps = C.farthest_point_nodes(g, 6, seed=1)
    assert not np.any(g.degenerate_mask.reshape(-1)[fps])


def test_close_check():
    X = C.FiniteMetricSpace.from_points(np.random.default_rng(1).random((4, 2)))
    bv = np.array([[0.1, 0.4], [0.2, 0.5]])
    for eps in (1e-9, 0.1, 1.0):
        res = C.dp_close_check(X, X, eps, bv, bv)
        assert res.passed and res.worst_pair_gap == 0.0 and res.worst_volume_ratio == 1.0
    Y = C.FiniteMetricSpace(X.points, X.dist * 1.5, X.weights)
    assert not C.dp_close_check(X, Y, 0.1).passed
    assert not C.dp_close_check(X, X, 0.1, bv, bv * 1.2).passed
    with pytest.raises(ValueError):
        C.dp_close_check(X, C.FiniteMetricSpace.from_points([[0, 0], [1, 1]]), 0.1)
    with pytest.raises(ValueError):
        C.dp_close_check(X, X, 0.1, bv, None)


def test_close_check_serialization(tmp_path):
    X = C.FiniteMetricSpace.from_points([[0, 0], [1, 0]])
    res = C.dp_close_check(X, X, 0.1, radii=C.probe_radii(0.1))
    res.to_json(tmp_path / "c.json")
    doc = json.loads((tmp_path / "c.json").read_text())
    assert doc["pass"] and res["worst_pair_gap"] == 0.0 and len(doc["radii"]) == 8


def test_probe_radii():
    r = C.probe_radii(0.1)
    assert len(r) == 8 and r[0] == pytest.approx(0.1) and r[-1] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        C.probe_radii(0.0)


def test_ball_volumes():
    g = G.flat_grid((40, 40), (-1, -1), (1, 1))
    c = g.nearest_node((0, 0))
    v = C.ball_volumes(g, [c], [0.25, 0.5])
    assert v[0] == pytest.approx(np.pi * np.array([0.25, 0.5]) ** 2, rel=0.15)
    assert v[0, 0] < v[0, 1]
    vd = C.ball_volumes(g, [c], [0.3, 0.6, 2.0], "dp", p=3.0, probe_stride=8)
    assert np.all(np.diff(vd[0]) >= 0)
    with pytest.raises(ValueError):
        C.ball_volumes(g, [c], [0.5], "dp")


def test_taxicab_deviation():
    g = G.flat_grid((32, 32))
    axis = C.sample_space(g, 2, nodes=[(0.25, 0.5), (0.75, 0.5)])
    assert C.taxicab_deviation(axis) == pytest.approx(0.0, abs=1e-12)
    diag = C.FiniteMetricSpace.from_points([[0, 0], [1, 1]])
    assert C.taxicab_deviation(diag) == pytest.approx(1 - 1 / np.sqrt(2))
    geo = C.sample_space(g, 2, nodes=[(0.0, 0.0), (1.0, 1.0)])
    assert C.taxicab_deviation(geo) == pytest.approx(1 - 1 / np.sqrt(2), abs=0.08)


def test_space_csv(tmp_path):
    X = C.FiniteMetricSpace.from_points([[0, 0], [1, 0], [0, 1]])
    X.to_csv(tmp_path / "x.csv")
    rows = (tmp_path / "x.csv").read_text().splitlines()
    assert rows[0] == "i,x0,x1,weight,d0,d1,d2" and len(rows) == 4
