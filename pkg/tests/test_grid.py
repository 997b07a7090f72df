import numpy as np
import pytest

from dpgeo import grid as G
from dpgeo import warped as W

from conftest import random_profiles, smooth_metric


def _linear(grid, coef):
    return grid.coords() @ np.asarray(coef, dtype=float)


def test_p_energy_examples():
    g = G.flat_grid((16, 16))
    assert G.p_energy(g, np.full(g.shape, 3.0), 3) == 0.0
    x = _linear(g, [1, 0])
    assert G.p_energy(g, x, 2) == pytest.approx(1.0, rel=1e-12)
    assert G.p_energy(g, x, 4) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValueError):
        G.p_energy(g, x, 1.0)


def test_p_energy_gradient_matches_differences():
    g = G.from_metric_fn(smooth_metric(0.4), (0, 0), (1, 1), (6, 5))
    rng = np.random.default_rng(0)
    f = rng.standard_normal(g.n_nodes)
    grad = G.p_energy_gradient(g, f, 3.0)
    h = 1e-6
    for i in rng.choice(g.n_nodes, 6, replace=False):
        e = np.zeros(g.n_nodes)
        e[i] = h
        fd = (G.p_energy(g, f + e, 3.0) - G.p_energy(g, f - e, 3.0)) / (2 * h)
        assert grad[i] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_volume_weights():
    g = G.flat_grid((10, 12), (0, 0), (2, 3))
    assert np.all(g.vol_weight >= 0)
    assert g.total_volume == pytest.approx(6.0)
    t = G.flat_grid((8, 8), periodic=True)
    assert t.closed and t.total_volume == pytest.approx(1.0)


def test_power_grid_examples():
    g = G.discretize_power(1.0, resolution=64)
    k = g.nearest_node((0.5, 0.25))
    assert np.allclose(g.metric.reshape(-1, 2, 2)[k], np.diag([1.0, 0.25]))
    h = G.discretize_power(0.5, resolution=64)
    assert np.all(np.linalg.det(h.cell_metric) > 0)
    assert h.degenerate_mask.any()
    assert np.all(h.degenerate_mask == np.isclose(h.coords()[..., 0], 0.0))
    with pytest.raises(ValueError):
        G.discretize_power(0.5, resolution=3)


def test_power_grid_volume_converges():
    exact = 8.0 / 3.0  # int int |x|^{1/2} over [-1, 1]^2
    errs = [abs(G.discretize_power(0.5, resolution=r).total_volume - exact) / exact
            for r in (32, 64, 128)]
    assert errs[-1] < 0.01
    assert errs[2] < errs[1] < errs[0]


def test_strip_grids():
    ph = W.make_phi(W.BuildingBlockParams(3, 0.1, 0.1))
    none = G.discretize_strip_metric([], (16, 16))
    assert np.allclose(none.metric, np.eye(2))
    one = G.discretize_strip_metric([G.Strip(1, (0.5,), 0.2, ph)], (32, 32))
    gyy = one.metric[..., 1, 1]
    col = gyy[:, 0]
    assert col[16] == pytest.approx(0.1 ** 0.2)  # core fibre phi(0)^2 on the axis
    assert col.min() == col[16] and np.allclose(col[:8], 1.0)
    assert np.allclose(one.metric[..., 0, 0], 1.0)
    two = G.discretize_strip_metric([G.Strip(1, (0.25,), 0.1, ph), G.Strip(1, (0.75,), 0.1, ph)],
                                    (32, 32))
    assert np.allclose(two.metric, np.roll(two.metric, 16, axis=0))
    with pytest.raises(ValueError):
        G.discretize_strip_metric([G.Strip(1, (0.5,), 0.2, ph), G.Strip(1, (0.6,), 0.2, ph)],
                                  (32, 32))


def test_lattice_strips():
    off = G.lattice_line_offsets(3, 0.3)
    assert off.shape == (3, 3) and np.allclose(np.diag(off), 0.0)
    ph = W.make_phi(W.BuildingBlockParams(3, 0.2, 0.01))
    with pytest.raises(ValueError):
        G.discretize_lattice_strips(0.5, 0.2, ph, (8, 8, 8), (0, 0, 0), (1, 1, 1))
    g = G.discretize_lattice_strips(0.5, 0.05, ph, (16, 16, 16), (0, 0, 0), (1, 1, 1))
    assert g.dim == 3 and np.min(np.linalg.eigvalsh(g.metric)) > 0


def test_geodesic_examples():
    g = G.flat_grid((40, 40), (0, 0), (2, 2))
    a, b = g.nearest_node((0.5, 0.5)), g.nearest_node((1.5, 0.5))
    d = G.geodesic_distances(g, a).reshape(-1)
    assert d[a] == 0.0 and abs(d[b] - 1.0) <= g.spacing[0]
    c = g.nearest_node((1.5, 1.5))
    assert abs(d[c] / np.sqrt(2) - 1.0) <= 0.08
    # triangle inequality on the graph
    D = G.geodesic_distances(g, [a, b, c]).reshape(3, -1)
    assert D[0, c] <= D[0, b] + D[1, c] + 1e-12


def test_geodesic_collapse_on_power_line():
    vals = []
    for res in (16, 32, 64):
        g = G.discretize_power(1.0, resolution=res)
        a, b = g.nearest_node((0, -0.5)), g.nearest_node((0, 0.5))
        vals.append(G.geodesic_distances(g, a).reshape(-1)[b])
    # edges along the line sample the metric where it vanishes
    assert max(vals) <= 1e-12


def test_geodesic_refinement_flat():
    errs = []
    for c in (8, 16, 32):
        g = G.flat_grid((c, c))
        a, b = g.nearest_node((0, 0)), g.nearest_node((1, 0.5))
        d = G.geodesic_distances(g, a).reshape(-1)[b]
        errs.append(abs(d - np.hypot(1, 0.5)) / np.hypot(1, 0.5))
    assert max(errs) <= 0.08


def test_scalar_fd_flat_and_sphere():
    t = G.flat_grid((8, 8), periodic=True)
    assert np.allclose(G.scalar_curvature_fd(t), 0.0)
    a = 2.0

    def sphere(pts):  # stereographic chart, radius a
        s = np.sum(pts**2, axis=-1)
        c = (2 * a**2 / (a**2 + s)) ** 2
        return c[..., None, None] * np.eye(2)

    g = G.from_metric_fn(sphere, (-0.5, -0.5), (0.5, 0.5), (40, 40))
    R = G.scalar_curvature_fd(g)
    inner = R[5:-5, 5:-5]
    assert np.allclose(inner, 2 / a**2, rtol=0.02)


def test_scalar_fd_warped_four_dim():
    rng = np.random.default_rng(11)
    pair = random_profiles(rng)
    n, r = 3, 1.0
    one = W.warped_metric_fn(pair, n)

    def fn(pts):
        flat = pts.reshape(-1, n + 1)
        return np.stack([one(p) for p in flat]).reshape(pts.shape[:-1] + (n + 1, n + 1))

    centre = np.array([r, 1.1, 0.8, 0.0])
    w = 0.005
    g = G.from_metric_fn(fn, centre - w, centre + w, (4, 4, 4, 4))
    R = G.scalar_curvature_fd(g)[2, 2, 2, 2]
    exact = W.scalar_curvature(pair, n, np.array([r]))[0]
    assert R == pytest.approx(exact, rel=1e-4)


def test_pointwise_oracle_order():
    rng = np.random.default_rng(5)
    pair = random_profiles(rng)
    fn = W.warped_metric_fn(pair, 3)
    exact = W.scalar_curvature(pair, 3, np.array([1.2]))[0]
    fd = G.scalar_curvature_at(fn, np.array([1.2, 1.0, 1.0, 0.0]))
    assert fd == pytest.approx(exact, rel=1e-7)


def test_lq_scalar_norm():
    t = G.flat_grid((8, 8), periodic=True)
    assert G.lq_scalar_norm(t, 0.5) == 0.0
    c = G.from_metric_fn(lambda p: np.broadcast_to(np.eye(2), p.shape[:-1] + (2, 2)).copy(),
                         (0, 0), (1, 1), (8, 8), True, scalar_fn=lambda p: np.full(p.shape[:-1], 4.0))
    assert G.lq_scalar_norm(c, 0.5) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        G.lq_scalar_norm(G.flat_grid((8, 8)), 0.5)
    with pytest.raises(ValueError):
        G.lq_scalar_norm(t, 1.5)


def test_lq_scalar_decreases_along_strip_sweep():
    vals = []
    for d in (0.1, 0.05, 0.02, 0.01):
        ph = W.make_phi(W.BuildingBlockParams(3, d, d))
        g = G.discretize_strip_metric([G.Strip(1, (0.5,), 0.2, ph)], (64, 64))
        vals.append(G.lq_scalar_norm(g, 0.5))
    assert all(vals[i + 1] < vals[i] for i in range(3))


def test_rescale_laws():
    g = G.from_metric_fn(smooth_metric(0.3), (0, 0), (1, 1), (8, 8))
    rho, p = 1.7, 3.0
    s = g.rescaled(rho)
    assert np.allclose(s.vol_weight, g.vol_weight * rho ** -2, rtol=1e-12)
    f = np.random.default_rng(2).standard_normal(g.n_nodes)
    assert G.p_energy(s, f, p) == pytest.approx(G.p_energy(g, f, p) * rho ** (p - 2), rel=1e-12)


def test_save_load_roundtrip(tmp_path):
    g = G.from_metric_fn(smooth_metric(0.3), (0, 0), (1, 1), (5, 6))
    path = tmp_path / "g.txt"
    g.save(path)
    h = G.GridManifold.load(path)
    assert h.shape == g.shape and np.allclose(h.metric, g.metric)
    assert np.allclose(h.spacing, g.spacing)


def test_rescaled_grid_drops_cached_operators():
    g = G.flat_grid((8, 8))
    d = G.geodesic_distances(g, 0).reshape(-1)
    s = g.rescaled(2.0)
    assert np.allclose(G.geodesic_distances(s, 0).reshape(-1), d / 2)
    assert not s.meta.get("flat")
