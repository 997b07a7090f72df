import numpy as np
import pytest

from dpgeo import flow as F
from dpgeo import warped as W


def _torus_field(c, fn):
    x = np.arange(c) / c
    X, Y = np.meshgrid(x, x, indexing="ij")
    return fn(X, Y)


# -- conformal ---------------------------------------------------------------

def test_conformal_constant_is_stationary():
    st = F.ConformalFlowState(np.full((16, 16), 0.3), 1 / 16)
    for _ in range(20):
        F.conformal_step(st)
    assert np.allclose(st.u, 0.3, atol=1e-14)
    mon = F.conformal_monitor(F.run_conformal(np.full((16, 16), 0.3), 1 / 16, 0.01,
                                              keep_fields=True))
    assert mon["scalar_residual"] <= 1e-8 and mon["volume_residual"] <= 1e-8


def test_conformal_sup_decreases():
    u0 = _torus_field(32, lambda x, y: 0.1 * np.sin(2 * np.pi * x))
    st = F.ConformalFlowState(u0, 1 / 32)
    sups = [np.abs(st.u).max()]
    for _ in range(100):
        F.conformal_step(st)
        sups.append(np.abs(st.u).max())
    assert np.all(np.diff(sups) < 0)


def test_conformal_cfl_enforced():
    st = F.ConformalFlowState(np.zeros((8, 8)), 1 / 8)
    with pytest.raises(F.FlowError):
        F.conformal_step(st, 2 * st.cfl())
    with pytest.raises(ValueError):
        F.ConformalFlowState(np.full((4, 4), np.nan), 0.25)


def test_conformal_min_R_and_volume():
    u0 = _torus_field(32, lambda x, y: 0.1 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y))
    st = F.run_conformal(u0, 1 / 32, 0.05)
    minR = np.array([s["min_R"] for s in st.history])
    assert np.min(np.diff(minR)) >= -1e-6
    assert all(s["volume"] > 0 for s in st.history)
    # step count follows the balanced CFL split
    assert st.t == pytest.approx(0.05)


def test_conformal_residual_decreases_under_refinement():
    res = []
    for c in (16, 32, 64):
        u0 = _torus_field(c, lambda x, y: 0.1 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y))
        st = F.run_conformal(u0, 1 / c, 0.01, keep_fields=True)
        res.append(F.conformal_monitor(st)["scalar_residual"])
    assert res[0] > res[1] > res[2]


def test_conformal_volume_rate():
    u0 = _torus_field(32, lambda x, y: 0.1 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y))
    st = F.run_conformal(u0, 1 / 32, 0.01, keep_fields=True)
    mon = F.conformal_monitor(st)
    assert mon["volume_residual"] <= 1e-6


# -- warped ------------------------------------------------------------------

def _flat_pair():
    return W.ProfilePair(W.power_profile(1.0, 1.0), W.constant_profile(1.0))


def test_warped_flat_is_stationary():
    st = F.warped_state(_flat_pair(), 3, 0.05)
    psi, phi = st.psi.copy(), st.phi.copy()
    for _ in range(10):
        F.warped_step(st)
        assert np.max(np.abs(st.psi - psi)) <= 1e-8
        assert np.max(np.abs(st.phi - phi)) <= 1e-8
    assert np.allclose(st.curvature()["R"], 0.0, atol=1e-10)
    mon = F.warped_monitor(st)
    assert mon["scalar_residual"] <= 1e-8 and abs(mon["volume_rate"]) <= 1e-8


def test_warped_curvature_matches_formula():
    params = W.BuildingBlockParams(3, 2e-5, 0.1)
    pair = W.make_building_block(params)
    st = F.warped_state(pair, 3, 0.004)
    c = st.curvature()
    s = st.arclength()[1:-1]
    keep = (s > 0.02) & (s < 9.5)
    exact = W.scalar_curvature(pair, 3, s[keep])
    scale = np.abs(exact).max()
    assert np.max(np.abs(c["R"][keep] - exact)) <= 1e-2 * scale
    rr, _, _ = W.ricci_components(pair, 3, s[keep])
    assert np.max(np.abs(c["R_ss"][keep] - rr)) <= 1e-2 * scale


def test_warped_arclength_view():
    params = W.BuildingBlockParams(3, 2e-5, 0.1)
    pair = W.make_building_block(params)
    st = F.warped_state(pair, 3, 0.01)
    s, f, phi = st.arclength_profiles(0.05)
    assert np.allclose(f, pair.f(s), atol=1e-4)
    assert np.allclose(phi, pair.phi(s), atol=1e-3)
    prof = st.profiles()
    assert prof.f(np.array([1.0]), 1)[0] == pytest.approx(pair.f(np.array([1.0]), 1)[0], abs=1e-3)


def test_warped_requires_increasing_f():
    bad = W.ProfilePair(W.Profile(lambda r: np.sin(r) + 0.0, np.cos, lambda r: -np.sin(r)),
                        W.constant_profile(1.0))
    with pytest.raises(ValueError):
        F.warped_state(bad, 3, 0.05)
    with pytest.raises(ValueError):
        F.warped_state(_flat_pair(), 3, 0.05, r_max=5.0)


@pytest.fixture(scope="module")
def block_run():
    params = W.BuildingBlockParams(3, 0.05, 0.05)
    st = F.warped_state(F.flow_profiles(params), 3, 0.005)
    F.run_warped(st, steps=50)
    return st


def test_warped_min_R_monotone(block_run):
    assert not block_run.singular
    minR = np.array([s["min_R"] for s in block_run.history])
    assert len(minR) == 51
    assert np.min(np.diff(minR)) >= -1e-6


def test_warped_volume_inequality(block_run):
    assert max(s["vol_excess"] for s in block_run.history[1:]) <= 1e-12


def test_warped_volume_rate(block_run):
    mon = F.warped_monitor(block_run)
    assert mon["volume_rate_rel"] <= 0.02


def test_warped_residual_halves():
    params = W.BuildingBlockParams(3, 0.05, 0.05)
    res = []
    for h in (0.005, 0.005 / np.sqrt(2)):
        st = F.warped_state(F.flow_profiles(params), 3, h)
        F.run_warped(st, t_end=5e-4)
        res.append(F.warped_monitor(st)["scalar_residual"])
    assert res[1] <= 0.5 * res[0]


def test_warped_cfl_enforced():
    st = F.warped_state(_flat_pair(), 3, 0.05)
    with pytest.raises(F.FlowError):
        F.warped_step(st, 2 * st.cfl())
    with pytest.raises(ValueError):
        F.run_warped(st)


def test_history_report_csv(tmp_path, block_run):
    rep = F.history_report(block_run.history)
    rep.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0].split(",") == list(F.FlowReport.COLUMNS)
    assert len(lines) == len(block_run.history) + 1


def test_warped_smooths_eps_feature():
    # |R| on [eps/2, 2 eps] must drop tenfold by t = eps^2
    params = W.BuildingBlockParams(3, 0.05, 0.05)
    eps = params.epsilon
    st = F.warped_state(F.flow_profiles(params), 3, 0.005)
    band = (st.rho[1:-1] >= eps / 2) & (st.rho[1:-1] <= 2 * eps)
    before = np.abs(st.curvature()["R"][band]).max()
    F.run_warped(st, t_end=eps**2)
    after = np.abs(st.curvature()["R"][band]).max()
    assert before / after >= 10
