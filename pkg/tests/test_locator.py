import math

import numpy as np
import pytest

from ilsc.channel import steering_matrix, steering_vector
from ilsc.config import SPEED_OF_LIGHT, profile
from ilsc.dictionary import build_lattice
from ilsc.estimator import SparseChannelEstimate
from ilsc.locator import (LOS, SCATTERER, DegenerateGeometryError, LocationReport, VaRecord,
                          coarse_wls, delay_peak, estimate_num_mpc, extract_and_cluster,
                          geometric_tdoa, locate, map_and_partition, refine_gradient,
                          ring_weight, tdoa_gradient, tdoa_loss, tdoa_measure, unwrap_tdoa,
                          ut_angle_grid, ut_side_match)
from ilsc.scenario import ut_side_angle

from conftest import crandn


# ------------------------------------------------------------------ MDL

def ut_paths(rng, n_paths, n_ut=16, p=72, m_sub=4, snr_db=None):
    """Measurements whose UT side is a sum of on-grid far-field responses."""
    grid = ut_angle_grid(n_ut, 2)
    picks = rng.choice(np.arange(4, len(grid) - 4, 3), n_paths, replace=False)
    y = np.zeros((m_sub, p, n_ut), complex)
    for m in range(m_sub):
        a = steering_matrix(grid[picks], np.zeros(n_paths), n_ut, 0.5, 1.0)
        b = crandn(rng, p, n_paths)
        y[m] = b @ a.conj().T
    if snr_db is not None:
        sig = np.mean(np.abs(y) ** 2)
        y = y + math.sqrt(sig / 10 ** (snr_db / 10)) * crandn(rng, *y.shape)
    return y


@pytest.mark.parametrize("n_paths", [1, 2, 3])
def test_mdl_noiseless_counts(n_paths):
    rng = np.random.default_rng(n_paths)
    for _ in range(10):
        assert estimate_num_mpc(ut_paths(rng, n_paths), 8, 128) == n_paths


def test_mdl_three_paths_at_thirty_db():
    rng = np.random.default_rng(9)
    hits = sum(estimate_num_mpc(ut_paths(rng, 3, snr_db=30), 8, 128) == 3 for _ in range(10))
    assert hits == 10


def test_mdl_pure_noise_is_zero():
    rng = np.random.default_rng(4)
    assert estimate_num_mpc(crandn(rng, 4, 72, 16), 8, 128) == 0


def test_mdl_zero_input():
    assert estimate_num_mpc(np.zeros((3, 10, 8)), 4, 32) == 0


def test_mdl_bad_window():
    with pytest.raises(ValueError):
        estimate_num_mpc(np.zeros((1, 4, 8)), 8, 32)


# ---------------------------------------------------------- anchors

def one_hot_estimate(lattice, indices, n_ut=4, m_sub=3, amps=None, noise=1e-6):
    coeffs = np.zeros((m_sub, lattice.size, n_ut), complex)
    for i, f in enumerate(indices):
        coeffs[:, f, :] = 1.0 if amps is None else amps[i]
    return SparseChannelEstimate(coeffs, np.full(m_sub, noise), np.zeros(lattice.size), "test")


def test_single_peak_extracted(tiny_cfg):
    lat = build_lattice(tiny_cfg)
    f = lat.index(20, 2)
    vas = extract_and_cluster(one_hot_estimate(lat, [f]), lat, 1)
    assert len(vas) == 1 and vas[0].index == f
    th, r = lat.polar(f)
    assert math.isclose(vas[0].theta, float(th)) and math.isclose(vas[0].r, float(r))


def test_two_separated_peaks_recovered(desk_cfg):
    lat = build_lattice(desk_cfg)
    fa, fb = lat.index(100, 3), lat.index(130, 5)
    est = one_hot_estimate(lat, [fa, fb], amps=[1.0, 0.6])
    # spread some leakage around each peak
    for f in (fa, fb):
        est.coeffs[:, f + 1, :] = 0.1
        est.coeffs[:, f - 1, :] = 0.1
    vas = extract_and_cluster(est, lat, 2, seed=3)
    assert sorted(v.index for v in vas) == sorted([fa, fb])


def test_infinite_threshold_gives_empty_set(tiny_cfg):
    lat = build_lattice(tiny_cfg)
    est = one_hot_estimate(lat, [5], noise=math.inf)
    flags = []
    assert extract_and_cluster(est, lat, 1, flags=flags) == [] and flags


def test_cluster_count_reduced_when_few_survivors(tiny_cfg):
    lat = build_lattice(tiny_cfg)
    flags = []
    vas = extract_and_cluster(one_hot_estimate(lat, [3, 40]), lat, 5, flags=flags)
    assert len(vas) == 2 and any("reduced" in f for f in flags)


def test_va_polar_cartesian_consistency():
    v = VaRecord(0, 0.3, 7.0, 1.0)
    assert v.x == 7.0 * math.cos(0.3) and v.y == 7.0 * math.sin(0.3)


def va_at(x, y, energy, ut_theta=None):
    return VaRecord(0, math.atan2(y, x), math.hypot(x, y), energy, ut_theta=ut_theta)


def test_partition_subarray_centres_and_scatterers():
    centres = [va_at(10, 0.01 * k, 10 - k) for k in range(4)]
    scat = [va_at(5, 5, 1), va_at(6, -4, 1), va_at(12, 6, 1)]
    los, sc = map_and_partition(centres + scat, 0.05)
    assert (len(los), len(sc)) == (4, 3)
    assert all(v.cls == LOS for v in los) and all(v.cls == SCATTERER for v in sc)


def test_partition_all_close_and_isolated():
    vas = [va_at(10, 0.001 * k, 5 - k) for k in range(3)]
    assert len(map_and_partition(vas, 1.0)[1]) == 0
    los, sc = map_and_partition([va_at(10, 0, 5), va_at(3, 3, 1)], 0.1)
    assert len(los) == 1 and len(sc) == 1


# ----------------------------------------------------- UT-side matching

@pytest.mark.parametrize("theta_ut", [0.0, 0.41, -0.83])
def test_ut_side_match_recovers_angle(theta_ut, tiny_cfg):
    cfg = tiny_cfg
    lat = build_lattice(cfg)
    est = one_hot_estimate(lat, [7], n_ut=cfg.n_ut, m_sub=cfg.m_subcarriers)
    for m, lam in enumerate(cfg.wavelengths):
        est.coeffs[m, 7, :] = steering_vector("UT", theta_ut, math.inf, lam, cfg.n_ut, cfg.spacing).conj()
    va = VaRecord(7, 0.0, 5.0, 1.0)
    got = ut_side_match(est, [va], cfg.n_ut, cfg.spacing, cfg.wavelengths, 2)[0]
    step = 2 / (2 * cfg.n_ut)
    assert abs(math.sin(got) - math.sin(theta_ut)) <= step
    if theta_ut == 0.0:
        assert got == 0.0
    assert va.ut_theta == got


# ------------------------------------------------------------ coarse w-LS

def synthetic_anchors(ut, phi, scatterers):
    los = [va_at(*ut, 10.0, float(ut_side_angle(ut, phi, np.zeros(2))))]
    sc = [va_at(*s, 1.0, float(ut_side_angle(ut, phi, np.asarray(s)))) for s in scatterers]
    return los, sc


def test_coarse_wls_exact_on_noiseless_bearings():
    los, sc = synthetic_anchors(np.array([10.0, 0.0]), 0.2, [[5.0, 5.0]])
    fix = coarse_wls(los, sc, None)
    assert abs(fix.x - 10) < 1e-9 and abs(fix.y) < 1e-9
    assert fix.residual < 1e-18


def test_coarse_wls_identity_weights_is_ols():
    ut = np.array([14.0, -3.0])
    los, sc = synthetic_anchors(ut, -0.1, [[5, 5], [8, -7], [11, 4]])
    sc[1].theta += 0.02  # make it inconsistent so the weighting matters
    fix = coarse_wls(los, sc, None, weights=np.ones(4))
    phi = fix.phi
    dirs = np.array([phi - math.pi / 2] + [phi - v.ut_theta for v in sc])
    pts = np.array([v.position for v in los + sc])
    h = np.column_stack([np.sin(dirs), -np.cos(dirs)])
    rhs = np.sin(dirs) * pts[:, 0] - np.cos(dirs) * pts[:, 1]
    ols = np.linalg.lstsq(h, rhs, rcond=None)[0]
    assert np.allclose([fix.x, fix.y], ols, atol=1e-10)


def test_weights_shrink_influence_of_far_anchor(desk_cfg):
    lat = build_lattice(desk_cfg)
    ut = np.array([9.0, 2.0])
    los, sc = synthetic_anchors(ut, 0.25, [[4, 3], [6, -3], [15, 9]])
    far = sc[2]
    n = int(np.argmin(np.abs(lat.sin_theta - math.sin(far.theta))))
    rings = lat.ring_distances(n)
    s = int(np.argmin(np.abs(np.where(np.isfinite(rings), rings, np.inf) - far.r)))
    spacing = abs(rings[s] - rings[s + 1]) if s + 1 < len(rings) else abs(rings[s] - rings[s - 1])
    base_w = coarse_wls(los, sc, lat)
    base_o = coarse_wls(los, sc, None)
    far.r += spacing
    moved_w = np.hypot(coarse_wls(los, sc, lat).x - base_w.x, coarse_wls(los, sc, lat).y - base_w.y)
    moved_o = np.hypot(coarse_wls(los, sc, None).x - base_o.x, coarse_wls(los, sc, None).y - base_o.y)
    assert ring_weight(lat, far.theta, far.r) < ring_weight(lat, sc[0].theta, sc[0].r)
    assert moved_w < moved_o


def test_coarse_wls_blocked_los_scan():
    ut = np.array([12.0, 1.0])
    phi = 0.3
    _, sc = synthetic_anchors(ut, phi, [[5, 5], [6, -4], [9, 7], [15, -5]])
    fix = coarse_wls([], sc, None, phi_grid_size=3600)
    assert np.hypot(fix.x - ut[0], fix.y - ut[1]) < 0.1


def test_coarse_wls_degenerate():
    los, _ = synthetic_anchors(np.array([10.0, 0.0]), 0.0, [])
    with pytest.raises(DegenerateGeometryError):
        coarse_wls(los, [], None)
    with pytest.raises(DegenerateGeometryError):
        coarse_wls([], [va_at(5, 5, 1, 0.1)], None)


# -------------------------------------------------------------- delays

def test_geometric_tdoa_example():
    got = geometric_tdoa([10, 0], [[5, 5]])[0]
    assert math.isclose(got, (2 * math.sqrt(50) - 10) / SPEED_OF_LIGHT)
    assert abs(got - 13.81e-9) < 0.01e-9


def delay_estimate(delays, freqs, n_ut=2):
    coeffs = np.zeros((len(freqs), len(delays), n_ut), complex)
    for i, tau in enumerate(delays):
        coeffs[:, i, :] = np.exp(-2j * np.pi * freqs * tau)[:, None]
    return SparseChannelEstimate(coeffs, np.zeros(len(freqs)), np.zeros(len(delays)), "test")


def test_tdoa_measure_matches_geometry():
    bw, m_sub, f_c = 5e9, 128, 47e9
    freqs = f_c - bw / 2 + (np.arange(m_sub) + 0.5) * bw / m_sub
    ut, sc = np.array([10.0, 0.0]), np.array([5.0, 5.0])
    tau_los = 10.0 / SPEED_OF_LIGHT
    tau_sc = (2 * math.sqrt(50)) / SPEED_OF_LIGHT
    est = delay_estimate([tau_los, tau_sc], freqs)
    vas = [VaRecord(0, 0, 10, 1), VaRecord(1, 0, 10, 1)]
    got = tdoa_measure(est, vas[:1], vas[1:], freqs, bw)[0]
    assert abs(got - geometric_tdoa(ut, [sc])[0]) < 1 / (10 * bw)


def test_on_grid_delay_exact():
    bw, m_sub = 1e9, 16
    freqs = 30e9 + np.arange(m_sub) * bw / m_sub
    tau = 37 / (10 * bw)
    est = delay_estimate([0.0, tau], freqs)
    vas = [VaRecord(0, 0, 1, 1), VaRecord(1, 0, 1, 1)]
    assert abs(tdoa_measure(est, vas[:1], vas[1:], freqs, bw)[0] - tau) < 1e-15


def test_equal_delays_give_zero_tdoa():
    freqs = 30e9 + np.arange(8) * 1e8
    est = delay_estimate([3e-9, 3e-9, 3e-9], freqs)
    vas = [VaRecord(i, 0, 1, 1) for i in range(3)]
    got = tdoa_measure(est, vas[:1], vas[1:], freqs, 8e8)
    period = 8 / 8e8
    assert np.all(np.minimum(got, period - got) < 1e-15)


def test_delay_peak_parabola():
    spec = np.array([0.0, 3.0, 4.0, 3.0, 0.0])
    assert delay_peak(spec, 1.0) == 2.0
    assert 2.0 < delay_peak(np.array([0.0, 3.0, 4.0, 3.5, 0.0]), 1.0) < 2.5


def test_unwrap_tdoa():
    assert math.isclose(unwrap_tdoa([0.2], [2.3], 1.0)[0], 2.2)


# ---------------------------------------------------------- refinement

def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = rng.uniform(5, 20, 2)
        s = rng.uniform(-10, 10, (3, 2)) + [10, 0]
        tdoa = geometric_tdoa(p, s) + rng.normal(0, 1e-9, 3)
        g_ut, g_sc, _, _ = tdoa_gradient(p, s, tdoa)
        h = 1e-6
        num = np.array([(tdoa_loss(p + h * e, s, tdoa) - tdoa_loss(p - h * e, s, tdoa)) / (2 * h)
                        for e in np.eye(2)])
        assert np.linalg.norm(num - g_ut) / np.linalg.norm(g_ut) < 1e-6
        for l in range(3):
            num_s = []
            for e in np.eye(2):
                sp, sm = s.copy(), s.copy()
                sp[l] += h * e
                sm[l] -= h * e
                num_s.append((tdoa_loss(p, sp, tdoa) - tdoa_loss(p, sm, tdoa)) / (2 * h))
            assert np.linalg.norm(np.array(num_s) - g_sc[l]) / np.linalg.norm(g_sc[l]) < 1e-6


def test_refinement_leaves_exact_solution_alone():
    p, s = np.array([10.0, 0.0]), np.array([[5.0, 5.0], [7.0, -3.0]])
    res = refine_gradient(p, s, geometric_tdoa(p, s), 5)
    assert np.array_equal(res.ut, p) and np.array_equal(res.scatterers, s)


def test_refinement_converges_from_half_meter_offset():
    p = np.array([12.0, 2.0])
    s = np.array([[5.0, 5.0], [7.0, -3.0], [9.0, 8.0], [14.0, -6.0]])
    tdoa = geometric_tdoa(p, s)
    start = p + [0.3, -0.4]
    res = refine_gradient(start, s, tdoa, t_grd=300, update_scatterers=False)
    assert res.loss_trace[-1] < 1e-6 * res.loss_trace[0]
    assert np.hypot(*(res.ut - p)) < 0.01


def test_loss_trace_non_increasing():
    rng = np.random.default_rng(7)
    for _ in range(100):
        p = rng.uniform(5, 25, 2)
        s = rng.uniform(2, 20, (4, 2))
        tdoa = geometric_tdoa(p, s) + rng.normal(0, 2e-10, 4)
        res = refine_gradient(p + rng.normal(0, 1, 2), s + rng.normal(0, 0.5, (4, 2)), tdoa, 10)
        assert np.all(np.diff(res.loss_trace) <= 0)


def test_refinement_flags_singular_points():
    res = refine_gradient([0.0, 0.0], [[5.0, 5.0]], [1e-9], 1)
    assert any("ut-nondifferentiable" in f for f in res.flags)
    res = refine_gradient([10.0, 0.0], [[0.0, 0.0]], [1e-9], 1)
    assert any("scatterer0" in f for f in res.flags)


# ----------------------------------------------------------- reports

def test_report_round_trip():
    rep = LocationReport(3, [VaRecord(4, 0.1, 7.0, 2.0, LOS, 0.2), VaRecord(9, -0.3, math.inf, 1.0, SCATTERER)],
                         coarse_ut=np.array([1.0, 2.0]), tdoa=np.array([1e-9]),
                         refined_ut=np.array([1.1, 2.1]), refined_scatterers=np.array([[3.0, 4.0]]),
                         loss_trace=[2.0, 1.0], flags=["x"])
    back = LocationReport.from_dict(rep.to_dict())
    assert back.to_dict() == rep.to_dict()
    assert math.isinf(back.vas[1].r)


def test_locate_on_simulated_trial(tiny_cfg):
    from ilsc.channel import build_channel
    from ilsc.dictionary import build_dictionary
    from ilsc.estimator import amp_em_estimate
    from ilsc.pilots import build_pilot_frame, simulate_uplink
    from ilsc.scenario import sample_scenario

    cfg = tiny_cfg.replace(t_iter=60)
    chan = build_channel(sample_scenario(cfg, 1), cfg)
    frame = build_pilot_frame(cfg, 2)
    ms = simulate_uplink(chan, frame, cfg, 3)
    dic = build_dictionary(cfg, "fd")
    est = amp_em_estimate(ms, dic, frame, t_iter=cfg.t_iter)
    rep = locate(est, ms.y, dic.lattice, cfg, seed=0)
    assert rep.n_paths >= 0
    assert np.all(np.diff(rep.loss_trace) <= 0)
    json_ready = rep.to_dict()
    assert set(json_ready) >= {"n_paths", "vas", "coarse_ut", "refined_ut", "tdoa", "flags"}
