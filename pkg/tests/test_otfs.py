import numpy as np
import pytest
from hypothesis import given, strategies as st

from virtisac import otfs
from virtisac.experiments import time_domain_tap
from virtisac.signal import C, IQBuffer, NoiseSpec, add_noise, dft

M, N, L = 64, 16, 16
FS = 2.0e8
A2_TAPS = [otfs.DDTap(13, 0, 1.0), otfs.DDTap(14, 0, 0.8 * np.exp(1j * np.pi / 3))]


def a2_plan():
    return otfs.design_pilot_plan(M, N, L, 4, (0, 3), delay_offset=12)


def transmit(plan, template, taps, seed, snr_db=20.0):
    rng = np.random.default_rng(seed)
    frame = template.with_symbols(otfs.random_qpsk(template.n_symbols, rng))
    tx = otfs.otfs_modulate(frame, FS, 5e9)
    rx = IQBuffer(otfs.cyclic_channel(tx.samples, taps, plan.M, plan.N), FS, 5e9)
    rx = add_noise(rx, NoiseSpec(snr_db, seed + 1))
    return frame, rx


# -- sampling and folding --------------------------------------------------

def test_sampler_and_capture_invariants():
    s = otfs.SamplerSpec(FS, 16)
    assert s.effective_rate == pytest.approx(12.5e6)
    with pytest.raises(ValueError):
        otfs.SamplerSpec(FS, 0)
    with pytest.raises(ValueError):
        otfs.decimate(IQBuffer(np.zeros(10), FS), otfs.SamplerSpec(FS, 4))
    with pytest.raises(ValueError):
        otfs.FoldedCapture(np.zeros(10), s, (M, N, 0.0))
    with pytest.raises(ValueError):
        otfs.fold_spectrum(np.zeros(10), 4)


@pytest.mark.parametrize("L_", [2, 4, 8, 16])
def test_fold_identity_1024(L_):
    rng = np.random.default_rng(L_)
    x = rng.standard_normal(1024) + 1j * rng.standard_normal(1024)
    lhs = dft(x[::L_])
    assert np.linalg.norm(lhs - otfs.fold_spectrum(dft(x), L_)) <= 1e-9 * np.linalg.norm(lhs)


@given(st.integers(0, 2 ** 32), st.sampled_from([(64, 2), (256, 4), (96, 3), (1024, 16), (12, 12)]),
       st.integers(0, 15))
def test_fold_identity_with_phase(seed, shape, phase):
    n, L_ = shape
    phase %= L_
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    lhs = dft(x[phase::L_])
    rhs = otfs.fold_spectrum(dft(x), L_, phase)
    assert np.linalg.norm(lhs - rhs) <= 1e-9 * np.linalg.norm(lhs)


# -- modem ----------------------------------------------------------------

@given(st.integers(0, 2 ** 32), st.sampled_from([(8, 4), (16, 16), (64, 16), (5, 7)]))
def test_modem_unitary_roundtrip(seed, shape):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    s = otfs.otfs_modulate(X)
    assert abs(np.sum(np.abs(s.samples) ** 2) - np.sum(np.abs(X) ** 2)) <= 1e-12 * np.sum(np.abs(X) ** 2)
    assert np.max(np.abs(otfs.otfs_demodulate(s, *shape) - X)) < 1e-9
    with pytest.raises(ValueError):
        otfs.otfs_demodulate(s.samples[:-1], *shape)


@given(st.integers(0, 31), st.integers(0, 15), st.integers(0, 31), st.integers(0, 15))
def test_single_tap_matches_time_domain(l0, k0, lp, kp):
    Mx, Nx = 32, 16
    X = np.zeros((Mx, Nx), dtype=complex)
    X[lp, kp] = 1.0
    rx = time_domain_tap(otfs.otfs_modulate(X).samples, l0, k0, Mx, Nx)
    Y = otfs.otfs_demodulate(rx, Mx, Nx)
    assert np.max(np.abs(Y - otfs.dd_channel(X, [otfs.DDTap(l0, k0)]))) < 1e-6
    assert np.unravel_index(np.argmax(np.abs(Y)), Y.shape) == ((lp + l0) % Mx, (kp + k0) % Nx)
    assert np.allclose(otfs.cyclic_channel(otfs.otfs_modulate(X).samples, [otfs.DDTap(l0, k0)], Mx, Nx), rx)


def test_dd_channel_rejects_fractional_doppler():
    with pytest.raises(ValueError):
        otfs.dd_channel(np.ones((4, 4)), [otfs.DDTap(0, 0.5)])


# -- pilot plan -----------------------------------------------------------

def test_plan_capacity_and_errors():
    plan = a2_plan()
    assert plan.folded_shape == (4, 16)
    assert [l for _, l, _ in plan.pilot_cells] == [52, 3, 18, 33]
    with pytest.raises(otfs.PlanError, match="capacity"):
        otfs.design_pilot_plan(M, N, L, 5, (0, 3), delay_offset=12)
    with pytest.raises(otfs.PlanError):
        otfs.design_pilot_plan(M, N, L, 4, (0, 16))
    with pytest.raises(otfs.PlanError):
        otfs.design_pilot_plan(M, N, L, 2, (0, 3))
    with pytest.raises(otfs.PlanError):
        otfs.design_pilot_plan(60, N, L, 2, (0, 1))
    with pytest.raises(otfs.PlanError):
        otfs.design_pilot_plan(M, 6, L, 4, (1, 3))


plans = st.sampled_from([
    (64, 16, 16, 4, (0, 3), 12), (64, 16, 8, 8, (1, 7), 0), (32, 16, 4, 4, (2, 3), 5),
    (64, 16, 1, 1, (1, 4), 3), (64, 32, 2, 2, (3, 1), 20), (128, 16, 16, 8, (1, 7), 40),
])


@given(plans)
def test_zones_disjoint_and_isolated(cfg):
    Mx, Nx, Lx, n_p, guard, d0 = cfg
    plan = otfs.design_pilot_plan(Mx, Nx, Lx, n_p, guard, delay_offset=d0)
    zones = [set(z.tolist()) for z in plan.landing_zones]
    for a in range(len(zones)):
        for b in range(a + 1, len(zones)):
            assert not zones[a] & zones[b]
    # each pilot alone through every in-guard tap lands in its own zone only
    for i, (k, l, amp) in enumerate(plan.pilot_cells):
        X = np.zeros((Mx, Nx), dtype=complex)
        X[l, k] = amp
        for d in plan.delay_window:
            for nu in range(-guard[0], guard[0] + 1):
                Z = otfs.observe(X, [otfs.DDTap(d, nu)], Lx, plan.phase)
                e = np.abs(Z.ravel()) ** 2
                owner = (d - d0) % Lx if Lx > 1 else i
                if Lx > 1 and owner != i:
                    assert e.sum() < 1e-20
                    continue
                if e.sum() > 0:
                    assert e[plan.landing_zones[i]].sum() / e.sum() > 1 - 1e-5


@given(plans)
def test_frame_masks_partition(cfg):
    Mx, Nx, Lx, n_p, guard, d0 = cfg
    t = otfs.frame_template(otfs.design_pilot_plan(Mx, Nx, Lx, n_p, guard, delay_offset=d0))
    total = t.pilot_mask.astype(int) + t.guard_mask + t.data_mask
    assert np.all(total == 1)
    assert otfs.otfs_modulate(t).samples.size == Mx * Nx


def test_a2_layout_symbol_count():
    assert otfs.frame_template(a2_plan()).n_symbols == 52


# -- estimation and receivers ---------------------------------------------

def test_two_taps_recovered_and_match_full_rate():
    plan = a2_plan()
    template = otfs.frame_template(plan, with_data=False)
    frame, rx = transmit(plan, template, A2_TAPS, 3, snr_db=30.0)
    cap = otfs.decimate(rx, otfs.SamplerSpec(FS, L), (M, N))
    est = otfs.estimate_from_pilots(cap, plan)
    assert sorted(t.delay_bin for t in est.dd_taps) == [13, 14] and not est.collision
    full = otfs.full_rate_receiver(rx, plan, template)
    assert full.delay_bins == [13, 14]
    for t in est.taps:
        assert t.delay * FS == pytest.approx(round(t.delay * FS))


def test_collision_flag_when_spread_exceeds_guard():
    plan = a2_plan()
    template = otfs.frame_template(plan)
    taps = [otfs.DDTap(13, 0, 1.0), otfs.DDTap(14, 2, 0.8)]
    _, rx = transmit(plan, template, taps, 5, snr_db=30.0)
    res = otfs.iterative_receiver(otfs.decimate(rx, otfs.SamplerSpec(FS, L), (M, N)), plan, template)
    assert res.collision and not res.converged
    assert res.dd_taps  # estimates still returned


@pytest.mark.parametrize("seed", range(8))
def test_iterative_matches_full_rate_oracle(seed):
    plan = a2_plan()
    template = otfs.frame_template(plan)
    frame, rx = transmit(plan, template, A2_TAPS, 100 + seed)
    sub = otfs.iterative_receiver(otfs.decimate(rx, otfs.SamplerSpec(FS, L), (M, N)), plan, template)
    full = otfs.full_rate_receiver(rx, plan, template)
    assert sub.delay_bins == full.delay_bins == [13, 14]
    assert np.array_equal(sub.decoded_symbols, frame.symbols)
    assert np.array_equal(full.decoded_symbols, frame.symbols)
    assert sub.iterations <= 10 and sub.converged


def test_full_rate_consistency_and_monotone_residual():
    plan = otfs.design_pilot_plan(M, N, 1, 1, (1, 3), delay_offset=12)
    template = otfs.frame_template(plan)
    taps = [otfs.DDTap(13, 1, 1.0), otfs.DDTap(15, -1, 0.6j)]
    frame, rx = transmit(plan, template, taps, 8, snr_db=np.inf)
    it = otfs.iterative_receiver(otfs.decimate(rx, otfs.SamplerSpec(FS, 1), (M, N)), plan, template)
    full = otfs.full_rate_receiver(rx, plan, template)
    key = lambda r: sorted((t.delay_bin, t.doppler_bin) for t in r.dd_taps)
    assert key(it) == key(full) == [(13, 1), (15, -1)]
    assert np.array_equal(it.decoded_symbols, full.decoded_symbols)
    assert np.array_equal(it.decoded_symbols, frame.symbols)
    h = it.residual_history
    assert all(b <= a + 1e-9 * max(h[0], 1e-30) for a, b in zip(h[1:], h[2:]))


def test_non_convergence_is_flag():
    plan = a2_plan()
    template = otfs.frame_template(plan)
    _, rx = transmit(plan, template, A2_TAPS, 11)
    res = otfs.iterative_receiver(otfs.decimate(rx, otfs.SamplerSpec(FS, L), (M, N)), plan, template, max_iters=1)
    assert not res.converged and res.iterations == 1
    with pytest.raises(ValueError):
        otfs.iterative_receiver(otfs.decimate(rx, otfs.SamplerSpec(FS, L), (M, N)), plan, template, max_iters=0)


@given(st.floats(-0.45, 0.45))
def test_fractional_doppler_reports_nearest_bin(frac):
    plan = otfs.design_pilot_plan(M, N, 1, 1, (2, 2), delay_offset=4)
    template = otfs.frame_template(plan, with_data=False)
    tx = otfs.otfs_modulate(template)
    rx = IQBuffer(otfs.cyclic_channel(tx.samples, [otfs.DDTap(5, frac, 1.0)], M, N), FS)
    est = otfs.estimate_from_pilots(otfs.decimate(rx, otfs.SamplerSpec(FS, 1), (M, N)), plan, threshold_db=6.0)
    best = max(est.dd_taps, key=lambda t: abs(t.gain))
    assert best.delay_bin == 5 and best.doppler_bin == int(np.round(frac))


def test_range_velocity_profile():
    taps = [otfs.DDTap(13, 0, 1.0), otfs.DDTap(14, 1, 0.5)]
    plan = a2_plan()
    ch = otfs._bins_to_taps(taps, plan, FS)
    rv = otfs.range_velocity_profile(ch, M, N, FS, 5e9)
    assert rv.magnitude.shape == (M, N)
    peaks = rv.peaks()
    assert len(peaks) == 2
    assert rv.ranges[13] == pytest.approx(13 * C / (2 * FS))
    assert otfs.delay_to_range(2 / C) == pytest.approx(1.0)
    assert otfs.doppler_to_velocity(2 * 5e9 / C, 5e9) == pytest.approx(1.0)
