import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from virtisac.signal import (C, ChannelTap, GeometryError, IQBuffer, NoiseSpec, Target, TargetScene,
                             add_noise, apply_channel, bistatic_delay, dft, idft, scene_to_taps,
                             signal_power)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
cplx = st.builds(complex, finite, finite)


def direct_dft(x):
    n = x.size
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ x / np.sqrt(n)


def test_types_reject_bad_values():
    with pytest.raises(ValueError):
        IQBuffer(np.zeros(4), 0.0)
    with pytest.raises(ValueError):
        IQBuffer(np.zeros(4), 1.0, carrier=-1.0)
    with pytest.raises(ValueError):
        Target([np.inf, 0.0])
    with pytest.raises(ValueError):
        Target([1.0, 0.0], amplitude=0.0)
    with pytest.raises(ValueError):
        ChannelTap(delay=-1e-9)
    assert len(IQBuffer(np.zeros(0), 1.0)) == 0


def test_bistatic_delay_explicit_legs():
    leg = math.sqrt(5.0 ** 2 + 5.0 ** 2)
    assert bistatic_delay([5, 5], [0, 0], [10, 0]) == pytest.approx(2 * leg / C, rel=1e-15)


def test_scene_to_taps_geometry_and_errors():
    taps = scene_to_taps(TargetScene([Target([5, 5])]), [0, 0], [10, 0], 3e9)
    assert taps[0].delay == pytest.approx(2 * math.sqrt(50) / C)
    assert taps[0].doppler == 0.0
    with pytest.raises(GeometryError):
        scene_to_taps(TargetScene([Target([0, 0])]), [0, 0], [10, 0], 3e9)


@given(st.floats(-30, 30), st.floats(-30, 30), st.floats(1.0, 50.0), st.floats(0.0, 6.28))
def test_doppler_sign_matches_range_rate(vx, vy, r, ang):
    pos = np.array([r * np.cos(ang), r * np.sin(ang)])
    tx, rx, fc = np.array([0.0, 0.0]), np.array([3.0, -2.0]), 3e9
    if np.hypot(*(pos - rx)) < 0.5:
        return
    tgt = Target(pos, [vx, vy])
    tap = scene_to_taps(TargetScene([tgt]), tx, rx, fc)[0]
    dt = 1e-6
    rate = (bistatic_delay(tgt.position_at(dt), tx, rx) - bistatic_delay(tgt.position_at(-dt), tx, rx)) * C / (2 * dt)
    assert tap.doppler == pytest.approx(-fc / C * rate, abs=1e-6 * fc / C * 60)


def test_dft_matches_direct_and_roundtrips():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(257) + 1j * rng.standard_normal(257)
    assert np.allclose(dft(x), direct_dft(x), atol=1e-10)
    assert np.max(np.abs(idft(dft(x)) - x)) < 1e-12
    with pytest.raises(ValueError):
        dft([])


@given(st.integers(1, 4096), st.integers(0, 2 ** 32))
def test_parseval(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    e = np.sum(np.abs(x) ** 2)
    assert abs(np.sum(np.abs(dft(x)) ** 2) - e) <= 1e-12 * e


def test_apply_channel_integer_and_fractional_delay():
    x = np.zeros(16, dtype=complex)
    x[2] = 1.0
    buf = IQBuffer(x, 1.0)
    out = apply_channel(buf, [ChannelTap(3.0, 0.0, 2.0)])
    assert len(out) == 19 and out.samples[5] == 2.0
    assert np.count_nonzero(np.abs(out.samples) > 1e-12) == 1
    assert np.all(apply_channel(buf, []).samples == 0)
    # fractional delay of a band-limited tone is a pure phase shift
    n = np.arange(64)
    tone = IQBuffer(np.exp(2j * np.pi * 4 * n / 64), 1.0)
    frac = apply_channel(tone, [ChannelTap(0.0, 0.0)]).samples
    assert np.allclose(frac, tone.samples)


@given(arrays(complex, st.integers(4, 32), elements=cplx), st.floats(0, 5), st.floats(0, 5),
       st.floats(-0.2, 0.2), cplx, cplx)
def test_channel_linearity(x, d1, d2, nu, g1, g2):
    buf = IQBuffer(x, 1.0)
    t1, t2 = ChannelTap(d1, nu, g1), ChannelTap(d2, 0.0, g2)
    both = apply_channel(buf, [t1, t2]).samples
    a, b = apply_channel(buf, [t1]).samples, apply_channel(buf, [t2]).samples
    n = both.size
    pa = np.zeros(n, complex)
    pb = np.zeros(n, complex)
    pa[:a.size] = a
    pb[:b.size] = b
    scale = max(1.0, np.max(np.abs(both)))
    assert np.max(np.abs(both - pa - pb)) <= 1e-9 * scale


@given(arrays(complex, st.integers(4, 32), elements=cplx), st.integers(0, 6), st.integers(0, 6))
def test_static_tap_commutes_with_shift(x, k, d):
    buf = IQBuffer(x, 1.0)
    shifted = IQBuffer(np.concatenate([np.zeros(k), x]), 1.0)
    a = apply_channel(shifted, [ChannelTap(float(d))]).samples
    b = apply_channel(buf, [ChannelTap(float(d))]).samples
    assert np.allclose(a[k:], b, atol=1e-9) and np.allclose(a[:k], 0)


def test_noise_seeded_and_snr():
    buf = IQBuffer(np.ones(20000), 1.0)
    a = add_noise(buf, NoiseSpec(10.0, 5))
    b = add_noise(buf, NoiseSpec(10.0, 5))
    assert np.array_equal(a.samples, b.samples)
    noise_p = signal_power(a.samples - buf.samples)
    assert 10 * np.log10(1.0 / noise_p) == pytest.approx(10.0, abs=0.1)
    clean = add_noise(buf, NoiseSpec())
    assert np.array_equal(clean.samples, buf.samples) and clean.samples is not buf.samples
    with pytest.raises(ValueError):
        add_noise(IQBuffer(np.zeros(4), 1.0), NoiseSpec(10.0))
    with pytest.raises(ValueError):
        add_noise(IQBuffer(np.zeros(0), 1.0), NoiseSpec(10.0))
