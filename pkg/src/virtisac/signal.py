"""Shared signal, scene and channel primitives.

Everything here is a pure function over immutable values. The DFT pair is
unitary (1/sqrt(N) in both directions) and that convention is used by every
other module.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

C = 299_792_458.0


class GeometryError(ValueError):
    """Raised when a geometric quantity is undefined (e.g. coincident points)."""


@dataclass(frozen=True)
class IQBuffer:
    samples: np.ndarray
    sample_rate: float
    carrier: float = 0.0
    t0: float = 0.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=complex).reshape(-1)
        object.__setattr__(self, "samples", samples)
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be > 0, got {self.sample_rate}")
        if self.carrier < 0:
            raise ValueError(f"carrier must be >= 0, got {self.carrier}")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def with_samples(self, samples) -> "IQBuffer":
        return replace(self, samples=samples)


@dataclass(frozen=True)
class Target:
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    amplitude: complex = 1.0

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(2)
        vel = np.asarray(self.velocity, dtype=float).reshape(2)
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel))):
            raise ValueError("target coordinates must be finite")
        if not abs(self.amplitude) > 0:
            raise ValueError("target amplitude magnitude must be > 0")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "velocity", vel)
        object.__setattr__(self, "amplitude", complex(self.amplitude))

    def position_at(self, t: float) -> np.ndarray:
        return self.position + self.velocity * t


@dataclass(frozen=True)
class TargetScene:
    targets: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))

    def __len__(self) -> int:
        return len(self.targets)

    def __iter__(self):
        return iter(self.targets)


@dataclass(frozen=True)
class ChannelTap:
    delay: float
    doppler: float = 0.0
    gain: complex = 1.0

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError(f"tap delay must be >= 0, got {self.delay}")
        if not np.isfinite(abs(self.gain)):
            raise ValueError("tap gain must be finite")


@dataclass(frozen=True)
class NoiseSpec:
    snr_db: float = float("inf")
    seed: int = 0

    @property
    def noiseless(self) -> bool:
        return np.isposinf(self.snr_db)


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = np.hypot(vec[0], vec[1])
    if norm == 0.0:
        raise GeometryError("coincident points: unit vector undefined")
    return vec / norm


def bistatic_delay(position, tx_pos, rx_pos) -> float:
    p = np.asarray(position, dtype=float)
    tx = np.asarray(tx_pos, dtype=float)
    rx = np.asarray(rx_pos, dtype=float)
    return (np.hypot(*(tx - p)) + np.hypot(*(p - rx))) / C


def scene_to_taps(scene: TargetScene, tx_pos, rx_pos, carrier: float) -> list[ChannelTap]:
    """Bistatic delay/Doppler of every target.

    The Doppler sign is positive for a closing target: the velocity is
    projected on the unit vectors pointing from the target towards tx and rx.
    """
    tx = np.asarray(tx_pos, dtype=float)
    rx = np.asarray(rx_pos, dtype=float)
    taps = []
    for tgt in scene:
        u_tx = _unit(tx - tgt.position)
        u_rx = _unit(rx - tgt.position)
        delay = bistatic_delay(tgt.position, tx, rx)
        doppler = carrier / C * (tgt.velocity @ u_tx + tgt.velocity @ u_rx)
        taps.append(ChannelTap(delay=delay, doppler=doppler, gain=tgt.amplitude))
    return taps


def dft(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=complex)
    if x.size < 1:
        raise ValueError("dft needs at least one sample")
    return np.fft.fft(x, norm="ortho")


def idft(spectrum) -> np.ndarray:
    X = np.asarray(spectrum, dtype=complex)
    if X.size < 1:
        raise ValueError("idft needs at least one sample")
    return np.fft.ifft(X, norm="ortho")


def apply_channel(buf: IQBuffer, taps: Sequence[ChannelTap]) -> IQBuffer:
    """Linear time-varying channel sum_i g_i x(t - tau_i) exp(j 2 pi nu_i t).

    Delays are applied in the frequency domain so that fractional delays are
    not rounded; integer-sample delays are exact. Each tap is padded only to
    its own delay, so the result is linear in the tap set. Time ``t`` runs
    from 0 at the first output sample.
    """
    n_in = len(buf)
    fs = buf.sample_rate

    def span(tap):
        return n_in + int(np.ceil(tap.delay * fs - 1e-9))

    n_out = max((span(tap) for tap in taps), default=n_in)
    out = np.zeros(n_out, dtype=complex)
    if not taps or n_in == 0:
        return buf.with_samples(out)

    t = np.arange(n_out) / fs
    for tap in taps:
        n_tap = span(tap)
        padded = np.zeros(n_tap, dtype=complex)
        padded[:n_in] = buf.samples
        n_shift = tap.delay * fs
        if abs(n_shift - round(n_shift)) < 1e-9:
            delayed = np.roll(padded, int(round(n_shift)))
        else:
            freqs = np.fft.fftfreq(n_tap, d=1.0 / fs)
            delayed = np.fft.ifft(np.fft.fft(padded) * np.exp(-2j * np.pi * freqs * tap.delay))
        if tap.doppler != 0.0:
            delayed = delayed * np.exp(2j * np.pi * tap.doppler * t[:n_tap])
        out[:n_tap] += tap.gain * delayed
    return buf.with_samples(out)


def signal_power(samples) -> float:
    x = np.asarray(samples, dtype=complex)
    return float(np.mean(np.abs(x) ** 2))


def complex_noise(rng: np.random.Generator, shape, power: float) -> np.ndarray:
    scale = np.sqrt(power / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def add_noise(buf: IQBuffer, noise: NoiseSpec) -> IQBuffer:
    if len(buf) == 0:
        raise ValueError("cannot add noise to an empty buffer")
    if noise.noiseless:
        return buf.with_samples(buf.samples.copy())
    power = signal_power(buf.samples)
    if power == 0.0:
        raise ValueError("SNR undefined for a zero-power input")
    rng = np.random.default_rng(noise.seed)
    noise_power = power * 10.0 ** (-noise.snr_db / 10.0)
    return buf.with_samples(buf.samples + complex_noise(rng, len(buf), noise_power))
