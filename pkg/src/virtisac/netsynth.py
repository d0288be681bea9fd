"""Space-time-frequency synthesis across pulses, hops and nodes.

A hop schedule assigns each pulse a time and a carrier. Each pulse yields one
complex gain after per-hop matched filtering (optionally a handful of
sub-carrier samples inside the hop). From those gains this module builds
synthetic wideband range profiles, slow-time Doppler spectra, joint
delay-velocity surfaces, the delay/velocity Fisher information, and the
noncoherent multistatic likelihood fusion.

Delay in the joint model is referenced to the schedule's mean pulse time, so
that a mirrored carrier pattern decouples delay from velocity exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .signal import C, GeometryError, NoiseSpec, TargetScene, bistatic_delay, complex_noise

SCHEDULE_KINDS = ("linear", "balanced", "random-permutation")


@dataclass(frozen=True)
class HopSchedule:
    times: np.ndarray
    carriers: np.ndarray
    hop_bandwidth: float
    pri: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        f = np.asarray(self.carriers, dtype=float).reshape(-1)
        if t.size != f.size:
            raise ValueError("times and carriers differ in length")
        if t.size < 1:
            raise ValueError("schedule needs at least one pulse")
        if np.any(np.diff(t) <= 0):
            raise ValueError("pulse times must be strictly increasing")
        if np.any(f <= 0):
            raise ValueError("carriers must be positive")
        if not self.hop_bandwidth > 0 or not self.pri > 0:
            raise ValueError("hop_bandwidth and pri must be positive")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "carriers", f)

    @property
    def n_pulses(self) -> int:
        return self.times.size

    @property
    def span(self) -> float:
        return float(self.carriers.max() - self.carriers.min() + self.hop_bandwidth)

    @property
    def cpi(self) -> float:
        return float(self.times[-1] - self.times[0] + self.pri)

    @property
    def t_ref(self) -> float:
        return float(self.times.mean())

    @property
    def center_carrier(self) -> float:
        return float(self.carriers.mean())


def make_schedule(kind: str, n_pulses: int, f_min: float, f_max: float, pri: float,
                  seed: int = 0, hop_bandwidth: Optional[float] = None,
                  t0: float = 0.0) -> HopSchedule:
    """Build a hop schedule.

    ``linear`` ramps the carrier monotonically over ``n_pulses`` evenly spaced
    carriers. ``balanced`` is the mirrored up-down ramp (carrier of pulse m
    equals that of pulse n-1-m), which zeroes the time/carrier covariance;
    for odd n the centre pulse sits at the mean carrier. ``random-permutation``
    shuffles the linear carriers with ``seed``.

    ``hop_bandwidth`` defaults to the linear grid spacing for every kind, so
    schedules over the same band share the same span.
    """
    if n_pulses < 2:
        raise ValueError("n_pulses must be >= 2")
    if not f_max > f_min:
        raise ValueError("f_max must exceed f_min")
    grid = np.linspace(f_min, f_max, n_pulses)
    step = (f_max - f_min) / (n_pulses - 1)
    if kind == "linear":
        carriers = grid
    elif kind == "balanced":
        half = n_pulses // 2
        if half < 2:
            raise ValueError(
                f"balanced schedule needs n_pulses >= 4 for a mirrored ramp spanning "
                f"[f_min, f_max]; got {n_pulses}"
            )
        up = np.linspace(f_min, f_max, half)
        middle = [0.5 * (f_min + f_max)] if n_pulses % 2 else []
        carriers = np.concatenate([up, middle, up[::-1]])
    elif kind == "random-permutation":
        carriers = np.random.default_rng(seed).permutation(grid)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    times = t0 + pri * np.arange(n_pulses)
    return HopSchedule(times, carriers, hop_bandwidth or step, pri)


def single_hop_schedule(carrier: float, hop_bandwidth: float, pri: float) -> HopSchedule:
    """A one-pulse schedule: the single-channel baseline."""
    return HopSchedule(np.array([0.0]), np.array([carrier]), hop_bandwidth, pri)


def constant_carrier_schedule(carrier: float, n_pulses: int, pri: float,
                              hop_bandwidth: float = 1.0e6) -> HopSchedule:
    return HopSchedule(pri * np.arange(n_pulses), np.full(n_pulses, carrier), hop_bandwidth, pri)


def coupling_metric(schedule: HopSchedule) -> float:
    """Pearson correlation of pulse times and carriers (0 when either is constant)."""
    t = schedule.times - schedule.times.mean()
    f = schedule.carriers - schedule.carriers.mean()
    st, sf = np.sqrt(np.sum(t * t)), np.sqrt(np.sum(f * f))
    if st == 0.0 or sf == 0.0:
        return 0.0
    return float(np.clip(np.sum(t * f) / (st * sf), -1.0, 1.0))


# --------------------------------------------------------------------------
# measurement model

@dataclass(frozen=True)
class HopMeasurement:
    gains: np.ndarray
    subcarrier_offsets: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=complex)
        off = np.asarray(self.subcarrier_offsets, dtype=float).reshape(-1)
        if g.ndim == 1:
            g = g[:, None]
        if g.ndim != 2 or g.shape[1] != off.size:
            raise ValueError("gains must be (n_pulses,) or (n_pulses, n_subcarriers)")
        object.__setattr__(self, "gains", g)
        object.__setattr__(self, "subcarrier_offsets", off)

    def __len__(self) -> int:
        return self.gains.shape[0]

    @property
    def h(self) -> np.ndarray:
        """Per-pulse gains at the hop centre (first sub-carrier column if K > 1)."""
        return self.gains[:, self.gains.shape[1] // 2] if self.gains.shape[1] > 1 else self.gains[:, 0]


def subcarrier_offsets(hop_bandwidth: float, n_subcarriers: int) -> np.ndarray:
    k = np.arange(n_subcarriers)
    return (k - (n_subcarriers - 1) / 2.0) * hop_bandwidth / n_subcarriers


def simulate_hops(scene: TargetScene, schedule: HopSchedule, tx_pos, rx_pos,
                  noise: NoiseSpec = NoiseSpec(), n_subcarriers: int = 1) -> HopMeasurement:
    """h_m = sum_targets g exp(-j 2 pi f_m tau(t_m)) (+ noise).

    tau(t_m) is the bistatic delay at the start of pulse m (stop-and-hop).
    With ``n_subcarriers`` > 1 every hop is sampled at that many evenly spaced
    frequencies inside its bandwidth.
    """
    offsets = subcarrier_offsets(schedule.hop_bandwidth, n_subcarriers)
    freqs = schedule.carriers[:, None] + offsets[None, :]
    gains = np.zeros(freqs.shape, dtype=complex)
    for tgt in scene:
        if np.any(tgt.velocity != 0.0):
            tau = np.array([bistatic_delay(tgt.position_at(t), tx_pos, rx_pos)
                            for t in schedule.times])
        else:
            tau = np.full(schedule.n_pulses, bistatic_delay(tgt.position, tx_pos, rx_pos))
        for anchor in (tx_pos, rx_pos):
            if np.hypot(*(tgt.position - np.asarray(anchor, dtype=float))) == 0.0:
                raise GeometryError("target coincides with tx or rx")
        gains += tgt.amplitude * np.exp(-2j * np.pi * freqs * tau[:, None])
    if not noise.noiseless:
        power = float(np.mean(np.abs(gains) ** 2))
        if power == 0.0:
            raise ValueError("SNR undefined for an empty scene")
        rng = np.random.default_rng(noise.seed)
        gains = gains + complex_noise(rng, gains.shape, power * 10.0 ** (-noise.snr_db / 10.0))
    return HopMeasurement(gains, offsets)


# --------------------------------------------------------------------------
# range profile

@dataclass(frozen=True)
class RangeProfile:
    bins: np.ndarray
    bin_width: float
    offset: float = 0.0
    resolution: float = float("nan")

    @property
    def axis(self) -> np.ndarray:
        return self.offset + self.bin_width * np.arange(self.bins.size)

    def peak_range(self) -> float:
        return float(self.axis[int(np.argmax(self.bins))])


def _uniform_grid_indices(freqs: np.ndarray, step: float, rtol: float = 1e-6):
    idx = (freqs - freqs.min()) / step
    rounded = np.rint(idx)
    if np.all(np.abs(idx - rounded) <= rtol * max(1.0, idx.max())):
        return rounded.astype(int)
    return None


def synthesize_range_profile(meas: HopMeasurement, schedule: HopSchedule,
                             oversample: int = 1, max_range: Optional[float] = None) -> RangeProfile:
    """Stitch the hop gains into a range profile of resolution c / (2 span).

    Carriers on a uniform grid (any subset of it) go through a zero-filled
    inverse DFT; otherwise the profile is a direct matched filter over the
    same range grid. Magnitudes are normalised so a unit target peaks at 1.
    ``bin_width`` equals the resolution when ``oversample`` is 1.
    """
    if len(meas) == 0 or meas.gains.size == 0:
        raise ValueError("empty measurement")
    if len(meas) != schedule.n_pulses:
        raise ValueError("measurement and schedule differ in pulse count")
    if oversample < 1:
        raise ValueError("oversample must be >= 1")
    n_sub = meas.gains.shape[1]
    freqs = (schedule.carriers[:, None] + meas.subcarrier_offsets[None, :]).ravel()
    values = meas.gains.ravel()
    step = schedule.hop_bandwidth / n_sub
    resolution = C / (2.0 * schedule.span)
    bin_width = resolution / oversample

    idx = _uniform_grid_indices(freqs, step)
    if idx is not None and max_range is None:
        n_f = int(idx.max()) + 1
        acc = np.zeros(n_f, dtype=complex)
        counts = np.zeros(n_f)
        np.add.at(acc, idx, values)
        np.add.at(counts, idx, 1.0)
        filled = counts > 0
        acc[filled] /= counts[filled]
        n_fft = n_f * oversample
        bins = np.abs(np.fft.ifft(acc, n=n_fft)) * n_fft / filled.sum()
        return RangeProfile(bins, C / (2.0 * step * n_fft), 0.0, resolution)

    if max_range is None:
        diffs = np.diff(np.unique(freqs))
        max_range = C / (2.0 * diffs.min()) if diffs.size else 8.0 * resolution
    ranges = np.arange(0.0, max_range, bin_width)
    bins = kernels.range_matched_filter(freqs, values, ranges) / values.size
    return RangeProfile(bins, bin_width, 0.0, resolution)


def local_maxima(values: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Indices of interior strict-left / non-strict-right local maxima above ``floor``."""
    v = np.asarray(values, dtype=float)
    if v.size < 3:
        return np.array([], dtype=int)
    mid = v[1:-1]
    hit = (mid > v[:-2]) & (mid >= v[2:]) & (mid >= floor)
    return np.nonzero(hit)[0] + 1


def profile_peaks_near(profile: RangeProfile, truths: Sequence[float], rel_floor_db: float = -6.0):
    """Significant local maxima inside [min(truth) - res, max(truth) + res].

    Returns the peak ranges. Maxima below ``rel_floor_db`` of the global
    maximum (sidelobes) are ignored.
    """
    floor = profile.bins.max() * 10.0 ** (rel_floor_db / 20.0)
    res = profile.resolution
    axis = profile.axis
    lo, hi = min(truths) - res, max(truths) + res
    peaks = [axis[i] for i in local_maxima(profile.bins, floor) if lo <= axis[i] <= hi]
    return np.array(peaks)


def resolves(profile: RangeProfile, truths: Sequence[float], rel_floor_db: float = -6.0) -> bool:
    """True when every truth has its own distinct peak within one resolution cell."""
    peaks = profile_peaks_near(profile, truths, rel_floor_db)
    if peaks.size < len(truths):
        return False
    used = set()
    for truth in sorted(truths):
        cands = [i for i, p in enumerate(peaks) if abs(p - truth) <= profile.resolution and i not in used]
        if not cands:
            return False
        used.add(min(cands, key=lambda i: abs(peaks[i] - truth)))
    return True


# --------------------------------------------------------------------------
# slow-time Doppler

@dataclass(frozen=True)
class DopplerSpectrum:
    freqs: np.ndarray
    magnitude: np.ndarray
    resolution: float
    carrier: float

    @property
    def velocities(self) -> np.ndarray:
        return self.freqs * C / (2.0 * self.carrier)

    def peak_frequency(self) -> float:
        return float(self.freqs[int(np.argmax(self.magnitude))])


def slow_time_doppler(meas: HopMeasurement, schedule: HopSchedule, oversample: int = 4) -> DopplerSpectrum:
    """Doppler spectrum of the pulse train at a constant carrier (resolution 1/CPI)."""
    n = len(meas)
    if n < 2:
        raise ValueError("slow-time Doppler needs at least 2 pulses")
    if not np.allclose(schedule.carriers, schedule.carriers[0], rtol=0, atol=1e-9 * schedule.carriers[0]):
        raise ValueError("slow-time Doppler needs a constant carrier")
    if not np.allclose(np.diff(schedule.times), schedule.pri, rtol=1e-9, atol=0):
        raise ValueError("slow-time Doppler needs a uniform PRI")
    n_fft = n * oversample
    spec = np.fft.fftshift(np.fft.fft(meas.gains, n=n_fft, axis=0), axes=0)
    mag = np.sqrt(np.sum(np.abs(spec) ** 2, axis=1) / meas.gains.shape[1]) / n
    freqs = np.fft.fftshift(np.fft.fftfreq(n_fft, d=schedule.pri))
    return DopplerSpectrum(freqs, mag, 1.0 / (n * schedule.pri), float(schedule.carriers[0]))


def doppler_peaks(spec: DopplerSpectrum, rel_floor_db: float = -6.0) -> np.ndarray:
    floor = spec.magnitude.max() * 10.0 ** (rel_floor_db / 20.0)
    return spec.freqs[local_maxima(spec.magnitude, floor)]


# --------------------------------------------------------------------------
# joint delay / velocity

@dataclass(frozen=True)
class DelayVelocityMap:
    delays: np.ndarray
    velocities: np.ndarray
    magnitude: np.ndarray

    def peak(self) -> tuple[int, int]:
        i, j = np.unravel_index(int(np.argmax(self.magnitude)), self.magnitude.shape)
        return int(i), int(j)


def joint_delay_velocity_map(meas: HopMeasurement, schedule: HopSchedule,
                             delay_grid, velocity_grid) -> DelayVelocityMap:
    """Matched filter of the hop gains against exp(-j 2 pi f_m (tau - 2 v t'_m / c)).

    ``tau`` is the delay at the schedule's mean pulse time, t'_m = t_m - t_ref,
    and ``v`` is the closing speed (half the bistatic range rate, negated).
    """
    delays = np.asarray(delay_grid, dtype=float).reshape(-1)
    vels = np.asarray(velocity_grid, dtype=float).reshape(-1)
    if delays.size == 0 or vels.size == 0:
        raise ValueError("empty delay or velocity grid")
    n_sub = meas.gains.shape[1]
    freqs = (schedule.carriers[:, None] + meas.subcarrier_offsets[None, :]).ravel()
    times = np.repeat(schedule.times - schedule.t_ref, n_sub)
    values = meas.gains.ravel()
    mag = kernels.delay_velocity_matched_filter(freqs, times, values, delays, vels) / values.size
    return DelayVelocityMap(delays, vels, mag)


def ridge_correlation(surface: DelayVelocityMap, rel_level: float = 0.5) -> float:
    """Correlation between the grid axes over the peak's main lobe.

    The lobe is the 4-connected region around the global maximum where the
    power stays above ``rel_level`` of the peak power; coordinates are in
    grid-index units, weighted by power.
    """
    power = surface.magnitude ** 2
    thr = rel_level * power.max()
    seed = surface.peak()
    inside = np.zeros(power.shape, dtype=bool)
    stack = [seed]
    while stack:
        i, j = stack.pop()
        if inside[i, j] or power[i, j] < thr:
            continue
        inside[i, j] = True
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = i + di, j + dj
            if 0 <= a < power.shape[0] and 0 <= b < power.shape[1] and not inside[a, b]:
                stack.append((a, b))
    ii, jj = np.nonzero(inside)
    w = power[ii, jj]
    mi, mj = np.average(ii, weights=w), np.average(jj, weights=w)
    cov = np.average((ii - mi) * (jj - mj), weights=w)
    vi = np.average((ii - mi) ** 2, weights=w)
    vj = np.average((jj - mj) ** 2, weights=w)
    if vi == 0.0 or vj == 0.0:
        return 0.0
    return float(cov / np.sqrt(vi * vj))


# --------------------------------------------------------------------------
# Fisher information

@dataclass(frozen=True)
class FimResult:
    """Delay/velocity Fisher information with the unknown carrier phase profiled out.

    ``full`` is the 3x3 information over (delay, velocity, phase) before the
    phase is eliminated; it is additive over disjoint pulse sets that share
    a time reference. ``fim`` is its Schur complement on (delay, velocity).
    """
    fim: np.ndarray
    crlb: Optional[np.ndarray]
    coupling: float
    full: np.ndarray
    singular: bool

    @property
    def delay_variance(self) -> float:
        return float(self.crlb[0, 0]) if self.crlb is not None else float("inf")

    @property
    def velocity_variance(self) -> float:
        return float(self.crlb[1, 1]) if self.crlb is not None else float("inf")


def _phase_jacobian(carriers: np.ndarray, times_rel: np.ndarray) -> np.ndarray:
    d_tau = -2.0 * np.pi * carriers
    d_vel = 4.0 * np.pi * carriers * times_rel / C
    d_phi = np.ones_like(carriers)
    return np.stack([d_tau, d_vel, d_phi], axis=1)


def _finish_fim(full: np.ndarray) -> FimResult:
    # Schur complement in diagonal-normalised coordinates so that cancellation
    # (e.g. zero span: delay indistinguishable from phase) is judged scale-free.
    d = np.diag(full)
    s = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 0.0)
    norm = full * np.outer(s, s)
    eff_n = norm[:2, :2] - np.outer(norm[:2, 2], norm[:2, 2]) if d[2] > 0 else norm[:2, :2].copy()
    eff_n = 0.5 * (eff_n + eff_n.T)
    eig = np.linalg.eigvalsh(eff_n)
    singular = bool(np.any(d[:2] <= 0) or eig.min() <= 1e-10)
    with np.errstate(divide="ignore", invalid="ignore"):
        eff = np.where(np.outer(s[:2], s[:2]) > 0, eff_n / np.outer(s[:2], s[:2]), 0.0)
    denom = np.sqrt(max(eff_n[0, 0], 0.0) * max(eff_n[1, 1], 0.0))
    coupling = float(np.clip(eff_n[0, 1] / denom, -1.0, 1.0)) if denom > 0 else 0.0
    crlb = None if singular else np.linalg.inv(eff)
    return FimResult(eff, crlb, coupling, full, singular)


def fim_delay_velocity(schedule: HopSchedule, snr_db: float, t_ref: Optional[float] = None) -> FimResult:
    """Analytic FIM of the per-pulse phase model under complex Gaussian noise.

    Signal s_m = a exp(j(phi - 2 pi f_m (tau - 2 v (t_m - t_ref) / c))); with
    per-pulse SNR |a|^2 / sigma^2 the information is 2 SNR sum d_m d_m^T over
    the phase derivatives d_m. A single pulse or zero span is flagged singular.
    """
    t_ref = schedule.t_ref if t_ref is None else t_ref
    snr = 10.0 ** (snr_db / 10.0)
    jac = _phase_jacobian(schedule.carriers, schedule.times - t_ref)
    full = 2.0 * snr * jac.T @ jac
    return _finish_fim(full)


def mean_signal(schedule: HopSchedule, delay: float, velocity: float, phase: float,
                t_ref: Optional[float] = None) -> np.ndarray:
    t_ref = schedule.t_ref if t_ref is None else t_ref
    t = schedule.times - t_ref
    return np.exp(1j * (phase - 2.0 * np.pi * schedule.carriers * (delay - 2.0 * velocity * t / C)))


def fim_finite_difference(schedule: HopSchedule, snr_db: float, delay: float = 1e-7,
                          velocity: float = 0.0, rel_step: float = 1e-7,
                          t_ref: Optional[float] = None) -> FimResult:
    """Same FIM from central differences of the mean signal (independent check)."""
    snr = 10.0 ** (snr_db / 10.0)
    theta = np.array([delay, velocity, 0.0])
    scale = np.array([abs(delay) or 1e-7, abs(velocity) or 1.0, 1.0])
    cols = []
    for k in range(3):
        h = rel_step * scale[k]
        up, dn = theta.copy(), theta.copy()
        up[k] += h
        dn[k] -= h
        cols.append((mean_signal(schedule, *up, t_ref=t_ref) - mean_signal(schedule, *dn, t_ref=t_ref)) / (2 * h))
    jac = np.stack(cols, axis=1)
    full = 2.0 * snr * np.real(jac.conj().T @ jac)
    return _finish_fim(full)


# --------------------------------------------------------------------------
# multistatic noncoherent fusion

@dataclass(frozen=True)
class NodeLikelihood:
    """One node's likelihood over half-bistatic range (and optionally closing speed).

    For a colocated node (tx == rx) the range axis is the ordinary one-way
    range. ``likelihood`` is (n_range,) or (n_range, n_velocity).
    """
    tx: np.ndarray
    rx: np.ndarray
    range_axis: np.ndarray
    likelihood: np.ndarray
    velocity_axis: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "tx", np.asarray(self.tx, dtype=float).reshape(2))
        object.__setattr__(self, "rx", np.asarray(self.rx, dtype=float).reshape(2))
        object.__setattr__(self, "range_axis", np.asarray(self.range_axis, dtype=float).reshape(-1))
        object.__setattr__(self, "likelihood", np.asarray(self.likelihood, dtype=float))
        if self.velocity_axis is not None:
            object.__setattr__(self, "velocity_axis", np.asarray(self.velocity_axis, dtype=float).reshape(-1))


@dataclass(frozen=True)
class FusionResult:
    position: np.ndarray
    velocity: Optional[np.ndarray]
    surface: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    degenerate: bool


def gaussian_range_likelihood(measured: float, sigma: float, axis) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    return np.exp(-0.5 * ((axis - measured) / sigma) ** 2)


def _check_node(node: NodeLikelihood) -> None:
    axis = node.range_axis
    if axis.size < 2 or np.any(np.diff(axis) <= 0):
        raise ValueError("range axis must be strictly increasing with >= 2 points")
    expected = (axis.size,) if node.velocity_axis is None else (axis.size, node.velocity_axis.size)
    if node.likelihood.shape != expected:
        raise ValueError(f"inconsistent grids: likelihood shape {node.likelihood.shape}, expected {expected}")
    if np.any(node.likelihood < 0) or not np.all(np.isfinite(node.likelihood)):
        raise ValueError("likelihood values must be finite and non-negative")


def _range_gradient(position, tx, rx) -> np.ndarray:
    """Gradient of half-bistatic range w.r.t. target position."""
    g = np.zeros(2)
    for anchor in (tx, rx):
        d = position - anchor
        n = np.hypot(*d)
        if n > 0:
            g += 0.5 * d / n
    return g


def multistatic_fuse(nodes: Sequence[NodeLikelihood], xs, ys, floor: float = 1e-300,
                     max_condition: float = 100.0) -> FusionResult:
    """Sum per-node log-likelihoods over a shared (x, y) grid; estimate = argmax.

    Phases never cross node boundaries: each node contributes only its own
    (range or range-velocity) likelihood. With range-velocity inputs the
    target velocity is solved by least squares from each node's most likely
    closing speed at the fused position.
    """
    if not nodes:
        raise ValueError("need at least one node")
    has_vel = [n.velocity_axis is not None for n in nodes]
    if any(has_vel) and not all(has_vel):
        raise ValueError("inconsistent grids: mix of range-only and range-velocity nodes")
    for node in nodes:
        _check_node(node)
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    surface = np.zeros((xs.size, ys.size))
    for node in nodes:
        lik = node.likelihood if node.velocity_axis is None else node.likelihood.sum(axis=1)
        peak = lik.max()
        if peak <= 0:
            raise ValueError("likelihood identically zero")
        loglik = np.log(np.maximum(lik / peak, floor))
        surface += kernels.range_loglik_on_grid(xs, ys, node.tx, node.rx, node.range_axis, loglik)
    i, j = np.unravel_index(int(np.argmax(surface)), surface.shape)
    position = np.array([xs[i], ys[j]])

    grads = np.array([_range_gradient(position, n.tx, n.rx) for n in nodes])
    geom = grads.T @ grads
    cond = np.linalg.cond(geom) if np.all(np.isfinite(geom)) else np.inf
    degenerate = len(nodes) < 3 or not cond < max_condition

    velocity = None
    if all(has_vel):
        speeds = []
        for node in nodes:
            r = 0.5 * (np.hypot(*(position - node.tx)) + np.hypot(*(position - node.rx)))
            k = int(np.clip(np.searchsorted(node.range_axis, r), 0, node.range_axis.size - 1))
            speeds.append(node.velocity_axis[int(np.argmax(node.likelihood[k]))])
        # closing speed = -d(half range)/dt = -grad . velocity
        rows = -grads
        if np.linalg.matrix_rank(rows) == 2:
            velocity = np.linalg.lstsq(rows, np.array(speeds), rcond=None)[0]
    return FusionResult(position, velocity, surface, xs, ys, degenerate)
