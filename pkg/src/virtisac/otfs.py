"""Sub-Nyquist OTFS acquisition with controlled aliasing.

Conventions
-----------
A DD grid has shape (M, N): row ``l`` is the delay bin, column ``k`` the
Doppler bin. Modulation with rectangular pulses gives the time sample
``s[n*M + l] = S[l, n]`` with ``S = X F_N^H`` (unitary), so a delay of one
bin is a shift of one Nyquist-rate sample.

Keeping every L-th sample (phase p, with L dividing M) keeps exactly the DD
rows ``p, p+L, p+2L, ...``. That row sub-lattice is the *folded grid*
(M/L rows by N columns); in the frequency domain the same operation folds the
spectrum onto M*N/L bins.

Pilot design: pilot i is placed so that a tap of delay ``d0 + i`` (mod L)
moves it onto folded row i; every other delay in the sensing window moves it
onto a discarded row. Each pilot thus owns one landing zone. Data symbols are
repeated over ``dl + 1`` consecutive delay rows so that every tap in the
window lands exactly one copy on the same folded cell.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .signal import IQBuffer, ChannelTap, C

QPSK = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / np.sqrt(2.0)


@dataclass(frozen=True)
class SamplerSpec:
    nyquist_rate: float
    decimation: int = 1
    phase: int = 0

    def __post_init__(self):
        if not self.nyquist_rate > 0:
            raise ValueError("nyquist_rate must be > 0")
        if self.decimation < 1:
            raise ValueError("decimation must be >= 1")
        if not 0 <= self.phase < self.decimation:
            raise ValueError("phase must lie in [0, decimation)")

    @property
    def effective_rate(self) -> float:
        return self.nyquist_rate / self.decimation


@dataclass(frozen=True)
class FoldedCapture:
    samples: np.ndarray
    sampler: SamplerSpec
    frame_meta: Optional[tuple] = None  # (M, N, carrier)

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=complex).reshape(-1))
        if self.frame_meta is not None:
            M, N = self.frame_meta[:2]
            if M * N % self.sampler.decimation or self.samples.size != M * N // self.sampler.decimation:
                raise ValueError("capture length must equal M*N/L")


@dataclass(frozen=True)
class DDTap:
    """Channel tap in grid units: integer delay bin, Doppler bin (integer for exact DD shifts)."""
    delay_bin: int
    doppler_bin: float
    gain: complex = 1.0


# --------------------------------------------------------------------------
# sampling and folding

def decimate(buf: IQBuffer, sampler: SamplerSpec, frame_shape: Optional[tuple] = None,
             carrier: Optional[float] = None) -> FoldedCapture:
    L = sampler.decimation
    if len(buf) % L:
        raise ValueError(f"input length {len(buf)} not divisible by decimation {L}")
    meta = None
    if frame_shape is not None:
        meta = (frame_shape[0], frame_shape[1], buf.carrier if carrier is None else carrier)
    return FoldedCapture(buf.samples[sampler.phase::L].copy(), sampler, meta)


def fold_spectrum(full_spectrum, L: int, phase: int = 0) -> np.ndarray:
    """Unitary spectrum of the decimated signal from the unitary full spectrum.

    out[k] = L^{-1/2} sum_l X[k + l P/L] exp(j 2 pi (k + l P/L) phase / P).
    With the 1/sqrt(N) DFT scaling the fold carries 1/sqrt(L) rather than
    the 1/L of the unnormalised transform.
    """
    X = np.asarray(full_spectrum, dtype=complex).reshape(-1)
    P = X.size
    if L < 1 or P % L:
        raise ValueError(f"spectrum length {P} not divisible by {L}")
    Q = P // L
    if phase:
        X = X * np.exp(2j * np.pi * np.arange(P) * phase / P)
    return X.reshape(L, Q).sum(axis=0) / np.sqrt(L)


# --------------------------------------------------------------------------
# modem and channel

def otfs_modulate(grid, sample_rate: float = 1.0, carrier: float = 0.0) -> IQBuffer:
    X = grid.grid if isinstance(grid, DDFrame) else np.asarray(grid, dtype=complex)
    S = np.fft.ifft(X, axis=1, norm="ortho")
    return IQBuffer(S.reshape(-1, order="F"), sample_rate, carrier)


def otfs_demodulate(buf, M: int, N: int) -> np.ndarray:
    samples = buf.samples if isinstance(buf, IQBuffer) else np.asarray(buf, dtype=complex)
    if samples.size != M * N:
        raise ValueError(f"expected {M * N} samples, got {samples.size}")
    return np.fft.fft(samples.reshape((M, N), order="F"), axis=1, norm="ortho")


def cyclic_channel(samples, taps: Sequence[DDTap], M: int, N: int) -> np.ndarray:
    """r[q] = sum g exp(j 2 pi k (q - l) / MN) s[(q - l) mod MN] (cyclic prefix assumed)."""
    s = np.asarray(samples, dtype=complex)
    MN = M * N
    q = np.arange(MN)
    out = np.zeros(MN, dtype=complex)
    for tap in taps:
        out += tap.gain * np.exp(2j * np.pi * tap.doppler_bin * (q - tap.delay_bin) / MN) * np.roll(s, tap.delay_bin)
    return out


def dd_phase(l, k, l0: int, k0: int, M: int, N: int):
    """Phase picked up at output cell (l, k) from a tap (l0, k0) in the DD domain."""
    l = np.asarray(l)
    k = np.asarray(k)
    ph = np.exp(2j * np.pi * k0 * (l - l0) / (M * N))
    wrap = l < l0
    return np.where(wrap, ph * np.exp(-2j * np.pi * ((k - k0) % N) / N), ph)


def dd_channel(grid, taps: Sequence[DDTap]) -> np.ndarray:
    """Exact DD-domain input-output relation for integer taps."""
    X = np.asarray(grid, dtype=complex)
    M, N = X.shape
    ll, kk = np.meshgrid(np.arange(M), np.arange(N), indexing="ij")
    Y = np.zeros_like(X)
    for tap in taps:
        l0, k0 = int(tap.delay_bin), int(round(tap.doppler_bin))
        if k0 != tap.doppler_bin:
            raise ValueError("dd_channel needs integer Doppler bins; use cyclic_channel")
        Y += tap.gain * dd_phase(ll, kk, l0, k0, M, N) * np.roll(X, (l0, k0), axis=(0, 1))
    return Y


def folded_grid(capture: FoldedCapture, M: int, N: int) -> np.ndarray:
    """Observed DD rows p, p+L, ... from a decimated capture; shape (M/L, N)."""
    L = capture.sampler.decimation
    if M % L:
        raise ValueError(f"decimation {L} must divide M={M}")
    return np.fft.fft(capture.samples.reshape((M // L, N), order="F"), axis=1, norm="ortho")


def observe(grid, taps: Sequence[DDTap], L: int, phase: int = 0) -> np.ndarray:
    """Noiseless folded grid a transmitted DD grid produces through ``taps``."""
    return dd_channel(grid, taps)[phase::L, :]


# --------------------------------------------------------------------------
# pilot plan and frame layout

@dataclass(frozen=True)
class PilotPlan:
    M: int
    N: int
    L: int
    phase: int
    delay_offset: int
    guard_radius: tuple  # (doppler dk, delay dl)
    pilot_cells: tuple  # ((k, l, amplitude), ...)
    landing_zones: tuple  # flat indices into the folded grid, one array per pilot
    hypotheses: tuple  # ((d, nu, pilot, row, col), ...)
    guard_cells: np.ndarray
    data_columns: np.ndarray

    @property
    def folded_shape(self) -> tuple:
        return (self.M // self.L, self.N)

    @property
    def delay_window(self) -> range:
        return range(self.delay_offset, self.delay_offset + self.guard_radius[1] + 1)

    @property
    def pilot_column(self) -> int:
        return self.pilot_cells[0][0]

    def pilot_grid(self) -> np.ndarray:
        X = np.zeros((self.M, self.N), dtype=complex)
        for k, l, amp in self.pilot_cells:
            X[l, k] = amp
        return X


class PlanError(ValueError):
    pass


def _circ_dist(a, b, n):
    d = np.abs(np.asarray(a) - b) % n
    return np.minimum(d, n - d)


def design_pilot_plan(M: int, N: int, L: int, n_pilots: int, guard_radius=(0, 0),
                      delay_offset: int = 0, phase: int = 0, amplitude: float = 1.0,
                      pilot_column: int = 0) -> PilotPlan:
    """Place pilots so their aliases land in disjoint zones of the folded grid.

    ``guard_radius = (dk, dl)``: taps are assumed within delays
    ``delay_offset .. delay_offset + dl`` and Doppler ``-dk .. dk``.
    """
    dk, dl = (int(g) for g in guard_radius)
    if M % L:
        raise PlanError(f"decimation L={L} must divide M={M}")
    if not 0 <= phase < L:
        raise PlanError("sampler phase must lie in [0, L)")
    if dk < 0 or dl < 0 or delay_offset < 0:
        raise PlanError("guard radius and delay offset must be non-negative")
    capacity = M // L
    if n_pilots < 1 or n_pilots > capacity:
        raise PlanError(
            f"n_pilots={n_pilots} exceeds the folded delay capacity M/L={capacity} "
            f"(one landing row per pilot)"
        )
    if L > 1 and dl >= L:
        raise PlanError(f"delay spread dl={dl} must be < L={L}; larger delays alias onto the same pilot")
    needed = min(L, dl + 1)
    if n_pilots < needed:
        raise PlanError(f"delay spread dl={dl} needs at least {needed} pilots to cover every residue mod L={L}")
    if N < 4 * dk + 3:
        raise PlanError(f"Doppler guard dk={dk} needs N >= {4 * dk + 3}; got N={N}")
    if delay_offset + dl >= M:
        raise PlanError("delay window exceeds the frame")

    spacing = L if L > 1 else dl + 2
    rows = [(phase - delay_offset - i + i * spacing) % M for i in range(n_pilots)]
    cells = tuple((pilot_column, r, complex(amplitude)) for r in rows)

    hyps = []
    zones = [set() for _ in range(n_pilots)]
    taken = {}
    for d in range(delay_offset, delay_offset + dl + 1):
        owner = (d - delay_offset) % L
        for nu in range(-dk, dk + 1):
            land = (rows[owner] + d) % M
            if (land - phase) % L:
                raise PlanError("internal: pilot does not land on an observed row")
            j = (land - phase) // L
            col = (pilot_column + nu) % N
            key = (j, col)
            if key in taken:
                raise PlanError(f"landing collision at folded cell {key}")
            taken[key] = (d, nu)
            hyps.append((d, nu, owner, j, col))
            zones[owner].add(j * N + col)
    n_rows = M // L
    pilot_band = np.nonzero(_circ_dist(np.arange(N), pilot_column, N) <= dk + 1)[0]
    zone_flat = set().union(*zones)
    guard = np.array(sorted(j * N + c for j in range(n_rows) for c in pilot_band if j * N + c not in zone_flat))
    data_cols = np.nonzero(_circ_dist(np.arange(N), pilot_column, N) >= 2 * dk + 2)[0]
    return PilotPlan(M, N, L, phase, delay_offset, (dk, dl), cells,
                     tuple(np.array(sorted(z)) for z in zones), tuple(hyps), guard, data_cols)


@dataclass(frozen=True)
class DDFrame:
    grid: np.ndarray
    pilot_mask: np.ndarray
    guard_mask: np.ndarray
    data_mask: np.ndarray
    data_index: np.ndarray  # symbol index per cell, -1 where no data
    n_symbols: int
    constellation: str = "qpsk"

    @property
    def shape(self) -> tuple:
        return self.grid.shape

    @property
    def symbols(self) -> np.ndarray:
        out = np.zeros(self.n_symbols, dtype=complex)
        idx = self.data_index
        out[idx[idx >= 0]] = self.grid[idx >= 0]
        return out

    def data_grid(self, symbols) -> np.ndarray:
        symbols = np.asarray(symbols, dtype=complex)
        X = np.zeros(self.grid.shape, dtype=complex)
        m = self.data_index >= 0
        X[m] = symbols[self.data_index[m]]
        return X

    def pilot_grid(self) -> np.ndarray:
        return np.where(self.pilot_mask, self.grid, 0)

    def with_symbols(self, symbols) -> "DDFrame":
        grid = self.pilot_grid() + self.data_grid(symbols)
        return DDFrame(grid, self.pilot_mask, self.guard_mask, self.data_mask, self.data_index,
                       self.n_symbols, self.constellation)


def frame_template(plan: PilotPlan, with_data: bool = True) -> DDFrame:
    """Pilots from ``plan``; data cells (all zero) laid out for its decimation."""
    M, N, L = plan.M, plan.N, plan.L
    pilot_mask = np.zeros((M, N), dtype=bool)
    for k, l, _ in plan.pilot_cells:
        pilot_mask[l, k] = True
    index = np.full((M, N), -1, dtype=int)
    n_sym = 0
    if with_data:
        dl = plan.guard_radius[1]
        for col in plan.data_columns:
            if L == 1:
                for r in range(M):
                    index[r, col] = n_sym
                    n_sym += 1
            else:
                for j in range(M // L):
                    start = plan.phase + j * L - plan.delay_offset - dl
                    for t in range(dl + 1):
                        index[(start + t) % M, col] = n_sym
                    n_sym += 1
    data_mask = index >= 0
    guard_mask = ~(pilot_mask | data_mask)
    return DDFrame(plan.pilot_grid(), pilot_mask, guard_mask, data_mask, index, n_sym)


def random_qpsk(n: int, rng: np.random.Generator) -> np.ndarray:
    return QPSK[rng.integers(0, 4, n)]


def qpsk_decide(values) -> np.ndarray:
    v = np.asarray(values, dtype=complex)
    return (np.where(v.real >= 0, 1.0, -1.0) + 1j * np.where(v.imag >= 0, 1.0, -1.0)) / np.sqrt(2.0)


# --------------------------------------------------------------------------
# receivers

@dataclass(frozen=True)
class PilotEstimate:
    dd_taps: list
    taps: list
    collision: bool
    noise_floor: float


def _bins_to_taps(dd_taps, plan: PilotPlan, nyquist_rate: float) -> list:
    MN = plan.M * plan.N
    return [ChannelTap(t.delay_bin / nyquist_rate, t.doppler_bin * nyquist_rate / MN, t.gain) for t in dd_taps]


def _noise_floor(Z: np.ndarray, cells: np.ndarray, fallback: np.ndarray) -> float:
    flat = np.abs(Z.ravel()) ** 2
    pool = flat[cells] if cells.size else flat[fallback]
    return float(np.median(pool) / np.log(2.0)) if pool.size else 0.0


def estimate_from_pilots_grid(Z: np.ndarray, plan: PilotPlan, threshold_db: float = 12.0,
                              nyquist_rate: float = 1.0) -> PilotEstimate:
    if threshold_db < 0:
        raise ValueError("threshold_db must be >= 0")
    zone_cells = np.concatenate(plan.landing_zones)
    power = np.abs(Z.ravel()) ** 2
    peak = power[zone_cells].max(initial=0.0)
    ratio = 10.0 ** (threshold_db / 10.0)
    floor = max(_noise_floor(Z, plan.guard_cells, zone_cells), 1e-12 * peak)
    thr = floor * ratio
    guard = power[plan.guard_cells] if plan.guard_cells.size else np.zeros(0)
    # energy outside the zones: either above the floor-based threshold, or
    # (when it has swamped the guard-cell floor) within threshold of the peak
    swamped = bool(guard.size and guard.max() * ratio > peak)
    collision = swamped or bool(guard.size and np.any(guard > thr))
    if swamped:
        thr = peak / ratio
    found = []
    for d, nu, owner, j, col in plan.hypotheses:
        z = Z[j, col]
        if abs(z) ** 2 > thr or (collision and abs(z) ** 2 >= peak > 0):
            _, l_p, amp = plan.pilot_cells[owner]
            land = (l_p + d) % plan.M
            psi = dd_phase(land, col, d, nu, plan.M, plan.N)
            found.append(DDTap(d, nu, complex(z / (amp * psi))))
    return PilotEstimate(found, _bins_to_taps(found, plan, nyquist_rate), collision, floor)


def estimate_from_pilots(capture: FoldedCapture, plan: PilotPlan, threshold_db: float = 12.0) -> PilotEstimate:
    """Detect taps in each landing zone above ``threshold_db`` over the guard-cell noise floor.

    A guard cell above the same threshold means energy escaped its zone
    (channel spread beyond the guard radius) and sets ``collision``.
    """
    Z = folded_grid(capture, plan.M, plan.N)
    return estimate_from_pilots_grid(Z, plan, threshold_db, capture.sampler.nyquist_rate)


def _data_matrix(template: DDFrame, taps: Sequence[DDTap], L: int, phase: int) -> np.ndarray:
    cols = []
    for s in range(template.n_symbols):
        cols.append(observe((template.data_index == s).astype(complex), taps, L, phase).ravel())
    if not cols:
        return np.zeros((template.grid.size // L, 0), dtype=complex)
    return np.stack(cols, axis=1)


def equalize(Z: np.ndarray, template: DDFrame, taps: Sequence[DDTap], L: int, phase: int = 0):
    """Least-squares (zero-forcing) data estimate and hard QPSK decisions.

    With every tap landing a data copy on the same folded cell this is the
    single-tap-per-cell equaliser; at full rate it also undoes delay spread.
    """
    if template.n_symbols == 0:
        return np.zeros(0, dtype=complex), np.zeros(0, dtype=complex)
    y = (Z - observe(template.pilot_grid(), taps, L, phase)).ravel()
    A = _data_matrix(template, taps, L, phase)
    if not taps:
        soft = np.zeros(template.n_symbols, dtype=complex)
    else:
        soft = np.linalg.lstsq(A, y, rcond=None)[0]
    return soft, qpsk_decide(soft)


def _refit_gains(Z, template: DDFrame, decisions, taps, L, phase):
    X = template.pilot_grid() + template.data_grid(decisions)
    cols = [observe(X, [DDTap(t.delay_bin, t.doppler_bin, 1.0)], L, phase).ravel() for t in taps]
    if not cols:
        return list(taps)
    g = np.linalg.lstsq(np.stack(cols, axis=1), Z.ravel(), rcond=None)[0]
    return [DDTap(t.delay_bin, t.doppler_bin, complex(gi)) for t, gi in zip(taps, g)]


@dataclass(frozen=True)
class ReceiverResult:
    dd_taps: list
    taps: list
    decoded_symbols: np.ndarray
    residual_history: list
    iterations: int
    converged: bool
    collision: bool

    @property
    def delay_bins(self) -> list:
        return sorted(t.delay_bin for t in self.dd_taps)


def iterative_receiver(capture: FoldedCapture, plan: PilotPlan, template: DDFrame,
                       max_iters: int = 10, stop_tol: float = 1e-6,
                       threshold_db: float = 12.0) -> ReceiverResult:
    """Alternate pilot-zone estimation, equalisation and data cancellation.

    Each pass re-estimates taps on the capture with the reconstructed data
    removed, refits the tap gains against pilots plus decided data, decides
    the data again and records the energy of capture minus full
    reconstruction. The best-residual state is returned.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    L, p = plan.L, plan.phase
    Z = folded_grid(capture, plan.M, plan.N)
    data_recon = np.zeros_like(Z)
    decisions = np.zeros(template.n_symbols, dtype=complex)
    history = []
    best = None
    converged = False
    collision = False
    it = 0
    for it in range(1, max_iters + 1):
        est = estimate_from_pilots_grid(Z - data_recon, plan, threshold_db, capture.sampler.nyquist_rate)
        collision = est.collision
        taps = est.dd_taps
        if it > 1 and template.n_symbols:
            taps = _refit_gains(Z, template, decisions, taps, L, p)
        _, decisions = equalize(Z, template, taps, L, p)
        data_recon = observe(template.data_grid(decisions), taps, L, p)
        full = observe(template.pilot_grid(), taps, L, p) + data_recon
        energy = float(np.sum(np.abs(Z - full) ** 2))
        history.append(energy)
        if best is None or energy <= best[0]:
            best = (energy, taps, decisions, collision)
        if template.n_symbols == 0:
            converged = True
            break
        if it > 1 and history[-2] - history[-1] < stop_tol * max(history[-2], np.finfo(float).tiny):
            converged = True
            break
    _, taps, decisions, collision = best
    return ReceiverResult(taps, _bins_to_taps(taps, plan, capture.sampler.nyquist_rate), decisions,
                          history, it, converged and not collision, collision)


def full_rate_receiver(signal: IQBuffer, plan: PilotPlan, template: DDFrame,
                       threshold_db: float = 12.0) -> ReceiverResult:
    """Direct Nyquist-rate receiver used as the reference for the folded one.

    Taps: least squares over every (delay, Doppler) hypothesis in the guard
    window against the pilot band (no data lands there), detected against
    the fit residual. Data: least squares over the whole grid.
    """
    M, N = plan.M, plan.N
    Y = otfs_demodulate(signal, M, N)
    band = _circ_dist(np.arange(N), plan.pilot_column, N) <= plan.guard_radius[0] + 1
    mask = np.zeros((M, N), dtype=bool)
    mask[:, band] = True
    hyps = [(d, nu) for d in plan.delay_window for nu in range(-plan.guard_radius[0], plan.guard_radius[0] + 1)]
    P = plan.pilot_grid()
    A = np.stack([dd_channel(P, [DDTap(d, nu, 1.0)])[mask] for d, nu in hyps], axis=1)
    y = Y[mask]
    g = np.linalg.lstsq(A, y, rcond=None)[0]
    resid = y - A @ g
    dof = max(y.size - len(hyps), 1)
    noise = float(np.sum(np.abs(resid) ** 2) / dof)
    col_energy = np.sum(np.abs(A) ** 2, axis=0)
    sig = np.abs(g) ** 2 * col_energy
    floor = max(noise, 1e-12 * sig.max(initial=0.0))
    thr = floor * 10.0 ** (threshold_db / 10.0)
    taps = [DDTap(d, nu, complex(gi)) for (d, nu), gi, s in zip(hyps, g, sig) if s > thr]
    _, decisions = equalize(Y, template, taps, 1, 0)
    full = dd_channel(P + template.data_grid(decisions), taps)
    energy = float(np.sum(np.abs(Y - full) ** 2))
    return ReceiverResult(taps, _bins_to_taps(taps, plan, signal.sample_rate), decisions, [energy], 1, True, False)


# --------------------------------------------------------------------------
# profiles

@dataclass(frozen=True)
class RangeVelocityMap:
    ranges: np.ndarray
    velocities: np.ndarray
    magnitude: np.ndarray  # (len(ranges), len(velocities))

    def peaks(self, rel_floor: float = 0.1) -> list:
        thr = rel_floor * self.magnitude.max(initial=0.0)
        ii, jj = np.nonzero(self.magnitude > thr)
        return sorted(zip(ii.tolist(), jj.tolist()))


def delay_to_range(delay: float) -> float:
    return C * delay / 2.0


def doppler_to_velocity(doppler: float, carrier: float) -> float:
    return C * doppler / (2.0 * carrier)


def range_velocity_profile(taps: Sequence[ChannelTap], M: int, N: int, nyquist_rate: float,
                           carrier: float) -> RangeVelocityMap:
    """Rasterise tap magnitudes on the (range, velocity) bin lattice of the frame.

    Delay bins are 1/nyquist_rate (range c/(2 fs)); Doppler bins are
    fs/(M N), shown centred on zero velocity.
    """
    range_step = C / (2.0 * nyquist_rate)
    doppler_step = nyquist_rate / (M * N)
    k = np.arange(N) - N // 2
    ranges = range_step * np.arange(M)
    velocities = doppler_to_velocity(k * doppler_step, carrier)
    mag = np.zeros((M, N))
    for tap in taps:
        l = int(round(tap.delay * nyquist_rate)) % M
        kk = int(round(tap.doppler / doppler_step))
        j = (kk + N // 2) % N
        mag[l, j] += abs(tap.gain)
    return RangeVelocityMap(ranges, velocities, mag)
