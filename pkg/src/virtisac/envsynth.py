"""Map-assisted virtual anchors: image method, path validation and multilateration.

Geometry is 2-D. A reflector chain is applied to the sensor in order (first
element = first bounce), producing a mirrored image whose straight-line
distance to the target equals the length of the specular path.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .signal import C


@dataclass(frozen=True)
class Segment:
    a: np.ndarray
    b: np.ndarray
    reflection_loss_db: float = 0.0
    blocking: bool = True

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(2)
        b = np.asarray(self.b, dtype=float).reshape(2)
        if np.array_equal(a, b):
            raise ValueError("degenerate segment: a == b")
        if not np.isfinite(self.reflection_loss_db) or self.reflection_loss_db < 0:
            raise ValueError("reflection loss must be finite and >= 0 dB")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def normal(self) -> np.ndarray:
        d = self.b - self.a
        return np.array([-d[1], d[0]]) / np.hypot(*d)


@dataclass(frozen=True)
class Map2D:
    segments: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    def __len__(self) -> int:
        return len(self.segments)


@dataclass(frozen=True)
class VirtualAnchor:
    position: np.ndarray
    segment_chain: tuple = ()
    cumulative_loss_db: float = 0.0

    @property
    def order(self) -> int:
        return len(self.segment_chain)


@dataclass(frozen=True)
class PathSolution:
    valid: bool
    reflection_points: list = field(default_factory=list)
    path_length: float = float("nan")

    @property
    def tof(self) -> float:
        return self.path_length / C


@dataclass(frozen=True)
class RangeMeasurement:
    anchor_id: int
    range: float


@dataclass(frozen=True)
class LocalizationResult:
    position: np.ndarray
    residual_norm: float
    iterations: int
    crlb_trace: float = float("nan")
    degenerate_geometry: bool = False
    non_converged: bool = False


@dataclass(frozen=True)
class LocalizationBound:
    fim: np.ndarray
    covariance: Optional[np.ndarray]
    singular: bool

    @property
    def trace(self) -> float:
        return float(np.trace(self.covariance)) if self.covariance is not None else float("inf")


def reflect_point(p, seg: Segment) -> np.ndarray:
    n = seg.normal
    p = np.asarray(p, dtype=float)
    return p - 2.0 * ((p - seg.a) @ n) * n


def mirror_anchors(map2d: Map2D, sensor, max_order: int) -> list[VirtualAnchor]:
    """Image tree up to ``max_order`` bounces.

    Order-0 is the sensor. An image is never reflected straight back across
    the segment that produced it, and images that coincide (within 1e-9 m)
    with an earlier one are dropped.
    """
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    sensor = np.asarray(sensor, dtype=float).reshape(2)
    anchors = [VirtualAnchor(sensor, (), 0.0)]
    frontier = [anchors[0]]
    for _ in range(max_order):
        nxt = []
        for parent in frontier:
            for idx, seg in enumerate(map2d.segments):
                if parent.segment_chain and parent.segment_chain[-1] == idx:
                    continue
                pos = reflect_point(parent.position, seg)
                if any(np.hypot(*(pos - a.position)) < 1e-9 for a in anchors):
                    continue
                child = VirtualAnchor(pos, parent.segment_chain + (idx,),
                                      parent.cumulative_loss_db + seg.reflection_loss_db)
                anchors.append(child)
                nxt.append(child)
        frontier = nxt
    return anchors


def _cross(u, v) -> float:
    return u[0] * v[1] - u[1] * v[0]


def _intersect(p, q, seg: Segment):
    """Parameters (s along p->q, u along seg) of the line intersection, or None if parallel."""
    r = q - p
    d = seg.b - seg.a
    den = _cross(r, d)
    if den == 0.0:
        return None
    w = seg.a - p
    return _cross(w, d) / den, _cross(w, r) / den


def _leg_blocked(p, q, map2d: Map2D, skip: Sequence[int], eps: float = 1e-9) -> bool:
    for idx, seg in enumerate(map2d.segments):
        if idx in skip or not seg.blocking:
            continue
        hit = _intersect(p, q, seg)
        if hit is None:
            continue
        s, u = hit
        if eps < s < 1.0 - eps and -eps <= u <= 1.0 + eps:
            return True
    return False


def trace_specular_path(anchor: VirtualAnchor, target, map2d: Map2D, eps: float = 1e-9) -> PathSolution:
    """Back-trace the image path from target to sensor and validate it."""
    target = np.asarray(target, dtype=float).reshape(2)
    chain = anchor.segment_chain
    # images[k] is the sensor mirrored through chain[:k]
    images = [None] * (len(chain) + 1)
    images[-1] = anchor.position
    for k in range(len(chain), 0, -1):
        images[k - 1] = reflect_point(images[k], map2d.segments[chain[k - 1]])

    points = []
    end = target
    for k in range(len(chain), 0, -1):
        seg = map2d.segments[chain[k - 1]]
        hit = _intersect(images[k], end, seg)
        if hit is None:
            return PathSolution(False)
        s, u = hit
        if not (eps < s < 1.0 - eps and eps < u < 1.0 - eps):
            return PathSolution(False)
        end = images[k] + s * (end - images[k])
        points.append(end)
    points.reverse()

    nodes = [images[0]] + points + [target]
    for k in range(len(nodes) - 1):
        skip = [chain[i] for i in (k - 1, k) if 0 <= i < len(chain)]
        if _leg_blocked(nodes[k], nodes[k + 1], map2d, skip):
            return PathSolution(False)
    return PathSolution(True, points, float(np.hypot(*(anchor.position - target))))


def measure_ranges(target, anchors: Sequence[VirtualAnchor], map2d: Map2D,
                   sigma_range: float, seed: int = 0) -> list[RangeMeasurement]:
    """One-way image-method ranges with Gaussian error; invalid anchors omitted."""
    rng = np.random.default_rng(seed)
    out = []
    for i, anchor in enumerate(anchors):
        path = trace_specular_path(anchor, target, map2d)
        if path.valid:
            out.append(RangeMeasurement(i, path.path_length))
    if not out:
        raise ValueError("no valid propagation path to the target")
    noise = rng.normal(0.0, sigma_range, len(out)) if sigma_range > 0 else np.zeros(len(out))
    return [RangeMeasurement(m.anchor_id, m.range + e) for m, e in zip(out, noise)]


def one_way_range(round_trip_tof) -> np.ndarray:
    """Monostatic round-trip ToF to the one-way image distance used by ``localize``."""
    return C * np.asarray(round_trip_tof, dtype=float) / 2.0


def associate_ranges(measured: Sequence[float], anchors: Sequence[VirtualAnchor], prior,
                     gate: float) -> list[RangeMeasurement]:
    """Label unassigned ranges by nearest predicted range from a coarse prior.

    Pairs are taken greedily in order of |measured - predicted|; each anchor
    and each measurement is used at most once and pairs beyond ``gate``
    (meters) are dropped.
    """
    if not gate > 0:
        raise ValueError("gate must be > 0")
    prior = np.asarray(prior, dtype=float).reshape(2)
    pred = np.array([np.hypot(*(a.position - prior)) for a in anchors])
    meas = np.asarray(measured, dtype=float).reshape(-1)
    diff = np.abs(meas[:, None] - pred[None, :])
    pairs = sorted((diff[i, j], i, j) for i in range(meas.size) for j in range(pred.size) if diff[i, j] <= gate)
    used_m, used_a, out = set(), set(), []
    for _, i, j in pairs:
        if i in used_m or j in used_a:
            continue
        used_m.add(i)
        used_a.add(j)
        out.append(RangeMeasurement(j, float(meas[i])))
    return sorted(out, key=lambda m: m.anchor_id)


def _circle_intersections(c0, r0, c1, r1):
    d = np.hypot(*(c1 - c0))
    if d == 0 or d > r0 + r1 or d < abs(r0 - r1):
        return []
    a = (r0 ** 2 - r1 ** 2 + d ** 2) / (2 * d)
    h = np.sqrt(max(r0 ** 2 - a ** 2, 0.0))
    mid = c0 + a * (c1 - c0) / d
    perp = np.array([-(c1 - c0)[1], (c1 - c0)[0]]) / d
    return [mid + h * perp, mid - h * perp]


def initial_guess(positions: np.ndarray, ranges: np.ndarray) -> np.ndarray:
    """Best-fitting pairwise ring intersection; anchor centroid if rings never meet."""
    cands = []
    for i in range(len(ranges)):
        for j in range(i + 1, len(ranges)):
            cands += _circle_intersections(positions[i], ranges[i], positions[j], ranges[j])
    if not cands:
        return positions.mean(axis=0)
    cost = [np.sum((np.hypot(*(c - positions).T) - ranges) ** 2) for c in cands]
    return np.asarray(cands[int(np.argmin(cost))])


def localize(ranges: Sequence[RangeMeasurement], anchors: Sequence[VirtualAnchor],
             init=None, sigma_range: Optional[float] = None, max_iter: int = 50,
             step_tol: float = 1e-6, max_condition: float = 1e8) -> LocalizationResult:
    """Gauss-Newton on r_i = ||p - anchor_i|| with step halving."""
    if len(ranges) < 2:
        raise ValueError("localization needs at least 2 range measurements")
    pos = np.array([anchors[m.anchor_id].position for m in ranges])
    r = np.array([m.range for m in ranges])
    p = initial_guess(pos, r) if init is None else np.asarray(init, dtype=float).reshape(2)

    def residual(x):
        return np.hypot(*(x - pos).T) - r

    res = residual(p)
    cost = res @ res
    converged = False
    degenerate = False
    it = 0
    for it in range(1, max_iter + 1):
        diff = p - pos
        dist = np.hypot(*diff.T)
        dist[dist == 0] = np.finfo(float).tiny
        jac = diff / dist[:, None]
        normal = jac.T @ jac
        if np.linalg.cond(normal) > max_condition:
            degenerate = True
            break
        step = -np.linalg.solve(normal, jac.T @ res)
        for _ in range(21):
            trial = p + step
            tres = residual(trial)
            if tres @ tres <= cost:
                break
            step = 0.5 * step
        p, res, cost = trial, tres, tres @ tres
        if np.hypot(*step) < step_tol:
            converged = True
            break

    crlb_trace = float("nan")
    if sigma_range is not None and not degenerate:
        crlb_trace = localization_crlb([anchors[m.anchor_id] for m in ranges], p, sigma_range).trace
    return LocalizationResult(p, float(np.sqrt(cost)), it, crlb_trace, degenerate,
                              not converged and not degenerate)


def localization_crlb(anchors: Sequence[VirtualAnchor], target, sigma_range: float) -> LocalizationBound:
    if not sigma_range > 0:
        raise ValueError("sigma_range must be > 0")
    target = np.asarray(target, dtype=float).reshape(2)
    fim = np.zeros((2, 2))
    for anchor in anchors:
        d = target - np.asarray(getattr(anchor, "position", anchor), dtype=float)
        u = d / np.hypot(*d)
        fim += np.outer(u, u)
    fim /= sigma_range ** 2
    eig = np.linalg.eigvalsh(fim)
    singular = bool(eig.min() <= 1e-12 * max(eig.max(), np.finfo(float).tiny))
    return LocalizationBound(fim, None if singular else np.linalg.inv(fim), singular)


@dataclass(frozen=True)
class IntegrationBudget:
    gain_db: float
    effective_snr_db: float


def integration_gain(n_pulses: int, reflection_loss_db: float, snr_in_db: float) -> IntegrationBudget:
    if n_pulses < 1:
        raise ValueError("n_pulses must be >= 1")
    gain = 10.0 * np.log10(n_pulses)
    return IntegrationBudget(float(gain), float(snr_in_db - reflection_loss_db + gain))


def min_pulses_for_detection(reflection_loss_db: float, snr_in_db: float, threshold_db: float) -> int:
    """Smallest pulse count whose coherent gain lifts a reflected return to ``threshold_db``."""
    needed_db = threshold_db - snr_in_db + reflection_loss_db
    if needed_db <= 0:
        return 1
    return int(np.ceil(10.0 ** (needed_db / 10.0) - 1e-9))


def select_reflector(map2d: Map2D, bs, ue):
    """LOS if clear, else the valid first-order path with least loss + 20log10(length)."""
    anchors = mirror_anchors(map2d, bs, 1)
    los = trace_specular_path(anchors[0], ue, map2d)
    if los.valid:
        return anchors[0], los
    best = None
    for anchor in anchors[1:]:
        path = trace_specular_path(anchor, ue, map2d)
        if not path.valid:
            continue
        cost = anchor.cumulative_loss_db + 20.0 * np.log10(path.path_length)
        if best is None or cost < best[0]:
            best = (cost, anchor, path)
    return None if best is None else best[1:]
