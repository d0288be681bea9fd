"""Kernel dispatch: the compiled extension when importable, NumPy otherwise.

The choice is made once at import; ``use_backend`` switches it explicitly
(tests and the benchmark compare both).
"""
import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

_active = _BACKENDS.get("cython", _pykernels)


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def backend() -> str:
    return "cython" if _active is _ckernels and _ckernels is not None else "python"


def use_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    _active = _BACKENDS[name]


def range_matched_filter(freqs, values, ranges) -> np.ndarray:
    """|sum_i v_i exp(+j 4 pi f_i r / c)| for every range r."""
    return _active.range_matched_filter(
        np.ascontiguousarray(freqs, dtype=float),
        np.ascontiguousarray(values, dtype=complex),
        np.ascontiguousarray(ranges, dtype=float),
    )


def delay_velocity_matched_filter(freqs, times, values, delays, velocities) -> np.ndarray:
    """|sum_i v_i exp(+j 2 pi f_i (tau - 2 v t_i / c))| on a (delay, velocity) grid."""
    return _active.delay_velocity_matched_filter(
        np.ascontiguousarray(freqs, dtype=float),
        np.ascontiguousarray(times, dtype=float),
        np.ascontiguousarray(values, dtype=complex),
        np.ascontiguousarray(delays, dtype=float),
        np.ascontiguousarray(velocities, dtype=float),
    )


def range_loglik_on_grid(xs, ys, tx, rx, axis, loglik) -> np.ndarray:
    """Interpolate a half-bistatic-range log-likelihood onto an (x, y) grid."""
    return _active.range_loglik_on_grid(
        np.ascontiguousarray(xs, dtype=float),
        np.ascontiguousarray(ys, dtype=float),
        float(tx[0]), float(tx[1]), float(rx[0]), float(rx[1]),
        np.ascontiguousarray(axis, dtype=float),
        np.ascontiguousarray(loglik, dtype=float),
    )
