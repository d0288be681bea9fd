"""NumPy reference implementations of the compiled kernels."""
import numpy as np

from .signal import C


def range_matched_filter(freqs, values, ranges):
    phase = np.exp(4j * np.pi * np.outer(ranges, freqs) / C)
    return np.abs(phase @ values)


def delay_velocity_matched_filter(freqs, times, values, delays, velocities):
    # (delay, velocity, pulse) phase cube; chunked over delay to bound memory
    out = np.empty((delays.size, velocities.size))
    vt = 2.0 * np.outer(velocities, times) / C
    for p, tau in enumerate(delays):
        phase = np.exp(2j * np.pi * freqs[None, :] * (tau - vt))
        out[p] = np.abs(phase @ values)
    return out


def range_loglik_on_grid(xs, ys, tx_x, tx_y, rx_x, rx_y, axis, loglik):
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    r = 0.5 * (np.hypot(X - tx_x, Y - tx_y) + np.hypot(X - rx_x, Y - rx_y))
    return np.interp(r, axis, loglik)
