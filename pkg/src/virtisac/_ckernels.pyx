# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops; must agree with ``_pykernels`` to rounding."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, log, M_PI

cnp.import_array()

cdef double C0 = 299792458.0


def range_matched_filter(double[::1] freqs, double complex[::1] values, double[::1] ranges):
    cdef Py_ssize_t n = freqs.shape[0], m = ranges.shape[0], i, j
    cdef double re, im, ph, vr, vi, k
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    for j in range(m):
        re = 0.0
        im = 0.0
        k = 4.0 * M_PI * ranges[j] / C0
        for i in range(n):
            ph = k * freqs[i]
            vr = values[i].real
            vi = values[i].imag
            re += vr * cos(ph) - vi * sin(ph)
            im += vr * sin(ph) + vi * cos(ph)
        o[j] = sqrt(re * re + im * im)
    return out


def delay_velocity_matched_filter(double[::1] freqs, double[::1] times, double complex[::1] values,
                                  double[::1] delays, double[::1] velocities):
    cdef Py_ssize_t n = freqs.shape[0], a = delays.shape[0], b = velocities.shape[0]
    cdef Py_ssize_t i, p, q
    cdef double re, im, ph, vr, vi
    out = np.empty((a, b), dtype=np.float64)
    cdef double[:, ::1] o = out
    for p in range(a):
        for q in range(b):
            re = 0.0
            im = 0.0
            for i in range(n):
                ph = 2.0 * M_PI * freqs[i] * (delays[p] - 2.0 * velocities[q] * times[i] / C0)
                vr = values[i].real
                vi = values[i].imag
                re += vr * cos(ph) - vi * sin(ph)
                im += vr * sin(ph) + vi * cos(ph)
            o[p, q] = sqrt(re * re + im * im)
    return out


def range_loglik_on_grid(double[::1] xs, double[::1] ys, double tx_x, double tx_y,
                         double rx_x, double rx_y, double[::1] axis, double[::1] loglik):
    cdef Py_ssize_t nx = xs.shape[0], ny = ys.shape[0], na = axis.shape[0]
    cdef Py_ssize_t ix, iy, lo, hi, mid
    cdef double r, dx, dy, w, a0, step
    out = np.empty((nx, ny), dtype=np.float64)
    cdef double[:, ::1] o = out
    for ix in range(nx):
        for iy in range(ny):
            dx = xs[ix] - tx_x
            dy = ys[iy] - tx_y
            r = sqrt(dx * dx + dy * dy)
            dx = xs[ix] - rx_x
            dy = ys[iy] - rx_y
            r = 0.5 * (r + sqrt(dx * dx + dy * dy))
            if r <= axis[0]:
                o[ix, iy] = loglik[0]
            elif r >= axis[na - 1]:
                o[ix, iy] = loglik[na - 1]
            else:
                lo = 0
                hi = na - 1
                while hi - lo > 1:
                    mid = (lo + hi) // 2
                    if axis[mid] <= r:
                        lo = mid
                    else:
                        hi = mid
                w = (r - axis[lo]) / (axis[hi] - axis[lo])
                o[ix, iy] = (1.0 - w) * loglik[lo] + w * loglik[hi]
    return out
