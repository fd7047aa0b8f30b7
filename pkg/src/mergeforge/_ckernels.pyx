# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport isnan, fabs, nextafterf
from libc.stdint cimport uint16_t, uint32_t

cnp.import_array()

cdef uint16_t BF16_QNAN = 0x7FC0


cdef union f32bits:
    float f
    uint32_t u


def dot_norms(const double[::1] a, const double[::1] b):
    cdef Py_ssize_t n = a.shape[0], i
    cdef double d0 = 0, d1 = 0, p0 = 0, p1 = 0, q0 = 0, q1 = 0
    if b.shape[0] != n:
        raise ValueError("length mismatch")
    with nogil:
        i = 0
        while i + 1 < n:
            d0 += a[i] * b[i]
            d1 += a[i + 1] * b[i + 1]
            p0 += a[i] * a[i]
            p1 += a[i + 1] * a[i + 1]
            q0 += b[i] * b[i]
            q1 += b[i + 1] * b[i + 1]
            i += 2
        if i < n:
            d0 += a[i] * b[i]
            p0 += a[i] * a[i]
            q0 += b[i] * b[i]
    return d0 + d1, p0 + p1, q0 + q1


def axpby(const double[::1] a, const double[::1] b, double ca, double cb):
    cdef Py_ssize_t n = a.shape[0], i
    if b.shape[0] != n:
        raise ValueError("length mismatch")
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = ca * a[i] + cb * b[i]
    return out


cdef inline uint16_t _rne16(uint32_t bits) noexcept nogil:
    if (bits & 0x7FFFFFFF) > 0x7F800000:
        return BF16_QNAN
    return <uint16_t>((bits + 0x7FFF + ((bits >> 16) & 1)) >> 16)


def f32_to_bf16_bits(x):
    cdef const uint32_t[::1] src = np.ascontiguousarray(x, dtype=np.float32).view(np.uint32)
    cdef Py_ssize_t n = src.shape[0], i
    out = np.empty(n, dtype=np.uint16)
    cdef uint16_t[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _rne16(src[i])
    return out


def f64_to_bf16_bits(x):
    cdef const double[::1] src = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = src.shape[0], i
    cdef double v
    cdef f32bits fb
    out = np.empty(n, dtype=np.uint16)
    cdef uint16_t[::1] o = out
    with nogil:
        for i in range(n):
            v = src[i]
            if isnan(v):
                o[i] = BF16_QNAN
                continue
            fb.f = <float>v
            if <double>fb.f != v:
                # round to odd: truncate toward zero, then set the sticky bit
                if fabs(<double>fb.f) > fabs(v):
                    fb.f = nextafterf(fb.f, 0.0)
                fb.u = fb.u | 1
            o[i] = _rne16(fb.u)
    return out
