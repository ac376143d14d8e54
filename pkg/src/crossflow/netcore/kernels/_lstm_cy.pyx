# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled gate kernels; semantics match _lstm_np exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh

BACKEND = "cython"


cdef inline double _sigmoid(double x) nogil:
    return 1.0 / (1.0 + exp(-x))


def cell_forward(double[:, ::1] z, double[:, ::1] c_prev):
    cdef Py_ssize_t B = z.shape[0]
    cdef Py_ssize_t H = c_prev.shape[1]
    gates_arr = np.empty((B, 4 * H), dtype=np.float64)
    c_arr = np.empty((B, H), dtype=np.float64)
    h_arr = np.empty((B, H), dtype=np.float64)
    cdef double[:, ::1] gates = gates_arr
    cdef double[:, ::1] c = c_arr
    cdef double[:, ::1] h = h_arr
    cdef Py_ssize_t b, j
    cdef double f, i, o, g, cv
    with nogil:
        for b in range(B):
            for j in range(H):
                f = _sigmoid(z[b, j])
                i = _sigmoid(z[b, H + j])
                o = _sigmoid(z[b, 2 * H + j])
                g = tanh(z[b, 3 * H + j])
                cv = f * c_prev[b, j] + i * g
                gates[b, j] = f
                gates[b, H + j] = i
                gates[b, 2 * H + j] = o
                gates[b, 3 * H + j] = g
                c[b, j] = cv
                h[b, j] = o * tanh(cv)
    return gates_arr, c_arr, h_arr


def cell_backward(double[:, ::1] gates, double[:, ::1] c_prev, double[:, ::1] c,
                  double[:, ::1] dh, double[:, ::1] dc_in):
    cdef Py_ssize_t B = gates.shape[0]
    cdef Py_ssize_t H = c_prev.shape[1]
    dz_arr = np.empty((B, 4 * H), dtype=np.float64)
    dc_prev_arr = np.empty((B, H), dtype=np.float64)
    cdef double[:, ::1] dz = dz_arr
    cdef double[:, ::1] dc_prev = dc_prev_arr
    cdef Py_ssize_t b, j
    cdef double f, i, o, g, tc, dc
    with nogil:
        for b in range(B):
            for j in range(H):
                f = gates[b, j]
                i = gates[b, H + j]
                o = gates[b, 2 * H + j]
                g = gates[b, 3 * H + j]
                tc = tanh(c[b, j])
                dc = dh[b, j] * o * (1.0 - tc * tc) + dc_in[b, j]
                dz[b, j] = dc * c_prev[b, j] * f * (1.0 - f)
                dz[b, H + j] = dc * g * i * (1.0 - i)
                dz[b, 2 * H + j] = dh[b, j] * tc * o * (1.0 - o)
                dz[b, 3 * H + j] = dc * i * (1.0 - g * g)
                dc_prev[b, j] = dc * f
    return dz_arr, dc_prev_arr
