# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GOP layer and Jacobi kernels.

Operator codes match the IntEnum values in ``gopforge.operators``.
"""
import numpy as np
from libc.math cimport exp, sin, cos, sqrt, tanh

cdef double CLAMP = 50.0
cdef double JACOBI_TOL = 1e-14


cdef inline double _clamp(double a) noexcept nogil:
    if a > CLAMP:
        return CLAMP
    if a < -CLAMP:
        return -CLAMP
    return a


cdef inline bint _inside(double a) noexcept nogil:
    return -CLAMP <= a <= CLAMP


cdef inline double _nodal(int op, double w, double y) noexcept nogil:
    if op == 0:
        return w * y
    elif op == 1:
        return exp(_clamp(w * y)) - 1.0
    elif op == 2:
        return sin(w * y)
    elif op == 3:
        return w * (y * y)
    elif op == 4:
        return w * exp(_clamp(-w * y * y))
    else:
        return w * y * exp(_clamp(-w * y * y))


cdef inline void _nodal_d(int op, double w, double y, double* dw, double* dy) noexcept nogil:
    cdef double a, e, c, y2
    if op == 0:
        dw[0] = y
        dy[0] = w
    elif op == 1:
        a = w * y
        e = exp(a) if _inside(a) else 0.0
        dw[0] = y * e
        dy[0] = w * e
    elif op == 2:
        c = cos(w * y)
        dw[0] = y * c
        dy[0] = w * c
    elif op == 3:
        dw[0] = y * y
        dy[0] = 2.0 * w * y
    elif op == 4:
        y2 = y * y
        a = -w * y2
        e = exp(_clamp(a))
        if _inside(a):
            dw[0] = e * (1.0 - w * y2)
            dy[0] = -2.0 * w * w * y * e
        else:
            dw[0] = e
            dy[0] = 0.0
    else:
        y2 = y * y
        a = -w * y2
        e = exp(_clamp(a))
        if _inside(a):
            dw[0] = y * e * (1.0 - w * y2)
            dy[0] = w * e * (1.0 - 2.0 * w * y2)
        else:
            dw[0] = y * e
            dy[0] = w * e


cdef inline double _act(int op, double x) noexcept nogil:
    if op == 0:
        return 1.0 / (1.0 + exp(-_clamp(x)))
    elif op == 1:
        return tanh(_clamp(x))
    return x if x > 0.0 else 0.0


cdef inline double _act_d(int op, double x) noexcept nogil:
    cdef double s
    if op == 0:
        s = 1.0 / (1.0 + exp(-_clamp(x)))
        return s * (1.0 - s)
    elif op == 1:
        s = tanh(_clamp(x))
        return 1.0 - s * s
    return 1.0 if x > 0.0 else 0.0


def gop_forward(double[:, ::1] y, double[:, ::1] w, double[::1] b, int nodal, int pool, int act):
    cdef Py_ssize_t B = y.shape[0], N = y.shape[1], H = w.shape[1]
    cdef Py_ssize_t i, k, h
    cdef double yk, v
    z_arr = np.empty((B, N, H))
    x_arr = np.empty((B, H))
    out_arr = np.empty((B, H))
    cdef double[:, :, ::1] z = z_arr
    cdef double[:, ::1] x = x_arr
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(B):
            for k in range(N):
                yk = y[i, k]
                for h in range(H):
                    z[i, k, h] = _nodal(nodal, w[k, h], yk)
            if pool == 3:
                for h in range(H):
                    x[i, h] = z[i, 0, h]
                for k in range(1, N):
                    for h in range(H):
                        v = z[i, k, h]
                        if v > x[i, h]:
                            x[i, h] = v
            else:
                for h in range(H):
                    x[i, h] = 0.0
                if pool == 0:
                    for k in range(N):
                        for h in range(H):
                            x[i, h] += z[i, k, h]
                elif pool == 1:
                    for k in range(1, N):
                        for h in range(H):
                            x[i, h] += z[i, k - 1, h] * z[i, k, h]
                else:
                    for k in range(2, N):
                        for h in range(H):
                            x[i, h] += z[i, k - 2, h] * z[i, k - 1, h] * z[i, k, h]
            for h in range(H):
                x[i, h] += b[h]
                out[i, h] = _act(act, x[i, h])
    return out_arr, z_arr, x_arr


def gop_backward(double[:, ::1] y, double[:, ::1] w, double[:, :, ::1] z, double[:, ::1] x,
                 double[:, ::1] dout, int nodal, int pool, int act):
    cdef Py_ssize_t B = y.shape[0], N = y.shape[1], H = w.shape[1]
    cdef Py_ssize_t i, k, h
    cdef double yk, g, dzv, pw, py, acc
    dy_arr = np.zeros((B, N))
    dw_arr = np.zeros((N, H))
    db_arr = np.zeros(H)
    dx_arr = np.empty(H)
    amax_arr = np.zeros(H, dtype=np.intp)
    cdef double[:, ::1] dy = dy_arr
    cdef double[:, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef double[::1] dx = dx_arr
    cdef Py_ssize_t[::1] amax = amax_arr
    with nogil:
        for i in range(B):
            for h in range(H):
                dx[h] = dout[i, h] * _act_d(act, x[i, h])
                db[h] += dx[h]
            if pool == 3:
                for h in range(H):
                    amax[h] = 0
                for k in range(1, N):
                    for h in range(H):
                        if z[i, k, h] > z[i, amax[h], h]:
                            amax[h] = k
            for k in range(N):
                yk = y[i, k]
                acc = 0.0
                for h in range(H):
                    if pool == 0:
                        g = 1.0
                    elif pool == 1:
                        g = 0.0
                        if k > 0:
                            g += z[i, k - 1, h]
                        if k < N - 1:
                            g += z[i, k + 1, h]
                    elif pool == 2:
                        g = 0.0
                        if k >= 2:
                            g += z[i, k - 2, h] * z[i, k - 1, h]
                        if k >= 1 and k + 1 < N:
                            g += z[i, k - 1, h] * z[i, k + 1, h]
                        if k + 2 < N:
                            g += z[i, k + 1, h] * z[i, k + 2, h]
                    else:
                        g = 1.0 if amax[h] == k else 0.0
                    dzv = dx[h] * g
                    if dzv == 0.0:
                        continue
                    _nodal_d(nodal, w[k, h], yk, &pw, &py)
                    dw[k, h] += dzv * pw
                    acc += dzv * py
                dy[i, k] = acc
    return dy_arr, dw_arr, db_arr


cdef int _jacobi(double[:, ::1] a, double[:, ::1] v, int max_sweeps, double scale) noexcept nogil:
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t p, q, i
    cdef int sweep
    cdef double off, apq, tau, t, c, s, x1, x2
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for p in range(n):
            for q in range(n):
                if p != q:
                    off += a[p, q] * a[p, q]
        if sqrt(off) <= JACOBI_TOL * scale:
            return sweep
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + sqrt(1.0 + tau * tau))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                for i in range(n):
                    x1 = a[i, p]
                    x2 = a[i, q]
                    a[i, p] = c * x1 - s * x2
                    a[i, q] = s * x1 + c * x2
                for i in range(n):
                    x1 = a[p, i]
                    x2 = a[q, i]
                    a[p, i] = c * x1 - s * x2
                    a[q, i] = s * x1 + c * x2
                a[p, q] = 0.0
                a[q, p] = 0.0
                for i in range(n):
                    x1 = v[i, p]
                    x2 = v[i, q]
                    v[i, p] = c * x1 - s * x2
                    v[i, q] = s * x1 + c * x2
    return -1


def jacobi_eig(double[:, ::1] a, double[:, ::1] v, int max_sweeps):
    """Cyclic Jacobi on symmetric ``a`` in place, rotations accumulated into ``v``.

    Returns the number of sweeps used, or -1 if the budget ran out.
    """
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t p, q
    cdef double scale = 0.0
    cdef int result
    for p in range(n):
        for q in range(n):
            scale += a[p, q] * a[p, q]
    scale = sqrt(scale)
    if scale == 0.0:
        return 0
    with nogil:
        result = _jacobi(a, v, max_sweeps, scale)
    return result
