# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: RK4 on the obstacle-arc angle ODE and the crane rollout.

Stepping semantics mirror _kernels_py exactly.
"""

from libc.math cimport cos, sin

import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


cdef inline int _check_steps(double duration, double step) except -1:
    if step <= 0:
        raise ValueError("step must be positive")
    cdef int n = <int>(duration / step + 0.5)
    if n < 1:
        n = 1
    cdef double scale = duration if duration > 1.0 else 1.0
    if scale < 0:
        scale = -scale
    cdef double err = n * step - duration
    if err < 0:
        err = -err
    if err > 1e-9 * scale:
        raise ValueError(f"step {step} does not divide duration {duration} within round-off")
    return n


def arc_integrate(double phi, double w, double a2, double a3, double duration, double step):
    cdef int n = _check_steps(duration, step)
    cdef double h = duration / n
    cdef double k10, k11, k12, k13, k20, k21, k22, k23
    cdef double k30, k31, k32, k33, k40, k41, k42, k43
    cdef double pw, pa2
    cdef int i
    for i in range(n):
        k10 = w; k11 = a2; k12 = a3; k13 = 6.0 * w * w * a2
        pw = w + 0.5 * h * k11; pa2 = a2 + 0.5 * h * k12
        k20 = pw; k21 = pa2; k22 = a3 + 0.5 * h * k13; k23 = 6.0 * pw * pw * pa2
        pw = w + 0.5 * h * k21; pa2 = a2 + 0.5 * h * k22
        k30 = pw; k31 = pa2; k32 = a3 + 0.5 * h * k23; k33 = 6.0 * pw * pw * pa2
        pw = w + h * k31; pa2 = a2 + h * k32
        k40 = pw; k41 = pa2; k42 = a3 + h * k33; k43 = 6.0 * pw * pw * pa2
        phi += h / 6.0 * (k10 + 2.0 * k20 + 2.0 * k30 + k40)
        w += h / 6.0 * (k11 + 2.0 * k21 + 2.0 * k31 + k41)
        a2 += h / 6.0 * (k12 + 2.0 * k22 + 2.0 * k32 + k42)
        a3 += h / 6.0 * (k13 + 2.0 * k23 + 2.0 * k33 + k43)
    return phi, w, a2, a3


def arc_trace(double phi, double w, double a2, double a3, double duration, double step):
    cdef int n = _check_steps(duration, step)
    cdef double h = duration / n
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n + 1, 4))
    out[0, 0] = phi; out[0, 1] = w; out[0, 2] = a2; out[0, 3] = a3
    cdef int i
    for i in range(n):
        phi, w, a2, a3 = arc_integrate(phi, w, a2, a3, h, h)
        out[i + 1, 0] = phi; out[i + 1, 1] = w; out[i + 1, 2] = a2; out[i + 1, 3] = a3
    return out


cdef inline void _crane_rhs(double p, double pd, double th, double thd, double F,
                            double Mm, double ml, double ml2, double mgl,
                            bint small_angle, double* out) noexcept:
    cdef double a11 = Mm
    cdef double a12, b1, b2, det, pdd, thdd
    if small_angle:
        a12 = ml
        b1 = F + ml * thd * thd * th
        b2 = -mgl * th
    else:
        a12 = ml * cos(th)
        b1 = F + ml * thd * thd * sin(th)
        b2 = -mgl * sin(th)
    det = a11 * ml2 - a12 * a12
    pdd = (ml2 * b1 - a12 * b2) / det
    thdd = (a11 * b2 - a12 * b1) / det
    out[0] = pd; out[1] = pdd; out[2] = thd; out[3] = thdd


def crane_rollout(x0, cnp.ndarray[cnp.float64_t, ndim=1] F_half, double dt,
                  double M, double m, double g, double l, bint small_angle):
    cdef int n = (F_half.shape[0] - 1) // 2
    if F_half.shape[0] != 2 * n + 1:
        raise ValueError("force table must have odd length 2n+1")
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n + 1, 4))
    cdef double p = x0[0], pd = x0[1], th = x0[2], thd = x0[3]
    cdef double Mm = M + m, ml = m * l, ml2 = m * l * l, mgl = m * g * l
    cdef double k1[4]
    cdef double k2[4]
    cdef double k3[4]
    cdef double k4[4]
    cdef double F0, Fh, F1
    cdef int k
    out[0, 0] = p; out[0, 1] = pd; out[0, 2] = th; out[0, 3] = thd
    for k in range(n):
        F0 = F_half[2 * k]; Fh = F_half[2 * k + 1]; F1 = F_half[2 * k + 2]
        _crane_rhs(p, pd, th, thd, F0, Mm, ml, ml2, mgl, small_angle, k1)
        _crane_rhs(p + 0.5 * dt * k1[0], pd + 0.5 * dt * k1[1], th + 0.5 * dt * k1[2],
                   thd + 0.5 * dt * k1[3], Fh, Mm, ml, ml2, mgl, small_angle, k2)
        _crane_rhs(p + 0.5 * dt * k2[0], pd + 0.5 * dt * k2[1], th + 0.5 * dt * k2[2],
                   thd + 0.5 * dt * k2[3], Fh, Mm, ml, ml2, mgl, small_angle, k3)
        _crane_rhs(p + dt * k3[0], pd + dt * k3[1], th + dt * k3[2],
                   thd + dt * k3[3], F1, Mm, ml, ml2, mgl, small_angle, k4)
        p += dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        pd += dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        th += dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        thd += dt / 6.0 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        out[k + 1, 0] = p; out[k + 1, 1] = pd; out[k + 1, 2] = th; out[k + 1, 3] = thd
    return out
