"""Pure-Python fallback kernels.

Same stepping semantics as the compiled extension so either backend can be
selected at import time.  These are the two inner loops that dominate solver
runtime: RK4 on the obstacle-arc angle ODE and RK4 rollout of the crane.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "python"


def _check_steps(duration, step):
    if step <= 0:
        raise ValueError("step must be positive")
    n = int(round(duration / step))
    n = max(n, 1)
    if abs(n * step - duration) > 1e-9 * max(1.0, abs(duration)):
        raise ValueError(f"step {step} does not divide duration {duration} within round-off")
    return n


def arc_integrate(phi, w, a2, a3, duration, step):
    """RK4 on the circular-arc angle chain (phi'''' = 6 phi'^2 phi'').

    Returns the final (phi, phi', phi'', phi''') after ``duration`` seconds.
    """
    n = _check_steps(duration, step)
    h = duration / n
    for _ in range(n):
        k1_0, k1_1, k1_2, k1_3 = w, a2, a3, 6.0 * w * w * a2
        p2w = w + 0.5 * h * k1_1
        p2a2 = a2 + 0.5 * h * k1_2
        k2_0, k2_1, k2_2, k2_3 = p2w, p2a2, a3 + 0.5 * h * k1_3, 6.0 * p2w * p2w * p2a2
        p3w = w + 0.5 * h * k2_1
        p3a2 = a2 + 0.5 * h * k2_2
        k3_0, k3_1, k3_2, k3_3 = p3w, p3a2, a3 + 0.5 * h * k2_3, 6.0 * p3w * p3w * p3a2
        p4w = w + h * k3_1
        p4a2 = a2 + h * k3_2
        k4_0, k4_1, k4_2, k4_3 = p4w, p4a2, a3 + h * k3_3, 6.0 * p4w * p4w * p4a2
        phi += h / 6.0 * (k1_0 + 2.0 * k2_0 + 2.0 * k3_0 + k4_0)
        w += h / 6.0 * (k1_1 + 2.0 * k2_1 + 2.0 * k3_1 + k4_1)
        a2 += h / 6.0 * (k1_2 + 2.0 * k2_2 + 2.0 * k3_2 + k4_2)
        a3 += h / 6.0 * (k1_3 + 2.0 * k2_3 + 2.0 * k3_3 + k4_3)
    return phi, w, a2, a3


def arc_trace(phi, w, a2, a3, duration, step):
    """As arc_integrate, but returns all (n+1, 4) samples including the start."""
    n = _check_steps(duration, step)
    h = duration / n
    out = np.empty((n + 1, 4))
    out[0] = (phi, w, a2, a3)
    for i in range(n):
        phi, w, a2, a3 = arc_integrate(phi, w, a2, a3, h, h)
        out[i + 1] = (phi, w, a2, a3)
    return out


def crane_rollout(x0, F_half, dt, M, m, g, l, small_angle):
    """Fixed-step RK4 of the crane under a tabulated force profile.

    ``F_half`` holds the force at t_k, t_k + dt/2, t_k + dt for every step
    (length 2n+1); no interpolation happens here, the caller samples the
    closed-form profile directly.  Returns the (n+1, 4) state history
    (p, pdot, theta, thetadot).
    """
    n = (len(F_half) - 1) // 2
    if len(F_half) != 2 * n + 1:
        raise ValueError("force table must have odd length 2n+1")
    out = np.empty((n + 1, 4))
    p, pd, th, thd = (float(v) for v in x0)
    out[0] = (p, pd, th, thd)
    ml = m * l
    ml2 = m * l * l
    Mm = M + m
    for k in range(n):
        F0 = F_half[2 * k]
        Fh = F_half[2 * k + 1]
        F1 = F_half[2 * k + 2]

        def rhs(p_, pd_, th_, thd_, F):
            if small_angle:
                a11, a12 = Mm, ml
                b1 = F + ml * thd_ * thd_ * th_
                b2 = -m * g * l * th_
            else:
                c = math.cos(th_)
                a11, a12 = Mm, ml * c
                b1 = F + ml * thd_ * thd_ * math.sin(th_)
                b2 = -m * g * l * math.sin(th_)
            a21, a22 = a12, ml2
            det = a11 * a22 - a12 * a21
            pdd = (a22 * b1 - a12 * b2) / det
            thdd = (a11 * b2 - a21 * b1) / det
            return pd_, pdd, thd_, thdd

        k1 = rhs(p, pd, th, thd, F0)
        k2 = rhs(p + 0.5 * dt * k1[0], pd + 0.5 * dt * k1[1], th + 0.5 * dt * k1[2], thd + 0.5 * dt * k1[3], Fh)
        k3 = rhs(p + 0.5 * dt * k2[0], pd + 0.5 * dt * k2[1], th + 0.5 * dt * k2[2], thd + 0.5 * dt * k2[3], Fh)
        k4 = rhs(p + dt * k3[0], pd + dt * k3[1], th + dt * k3[2], thd + dt * k3[3], F1)
        p += dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        pd += dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        th += dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        thd += dt / 6.0 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        out[k + 1] = (p, pd, th, thd)
    return out
