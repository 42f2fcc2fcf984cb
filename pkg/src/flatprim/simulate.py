"""Open-loop crane simulation (full and small-angle dynamics) and the
discrete-LQ cost oracle.

The oracle discretizes the top-of-chain control as piecewise constant,
propagates the integrator chain exactly per interval, and solves the
resulting equality-constrained QP; it is the independent cost reference for
the analytic solvers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .flat_model import CraneParams, crane_from_flat


@dataclass(frozen=True)
class SimConfig:
    dt: float
    horizon: float
    integrator: str = "rk4"
    initial_state: tuple = (0.0, 0.0, 0.0, 0.0)  # p, pdot, theta, thetadot

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        n = round(self.horizon / self.dt)
        if abs(n * self.dt - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise ValueError("horizon must be a multiple of dt within round-off")
        if self.integrator != "rk4":
            raise ValueError("only fixed-step rk4 is supported")

    @property
    def num_steps(self):
        return max(1, round(self.horizon / self.dt))


@dataclass
class SimResult:
    times: np.ndarray
    states: np.ndarray          # (n+1, 4): p, pdot, theta, thetadot
    forces: np.ndarray          # (n+1,)
    diagnostics: dict = field(default_factory=dict)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "p", "pdot", "theta", "thetadot", "F"])
            for t, x, F in zip(self.times, self.states, self.forces):
                w.writerow([f"{t:.12g}"] + [f"{v:.17g}" for v in x] + [f"{F:.17g}"])


def crane_rhs_full(state, F, params):
    """Cart-pendulum dynamics; the 2x2 mass matrix is always invertible
    (determinant >= M m l^2 > 0)."""
    p, pd, th, thd = state
    M, m, g, l = params.M, params.m, params.g, params.l
    c, s = math.cos(th), math.sin(th)
    a11, a12, a22 = M + m, m * l * c, m * l * l
    b1 = F + m * l * thd * thd * s
    b2 = -m * g * l * s
    det = a11 * a22 - a12 * a12
    pdd = (a22 * b1 - a12 * b2) / det
    thdd = (a11 * b2 - a12 * b1) / det
    return np.array([pd, pdd, thd, thdd])


def crane_rhs_smallangle(state, F, params):
    """Same structure with sin(theta) -> theta, cos(theta) -> 1."""
    p, pd, th, thd = state
    M, m, g, l = params.M, params.m, params.g, params.l
    a11, a12, a22 = M + m, m * l, m * l * l
    b1 = F + m * l * thd * thd * th
    b2 = -m * g * l * th
    det = a11 * a22 - a12 * a12
    pdd = (a22 * b1 - a12 * b2) / det
    thdd = (a11 * b2 - a12 * b1) / det
    return np.array([pd, pdd, thd, thdd])


def crane_energy(state, params):
    """Total mechanical energy of the full model (conserved when F = 0)."""
    p, pd, th, thd = state
    M, m, g, l = params.M, params.m, params.g, params.l
    return (0.5 * (M + m) * pd ** 2 + 0.5 * m * l * l * thd ** 2
            + m * l * pd * thd * math.cos(th) + m * g * l * (1.0 - math.cos(th)))


def rollout(rhs, force, config, params=None):
    """Fixed-step RK4 under an open-loop force profile.

    ``force`` is evaluated on the grid and at half-steps directly (closed-form
    profiles, no interpolation).  The two crane right-hand sides dispatch to
    the compiled kernel; any other callable runs through a generic loop.
    """
    n = config.num_steps
    dt = config.dt
    times = np.arange(n + 1) * dt
    if callable(force):
        half_ts = np.arange(2 * n + 1) * (dt / 2.0)
        try:
            F_half = np.asarray(force(half_ts), dtype=float)
            if F_half.shape != half_ts.shape:
                raise TypeError
        except TypeError:
            F_half = np.array([float(force(t)) for t in half_ts])
    else:
        F_half = np.asarray(force, dtype=float)
        if F_half.shape != (2 * n + 1,):
            raise ValueError("tabulated force must have length 2n+1")
    x0 = np.asarray(config.initial_state, dtype=float)
    if rhs in (crane_rhs_full, crane_rhs_smallangle):
        if params is None:
            raise ValueError("crane rollouts need params")
        states = kernels.crane_rollout(x0, F_half, dt, params.M, params.m,
                                       params.g, params.l, rhs is crane_rhs_smallangle)
    else:
        states = np.empty((n + 1, x0.size))
        states[0] = x0
        x = x0.copy()
        for k in range(n):
            F0, Fh, F1 = F_half[2 * k], F_half[2 * k + 1], F_half[2 * k + 2]
            k1 = rhs(x, F0, params)
            k2 = rhs(x + 0.5 * dt * k1, Fh, params)
            k3 = rhs(x + 0.5 * dt * k2, Fh, params)
            k4 = rhs(x + dt * k3, F1, params)
            x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            states[k + 1] = x
    return SimResult(times, np.asarray(states), F_half[::2].copy())


def open_loop_force(traj, params):
    """Force profile reproducing a flat reference on the small-angle model."""

    def force(ts):
        scalar = np.isscalar(ts)
        arr = np.atleast_1d(np.asarray(ts, dtype=float))
        ddy = traj.eval_grid(arr, 2)
        d3y = traj.eval_grid(arr, 3)
        d4y = traj.eval_grid(arr, 4)
        M, m, g, l = params.M, params.m, params.g, params.l
        F = (M + m) * (ddy + (l / g) * d4y) + m * l * (-d4y / g + (ddy / g) * (d3y / g) ** 2)
        return float(F[0]) if scalar else F

    return force


def reference_states(traj, params, ts):
    """(p, theta) of the flat reference on a grid."""
    y = traj.eval_grid(ts, 0)
    ddy = traj.eval_grid(ts, 2)
    p = y + (params.l / params.g) * ddy
    theta = -ddy / params.g
    return p, theta


def compare(sim, traj, params):
    """Tracking metrics of a rollout against its flat reference."""
    t0 = traj.t0
    ts = sim.times + t0
    if abs(ts[-1] - traj.tf) > 1e-9 * max(1.0, abs(traj.tf)):
        raise ValueError(f"horizon mismatch: sim ends at {ts[-1]}, reference at {traj.tf}")
    p_ref, theta_ref = reference_states(traj, params, ts)
    p_sim = sim.states[:, 0]
    theta_sim = sim.states[:, 2]
    metrics = {
        "max_position_error": float(np.max(np.abs(p_sim - p_ref))),
        "terminal_position_error": float(abs(p_sim[-1] - p_ref[-1])),
        "peak_theta": float(np.max(np.abs(theta_sim))),
    }
    bounds = (traj.t0,) + traj.junction_times + (traj.tf,)
    peaks = []
    for a, b in zip(bounds, bounds[1:]):
        mask = (ts >= a - 1e-12) & (ts <= b + 1e-12)
        peaks.append(float(np.max(np.abs(theta_sim[mask]))) if mask.any() else 0.0)
    metrics["peak_theta_per_segment"] = peaks
    return metrics


# -- discrete-LQ oracle ------------------------------------------------------

def chain_lq_cost(k, horizon, N, s0, terminal, cost_terms):
    """Minimum cost of one integrator chain with piecewise-constant control.

    ``terminal`` lists (level, value) pairs fixed at the final time (the
    initial state is fully fixed); ``cost_terms`` lists (level, weight) with
    level k meaning the control and level k-1 the top state, the two levels
    the supported costs use.  The per-interval integrals are exact, so N only
    controls control-resolution error.
    """
    if N < 8:
        raise ValueError("N must be at least 8 for a determined boundary match")
    s0 = np.asarray(s0, dtype=float)
    dt = horizon / N
    # exact one-interval propagation of the chain under constant control
    Phi = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            Phi[i, j] = dt ** (j - i) / math.factorial(j - i)
    B = np.array([dt ** (k - i) / math.factorial(k - i) for i in range(k)])

    H = np.zeros((N, N))
    f = np.zeros(N)
    const = 0.0
    L = np.tril(np.full((N, N), dt), -1)
    for level, w in cost_terms:
        if level == k:
            H += w * dt * np.eye(N)
        elif level == k - 1:
            x0 = np.full(N, s0[k - 1])
            H += w * (dt * (L.T @ L) + 0.5 * dt * dt * (L + L.T) + (dt ** 3 / 3.0) * np.eye(N))
            f += w * (dt * (L.T @ x0) + 0.5 * dt * dt * x0)
            const += 0.5 * w * dt * float(x0 @ x0)
        else:
            raise ValueError("cost terms must reference the control or the top state level")

    # terminal equality rows: s_N[level] = value
    PhiN = np.linalg.matrix_power(Phi, N)
    C = np.zeros((k, N))
    P = np.eye(k)
    for j in range(N - 1, -1, -1):
        C[:, j] = P @ B
        P = P @ Phi
    rows = [lvl for lvl, _ in terminal]
    A = C[rows, :]
    rhs = np.array([val for _, val in terminal]) - (PhiN @ s0)[rows]

    nc = A.shape[0]
    K = np.block([[H, A.T], [A, np.zeros((nc, nc))]])
    v = np.concatenate([-f, rhs])
    sol = np.linalg.solve(K, v)
    a = sol[:N]
    return float(0.5 * a @ H @ a + f @ a + const)


def crane_lq_cost(params, initial, final, horizon, N):
    """Oracle cost for the crane chain (k = 4, both boundary jets fixed)."""
    terms = [(3, 1.0 / params.g ** 2), (4, params.alpha ** 2)]
    terminal = [(i, final[i]) for i in range(4)]
    return chain_lq_cost(4, horizon, N, initial, terminal, terms)


def di_lq_cost(p0, v0, pf, horizon, N):
    """Oracle cost for the planar double integrator (final position fixed,
    final velocity free)."""
    total = 0.0
    for ax in range(2):
        total += chain_lq_cost(2, horizon, N, [p0[ax], v0[ax]], [(0, pf[ax])], [(2, 1.0)])
    return total
