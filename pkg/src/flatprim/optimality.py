"""Costate reconstruction and optimality residuals for integrator-chain
trajectories.

Costates are explicit functionals of the trajectory: for chain i and level j,

    lambda_i^j = sum_{n=1}^{k_i - j} (-1)^n d^{n-1}/dt^{n-1} (Psi_{y^(j+n)} + mu^T g_{y^(j+n)}),

and the costate-free optimality condition extends the sum to n = 0..k_i with
d^n.  Outer time derivatives are taken by 4th-order central differences on a
grid, except that partials declared linear in a single jet value are
differentiated exactly by shifting the jet level (d^n of c*y^(m) is
c*y^(m+n)); the finite-difference route cannot reach the tight tolerances the
unconstrained-segment checks need.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .flat_model import MAX_ORDER, IntegratorChainSpec, PiecewiseTrajectory


class StencilUnderflow(ValueError):
    """Grid too coarse for the requested derivative order."""


# -- partial-derivative descriptors ------------------------------------------

@dataclass(frozen=True)
class LinearPartial:
    """Partial equal to scale * y_chain^(level); exactly differentiable."""
    chain: int
    level: int
    scale: float

    def __call__(self, jets, t):
        return self.scale * jets[self.chain][self.level]


@dataclass(frozen=True)
class ConstPartial:
    value: float

    def __call__(self, jets, t):
        return self.value


@dataclass(frozen=True)
class RunningCostSpec:
    """Running cost Psi with its partials per chain and derivative level.

    ``partials`` maps (chain, level) for level = 0..k_i to a LinearPartial,
    ConstPartial, or generic callable(jets, t); missing entries are zero.
    Terminal cost partials follow the same convention.
    """

    chains: IntegratorChainSpec
    psi: object
    partials: dict
    quadratic_in_control: bool = False
    phi: object = None
    phi_s: dict = field(default_factory=dict)
    phi_t: object = None

    def partial(self, chain, level):
        return self.partials.get((chain, level))

    def check_partials(self, jets_fn, ts, rel_tol=1e-5, rng=None):
        """Finite-difference audit of the supplied partials at probe points."""
        rng = rng or np.random.default_rng(0)
        worst = 0.0
        for t in ts:
            jets = jets_fn(t)
            base = self.psi(jets, t)
            for (chain, level), part in self.partials.items():
                h = 1e-6 * max(1.0, abs(jets[chain][level]))
                up = [j.copy() for j in jets]
                dn = [j.copy() for j in jets]
                up[chain][level] += h
                dn[chain][level] -= h
                fd = (self.psi(up, t) - self.psi(dn, t)) / (2 * h)
                val = part(jets, t)
                scale = max(abs(val), abs(fd), 1e-9)
                worst = max(worst, abs(val - fd) / scale)
        return worst


@dataclass
class ConstraintStack:
    """One inequality constraint h(s, t) <= 0 with its derivative chain.

    ``h_chain`` holds [h, h^(1), ..., h^(q)] as callables(jets, t); the last
    entry is the appended constraint g = h^(q) where the control first
    appears.  ``g_partials`` maps (chain, level) to partials of g.  ``mu`` is
    the multiplier trace (callable of t), zero off the activation intervals.
    """

    h_chain: list
    relative_degree: int
    g_partials: dict = field(default_factory=dict)
    activation_intervals: tuple = ()
    mu: object = None
    interior_time: float = None      # set for interior-point constraints at known time

    def __post_init__(self):
        if len(self.h_chain) != self.relative_degree + 1:
            raise ValueError("h_chain must hold h through h^(q)")

    def mu_at(self, t):
        if self.mu is None:
            return 0.0
        for a, b in self.activation_intervals:
            if a - 1e-12 <= t <= b + 1e-12:
                return float(self.mu(t))
        return 0.0

    def is_active(self, t):
        return any(a - 1e-12 <= t <= b + 1e-12 for a, b in self.activation_intervals)


def build_tangency(constraint):
    """Tangency vector N = [h, h^(1), ..., h^(q-1)] and appended constraint g.

    Interior-point constraints at a known activation time get an extra
    (t - t1) row.  A control-level constraint (q = 0) has an empty N.
    """
    q = constraint.relative_degree
    rows = list(constraint.h_chain[:q])
    if constraint.interior_time is not None:
        t1 = constraint.interior_time
        rows.append(lambda jets, t, _t1=t1: t - _t1)

    def N(jets, t):
        return np.array([r(jets, t) for r in rows])

    g = constraint.h_chain[q]
    return N, g


@dataclass
class CostateTrajectory:
    grid: np.ndarray
    values: dict                    # (chain, level) -> samples
    valid: dict                     # (chain, level) -> boolean mask

    def __post_init__(self):
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")

    def at(self, chain, level):
        return self.values[(chain, level)], self.valid[(chain, level)]


# -- grid helpers -------------------------------------------------------------

_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0


def fd_derivative(values, h, valid=None):
    """4th-order central first derivative on a uniform grid.

    The two points at each end of every contiguous valid run become invalid.
    """
    n = values.size
    if valid is None:
        valid = np.ones(n, dtype=bool)
    out = np.zeros(n)
    new_valid = np.zeros(n, dtype=bool)
    for i in range(2, n - 2):
        if valid[i - 2] and valid[i - 1] and valid[i] and valid[i + 1] and valid[i + 2]:
            out[i] = (_D1[0] * values[i - 2] + _D1[1] * values[i - 1]
                      + _D1[3] * values[i + 1] + _D1[4] * values[i + 2]) / h
            new_valid[i] = True
    if not new_valid.any():
        raise StencilUnderflow("no valid points remain after differencing (grid too coarse)")
    return out, new_valid


def _grid_jets(traj, grid, max_order):
    jets = []
    for i in range(traj.chains.num_chains):
        jets.append(np.stack([traj.eval_grid(grid, order, i) for order in range(max_order + 1)]))
    return jets


def _jets_at_index(jets, idx):
    return [j[:, idx] for j in jets]


def _initial_valid(traj, grid):
    """Mask out grid points at segment junctions so runs stay one-sided."""
    valid = np.ones(grid.size, dtype=bool)
    for tj in traj.junction_times:
        valid &= np.abs(grid - tj) > 1e-12
    return valid


def _term_values(traj, cost, constraints, grid, jets, chain, level):
    """P(t) = Psi_{y^(level)} + sum_c mu_c(t) g_{y^(level)} on the grid.

    Returns (values, exact_shift) where exact_shift is the (chain, level,
    scale) triple when the whole term is linear in one jet value and no
    multiplier trace contributes, enabling exact outer derivatives.
    """
    part = cost.partial(chain, level)
    active_cons = [c for c in (constraints or [])
                   if c.mu is not None and (chain, level) in c.g_partials]
    if not active_cons and isinstance(part, LinearPartial):
        return part.scale * jets[part.chain][part.level], part
    if not active_cons and part is None:
        return np.zeros(grid.size), ConstPartial(0.0)
    if not active_cons and isinstance(part, ConstPartial):
        return np.full(grid.size, part.value), part
    vals = np.zeros(grid.size)
    for idx, t in enumerate(grid):
        jt = _jets_at_index(jets, idx)
        v = part(jt, t) if part is not None else 0.0
        for c in active_cons:
            gp = c.g_partials[(chain, level)]
            v += c.mu_at(t) * (gp(jt, t) if callable(gp) else gp)
        vals[idx] = v
    return vals, None


def _exact_outer(traj, grid, shift, n):
    """d^n/dt^n of a linear-in-jet term, via the analytic jet shift."""
    if isinstance(shift, ConstPartial):
        return np.full(grid.size, shift.value if n == 0 else 0.0)
    lvl = shift.level + n
    if lvl > MAX_ORDER:
        raise ValueError(f"jet level {lvl} above the supported order {MAX_ORDER}")
    return shift.scale * traj.eval_grid(grid, lvl, shift.chain)


def reconstruct_costates(traj, cost, constraints, grid, exact=False):
    """Costates on the grid, per chain and state level.

    The top level k_i - 1 is pointwise exact (no differencing); lower levels
    stack repeated outer derivatives.  ``exact=True`` requests the jet-shift
    route and raises if any required partial is not linear.
    """
    grid = np.asarray(grid, dtype=float)
    jets = _grid_jets(traj, grid, max(traj.chains.chain_lengths))
    h = grid[1] - grid[0]
    base_valid = _initial_valid(traj, grid)
    values, valid = {}, {}
    for i, k in enumerate(traj.chains.chain_lengths):
        terms = {}
        for m in range(1, k + 1):
            terms[m] = _term_values(traj, cost, constraints, grid, jets, i, m)
        for j in range(k - 1, -1, -1):
            lam = np.zeros(grid.size)
            mask = base_valid.copy()
            for n in range(1, k - j + 1):
                vals, shift = terms[j + n]
                if n == 1:
                    d = vals
                elif exact and shift is not None:
                    d = _exact_outer(traj, grid, shift, n - 1)
                else:
                    d, v = vals, base_valid.copy()
                    for _ in range(n - 1):
                        d, v = fd_derivative(d, h, v)
                    mask &= v
                lam += (-1.0) ** n * d
            values[(i, j)] = lam
            valid[(i, j)] = mask
    return CostateTrajectory(grid, values, valid)


def el_residual(traj, cost, constraints, grid, exact=True):
    """Costate-free optimality residual per chain on the grid.

    residual_i(t) = sum_{n=0}^{k_i} (-1)^n d^n/dt^n (Psi_{y^(n)} + mu^T g_{y^(n)}).
    Exact jet-shift derivatives are used where the partials allow (the route
    that reaches the unconstrained-segment tolerances); otherwise central
    differences with junction guard bands.
    """
    grid = np.asarray(grid, dtype=float)
    jets = _grid_jets(traj, grid, max(traj.chains.chain_lengths))
    h = grid[1] - grid[0] if grid.size > 1 else 1.0
    base_valid = _initial_valid(traj, grid)
    out = {}
    for i, k in enumerate(traj.chains.chain_lengths):
        res = np.zeros(grid.size)
        mask = base_valid.copy()
        for n in range(k + 1):
            vals, shift = _term_values(traj, cost, constraints, grid, jets, i, n)
            if n == 0:
                d = vals
            elif exact and shift is not None:
                d = _exact_outer(traj, grid, shift, n)
            else:
                d, v = vals, base_valid.copy()
                for _ in range(n):
                    d, v = fd_derivative(d, h, v)
                mask &= v
            res += (-1.0) ** n * d
        out[i] = (res, mask)
    return out


# -- junction records ----------------------------------------------------------

@dataclass
class JunctionRecord:
    """State, two-sided controls, and multipliers at one constraint junction."""

    time: float
    state_jets: list                 # per chain: orders 0..k_i-1 (continuous across)
    a_minus: np.ndarray
    a_plus: np.ndarray
    pi: np.ndarray
    tangency_values: np.ndarray
    mu_g_a_minus: np.ndarray = None  # mu^T g_a on each side (per control entry)
    mu_g_a_plus: np.ndarray = None

    def __post_init__(self):
        self.a_minus = np.atleast_1d(np.asarray(self.a_minus, dtype=float))
        self.a_plus = np.atleast_1d(np.asarray(self.a_plus, dtype=float))
        self.pi = np.atleast_1d(np.asarray(self.pi, dtype=float))
        self.tangency_values = np.atleast_1d(np.asarray(self.tangency_values, dtype=float))
        if self.pi.size != self.tangency_values.size:
            raise ValueError("one multiplier per tangency row required")
        if self.mu_g_a_minus is None:
            self.mu_g_a_minus = np.zeros_like(self.a_minus)
        if self.mu_g_a_plus is None:
            self.mu_g_a_plus = np.zeros_like(self.a_plus)

    def jets_with_control(self, chains, a):
        """Jets padded with the chain controls, for partial evaluation."""
        jets = []
        a = np.atleast_1d(a)
        for i, k in enumerate(chains.chain_lengths):
            jets.append(np.concatenate([self.state_jets[i][:k], [a[i]]]))
        return jets


def _tangency_flow_derivative(tangency, chains, junction, a, h=1e-6):
    """N_t + N_s I(s, a): total time derivative of N along the flow."""
    jets = junction.jets_with_control(chains, a)
    t = junction.time
    N0 = np.atleast_1d(tangency(jets, t))
    out = (np.atleast_1d(tangency(jets, t + h)) - np.atleast_1d(tangency(jets, t - h))) / (2 * h)
    for i, k in enumerate(chains.chain_lengths):
        for lvl in range(k):
            hh = h * max(1.0, abs(jets[i][lvl]))
            up = [j.copy() for j in jets]
            dn = [j.copy() for j in jets]
            up[i][lvl] += hh
            dn[i][lvl] -= hh
            dN = (np.atleast_1d(tangency(up, t)) - np.atleast_1d(tangency(dn, t))) / (2 * hh)
            out = out + dN * jets[i][lvl + 1]
    return out


def interior_jump_residual(junction, cost, tangency):
    """Reduced junction conditions; the Hamiltonian is never materialized.

    r1 = (Psi+ - Psi-) - (Psi_a + mu g_a)^- . (a+ - a-) - pi^T (N_t + N_s I+)
    r2 uses the + partials and I-.
    """
    if junction.tangency_values.size and junction.pi.size != junction.tangency_values.size:
        raise ValueError("missing multipliers for nonempty tangency rows")
    chains = cost.chains
    t = junction.time
    jets_m = junction.jets_with_control(chains, junction.a_minus)
    jets_p = junction.jets_with_control(chains, junction.a_plus)
    psi_m = cost.psi(jets_m, t)
    psi_p = cost.psi(jets_p, t)
    da = junction.a_plus - junction.a_minus

    def psi_a(jets):
        return np.array([cost.partial(i, k)(jets, t) if cost.partial(i, k) else 0.0
                         for i, k in enumerate(chains.chain_lengths)])

    pa_m = psi_a(jets_m) + junction.mu_g_a_minus
    pa_p = psi_a(jets_p) + junction.mu_g_a_plus
    if junction.tangency_values.size:
        flow_p = _tangency_flow_derivative(tangency, chains, junction, junction.a_plus)
        flow_m = _tangency_flow_derivative(tangency, chains, junction, junction.a_minus)
        jump_p = float(junction.pi @ flow_p)
        jump_m = float(junction.pi @ flow_m)
    else:
        jump_p = jump_m = 0.0
    r1 = (psi_p - psi_m) - float(pa_m @ da) - jump_p
    r2 = (psi_p - psi_m) - float(pa_p @ da) - jump_m
    return r1, r2


def junction_continuity_check(junction, cost):
    """Corollary residual: zero iff the control is continuous for costs of
    the form f(s) + ||a||^2."""
    da = junction.a_plus - junction.a_minus
    if cost.quadratic_in_control:
        return float(da @ da)
    chains = cost.chains
    t = junction.time
    jets_m = junction.jets_with_control(chains, junction.a_minus)
    jets_p = junction.jets_with_control(chains, junction.a_plus)
    pa_m = np.array([cost.partial(i, k)(jets_m, t) if cost.partial(i, k) else 0.0
                     for i, k in enumerate(chains.chain_lengths)])
    return float(abs(cost.psi(jets_p, t) - cost.psi(jets_m, t) - pa_m @ da))


# -- boundary conditions -------------------------------------------------------

@dataclass(frozen=True)
class TransversalitySpec:
    """Free/fixed flags per state component and the terminal-function data.

    ``flags`` maps (chain, level, end) with end in {"initial", "final"} to one
    of "fixed", "free", "functional"; unlisted components are fixed.  ``B``
    is the optional terminal function with partials ``B_s`` per (chain,
    level) and ``B_t``; ``nu`` its constant multipliers.
    """

    flags: dict = field(default_factory=dict)
    B: object = None
    B_s: dict = field(default_factory=dict)
    B_t: object = None
    nu: np.ndarray = None
    terminal_time_free: bool = False

    def flag(self, chain, level, end):
        return self.flags.get((chain, level, end), "fixed")


def free_boundary_residual(traj, cost, constraints, chain, level, end, spec=None):
    """Equivalent boundary condition for a free state component: the costate
    lambda_chain^level evaluated at that end (zero at the optimum)."""
    if spec is not None and spec.flag(chain, level, end) != "free":
        raise ValueError(f"component (chain={chain}, level={level}) not flagged free at {end}")
    t = traj.t0 if end == "initial" else traj.tf
    k = traj.chains.chain_lengths[chain]
    total = 0.0
    for n in range(1, k - level + 1):
        part = cost.partial(chain, level + n)
        if part is None:
            continue
        if isinstance(part, LinearPartial):
            side = "right" if end == "initial" else "left"
            d = part.scale * traj.eval(t, part.level + (n - 1), part.chain, side)
        elif isinstance(part, ConstPartial):
            d = part.value if n == 1 else 0.0
        else:
            # generic partial: one-sided grid into the adjacent segment
            m = 9
            h = 1e-4
            ts = t + np.arange(m) * h if end == "initial" else t - np.arange(m)[::-1] * h
            jets = _grid_jets(traj, ts, k)
            vals = np.array([part(_jets_at_index(jets, idx), tv) for idx, tv in enumerate(ts)])
            for _ in range(n - 1):
                vals = np.gradient(vals, h)
            d = vals[0] if end == "initial" else vals[-1]
        total += (-1.0) ** n * d
    return total


def free_time_residual(traj, cost, spec):
    """Optimal-terminal-time condition Omega at tf (zero at the optimum)."""
    if not spec.terminal_time_free:
        raise ValueError("terminal time not flagged free")
    if spec.B is not None and spec.nu is None:
        raise ValueError("nu required when a terminal function B is present")
    t = traj.tf
    k_list = traj.chains.chain_lengths
    jets = [np.array([traj.eval(t, n, i) for n in range(k_list[i] + 1)]) for i in range(len(k_list))]
    omega = 0.0
    if cost.phi_t is not None:
        omega += cost.phi_t(jets, t)
    if spec.B is not None and spec.B_t is not None:
        omega += float(np.atleast_1d(spec.nu) @ np.atleast_1d(spec.B_t(jets, t)))
    # (Phi_s + nu^T B_s) . sdot, with sdot the shifted jet (y^(n+1))
    for i, k in enumerate(k_list):
        for lvl in range(k):
            coeff = 0.0
            if (i, lvl) in cost.phi_s:
                coeff += cost.phi_s[(i, lvl)](jets, t)
            if spec.B is not None and (i, lvl) in spec.B_s:
                rows = np.atleast_1d(spec.B_s[(i, lvl)](jets, t))
                coeff += float(np.atleast_1d(spec.nu) @ rows)
            omega += coeff * jets[i][lvl + 1]
    omega += cost.psi(jets, t)
    return omega


# -- verification report -------------------------------------------------------

class VerificationReport:
    """Named residual checks with tolerances, serializable to JSON."""

    def __init__(self):
        self.checks = []

    def add(self, name, residual, tol):
        self.checks.append({
            "name": name,
            "residual": float(residual),
            "tolerance": float(tol),
            "pass": bool(abs(residual) < tol) if math.isfinite(residual) else False,
        })

    @property
    def all_pass(self):
        return all(c["pass"] for c in self.checks)

    def to_json(self):
        return json.dumps({"checks": self.checks, "all_pass": self.all_pass}, indent=2)
