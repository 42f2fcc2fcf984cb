"""Flat-space trajectories as piecewise analytic segments, plus the
flat <-> original coordinate maps for the unicycle and crane systems.

A trajectory in flat space is one integrator chain per output; each chain is
covered by contiguous segments built from a closed-form basis (monomials,
exponentials, cosines, sines) whose time derivatives of any order up to
MAX_ORDER are available exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

MAX_ORDER = 8  # the crane optimality ODE needs y^(8)

# falling-factorial table for monomial derivatives
_FF = np.zeros((16, MAX_ORDER + 1))
for _d in range(16):
    for _k in range(MAX_ORDER + 1):
        if _k <= _d:
            _c = 1.0
            for _j in range(_k):
                _c *= (_d - _j)
            _FF[_d, _k] = _c


class HorizonError(ValueError):
    """Query time outside the trajectory horizon."""


class FlatnessSingularity(ValueError):
    """Flat map evaluated outside its guarded domain."""


@dataclass(frozen=True)
class IntegratorChainSpec:
    """Chain lengths k_i and labels for the flat outputs.

    The flat state stacks y_i, ..., y_i^(k_i - 1); the control stacks the
    y_i^(k_i), one entry per chain.
    """

    chain_lengths: tuple
    labels: tuple = ()

    def __post_init__(self):
        lengths = tuple(int(k) for k in self.chain_lengths)
        if any(k < 1 for k in lengths):
            raise ValueError("every chain length must be >= 1")
        object.__setattr__(self, "chain_lengths", lengths)
        labels = tuple(self.labels) if self.labels else tuple(f"y{i + 1}" for i in range(len(lengths)))
        if len(labels) != len(lengths):
            raise ValueError("one label per chain required")
        object.__setattr__(self, "labels", labels)

    @property
    def num_chains(self):
        return len(self.chain_lengths)

    @property
    def state_dim(self):
        return sum(self.chain_lengths)


@dataclass(frozen=True)
class AnalyticSegment:
    """One closed-form piece of a flat output on [t_start, t_end].

    ``terms`` is a sequence of (kind, parameter, coefficient) with kind in
    {"monomial", "exp", "cos", "sin"}; the parameter is the monomial degree,
    exponential rate, or angular frequency.  Evaluation uses the local time
    tau = t - t_ref, which keeps exponent magnitudes bounded; re-deriving the
    coefficients for a shifted t_ref leaves the values unchanged.
    """

    t_start: float
    t_end: float
    t_ref: float
    terms: tuple

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError(f"empty segment interval [{self.t_start}, {self.t_end}]")
        norm = []
        for kind, param, coef in self.terms:
            if kind not in ("monomial", "exp", "cos", "sin"):
                raise ValueError(f"unknown term kind {kind!r}")
            if kind == "monomial" and not (0 <= int(param) < 16):
                raise ValueError("monomial degree out of range")
            norm.append((kind, float(param) if kind != "monomial" else int(param), float(coef)))
        object.__setattr__(self, "terms", tuple(norm))

    def eval(self, t, order=0):
        if order < 0 or order > MAX_ORDER:
            raise ValueError(f"derivative order {order} outside 0..{MAX_ORDER}")
        tau = t - self.t_ref
        acc = 0.0
        for kind, param, coef in self.terms:
            if kind == "monomial":
                d = int(param)
                if order <= d:
                    acc += coef * _FF[d, order] * tau ** (d - order)
            elif kind == "exp":
                acc += coef * param ** order * math.exp(param * tau)
            elif kind == "cos":
                acc += coef * param ** order * math.cos(param * tau + order * math.pi / 2)
            else:
                acc += coef * param ** order * math.sin(param * tau + order * math.pi / 2)
        return acc

    def eval_many(self, ts, order=0):
        """Vectorized evaluation over an array of times."""
        if order < 0 or order > MAX_ORDER:
            raise ValueError(f"derivative order {order} outside 0..{MAX_ORDER}")
        tau = np.asarray(ts, dtype=float) - self.t_ref
        acc = np.zeros_like(tau)
        for kind, param, coef in self.terms:
            if kind == "monomial":
                d = int(param)
                if order <= d:
                    acc += coef * _FF[d, order] * tau ** (d - order)
            elif kind == "exp":
                acc += coef * param ** order * np.exp(param * tau)
            elif kind == "cos":
                acc += coef * param ** order * np.cos(param * tau + order * np.pi / 2)
            else:
                acc += coef * param ** order * np.sin(param * tau + order * np.pi / 2)
        return acc

    def with_t_ref(self, new_ref):
        """Re-derive coefficients for a shifted local origin (exact for this basis)."""
        dt = new_ref - self.t_ref
        by_key = {}

        def add(key, coef):
            by_key[key] = by_key.get(key, 0.0) + coef

        for kind, param, coef in self.terms:
            if kind == "monomial":
                d = int(param)
                # c (tau + dt)^d expanded in powers of the new tau
                for j in range(d + 1):
                    add(("monomial", j), coef * math.comb(d, j) * dt ** (d - j))
            elif kind == "exp":
                add(("exp", param), coef * math.exp(param * dt))
            else:
                # c cos(w tau_old + 0) = c cos(w tau_new + w dt)
                w = param
                if kind == "cos":
                    add(("cos", w), coef * math.cos(w * dt))
                    add(("sin", w), -coef * math.sin(w * dt))
                else:
                    add(("sin", w), coef * math.cos(w * dt))
                    add(("cos", w), coef * math.sin(w * dt))
        terms = tuple((k[0], k[1], c) for k, c in sorted(by_key.items(), key=lambda kv: (kv[0][0], kv[0][1])) if c != 0.0)
        return AnalyticSegment(self.t_start, self.t_end, new_ref, terms)


@dataclass(frozen=True)
class PiecewiseTrajectory:
    """Per-chain ordered analytic segments over a shared horizon.

    Segment intervals must exactly partition [t0, tf] for every chain, and
    derivatives of order 0..k_i-1 must match at the interior junctions within
    ``continuity_tol`` (the flat state is continuous; only the control level
    may jump).
    """

    chains: IntegratorChainSpec
    segments: tuple          # tuple per chain of tuples of AnalyticSegment
    junction_times: tuple = ()
    continuity_tol: float = 1e-6

    def __post_init__(self):
        segs = tuple(tuple(s) for s in self.segments)
        if len(segs) != self.chains.num_chains:
            raise ValueError("one segment list per chain required")
        t0, tf = segs[0][0].t_start, segs[0][-1].t_end
        for i, chain_segs in enumerate(segs):
            if not chain_segs:
                raise ValueError("chains need at least one segment")
            if not (math.isclose(chain_segs[0].t_start, t0) and math.isclose(chain_segs[-1].t_end, tf)):
                raise ValueError("all chains must share the horizon")
            for a, b in zip(chain_segs, chain_segs[1:]):
                if abs(a.t_end - b.t_start) > 1e-12:
                    raise ValueError(f"chain {i} segments do not partition the horizon at t={a.t_end}")
                for order in range(self.chains.chain_lengths[i]):
                    gap = abs(a.eval(a.t_end, order) - b.eval(b.t_start, order))
                    if gap > self.continuity_tol:
                        raise ValueError(
                            f"chain {i} junction at t={a.t_end}: order-{order} mismatch {gap:.3e} "
                            f"exceeds {self.continuity_tol:.0e}")
        object.__setattr__(self, "segments", segs)
        jt = tuple(float(t) for t in self.junction_times)
        if any(b <= a for a, b in zip(jt, jt[1:])):
            raise ValueError("junction times must be strictly increasing")
        object.__setattr__(self, "junction_times", jt)

    @property
    def t0(self):
        return self.segments[0][0].t_start

    @property
    def tf(self):
        return self.segments[0][-1].t_end

    def _segment_at(self, chain, t, side="left"):
        segs = self.segments[chain]
        if t < self.t0 - 1e-12 or t > self.tf + 1e-12:
            raise HorizonError(f"t={t} outside [{self.t0}, {self.tf}]")
        for k, seg in enumerate(segs):
            if t < seg.t_end or k == len(segs) - 1:
                if side == "right" or t > seg.t_start:
                    return seg
                # at a junction, "left" picks the earlier segment
                return segs[max(k - 1, 0)]
        return segs[-1]

    def eval(self, t, order=0, chain=0, side="left"):
        """order-th derivative of one chain at t; left limit at junctions unless side="right"."""
        return self._segment_at(chain, t, side).eval(t, order)

    def eval_grid(self, ts, order=0, chain=0):
        """Vectorized evaluation on a sorted grid (left limits at junctions)."""
        ts = np.asarray(ts, dtype=float)
        out = np.empty_like(ts)
        segs = self.segments[chain]
        for k, seg in enumerate(segs):
            if k == 0:
                mask = ts <= seg.t_end
            elif k == len(segs) - 1:
                mask = ts > seg.t_start
            else:
                mask = (ts > seg.t_start) & (ts <= seg.t_end)
            if mask.any():
                out[mask] = seg.eval_many(ts[mask], order)
        return out

    def state(self, t, chain=0, side="left"):
        """Flat state jet (orders 0..k-1) of one chain."""
        k = self.chains.chain_lengths[chain]
        return np.array([self.eval(t, order, chain, side) for order in range(k)])

    def control(self, t, chain=0, side="left"):
        return self.eval(t, self.chains.chain_lengths[chain], chain, side)

    # -- serialization -----------------------------------------------------

    def to_segments_json(self):
        doc = {
            "labels": list(self.chains.labels),
            "chain_lengths": list(self.chains.chain_lengths),
            "junction_times": list(self.junction_times),
            "chains": [
                [
                    {
                        "t_start": s.t_start,
                        "t_end": s.t_end,
                        "t_ref": s.t_ref,
                        "terms": [[kind, param, coef] for kind, param, coef in s.terms],
                    }
                    for s in chain_segs
                ]
                for chain_segs in self.segments
            ],
        }
        return json.dumps(doc, indent=2)

    @staticmethod
    def from_segments_json(text, continuity_tol=1e-6):
        doc = json.loads(text)
        chains = IntegratorChainSpec(tuple(doc["chain_lengths"]), tuple(doc["labels"]))
        segments = tuple(
            tuple(
                AnalyticSegment(s["t_start"], s["t_end"], s["t_ref"],
                                tuple((k, p, c) for k, p, c in s["terms"]))
                for s in chain_segs
            )
            for chain_segs in doc["chains"]
        )
        return PiecewiseTrajectory(chains, segments, tuple(doc["junction_times"]), continuity_tol)

    def write_csv(self, path, num_samples=500, max_order=None):
        """CSV with columns t, chain label, derivative order, value."""
        ts = np.linspace(self.t0, self.tf, num_samples)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "chain", "order", "value"])
            for i, label in enumerate(self.chains.labels):
                top = self.chains.chain_lengths[i] if max_order is None else max_order
                for order in range(top + 1):
                    vals = self.eval_grid(ts, order, i)
                    for t, v in zip(ts, vals):
                        w.writerow([f"{t:.12g}", label, order, f"{v:.17g}"])


# -- flat maps --------------------------------------------------------------

@dataclass(frozen=True)
class FlatMap:
    """Named coordinate maps between the original system and its flat outputs."""

    name: str
    forward: object        # original state/control -> flat outputs
    to_state: object       # flat jet -> original state
    to_control: object     # flat jet -> original control
    domain_guard: object = field(default=lambda *a: True)


def unicycle_from_flat(y, dy, ddy):
    """Map a planar flat jet to unicycle heading and controls.

    Requires nonzero velocity (forward speed u1 > 0 guards the heading and
    turn-rate expressions).
    """
    dy1, dy2 = dy
    ddy1, ddy2 = ddy
    speed_sq = dy1 * dy1 + dy2 * dy2
    if speed_sq == 0.0:
        raise FlatnessSingularity("unicycle map undefined at zero velocity (u1 = 0)")
    theta = math.atan2(dy2, dy1)
    u1 = math.sqrt(speed_sq)
    u2 = (ddy2 * dy1 - dy2 * ddy1) / speed_sq
    return y[0], y[1], theta, u1, u2


def unicycle_to_flat(px, py):
    """The unicycle's flat outputs are its position."""
    return np.array([px, py])


UNICYCLE = FlatMap(
    name="unicycle",
    forward=unicycle_to_flat,
    to_state=lambda y, dy, ddy: unicycle_from_flat(y, dy, ddy)[:3],
    to_control=lambda y, dy, ddy: unicycle_from_flat(y, dy, ddy)[3:],
    domain_guard=lambda y, dy, ddy: (dy[0] ** 2 + dy[1] ** 2) > 0.0,
)


@dataclass(frozen=True)
class CraneParams:
    """Cart mass, payload mass, gravity, rope length, jerk weight, cart bounds."""

    M: float
    m: float
    g: float = 9.81
    l: float = 5.0
    alpha: float = 0.5
    p_min: float = -math.inf
    p_max: float = math.inf

    def __post_init__(self):
        for name in ("M", "m", "g", "l", "alpha"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not self.p_min < self.p_max:
            raise ValueError("p_min must be below p_max")


def crane_from_flat(y, ddy, d3y, d4y, params):
    """Cart position, swing angle, and drive force from the flat jet.

    The small-angle crane is flat in the payload position y = p + l*theta;
    two derivatives give theta = -y''/g and p = y + (l/g) y''; four give the
    force.
    """
    g, l, M, m = params.g, params.l, params.M, params.m
    theta = -ddy / g
    p = y + (l / g) * ddy
    F = (M + m) * (ddy + (l / g) * d4y) + m * l * (-d4y / g + (ddy / g) * (d3y / g) ** 2)
    return p, theta, F


def crane_to_flat(p, theta, params):
    """Payload horizontal position (the flat output)."""
    return p + params.l * theta


def crane_boundary_to_flat(p0, pdot0, theta0, thetadot0, pf, params):
    """Flat boundary jets for a rest-delivery transfer.

    Initial (y, y', y'', y''') from the disturbed start; final brings the
    payload to pf with no residual motion or swing.
    """
    l, g = params.l, params.g
    initial = np.array([p0 + l * theta0, pdot0 + l * thetadot0, -g * theta0, -g * thetadot0])
    final = np.array([pf, 0.0, 0.0, 0.0])
    return initial, final


CRANE = FlatMap(
    name="crane",
    forward=crane_to_flat,
    to_state=lambda jet, params: crane_from_flat(jet[0], jet[2], jet[3], jet[4], params)[:2],
    to_control=lambda jet, params: crane_from_flat(jet[0], jet[2], jet[3], jet[4], params)[2],
    domain_guard=lambda *a: True,
)
