"""Sum-throughput of coupled transmitters and its coordinate moments.

The long-run sum-throughput is the mean of r(sum_k p_k(X_k)) under the
product of the per-node stationary laws.  Each law mixes an atom at zero
with a density, so the mean expands over node subsets: nodes outside the
subset sit at the atom (and radiate nothing), nodes inside contribute a
tensor-product quadrature against their densities.  The same expansion with
one coordinate held at a scalar power argument yields the moment functions
feeding the necessary-condition ODE.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.interpolate import CubicSpline

from .arrivals import HarvestParams
from .errors import CapacityError, DomainError, MomentRangeError, UsageError
from .measures import PolicyGrid, StationaryMeasure
from .rates import RateFunction, rate, rate_deriv

__all__ = [
    "Node",
    "SystemState",
    "PhiMoments",
    "ExactRateMoments",
    "sum_throughput",
    "phi_moments",
    "infinite_battery_lower_bound",
]

SUBSET_NODE_CAP = 4
QMAX_CAP = 1e120  # beyond this, second rate derivatives leave the float range
_CHUNK = 1 << 22  # soft cap on tensor elements held at once


class Node(NamedTuple):
    params: HarvestParams
    policy: PolicyGrid
    measure: StationaryMeasure


@dataclass(frozen=True)
class SystemState:
    """Per-node (params, policy, measure) triples plus the shared rate curve."""

    nodes: tuple
    rate: RateFunction

    def __post_init__(self):
        nodes = tuple(Node(*nd) for nd in self.nodes)
        object.__setattr__(self, "nodes", nodes)
        if len(nodes) < 1:
            raise DomainError("at least one node is required")
        for k, nd in enumerate(nodes):
            if abs(nd.measure.total_mass() - 1.0) > 1e-9:
                raise DomainError(f"measure of node {k} is not normalized")

    @property
    def node_count(self) -> int:
        return len(self.nodes)


def _node_quadrature(node: Node):
    """Density-side powers and weights of one node on its measure grid."""
    meas, pol = node.measure, node.policy
    if meas.grid.size == pol.grid.size and np.allclose(meas.grid, pol.grid):
        powers = pol.density_side_values()
    else:
        powers = np.concatenate(([pol.p0plus], pol.interp(extend=True).value(meas.grid[1:])))
    return powers, meas.node_weights(), meas.atom


def _tensor_sum(value_fn, powers, weights, base=0.0):
    """sum over the tensor grid of value_fn(base + sum powers) * prod weights.

    ``base`` may be a scalar or a 1-d array of scalar power offsets; chunks
    the leading axis to bound memory.
    """
    base_arr = np.atleast_1d(np.asarray(base, dtype=float))
    dims = [len(p) for p in powers]
    total = np.zeros(base_arr.shape)
    if not dims:
        return value_fn(base_arr) * 1.0
    if len(dims) == 1:
        args = base_arr[:, None] + powers[0][None, :]
        return value_fn(args) @ weights[0]
    # leading axis chunked; remaining axes broadcast in full
    rest_elems = int(np.prod(dims[1:]))
    step = max(1, _CHUNK // max(rest_elems * base_arr.size, 1))
    w_rest = weights[1]
    for w in weights[2:]:
        w_rest = np.multiply.outer(w_rest, w)
    shape_rest = tuple(dims[1:])
    rest = powers[1]
    for p in powers[2:]:
        rest = np.add.outer(rest, p)
    rest = rest.reshape(shape_rest)
    for lo in range(0, dims[0], step):
        hi = min(lo + step, dims[0])
        block = powers[0][lo:hi]
        args = (base_arr[:, None, None]
                + block[None, :, None]
                + rest.reshape(1, 1, -1))
        vals = value_fn(args)
        total += np.einsum("qbr,b,r->q", vals, weights[0][lo:hi], w_rest.reshape(-1))
    return total


def sum_throughput(state: SystemState, subset_cap: int = SUBSET_NODE_CAP) -> float:
    """Mean of r(total transmitted power) under the product stationary law.

    Expands over node subsets (the all-atom subset contributes nothing since
    r(0) = 0); raises CapacityError when the expansion would exceed
    ``subset_cap`` nodes.
    """
    m = state.node_count
    if m > subset_cap:
        raise CapacityError(f"subset expansion capped at {subset_cap} nodes, got {m}")
    quads = [_node_quadrature(nd) for nd in state.nodes]
    rf = state.rate
    total = 0.0
    for mask in range(1, 1 << m):
        active = [k for k in range(m) if mask >> k & 1]
        coef = math.prod(quads[k][2] for k in range(m) if not mask >> k & 1)
        if coef == 0.0:
            continue
        powers = [quads[k][0] for k in active]
        weights = [quads[k][1] for k in active]
        val = _tensor_sum(lambda a: rate(rf, a), powers, weights)
        total += coef * float(val[0])
    return total


@dataclass
class PhiMoments:
    """Tabulated coordinate moments of the rate under the other nodes' laws.

    phi(q) is the mean rate when this node transmits at power q, with first
    and second derivatives in q taken through the analytic rate derivatives.
    """

    q: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    d2phi: np.ndarray
    provider: Callable | None = field(default=None, repr=False)
    _table: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.ndim != 1 or q.size < 4:
            raise DomainError("moment tabulation needs at least 4 scalar power knots")
        if np.any(np.diff(q) <= 0.0):
            raise DomainError("moment knots must be strictly increasing")
        if np.any(np.diff(self.phi) <= 0.0):
            raise DomainError("phi must be strictly increasing")
        if np.any(np.asarray(self.d2phi) >= 0.0):
            raise DomainError("phi must be strictly concave")

    @property
    def qmax(self) -> float:
        return float(self.q[-1])

    @property
    def can_extend(self) -> bool:
        return self.provider is not None

    def extended(self, new_qmax: float) -> "PhiMoments":
        """Re-tabulate with knots continued geometrically up to ``new_qmax``."""
        if self.provider is None:
            raise UsageError("this tabulation has no provider to extend with")
        new_qmax = min(new_qmax, QMAX_CAP)
        if new_qmax <= self.qmax:
            return self
        anchor = max(self.qmax, 1e-6)
        extra = int(np.ceil(np.log(new_qmax / anchor) / np.log(1.25))) + 2
        tail = np.geomspace(anchor, new_qmax, max(extra, 8))[1:]
        knots = np.unique(np.concatenate([self.q, tail]))
        phi, dphi, d2phi = self.provider(knots)
        return PhiMoments(q=knots, phi=phi, dphi=dphi, d2phi=d2phi,
                          provider=self.provider)

    def _coeff_table(self):
        # Interpolation runs in t = log1p(q) so knots spanning many decades
        # stay well conditioned; derivative moments are interpolated through
        # their logarithms, which pins their signs and keeps relative accuracy
        # where they decay over hundreds of orders of magnitude.
        if self._table is None:
            t = np.log1p(self.q)
            sp = [CubicSpline(t, y) for y in
                  (self.phi, np.log(self.dphi), np.log(-self.d2phi))]
            knots = t.tolist()
            packs = []
            for j in range(len(knots) - 1):
                row = []
                for s in sp:
                    c = s.c[:, j]
                    row.extend((float(c[0]), float(c[1]), float(c[2]), float(c[3])))
                packs.append(tuple(row))
            self._table = (knots, packs)
        return self._table

    def eval3(self, p: float):
        """(phi, phi', phi'') at scalar power p; raises beyond the knot range."""
        if p > self.q[-1]:
            raise MomentRangeError(
                f"moment tabulation queried at power {p:.6g} beyond its range "
                f"{self.q[-1]:.6g}", argument=p)
        if p < self.q[0]:
            raise MomentRangeError(
                f"moment tabulation queried below its first knot ({p:.6g})",
                argument=p)
        knots, packs = self._coeff_table()
        t = math.log1p(p)
        j = bisect_right(knots, t) - 1
        if j >= len(packs):
            j = len(packs) - 1
        elif j < 0:
            j = 0
        u = t - knots[j]
        c = packs[j]
        val = ((c[0] * u + c[1]) * u + c[2]) * u + c[3]
        d1 = ((c[4] * u + c[5]) * u + c[6]) * u + c[7]
        d2 = ((c[8] * u + c[9]) * u + c[10]) * u + c[11]
        return val, math.exp(d1), -math.exp(d2)


class ExactRateMoments:
    """Moment evaluator for a lone transmitter: phi collapses to the rate."""

    def __init__(self, rf: RateFunction):
        self._n0 = rf.n0
        self._ln2 = math.log(2.0)

    qmax = math.inf
    can_extend = False

    def eval3(self, p: float):
        if p < 0.0:
            raise MomentRangeError(f"rate queried at negative power {p:.6g}", argument=p)
        n0p = self._n0 + p
        d1 = 1.0 / (2.0 * self._ln2 * n0p)
        return 0.5 * math.log1p(p / self._n0) / self._ln2, d1, -d1 / n0p


def phi_moments(state: SystemState, j: int, q_grid) -> PhiMoments:
    """Tabulate the coordinate moments of node ``j`` on the given power knots.

    The mean over the other coordinates expands across their subsets exactly
    like the throughput; derivative moments use analytic rate derivatives.
    """
    m = state.node_count
    if not 0 <= j < m:
        raise UsageError(f"node index {j} out of range for {m} nodes")
    if m > SUBSET_NODE_CAP:
        raise CapacityError(f"subset expansion capped at {SUBSET_NODE_CAP} nodes")
    q = np.unique(np.asarray(q_grid, dtype=float))
    if np.any(q < 0.0):
        raise DomainError("power knots must be nonnegative")
    others = [state.nodes[k] for k in range(m) if k != j]
    quads = [_node_quadrature(nd) for nd in others]
    rf = state.rate

    def tabulate(knots):
        acc = [np.zeros(knots.size) for _ in range(3)]
        funcs = (lambda a: rate(rf, a),
                 lambda a: rate_deriv(rf, a, 1),
                 lambda a: rate_deriv(rf, a, 2))
        mm = len(quads)
        for mask in range(1 << mm):
            active = [k for k in range(mm) if mask >> k & 1]
            coef = math.prod(quads[k][2] for k in range(mm) if not mask >> k & 1)
            if coef == 0.0:
                continue
            powers = [quads[k][0] for k in active]
            weights = [quads[k][1] for k in active]
            for fi, fn in enumerate(funcs):
                acc[fi] += coef * _tensor_sum(fn, powers, weights, base=knots)
        return acc[0], acc[1], acc[2]

    phi, dphi, d2phi = tabulate(q)
    return PhiMoments(q=q, phi=phi, dphi=dphi, d2phi=d2phi, provider=tabulate)


def infinite_battery_lower_bound(params, rho: float, rf: RateFunction) -> float:
    """Throughput achieved by constant policies at input rate + rho each.

    The product factor discounts the time each node has an empty battery;
    the bound meets the unbounded-battery ceiling as rho -> 0.
    """
    if not rho > 0.0:
        raise DomainError(f"excess release rate must be positive, got {rho}")
    if math.isinf(rho):
        return 0.0
    total = 0.0
    frac = 1.0
    for hp in params:
        mean_in = hp.mean_input_rate
        total += mean_in + rho
        frac *= mean_in / (mean_in + rho)
    return rate(rf, total) * frac
