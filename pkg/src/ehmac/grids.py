"""Uniform-grid policy interpretation and the cell integrals built on it.

A power policy lives on a uniform grid as sampled values.  Between nodes the
*square* of the release rate is taken to be linear: the necessary-condition
ODE gives p * p' equal to a smooth function of p, so p**2 is locally linear
in the battery level, and this interpretation stays exact through the steep
layer next to an almost-empty battery (where p itself can rise a hundredfold
across one cell).  All drain integrals below have closed forms under it:

    integral of 1/p over a cell  ->  2*h / (p0 + p1)
    integral of p   over a cell  ->  (2*h/3) * (p1^2 + p1*p0 + p0^2) / (p1 + p0)
    drain map                    ->  release rate falls linearly in time

For slowly varying policies these reduce to the usual trapezoid-level rules
to second order.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError

__all__ = ["uniform_grid", "grid_spacing", "inv_power_cells", "power_cells",
           "PolicyInterp"]


def uniform_grid(capacity: float, n: int) -> np.ndarray:
    if not capacity > 0.0 or not math.isfinite(capacity):
        raise DomainError(f"grid span must be positive and finite, got {capacity}")
    if n < 1:
        raise DomainError(f"grid needs at least one cell, got n={n}")
    return np.linspace(0.0, capacity, n + 1)


def grid_spacing(x: np.ndarray) -> float:
    """Spacing of a uniform grid starting at 0; raises if not uniform."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2 or x[0] != 0.0:
        raise DomainError("grid must be a 1-d array starting at 0")
    h = (x[-1] - x[0]) / (x.size - 1)
    if not np.allclose(np.diff(x), h, rtol=1e-9, atol=1e-12 * max(h, 1.0)):
        raise DomainError("grid spacing must be uniform")
    return float(h)


def inv_power_cells(x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Per-cell integral of 1/p(v); p holds the right-limit value at index 0."""
    dx = np.diff(x)
    return 2.0 * dx / (p[:-1] + p[1:])


def power_cells(x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Per-cell integral of p(v)."""
    dx = np.diff(x)
    p0, p1 = p[:-1], p[1:]
    return (2.0 * dx / 3.0) * (p1 * p1 + p1 * p0 + p0 * p0) / (p1 + p0)


class PolicyInterp:
    """Evaluates a gridded policy and its drain maps between nodes.

    ``extend`` allows levels beyond the last node, continuing the policy at
    its final value (used when an unbounded battery is simulated through a
    truncation of the level axis).
    """

    def __init__(self, x: np.ndarray, p_density_side: np.ndarray, extend: bool = False):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p_density_side, dtype=float)
        if x.shape != p.shape:
            raise DomainError("grid and policy arrays must have equal length")
        if np.any(p <= 0.0):
            raise DomainError("release rate must be positive on (0, L]")
        self.x = x
        self.p = p
        self.extend = extend
        self._psq = p * p
        self._b = np.diff(self._psq) / np.diff(x)  # slope of p^2 per cell
        # time to drain from each node to empty
        self.tau_nodes = np.concatenate(([0.0], np.cumsum(inv_power_cells(x, p))))
        # energy-weighted cumulative: integral of p over (0, x_i]
        self.pint_nodes = np.concatenate(([0.0], np.cumsum(power_cells(x, p))))

    def _cell_of(self, levels):
        idx = np.searchsorted(self.x, levels, side="right") - 1
        return np.clip(idx, 0, self.x.size - 2)

    def value(self, levels):
        """Release rate at the given battery levels (levels > 0 assumed)."""
        lv = np.asarray(levels, dtype=float)
        if not self.extend and np.any(lv > self.x[-1] * (1.0 + 1e-12)):
            raise DomainError("level beyond the policy grid")
        clipped = np.minimum(lv, self.x[-1])
        i = self._cell_of(clipped)
        psq = self._psq[i] + self._b[i] * (clipped - self.x[i])
        out = np.sqrt(np.maximum(psq, 0.0))
        return float(out) if np.ndim(levels) == 0 else out

    def tau(self, levels):
        """Time to drain from ``levels`` to empty absent new arrivals."""
        lv = np.asarray(levels, dtype=float)
        over = np.maximum(lv - self.x[-1], 0.0)
        if not self.extend and np.any(over > 1e-12 * max(self.x[-1], 1.0)):
            raise DomainError("level beyond the policy grid")
        clipped = lv - over
        i = self._cell_of(clipped)
        dv = clipped - self.x[i]
        pv = np.sqrt(np.maximum(self._psq[i] + self._b[i] * dv, 0.0))
        out = self.tau_nodes[i] + 2.0 * dv / (pv + self.p[i]) + over / self.p[-1]
        return float(out) if np.ndim(levels) == 0 else out

    def tau_inverse(self, tau_values):
        """Battery level whose drain-to-empty time equals ``tau_values``."""
        tv = np.asarray(tau_values, dtype=float)
        over = np.maximum(tv - self.tau_nodes[-1], 0.0)
        clipped = tv - over
        i = np.clip(np.searchsorted(self.tau_nodes, clipped, side="right") - 1,
                    0, self.x.size - 2)
        dt = clipped - self.tau_nodes[i]
        # p falls linearly in time inside a cell: level is quadratic in dt;
        # clamp to the cell edge against round-trip roundoff
        out = np.minimum(self.x[i] + self.p[i] * dt + 0.25 * self._b[i] * dt * dt,
                         self.x[i + 1])
        out = out + over * self.p[-1]
        return float(out) if np.ndim(tau_values) == 0 else out

    def drain(self, levels, dt):
        """Levels after draining for time ``dt`` (0 once the battery empties)."""
        lv = np.asarray(levels, dtype=float)
        target = self.tau(lv) - np.asarray(dt, dtype=float)
        out = np.where(target > 0.0, self.tau_inverse(np.maximum(target, 0.0)), 0.0)
        return float(out) if np.ndim(levels) == 0 and np.ndim(dt) == 0 else out

    def power_integral(self, levels):
        """Integral of p(v) dv over (0, levels]; equals energy radiated per sweep."""
        lv = np.asarray(levels, dtype=float)
        over = np.maximum(lv - self.x[-1], 0.0)
        clipped = lv - over
        i = self._cell_of(clipped)
        dv = clipped - self.x[i]
        pv = np.sqrt(np.maximum(self._psq[i] + self._b[i] * dv, 0.0))
        p0 = self.p[i]
        partial = (2.0 * dv / 3.0) * (pv * pv + pv * p0 + p0 * p0) / (pv + p0)
        out = self.pint_nodes[i] + partial + over * self.p[-1]
        return float(out) if np.ndim(levels) == 0 else out
