"""Exact-trajectory Monte Carlo of the storage processes.

Between arrivals each battery drains deterministically through the
closed-form depletion map of its policy (no time stepping), empties in
finite time and idles at zero until the next arrival; arrivals add the
packet energy, truncated at the capacity.  Statistics that are integrals
along the trajectory (time at zero, radiated energy, occupancy CDF,
crossing counts) are accumulated in closed form per drain segment, so the
only sampling error left is the randomness of the arrivals themselves.

Each node's own transmitted bits also integrate in closed form along drains,
so only the multi-node rate interaction term needs numeric quadrature.  It
is sampled on the merged event timeline with substeps crowded toward the
interval starts and one-sided limits at the event instants where the
integrand jumps.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .arrivals import HarvestParams, PacketDistribution, sample_arrivals, survival
from .errors import DomainError
from .measures import PolicyGrid, StationaryMeasure
from .rates import RateFunction, rate

__all__ = ["SimConfig", "TrajectoryStats", "NodeRun", "simulate", "crossing_balance"]


@dataclass(frozen=True)
class SimConfig:
    """Run settings for the trajectory simulator."""

    horizon: float
    replications: int = 1
    seed: int = 0
    burn_in: float = 0.0
    level_probes: tuple = ()
    cdf_probes: int = 257
    joint_substeps: int = 2
    track_events: bool = False

    def __post_init__(self):
        if not self.burn_in >= 0.0:
            raise DomainError(f"burn-in must be nonnegative, got {self.burn_in}")
        if not self.horizon > self.burn_in:
            raise DomainError("horizon must exceed the burn-in time")
        if self.replications < 1:
            raise DomainError("at least one replication is required")
        if self.joint_substeps < 1:
            raise DomainError("joint_substeps must be at least 1")


@dataclass
class NodeRun:
    """Per-node trajectory record of one replication, clipped to the window.

    Each drain segment starts at ``seg_start`` from ``seg_level``, drains for
    ``drain_dur`` down to ``seg_end_level`` (0 when the battery empties) and
    then idles for ``idle_dur`` until the next arrival.
    """

    seg_start: np.ndarray
    seg_level: np.ndarray
    seg_end_level: np.ndarray
    drain_end: np.ndarray     # wall time the drain stops; bitwise equal to the
    drain_dur: np.ndarray     # merged-timeline cut at that instant
    idle_dur: np.ndarray
    pre_arrival: np.ndarray
    post_arrival: np.ndarray
    overflow: float


@dataclass
class TrajectoryStats:
    """Time-average observables with across-replication standard errors."""

    window: float
    replications: int
    throughput: float
    throughput_se: float
    atom: np.ndarray
    atom_se: np.ndarray
    mean_power: np.ndarray
    mean_power_se: np.ndarray
    power_variance: np.ndarray
    power_variance_se: np.ndarray
    overflow_rate: np.ndarray
    cdf_levels: np.ndarray
    cdf: np.ndarray            # node x probe, pooled over replications
    crossing_levels: np.ndarray
    down_rate: np.ndarray      # node x probe
    down_rate_se: np.ndarray
    up_rate: np.ndarray
    up_rate_se: np.ndarray
    down_count: np.ndarray
    up_count: np.ndarray
    event_log: list = field(default_factory=list, repr=False)

    def to_text(self) -> str:
        lines = [f"window = {self.window!r}",
                 f"replications = {self.replications}",
                 f"throughput = {self.throughput!r} +- {self.throughput_se!r}"]
        for k in range(self.atom.size):
            lines.append(
                f"node{k}: atom = {float(self.atom[k])!r} +- "
                f"{float(self.atom_se[k])!r}, "
                f"mean_power = {float(self.mean_power[k])!r} +- "
                f"{float(self.mean_power_se[k])!r}, "
                f"power_variance = {float(self.power_variance[k])!r} +- "
                f"{float(self.power_variance_se[k])!r}, "
                f"overflow_rate = {float(self.overflow_rate[k])!r}")
        return "\n".join(lines) + "\n"


def _walk_trajectory(interp, capacity, times, energies, burn_in, horizon,
                     log, node):
    """Sequential walk over arrivals with exact drains, clipped to the window.

    Fast scalar path: plain-Python lists and bisect, one step per arrival.
    """
    xs = interp.x.tolist()
    ps = interp.p.tolist()
    psq = interp._psq.tolist()
    bs = interp._b.tolist()
    taus = interp.tau_nodes.tolist()
    tau_top = taus[-1]
    x_top = xs[-1]
    p_top = ps[-1]
    top_cell = len(xs) - 2

    def tau_of(level):
        if level >= x_top:
            return tau_top + (level - x_top) / p_top
        i = bisect_right(xs, level) - 1
        if i < 0:
            i = 0
        elif i > top_cell:
            i = top_cell
        dv = level - xs[i]
        pv = math.sqrt(psq[i] + bs[i] * dv)
        return taus[i] + 2.0 * dv / (pv + ps[i])

    def level_of(tau):
        if tau >= tau_top:
            return x_top + (tau - tau_top) * p_top
        i = bisect_right(taus, tau) - 1
        if i < 0:
            i = 0
        elif i > top_cell:
            i = top_cell
        dt = tau - taus[i]
        return xs[i] + ps[i] * dt + 0.25 * bs[i] * dt * dt

    seg_start, seg_level, seg_end_level = [], [], []
    drain_end, drain_dur, idle_dur = [], [], []
    pre_arr, post_arr = [], []
    overflow = 0.0
    t_prev = 0.0
    level = 0.0
    events = list(zip(times.tolist(), energies.tolist()))
    events.append((horizon, None))
    for t_next, energy in events:
        # advance the state over [t_prev, t_next): drain then idle.  The drain
        # stop time t_stop is stored as the exact float the merged timeline
        # will cut at, so one-sided limits resolve by float identity.
        if level > 0.0:
            tau_lv = tau_of(level)
            if t_prev + tau_lv <= t_next:
                end_level, t_stop = 0.0, t_prev + tau_lv
            else:
                end_level, t_stop = level_of(tau_lv - (t_next - t_prev)), t_next
        else:
            end_level, t_stop = 0.0, t_prev
        # emit the window-clipped portion of the segment
        if t_next > burn_in:
            if t_prev >= burn_in:
                seg_start.append(t_prev)
                seg_level.append(level)
                seg_end_level.append(end_level)
                drain_end.append(t_stop)
                drain_dur.append(t_stop - t_prev)
                idle_dur.append(t_next - t_stop)
            elif t_stop > burn_in:
                lv_at_burn = level_of(tau_of(level) - (burn_in - t_prev))
                seg_start.append(burn_in)
                seg_level.append(lv_at_burn)
                seg_end_level.append(end_level)
                drain_end.append(t_stop)
                drain_dur.append(t_stop - burn_in)
                idle_dur.append(t_next - t_stop)
            else:
                seg_start.append(burn_in)
                seg_level.append(0.0)
                seg_end_level.append(0.0)
                drain_end.append(burn_in)
                drain_dur.append(0.0)
                idle_dur.append(t_next - burn_in)
            if log is not None and t_stop > t_prev and end_level == 0.0:
                log.append((t_stop, node, "empty", 0.0))
        if energy is None:
            break
        post = end_level + energy
        if post > capacity:
            overflow_inc = post - capacity
            post = capacity
        else:
            overflow_inc = 0.0
        if t_next >= burn_in:
            pre_arr.append(end_level)
            post_arr.append(post)
            overflow += overflow_inc
            if log is not None:
                log.append((t_next, node, "arrival", post))
        t_prev = t_next
        level = post
    return NodeRun(seg_start=np.asarray(seg_start), seg_level=np.asarray(seg_level),
                   seg_end_level=np.asarray(seg_end_level),
                   drain_end=np.asarray(drain_end), drain_dur=np.asarray(drain_dur),
                   idle_dur=np.asarray(idle_dur), pre_arrival=np.asarray(pre_arr),
                   post_arrival=np.asarray(post_arr), overflow=overflow)


def _occupancy_cdf(interp, run: NodeRun, probes, window):
    """Exact fraction of window time spent at or below each probe level.

    The time a drain from a to b spends at or below q is
    tau(clip(q, b, a)) - tau(b); summing over segments reduces to sorted
    prefix sums, so the cost is O((segments + probes) log segments).
    """
    live = run.drain_dur > 0.0
    a = run.seg_level[live]
    b = run.seg_end_level[live]
    ta = interp.tau(a)
    tb = interp.tau(b)
    a_sorted = np.sort(a)
    b_sorted = np.sort(b)
    pref_ta = np.concatenate(([0.0], np.cumsum(ta[np.argsort(a, kind="stable")])))
    pref_tb = np.concatenate(([0.0], np.cumsum(tb[np.argsort(b, kind="stable")])))
    atom_time = float(np.sum(run.idle_dur))
    cnt_a = np.searchsorted(a_sorted, probes, side="right")   # drains fully below q
    cnt_b = np.searchsorted(b_sorted, probes, side="left")    # drain floors below q
    below = (atom_time + pref_ta[cnt_a] - pref_tb[cnt_b]
             + interp.tau(probes) * (cnt_b - cnt_a))
    return below / window


def _crossing_counts(run: NodeRun, probes):
    """Down/up crossing counts at each probe level."""
    live = run.drain_dur > 0.0
    a = np.sort(run.seg_level[live])
    b = np.sort(run.seg_end_level[live])
    down = (np.searchsorted(b, probes, side="left")
            - np.searchsorted(a, probes, side="left"))
    up = (np.searchsorted(np.sort(run.pre_arrival), probes, side="left")
          - np.searchsorted(np.sort(run.post_arrival), probes, side="left"))
    return down.astype(float), up.astype(float)


class _RateClock:
    """Closed-form time integral of the own rate r(p(X(t))) along drains.

    Over a drain the time differential is dv / p(v), so the integral of
    r(p(v)) / p(v) in the level accumulates the transmitted bits exactly;
    under the cellwise p^2-linear interpretation it reduces to the rate
    antiderivative evaluated at the cell-edge release rates.
    """

    def __init__(self, interp, rf: RateFunction):
        self.interp = interp
        self.n0 = rf.n0
        x, p = interp.x, interp.p
        cells = self._cell_integral(p[:-1], p[1:], np.diff(x))
        self.nodes = np.concatenate(([0.0], np.cumsum(cells)))
        self.top_rate_over_p = float(rate(rf, p[-1]) / p[-1])

    def _antideriv(self, p):
        # integral of r in the release rate: 0.5[(n0+p) log2(1+p/n0) - p/ln2]
        return 0.5 * ((self.n0 + p) * np.log1p(p / self.n0) - p) / math.log(2.0)

    def _cell_integral(self, p0, p1, dx):
        slope = (p1 * p1 - p0 * p0) / dx
        wide = np.abs(p1 - p0) > 1e-6 * p0
        safe = np.where(wide, slope, 1.0)
        exact = 2.0 * (self._antideriv(p1) - self._antideriv(p0)) / safe
        mid = 0.5 * (p0 + p1)
        r_mid = 0.5 * np.log1p(mid / self.n0) / math.log(2.0)
        return np.where(wide, exact, dx * r_mid / mid)

    def integral(self, levels):
        """Cumulative bits transmitted draining from ``levels`` down to 0."""
        interp = self.interp
        lv = np.asarray(levels, dtype=float)
        over = np.maximum(lv - interp.x[-1], 0.0)
        clipped = lv - over
        i = interp._cell_of(clipped)
        dv = clipped - interp.x[i]
        pv = np.sqrt(np.maximum(interp._psq[i] + interp._b[i] * dv, 0.0))
        partial = self._cell_integral(interp.p[i], np.maximum(pv, interp.p[i] * 1e-300),
                                      np.maximum(dv, 1e-300))
        partial = np.where(dv > 0.0, partial, 0.0)
        return self.nodes[i] + partial + over * self.top_rate_over_p


def _joint_rate_integral(interps, runs, rf: RateFunction, burn_in, horizon,
                         substeps, chunk=200_000):
    """Integral of r(sum of release rates) over the window, merged timeline.

    Each node's own-rate integral is exact (see _RateClock); only the
    interaction remainder r(sum p_k) - sum r(p_k), which is bounded and
    varies on the slow timescale, is sampled on the merged event timeline.
    Event instants carry one-sided limits: the first sample of an interval
    takes the post-event value, the last the pre-event one (a battery that
    empties exactly at the cut still transmits at p(0+) from the left).
    """
    exact = 0.0
    for interp, run in zip(interps, runs):
        clock = _RateClock(interp, rf)
        exact += float(np.sum(clock.integral(run.seg_level)
                              - clock.integral(run.seg_end_level)))
    if len(runs) == 1:
        return exact
    cuts = [np.asarray([burn_in, horizon])]
    for run in runs:
        cuts.append(run.seg_start)
        empties = (run.seg_end_level == 0.0) & (run.drain_dur > 0.0)
        cuts.append(run.drain_end[empties])
    t = np.unique(np.concatenate(cuts))
    t = t[(t >= burn_in) & (t <= horizon)]
    total = 0.0
    # sample fractions crowd logarithmically toward the interval start: right
    # after an arrival an aggressive policy sheds the top charge within a tiny
    # fraction of the interval, and uniform substeps would credit that spike
    # with a full trapezoid panel
    frac = np.unique(np.concatenate((
        [0.0], np.geomspace(1e-7, 1.0, 4 * substeps + 9),
        np.linspace(0.0, 1.0, substeps + 1))))
    w = np.empty_like(frac)
    w[1:-1] = 0.5 * (frac[2:] - frac[:-2])
    w[0] = 0.5 * (frac[1] - frac[0])
    w[-1] = 0.5 * (frac[-1] - frac[-2])
    for lo in range(0, t.size - 1, chunk):
        hi = min(lo + chunk, t.size - 1)
        t0 = t[lo:hi]
        t1 = t[lo + 1:hi + 1]
        dt = t1 - t0
        samples = t0[:, None] + dt[:, None] * frac[None, :]
        samples[:, -1] = t1  # exact cut float, not t0 + dt
        p_sum = np.zeros_like(samples)
        own_rate = np.zeros_like(samples)
        for interp, run in zip(interps, runs):
            idx = np.searchsorted(run.seg_start, t0, side="right") - 1
            idx = np.clip(idx, 0, run.seg_start.size - 1)
            de = run.drain_end[idx]
            # cut instants equal drain_end floats bitwise, so the one-sided
            # limits resolve exactly: the left endpoint takes the post-event
            # branch (strict <), the right endpoint the pre-event one (<=)
            draining = samples < de[:, None]
            draining[:, -1] = (t1 <= de) & (run.drain_dur[idx] > 0.0)
            elapsed = np.minimum(samples, de[:, None]) - run.seg_start[idx][:, None]
            tau_left = interp.tau(run.seg_level[idx])[:, None] - elapsed
            level = interp.tau_inverse(np.maximum(tau_left, 0.0))
            p_node = np.where(draining, interp.value(np.maximum(level, 0.0)), 0.0)
            p_sum += p_node
            own_rate += rate(rf, p_node)
        vals = rate(rf, p_sum) - own_rate
        total += float(np.sum((vals @ w) * dt))
    return exact + total


def simulate(nodes, rf: RateFunction, config: SimConfig) -> TrajectoryStats:
    """Run the event-driven storage simulation and collect time averages.

    ``nodes`` is a sequence of (HarvestParams, PolicyGrid, PacketDistribution)
    triples; every statistic is bit-reproducible under (config, seed).
    """
    nodes = list(nodes)
    m = len(nodes)
    if m < 1:
        raise DomainError("at least one node is required")
    window = config.horizon - config.burn_in
    interps = [policy.interp(extend=params.is_infinite)
               for params, policy, _ in nodes]
    probes_cdf = None
    if config.cdf_probes:
        # per-node probe grids: a finite battery never exceeds its capacity,
        # an unbounded one gets headroom beyond the policy's sampled span
        probes_cdf = [np.linspace(0.0, policy.capacity if not params.is_infinite
                                  else 1.5 * policy.capacity,
                                  config.cdf_probes)[1:]
                      for params, policy, _ in nodes]
    probes_cross = np.asarray(config.level_probes, dtype=float)
    if probes_cross.size:
        for _, policy, _ in nodes:
            if np.any(probes_cross <= 0.0) or np.any(probes_cross >= policy.capacity):
                raise DomainError("crossing probes must lie strictly inside (0, L)")

    reps = config.replications
    thr = np.empty(reps)
    atom = np.empty((reps, m))
    mean_p = np.empty((reps, m))
    var_p = np.empty((reps, m))
    over = np.empty((reps, m))
    cdf_acc = ([np.zeros(p.size) for p in probes_cdf]
               if probes_cdf is not None else None)
    down = np.zeros((reps, m, probes_cross.size))
    up = np.zeros((reps, m, probes_cross.size))
    log = [] if config.track_events else None

    for rep in range(reps):
        runs = []
        for k, (params, policy, dist) in enumerate(nodes):
            times, energies = sample_arrivals(params, dist, config.horizon,
                                              config.seed, node=k, replication=rep)
            run = _walk_trajectory(interps[k], params.capacity, times, energies,
                                   config.burn_in, config.horizon, log, k)
            runs.append(run)
            atom[rep, k] = float(np.sum(run.idle_dur)) / window
            energy_out = float(np.sum(run.seg_level - run.seg_end_level))
            mean_p[rep, k] = energy_out / window
            sq = float(np.sum(interps[k].power_integral(run.seg_level)
                              - interps[k].power_integral(run.seg_end_level)))
            var_p[rep, k] = sq / window - mean_p[rep, k] ** 2
            over[rep, k] = run.overflow / window
            if probes_cdf is not None:
                cdf_acc[k] += _occupancy_cdf(interps[k], run, probes_cdf[k], window)
            if probes_cross.size:
                d, u = _crossing_counts(run, probes_cross)
                down[rep, k] = d / window
                up[rep, k] = u / window
        thr[rep] = _joint_rate_integral(interps, runs, rf, config.burn_in,
                                        config.horizon,
                                        config.joint_substeps) / window

    def se(arr):
        if reps == 1:
            return np.zeros(arr.shape[1:])
        return np.std(arr, axis=0, ddof=1) / math.sqrt(reps)

    return TrajectoryStats(
        window=window, replications=reps,
        throughput=float(np.mean(thr)),
        throughput_se=float(se(thr)) if reps > 1 else 0.0,
        atom=np.mean(atom, axis=0), atom_se=se(atom),
        mean_power=np.mean(mean_p, axis=0), mean_power_se=se(mean_p),
        power_variance=np.mean(var_p, axis=0), power_variance_se=se(var_p),
        overflow_rate=np.mean(over, axis=0),
        cdf_levels=(np.asarray(probes_cdf) if probes_cdf is not None else np.empty((m, 0))),
        cdf=(np.asarray(cdf_acc) / reps if cdf_acc is not None else np.empty((m, 0))),
        crossing_levels=probes_cross,
        down_rate=np.mean(down, axis=0), down_rate_se=se(down),
        up_rate=np.mean(up, axis=0), up_rate_se=se(up),
        down_count=np.sum(down, axis=0) * window,
        up_count=np.sum(up, axis=0) * window,
        event_log=log or [])


def _convolved_up_rate(measure: StationaryMeasure, params: HarvestParams,
                       dist: PacketDistribution, level: float,
                       refine: int = 1024) -> float:
    """lam * [atom * (1-B(x)) + integral of (1-B(x-v)) f(v) dv on (0, x]]."""
    vv = np.linspace(0.0, level, refine + 1)
    fv = measure.density_at(vv)
    kern = survival(dist, level - vv)
    conv = float(np.trapezoid(kern * fv, vv))
    return params.lam * (measure.atom * survival(dist, level) + conv)


def crossing_balance(stats: TrajectoryStats, measure: StationaryMeasure,
                     policy: PolicyGrid, params: HarvestParams,
                     dist: PacketDistribution, node: int = 0):
    """Compare counted crossing rates of one node against the stationary law.

    At each probe the long-run down-crossing rate must equal f(x) p(x) and
    the up-crossing rate its arrival-side counterpart; both sides are
    evaluated from the supplied measure, and the verdicts use three
    across-replication standard errors.
    """
    probes = stats.crossing_levels
    if probes.size == 0:
        raise DomainError("the simulation tracked no crossing probes")
    if np.any(probes <= 0.0) or np.any(probes >= policy.capacity):
        raise DomainError("crossing probes must lie strictly inside (0, L)")
    interp = policy.interp(extend=True)
    ana_down = measure.density_at(probes) * interp.value(probes)
    records = []
    for i, q in enumerate(probes):
        ana_up = _convolved_up_rate(measure, params, dist, float(q))
        emp_d, se_d = float(stats.down_rate[node, i]), float(stats.down_rate_se[node, i])
        emp_u, se_u = float(stats.up_rate[node, i]), float(stats.up_rate_se[node, i])
        records.append({
            "level": float(q),
            "down_empirical": emp_d, "down_se": se_d,
            "down_analytic": float(ana_down[i]),
            "down_within_3se": abs(emp_d - ana_down[i]) <= 3.0 * max(se_d, 5e-16),
            "up_empirical": emp_u, "up_se": se_u,
            "up_analytic": float(ana_up),
            "up_within_3se": abs(emp_u - ana_up) <= 3.0 * max(se_u, 5e-16),
        })
    return records
