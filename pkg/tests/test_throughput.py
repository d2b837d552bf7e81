import math

import numpy as np
import pytest

import ehmac as eh
from ehmac.errors import CapacityError, DomainError, MomentRangeError, UsageError


def constant_node(level=2.0, lam=1.0, zeta=1.0, span=12.0, n=256):
    hp = eh.HarvestParams(lam, zeta)
    pol = eh.constant_policy(level, span, n)
    meas = eh.measure_closed_form(pol, hp)
    return (hp, pol, meas)


def atom_node(capacity=2.0):
    """Degenerate node whose battery is (almost) always empty."""
    hp = eh.HarvestParams(0.0, 1.0, capacity)
    pol = eh.constant_policy(1.0, capacity, 64)
    meas = eh.measure_closed_form(pol, hp)
    return (hp, pol, meas)


def measure_from_g(grid, g, atom, lam, zeta):
    """Assemble (policy, measure) from the transformed density g and an atom.

    The release policy carrying this stationary law is lam * G / g with G the
    atom plus the running integral of g; the density is exp(-zeta x) g.
    """
    h = grid[1] - grid[0]
    big_g = atom + np.concatenate(([0.0], np.cumsum(0.5 * h * (g[:-1] + g[1:]))))
    p = lam * big_g / g
    values = p.copy()
    values[0] = 0.0
    pol = eh.PolicyGrid(grid=grid, values=values, p0plus=float(p[0]))
    f = np.exp(-zeta * grid) * g
    masses = 0.5 * h * (f[:-1] + f[1:])
    meas = eh.StationaryMeasure(grid=grid, atom=atom, density=f, cell_masses=masses)
    return pol, meas


def random_feasible_g(rng, grid, zeta, lam):
    """Random feasible (atom, g) pair: atom + integral(e^{-zeta x} g) = 1."""
    raw = np.exp(rng.normal(0.0, 0.4, size=4))
    w = rng.uniform(0.5, 3.0, size=4)
    phase = rng.uniform(0.0, math.pi, size=4)
    g = raw[0] + raw[1] * grid + raw[2] * np.sin(w[0] * grid + phase[0]) ** 2 \
        + raw[3] * np.cos(w[1] * grid + phase[1]) ** 2
    g = np.maximum(g, 0.05)
    h = grid[1] - grid[0]
    f = np.exp(-zeta * grid) * g
    total = float(np.sum(0.5 * h * (f[:-1] + f[1:])))
    target = float(rng.uniform(0.3, 0.9))
    g = g * (target / total)
    return 1.0 - target, g


class TestSumThroughput:
    def test_two_constant_nodes(self, rf):
        nodes = (constant_node(), constant_node())
        state = eh.SystemState(nodes=nodes, rate=rf)
        expected = 2.0 * 0.25 * eh.rate(rf, 2.0) + 0.25 * eh.rate(rf, 4.0)
        assert eh.sum_throughput(state) == pytest.approx(expected, abs=1e-4)

    def test_all_atom_single_node(self, rf):
        state = eh.SystemState(nodes=(atom_node(),), rate=rf)
        assert eh.sum_throughput(state) == pytest.approx(0.0, abs=1e-12)

    def test_two_pure_atoms(self, rf):
        state = eh.SystemState(nodes=(atom_node(), atom_node()), rate=rf)
        assert eh.sum_throughput(state) == pytest.approx(0.0, abs=1e-12)

    def test_three_constant_nodes_analytic(self, rf):
        hp = eh.HarvestParams(1.0, 1.0, 8.0)
        pol = eh.constant_policy(2.0, 8.0, 128)
        meas = eh.measure_closed_form(pol, hp)
        a = meas.atom
        state = eh.SystemState(nodes=((hp, pol, meas),) * 3, rate=rf)
        expected = sum(math.comb(3, k) * a**(3 - k) * (1.0 - a)**k
                       * eh.rate(rf, 2.0 * k) for k in (1, 2, 3))
        assert eh.sum_throughput(state) == pytest.approx(expected, rel=1e-9)

    def test_four_finite_nodes_analytic(self, rf):
        # largest allowed expansion; finite battery keeps the grid small
        hp = eh.HarvestParams(1.0, 1.0, 6.0)
        pol = eh.constant_policy(2.0, 6.0, 48)
        meas = eh.measure_closed_form(pol, hp)
        a = meas.atom
        state = eh.SystemState(nodes=((hp, pol, meas),) * 4, rate=rf)
        expected = sum(math.comb(4, k) * a**(4 - k) * (1.0 - a)**k
                       * eh.rate(rf, 2.0 * k) for k in range(1, 5))
        assert eh.sum_throughput(state) == pytest.approx(expected, rel=1e-9)

    def test_node_cap(self, rf):
        nodes = tuple(constant_node(n=64) for _ in range(5))
        state = eh.SystemState(nodes=nodes, rate=rf)
        with pytest.raises(CapacityError):
            eh.sum_throughput(state)

    def test_unnormalized_measure_rejected(self, rf):
        hp, pol, meas = constant_node()
        bad = eh.StationaryMeasure(grid=meas.grid, atom=meas.atom * 0.5,
                                   density=meas.density,
                                   cell_masses=meas.cell_masses)
        with pytest.raises(DomainError):
            eh.SystemState(nodes=((hp, pol, bad),), rate=rf)


class TestPhiMoments:
    def test_single_node_collapses_to_rate(self, rf):
        state = eh.SystemState(nodes=(constant_node(),), rate=rf)
        q = np.linspace(0.0, 6.0, 61)
        phi = eh.phi_moments(state, 0, q)
        assert np.allclose(phi.phi, eh.rate(rf, q))
        assert np.allclose(phi.dphi, eh.rate_deriv(rf, q, 1))
        assert np.allclose(phi.d2phi, eh.rate_deriv(rf, q, 2))

    def test_degenerate_other_node(self, rf):
        state = eh.SystemState(nodes=(constant_node(), atom_node()), rate=rf)
        q = np.linspace(0.0, 6.0, 61)
        phi = eh.phi_moments(state, 0, q)
        assert np.max(np.abs(phi.phi - eh.rate(rf, q))) < 1e-9

    def test_constant_other_node_value(self, rf):
        state = eh.SystemState(nodes=(constant_node(), constant_node()), rate=rf)
        phi = eh.phi_moments(state, 0, np.linspace(0.0, 6.0, 61))
        val, d1, d2 = phi.eval3(2.0)
        expected = 0.5 * eh.rate(rf, 2.0) + 0.5 * eh.rate(rf, 4.0)
        assert val == pytest.approx(expected, abs=2e-4)
        assert d1 > 0.0 and d2 < 0.0

    def test_tabulation_is_increasing_concave(self, rf):
        state = eh.SystemState(nodes=(constant_node(), constant_node()), rate=rf)
        phi = eh.phi_moments(state, 0, np.linspace(0.0, 20.0, 101))
        assert np.all(np.diff(phi.phi) > 0.0)
        assert np.all(phi.d2phi < 0.0)

    def test_derivative_consistent_with_tabulation(self, rf):
        state = eh.SystemState(nodes=(constant_node(), constant_node()), rate=rf)
        q = np.linspace(0.0, 10.0, 2001)
        phi = eh.phi_moments(state, 0, q)
        fd = np.gradient(phi.phi, q)
        assert np.max(np.abs(fd[1:-1] - phi.dphi[1:-1])) < 1e-4

    def test_out_of_range_query(self, rf):
        state = eh.SystemState(nodes=(constant_node(), constant_node()), rate=rf)
        phi = eh.phi_moments(state, 0, np.linspace(0.0, 5.0, 41))
        with pytest.raises(MomentRangeError):
            phi.eval3(6.0)
        extended = phi.extended(50.0)
        val, _, _ = extended.eval3(6.0)
        assert val > 0.0

    def test_bad_node_index(self, rf):
        state = eh.SystemState(nodes=(constant_node(),), rate=rf)
        with pytest.raises(UsageError):
            eh.phi_moments(state, 3, np.linspace(0.0, 5.0, 41))

    def test_three_node_moments_analytic(self, rf):
        # two identical constant others: binomial mixture of shifted rates;
        # exercises the chunked tensor path
        hp = eh.HarvestParams(1.0, 1.0, 6.0)
        pol = eh.constant_policy(2.0, 6.0, 96)
        meas = eh.measure_closed_form(pol, hp)
        a = meas.atom
        state = eh.SystemState(nodes=((hp, pol, meas),) * 3, rate=rf)
        phi = eh.phi_moments(state, 0, np.linspace(0.0, 8.0, 81))
        q = phi.q
        expected = (a * a * eh.rate(rf, q)
                    + 2.0 * a * (1.0 - a) * eh.rate(rf, q + 2.0)
                    + (1.0 - a)**2 * eh.rate(rf, q + 4.0))
        assert np.max(np.abs(phi.phi - expected)) < 1e-9

    def test_exact_moments_match_rate(self, rf):
        exact = eh.ExactRateMoments(rf)
        for p in (0.0, 0.3, 2.0, 50.0, 1e9):
            val, d1, d2 = exact.eval3(p)
            assert val == pytest.approx(eh.rate(rf, p), rel=1e-12)
            assert d1 == pytest.approx(eh.rate_deriv(rf, p, 1), rel=1e-12)
            assert d2 == pytest.approx(eh.rate_deriv(rf, p, 2), rel=1e-12)


class TestCoordinateConcavity:
    def test_mixture_dominance(self, rf):
        # mixing one coordinate's feasible (atom, g) pair never hurts the
        # utility relative to the mixture of utilities
        rng = np.random.default_rng(31)
        grid = np.linspace(0.0, 2.0, 257)
        other = constant_node()
        lam = zeta = 1.0
        hp = eh.HarvestParams(lam, zeta, 2.0)
        failures = 0
        for _ in range(100):
            atom1, g1 = random_feasible_g(rng, grid, zeta, lam)
            atom2, g2 = random_feasible_g(rng, grid, zeta, lam)
            utils = {}
            for alpha in (0.0, 0.25, 0.5, 0.75, 1.0):
                atom_mix = alpha * atom1 + (1.0 - alpha) * atom2
                g_mix = alpha * g1 + (1.0 - alpha) * g2
                pol, meas = measure_from_g(grid, g_mix, atom_mix, lam, zeta)
                state = eh.SystemState(nodes=((hp, pol, meas), other), rate=rf)
                utils[alpha] = eh.sum_throughput(state)
            for alpha in (0.25, 0.5, 0.75):
                lower = alpha * utils[1.0] + (1.0 - alpha) * utils[0.0]
                if utils[alpha] < lower - 1e-6:
                    failures += 1
        assert failures == 0


class TestLowerBound:
    def test_single_node_unit_excess(self, rf):
        hp = eh.HarvestParams(1.0, 1.0)
        val = eh.infinite_battery_lower_bound([hp], 1.0, rf)
        assert val == pytest.approx(eh.rate(rf, 2.0) * 0.5)

    def test_meets_ceiling_as_excess_vanishes(self, rf):
        hps = [eh.HarvestParams(1.0, 1.0)] * 2
        val = eh.infinite_battery_lower_bound(hps, 1e-9, rf)
        assert val == pytest.approx(eh.upper_bound_infinite(hps, rf), abs=1e-6)

    def test_infinite_excess(self, rf):
        hps = [eh.HarvestParams(1.0, 1.0)]
        assert eh.infinite_battery_lower_bound(hps, math.inf, rf) == 0.0

    def test_nonpositive_excess_rejected(self, rf):
        with pytest.raises(DomainError):
            eh.infinite_battery_lower_bound([eh.HarvestParams(1.0, 1.0)], 0.0, rf)
