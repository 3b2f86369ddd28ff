import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cakecut.adversary import gen_ef2_lb, gen_mnw_lb, gen_pa_lb, pa_lb_h
from cakecut.core import CakeError, Interval, PiecewiseDensity, check_disjoint, make_profile, to_share_matrix
from cakecut.mechanisms import (
    MechanismSpec,
    expected_utility,
    half_point,
    pa_factors,
    run_ef2,
    run_even_split,
    run_interpolated,
    run_interpolated_items,
    run_mechanism,
    run_mnw_mechanism,
    run_pa,
    run_randomized_pa,
)
from cakecut.solver import solve_mnw

from conftest import profiles

TWO_UNIFORM = make_profile([(0, 1), (0, 1)], [(1,), (1,)])
ONE = make_profile([(0, 0.5, 1)], [(2, 1)])


def test_spec_validation():
    with pytest.raises(ValueError):
        MechanismSpec("bogus")
    with pytest.raises(ValueError):
        MechanismSpec("interp", 1.5)
    with pytest.raises(ValueError):
        MechanismSpec("pa", 0.5)
    assert MechanismSpec("interp").c == 1.0
    assert MechanismSpec("interp", 0.25).label == "interp(c=0.25)"


class TestMnwMechanism:
    def test_lower_bound_instance(self):
        p, _ = gen_mnw_lb(3)
        np.testing.assert_allclose(run_mnw_mechanism(p).utilities(p), [3, 1.5, 1.5], atol=1e-9)

    def test_uniform_covers_cake(self):
        alloc = run_mnw_mechanism(TWO_UNIFORM)
        np.testing.assert_allclose(alloc.utilities(TWO_UNIFORM), [0.5, 0.5])
        assert sum(alloc.measure(i) for i in range(2)) == pytest.approx(1.0)

    def test_zero_cell_to_first_agent(self):
        p = make_profile([(0, 0.5, 1), (0, 0.5, 1)], [(1, 0), (1, 0)])
        alloc = run_mnw_mechanism(p)
        assert to_share_matrix(p, alloc).lengths[0, 1] == pytest.approx(0.5)
        free = solve_mnw(p, complete=False).utilities
        np.testing.assert_allclose(alloc.utilities(p), free, atol=1e-9)


class TestPaFactors:
    def test_single_agent(self):
        assert pa_factors(ONE).factors.tolist() == [1.0]

    def test_two_uniform(self):
        np.testing.assert_allclose(pa_factors(TWO_UNIFORM).factors, [0.5, 0.5], atol=1e-9)

    def test_lower_bound_instance(self):
        p, _ = gen_pa_lb(10)
        h = pa_lb_h(10)
        y1 = pa_factors(p).factors[0]
        assert y1 == pytest.approx((1 - h / 10) ** 9, abs=1e-9)
        # Seven-digit value of the closed form.
        assert y1 == pytest.approx(0.7007442, abs=1e-7)

    @given(profiles(max_n=5))
    def test_bounds(self, p):
        y = pa_factors(p).factors
        assert np.all(y >= 1 / math.e - 1e-9)
        assert np.all(y <= 1 + 1e-9)

    def test_leaveout_runs_on_whole_cake(self):
        p, _ = gen_mnw_lb(3)
        inter = pa_factors(p)
        assert len(inter.leaveout) == 3
        np.testing.assert_allclose(inter.leaveout[0].utilities, [1.5, 1.5])


class TestPa:
    def test_two_uniform(self):
        alloc = run_pa(TWO_UNIFORM)
        np.testing.assert_allclose(alloc.utilities(TWO_UNIFORM), [0.25, 0.25], atol=1e-9)
        # Rightmost half of [0, 0.5] and of [0.5, 1].
        assert alloc.bundles[0] == (Interval(0.25, 0.5),)
        assert alloc.bundles[1] == (Interval(0.75, 1.0),)

    def test_single_agent(self):
        assert run_pa(ONE).utilities(ONE)[0] == pytest.approx(1.5)

    def test_lower_bound_truthful(self):
        p, _ = gen_pa_lb(10)
        h = pa_lb_h(10)
        u = run_pa(p).utilities(p)[0]
        assert u == pytest.approx(h * (1 - h / 10) ** 9, abs=1e-9)
        assert u == pytest.approx(0.2714827, abs=1e-7)

    @given(profiles(max_n=4))
    def test_utility_is_factor_times_mnw(self, p):
        inter = pa_factors(p)
        u = run_pa(p).utilities(p)
        np.testing.assert_allclose(u, inter.factors * inter.full.utilities, atol=1e-9)
        check_disjoint(run_pa(p))


class TestRandomizedPa:
    def test_single_agent_ignores_seed(self):
        a = run_randomized_pa(ONE, seed=1)
        assert a == run_randomized_pa(ONE, seed=2)
        assert a == run_mnw_mechanism(ONE)

    def test_seeded_reproducible(self):
        p, _ = gen_mnw_lb(3)
        assert run_randomized_pa(p, seed=7) == run_randomized_pa(p, seed=7)

    def test_monte_carlo_mean(self):
        us = [run_randomized_pa(TWO_UNIFORM, seed=s).utilities(TWO_UNIFORM)[0] for s in range(10_000)]
        assert abs(np.mean(us) - 0.25) <= 0.005

    def test_point_inclusion_frequency(self):
        p = make_profile([(0, 1), (0, 1), (0, 1)], [(1,), (1,), (1,)])
        inter = pa_factors(p)
        piece = inter.full.allocation.bundles[0][0]
        probe = piece.lo + 0.3 * piece.length
        hits = 0
        for s in range(10_000):
            bundle = run_randomized_pa(p, seed=s).bundles[0]
            hits += any(iv.lo < probe < iv.hi for iv in bundle)
        assert abs(hits / 10_000 - inter.factors[0]) <= 0.02

    @given(profiles(max_n=4), st.integers(0, 2**32 - 1))
    def test_utility_matches_pa(self, p, seed):
        # The cyclic arc has the same length as the rightmost one on every cell.
        np.testing.assert_allclose(
            run_randomized_pa(p, seed).utilities(p), run_pa(p).utilities(p), atol=1e-9
        )


class TestInterpolated:
    @given(profiles(max_n=4), st.integers(0, 1000))
    def test_c0_is_mnw(self, p, seed):
        assert np.array_equal(run_interpolated(p, 0.0, seed).utilities(p), run_mnw_mechanism(p).utilities(p))

    @given(profiles(max_n=4), st.integers(0, 1000))
    def test_c1_is_rpa(self, p, seed):
        assert run_interpolated(p, 1.0, seed) == run_randomized_pa(p, seed)

    def test_half_exponent(self):
        u = expected_utility(MechanismSpec("interp", 0.5), TWO_UNIFORM, TWO_UNIFORM.densities[0], 0)
        assert u == pytest.approx(0.5 * math.sqrt(0.5), abs=1e-9)
        assert u == pytest.approx(0.35355, abs=1e-5)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            run_interpolated(TWO_UNIFORM, -0.1)
        with pytest.raises(ValueError):
            run_interpolated_items(TWO_UNIFORM, 1.1)

    def test_items_variant(self):
        np.testing.assert_allclose(run_interpolated_items(TWO_UNIFORM, 0.5).utilities(TWO_UNIFORM), [0.35355] * 2, atol=1e-5)
        p, _ = gen_mnw_lb(3)
        assert run_interpolated_items(p, 1.0) == run_pa(p)
        assert run_interpolated_items(p, 0.0) == run_mnw_mechanism(p)

    @given(profiles(min_n=2, max_n=4), st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]))
    def test_guarantee(self, p, c):
        u = run_interpolated(p, c, seed=3).utilities(p)
        assert np.all(u >= math.exp(-c) * solve_mnw(p).utilities - 1e-6)


class TestHalfPoint:
    def test_uniform(self):
        assert half_point(PiecewiseDensity.uniform(), Interval(0, 1)) == pytest.approx(0.5)

    def test_ef2_agent1(self):
        p, _ = gen_ef2_lb()
        assert half_point(p.densities[0], p.cake) == pytest.approx(0.25)

    def test_zero_segment_leftmost(self):
        d = PiecewiseDensity((0.0, 0.3, 0.7, 1.0), (1.0, 0.0, 1.0))
        assert half_point(d, Interval(0.3, 0.7)) == 0.3

    def test_leftmost_on_flat_zero_gap(self):
        d = PiecewiseDensity((0.0, 0.25, 0.75, 1.0), (1.0, 0.0, 1.0))
        assert half_point(d, Interval(0.0, 1.0)) == pytest.approx(0.25)

    @given(profiles(max_n=1), st.integers(0, 15), st.integers(1, 16))
    def test_halves(self, p, a, w):
        d = p.densities[0]
        seg = Interval(a / 16, min(1.0, (a + w) / 16))
        x = half_point(d, seg)
        assert seg.lo <= x <= seg.hi
        assert d.integral(seg.lo, x) == pytest.approx(d.integral(seg.lo, seg.hi) / 2, abs=1e-12)


class TestEf2:
    def test_truthful(self):
        p, _ = gen_ef2_lb()
        alloc, trace = run_ef2(p)
        assert (trace.x, trace.y) == pytest.approx((0.25, 0.5))
        assert (trace.p, trace.q) == pytest.approx((0.375, 0.375))
        assert trace.branch == "p<=q" and not trace.swapped
        assert alloc.bundles == ((Interval(0.0, 0.375),), (Interval(0.375, 1.0),))
        assert alloc.utilities(p)[0] == pytest.approx(3 / 8)

    def test_misreport(self):
        p, lie = gen_ef2_lb()
        alloc, _ = run_ef2(p.with_density(0, lie))
        assert alloc.bundles == ((Interval(0.0, 0.5),), (Interval(0.5, 1.0),))
        assert alloc.utilities(p)[0] == pytest.approx(0.5)

    def test_identical(self):
        alloc, trace = run_ef2(TWO_UNIFORM)
        assert (trace.x, trace.y, trace.p, trace.q) == pytest.approx((0.5, 0.5, 0.5, 0.5))
        assert alloc.bundles == ((Interval(0.0, 0.5),), (Interval(0.5, 1.0),))

    def test_needs_two(self):
        with pytest.raises(CakeError):
            run_ef2(ONE)

    def test_swap(self):
        p = make_profile([(0, 1), (0, 0.5, 1)], [(1,), (1, 0)])
        alloc, trace = run_ef2(p)
        assert trace.swapped
        assert trace.x <= trace.y
        u = alloc.utilities(p)
        assert u[0] >= 0.5 - 1e-9 and u[1] >= 0.25 - 1e-9
        # Agent 2 plays the first role: A_2 = [0, p] with p = 3/8.
        assert alloc.bundles[1] == (Interval(0.0, 0.375),)

    @given(profiles(min_n=2, max_n=2))
    def test_envy_free(self, p):
        alloc, trace = run_ef2(p)
        assert trace.x <= trace.y
        check_disjoint(alloc)
        assert sum(alloc.measure(i) for i in range(2)) == pytest.approx(1.0)
        for i in range(2):
            d = p.densities[i]
            own = alloc.utilities(p)[i]
            other = d.integral(0, 1) - own
            assert own >= other - 1e-9
            assert own >= d.total / 2 - 1e-9


class TestEvenSplit:
    def test_uniform(self):
        np.testing.assert_allclose(run_even_split(TWO_UNIFORM).utilities(TWO_UNIFORM), [0.5, 0.5])

    def test_lower_bound_instance(self):
        p, _ = gen_mnw_lb(3)
        assert run_even_split(p).utilities(p)[0] == pytest.approx(5 / 3)

    def test_single(self):
        assert run_even_split(ONE).bundles == ((Interval(0.0, 1.0),),)


class TestExpectedUtility:
    def test_deterministic_truthful(self):
        p, _ = gen_mnw_lb(3)
        alloc = run_mnw_mechanism(p)
        assert expected_utility(MechanismSpec("mnw"), p, p.densities[0], 0) == pytest.approx(3.0)
        assert alloc.utilities(p)[0] == pytest.approx(3.0)

    def test_rpa_truthful_closed_form(self):
        p, _ = gen_mnw_lb(3)
        inter = pa_factors(p)
        u = expected_utility(MechanismSpec("rpa"), p, p.densities[1], 1)
        assert u == pytest.approx(inter.factors[1] * inter.full.utilities[1], abs=1e-12)

    def test_rpa_pa_lb_misreport(self):
        p, lie = gen_pa_lb(10)
        h = pa_lb_h(10)
        u = expected_utility(MechanismSpec("rpa"), p.with_density(0, lie), p.densities[0], 0)
        assert u == pytest.approx(h * h, abs=1e-9)
        assert u == pytest.approx(0.150095, abs=1e-6)

    @pytest.mark.parametrize("mid", ["mnw", "pa", "ef2", "even-split", "interp-items"])
    def test_matches_realized(self, mid):
        p, _ = gen_ef2_lb()
        spec = MechanismSpec(mid)
        for a in range(2):
            assert expected_utility(spec, p, p.densities[a], a) == pytest.approx(
                run_mechanism(spec, p).utilities(p)[a]
            )
