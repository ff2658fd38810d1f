import math

import numpy as np
import pytest
from scipy.integrate import quad

from treeval import (
    Interval,
    IntervalSet,
    TruncatedNormal,
    estimate_sigma,
    naive_z,
    p_region,
    p_sibling,
    selective_ci,
    tn_cdf,
)
from treeval.inference import (
    DegenerateTruncationError,
    StatisticOutsideSupportError,
)

INF = math.inf
Z975 = 1.959964


def iset(*pieces):
    return IntervalSet(Interval(*p) for p in pieces)

FULL = IntervalSet.full()


def contains_vec(support, arr):
    mask = np.zeros(arr.size, dtype=bool)
    for iv in support.intervals:
        lo_ok = arr >= iv.lo if iv.lo_closed else arr > iv.lo
        hi_ok = arr <= iv.hi if iv.hi_closed else arr < iv.hi
        mask |= lo_ok & hi_ok
    return mask


def quadrature_cdf(x, tn):
    """Adaptive quadrature of the normal density over the support, run on a
    rescaled integrand so far tails stay representable."""
    a = np.array([(iv.lo - tn.mean) / tn.sd for iv in tn.support.intervals])
    b = np.array([(iv.hi - tn.mean) / tn.sd for iv in tn.support.intervals])
    z = (x - tn.mean) / tn.sd
    ref = min(
        abs(lo) if lo > 0 else (abs(hi) if hi < 0 else 0.0)
        for lo, hi in zip(a, b)
    )

    def dens(t):
        return math.exp(-0.5 * (t * t - ref * ref))

    def mass(lo, hi):
        if hi <= lo:
            return 0.0
        lo = max(lo, -60.0)
        hi = min(hi, 60.0)
        if hi <= lo:
            return 0.0
        val, _ = quad(dens, lo, hi, epsabs=1e-14, epsrel=1e-12, limit=200)
        return val

    total = sum(mass(lo, hi) for lo, hi in zip(a, b))
    below = sum(mass(lo, min(hi, z)) for lo, hi in zip(a, b))
    return below / total


class TestTnCdf:
    def test_untruncated_median(self):
        assert tn_cdf(0.0, TruncatedNormal(0.0, 1.0, FULL)) == pytest.approx(0.5)

    def test_support_ending_at_x_gives_one(self):
        tn = TruncatedNormal(0.0, 1.0, iset((-INF, 1.3)))
        assert tn_cdf(1.3, tn) == pytest.approx(1.0)

    def test_monotone_and_limits(self, rng):
        tn = TruncatedNormal(0.5, 2.0, iset((-4, -1), (0, 2), (5, 7)))
        xs = np.linspace(-5, 8, 60)
        vals = [tn_cdf(float(x), tn) for x in xs]
        assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))
        assert tn_cdf(-4.0, tn) == pytest.approx(0.0, abs=1e-12)
        assert tn_cdf(7.0, tn) == pytest.approx(1.0, abs=1e-12)

    def test_matches_quadrature_random(self, rng):
        for _ in range(25):
            mean = float(rng.uniform(-3, 3))
            sd = float(rng.uniform(0.3, 2.5))
            lo = mean + sd * np.sort(rng.uniform(-6, 6, size=6))
            tn = TruncatedNormal(mean, sd, iset((lo[0], lo[1]), (lo[2], lo[3]), (lo[4], lo[5])))
            x = float(rng.uniform(lo[0], lo[5]))
            assert tn_cdf(x, tn) == pytest.approx(quadrature_cdf(x, tn), abs=1e-8)

    def test_far_tail_support(self):
        # Support forty standard deviations into the upper tail.
        tn = TruncatedNormal(0.0, 1.0, iset((40.0, 40.5), (41.0, 42.0)))
        v = tn_cdf(40.4, tn)
        assert v == pytest.approx(quadrature_cdf(40.4, tn), abs=1e-8)
        assert 0.0 < v < 1.0

    def test_degenerate_support_raises(self):
        with pytest.raises(DegenerateTruncationError):
            TruncatedNormal(0.0, 1.0, iset((1.0, 1.0)))


class TestPSibling:
    def test_untruncated_reduces_to_z(self):
        tn = TruncatedNormal(0.0, 1.0, FULL)
        assert p_sibling(Z975, tn) == pytest.approx(0.05, abs=1e-6)

    def test_minimal_statistic_gives_one(self):
        tn = TruncatedNormal(0.0, 1.0, iset((-INF, -2), (2, INF)))
        assert p_sibling(2.0, tn) == pytest.approx(1.0)

    def test_monte_carlo_oracle(self, rng):
        support = iset((-3.0, -0.5), (0.8, 2.2), (3.0, INF))
        sd = 1.3
        tn = TruncatedNormal(0.0, sd, support)
        draws = rng.normal(0.0, sd, size=2_000_000)
        keep = draws[contains_vec(support, draws)]
        stat = 1.5
        mc = np.mean(np.abs(keep) >= abs(stat))
        se = math.sqrt(mc * (1 - mc) / keep.size)
        assert p_sibling(stat, tn) == pytest.approx(float(mc), abs=3.5 * se + 1e-12)

    def test_outside_support_errors(self):
        tn = TruncatedNormal(0.0, 1.0, iset((2, 3)))
        with pytest.raises(StatisticOutsideSupportError):
            p_sibling(1.0, tn)

    def test_endpoint_clamped_not_error(self):
        tn = TruncatedNormal(0.0, 1.0, iset((2, 3)))
        p = p_sibling(2.0 - 1e-12, tn)
        assert 0.0 <= p <= 1.0

    def test_decreasing_in_statistic(self):
        tn = TruncatedNormal(0.0, 1.0, iset((-4, 4)))
        ps = [p_sibling(s, tn) for s in (0.1, 0.9, 1.7, 2.9, 3.9)]
        assert all(a >= b for a, b in zip(ps, ps[1:]))


class TestPRegion:
    def test_untruncated_reduces_to_z(self):
        tn = TruncatedNormal(0.0, 1.0, FULL)
        assert p_region(Z975, 0.0, tn) == pytest.approx(0.05, abs=1e-6)

    def test_statistic_at_null_gives_one(self):
        tn = TruncatedNormal(4.0, 2.0, iset((0, 9)))
        assert p_region(4.0, 4.0, tn) == pytest.approx(1.0)

    def test_monte_carlo_oracle(self, rng):
        support = iset((1.0, 2.0), (2.5, 6.0))
        c, sd = 2.0, 1.1
        tn = TruncatedNormal(c, sd, support)
        draws = rng.normal(c, sd, size=2_000_000)
        keep = draws[contains_vec(support, draws)]
        stat = 3.1
        mc = np.mean(np.abs(keep - c) >= abs(stat - c))
        se = math.sqrt(mc * (1 - mc) / keep.size)
        assert p_region(stat, c, tn) == pytest.approx(float(mc), abs=3.5 * se + 1e-12)

    def test_must_center_at_null(self):
        tn = TruncatedNormal(0.0, 1.0, FULL)
        with pytest.raises(ValueError):
            p_region(0.5, 1.0, tn)


class TestSelectiveCi:
    def test_untruncated_is_z_interval(self):
        lo, hi = selective_ci(1.2, 2.0, FULL, 0.05)
        assert lo == pytest.approx(1.2 - Z975 * 2.0, abs=2e-6)
        assert hi == pytest.approx(1.2 + Z975 * 2.0, abs=2e-6)

    def test_wide_alpha_shrinks_to_statistic(self):
        lo, hi = selective_ci(0.7, 1.0, FULL, 0.999)
        assert hi - lo < 0.01
        assert lo <= 0.7 <= hi

    def test_nested_in_alpha(self):
        support = iset((-1.0, 0.5), (1.5, 4.0))
        lo1, hi1 = selective_ci(2.0, 1.0, support, 0.05)
        lo2, hi2 = selective_ci(2.0, 1.0, support, 0.2)
        assert lo1 <= lo2 <= hi2 <= hi1

    def test_residuals_satisfy_defining_equations(self, rng):
        for _ in range(20):
            sd = float(rng.uniform(0.4, 2.0))
            lo = sd * np.sort(rng.uniform(-8, 8, size=4))
            support = iset((lo[0], lo[1]), (lo[2], lo[3]))
            stat = float(rng.uniform(lo[0], lo[1]) if rng.random() < 0.5 else rng.uniform(lo[2], lo[3]))
            alpha = 0.1
            l, u = selective_ci(stat, sd, support, alpha)
            if math.isfinite(l):
                assert tn_cdf(stat, TruncatedNormal(l, sd, support)) == pytest.approx(
                    1 - alpha / 2, abs=1e-7
                )
            if math.isfinite(u):
                assert tn_cdf(stat, TruncatedNormal(u, sd, support)) == pytest.approx(
                    alpha / 2, abs=1e-7
                )

    def test_boundary_statistic_gives_infinite_endpoint(self):
        support = iset((-INF, 2.0))
        # Moderately near the edge: both equations solvable, interval wide.
        lo, hi = selective_ci(1.9, 1.0, support, 0.05)
        assert math.isfinite(lo) and math.isfinite(hi)
        assert hi - lo > 10.0
        # Within a hair of the edge the defining means sit millions of sd
        # out; both endpoints are reported as effectively infinite.
        lo, hi = selective_ci(2.0 - 1e-9, 1.0, support, 0.05)
        assert hi == INF
        lo, hi = selective_ci(2.0, 1.0, support, 0.05)
        assert lo == INF and hi == INF


class TestEstimateSigma:
    def test_two_points(self):
        assert estimate_sigma(np.array([0.0, 2.0])) == pytest.approx(math.sqrt(2.0))

    def test_constant_errors(self):
        with pytest.raises(ValueError):
            estimate_sigma(np.full(5, 1.0))

    def test_matches_two_pass_formula(self, rng):
        y = rng.standard_normal(50) * 3 + 1
        mean = sum(y) / 50
        want = math.sqrt(sum((v - mean) ** 2 for v in y) / 49)
        assert estimate_sigma(y) == pytest.approx(want)


class TestNaiveZ:
    def test_zero_statistic(self):
        p, lo, hi = naive_z(0.0, 1.0)
        assert p == pytest.approx(1.0)
        assert lo == -hi

    def test_critical_point(self):
        p, lo, hi = naive_z(Z975, 1.0, 0.05)
        assert p == pytest.approx(0.05, abs=1e-6)
        assert lo == pytest.approx(0.0, abs=1e-5)

    def test_equals_untruncated_selective(self, rng):
        tn = TruncatedNormal(0.0, 1.7, FULL)
        for stat in (0.3, 1.1, 2.5):
            assert p_sibling(stat, tn) == pytest.approx(naive_z(stat, 1.7)[0], abs=1e-9)
