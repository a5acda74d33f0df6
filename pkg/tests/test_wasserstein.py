import itertools

import numpy as np
import pytest
from scipy import stats

from mflang.measures import EmpiricalMeasure, GridMeasure1D, RngStream, gaussian_grid, grid_normalize
from mflang.wasserstein import (
    delta_d,
    grid_quantile_cloud,
    w1_grid,
    w2_empirical_assignment,
    wp_empirical_1d,
)


def cloud(arr):
    return EmpiricalMeasure(np.asarray(arr, dtype=float))


class TestSorted1D:
    def test_identity(self):
        mu = cloud([[0.2], [1.0], [-3.0]])
        assert wp_empirical_1d(mu, mu, 1) == 0.0
        assert wp_empirical_1d(mu, mu, 2) == 0.0

    def test_monotone_matching(self):
        assert wp_empirical_1d(cloud([[0.0], [1.0]]), cloud([[1.0], [2.0]]), 1) == pytest.approx(1.0)

    def test_point_masses(self):
        for p in (1, 2):
            assert wp_empirical_1d(cloud([[0.0]]), cloud([[-2.5]]), p) == pytest.approx(2.5)

    def test_rejects_higher_dimension(self):
        mu = EmpiricalMeasure(np.zeros((3, 2)))
        with pytest.raises(ValueError, match="d=1"):
            wp_empirical_1d(mu, mu, 2)

    def test_rejects_size_mismatch(self):
        with pytest.raises(ValueError, match="equal"):
            wp_empirical_1d(cloud([[0.0]]), cloud([[0.0], [1.0]]), 1)


class TestAssignment:
    def test_matches_sorting_in_1d(self):
        g = RngStream(2, 0).generator()
        mu = EmpiricalMeasure(g.standard_normal((50, 1)))
        nu = EmpiricalMeasure(g.standard_normal((50, 1)) + 0.5)
        assert w2_empirical_assignment(mu, nu).w2() == pytest.approx(
            wp_empirical_1d(mu, nu, 2), abs=1e-12)

    def test_translation(self):
        g = RngStream(3, 0).generator()
        pts = g.standard_normal((20, 3))
        c = np.array([0.3, -1.0, 2.0])
        res = w2_empirical_assignment(EmpiricalMeasure(pts), EmpiricalMeasure(pts + c))
        assert res.w2() == pytest.approx(np.linalg.norm(c), rel=1e-12)

    def test_brute_force_n3(self):
        g = RngStream(4, 0).generator()
        for _ in range(20):
            a = g.standard_normal((3, 2))
            b = g.standard_normal((3, 2))
            res = w2_empirical_assignment(EmpiricalMeasure(a), EmpiricalMeasure(b))
            best = min(
                np.mean(np.sum((a - b[list(p)]) ** 2, axis=1))
                for p in itertools.permutations(range(3))
            )
            assert res.cost == pytest.approx(best, rel=1e-12)
            assert sorted(res.assignment) == [0, 1, 2]

    def test_metric_axioms(self):
        g = RngStream(5, 0).generator()
        clouds = [EmpiricalMeasure(g.standard_normal((16, 2))) for _ in range(30)]
        for _ in range(50):
            i, j, k = g.integers(0, len(clouds), size=3)
            dij = w2_empirical_assignment(clouds[i], clouds[j]).w2()
            dji = w2_empirical_assignment(clouds[j], clouds[i]).w2()
            assert dij == pytest.approx(dji, abs=1e-12)
            dik = w2_empirical_assignment(clouds[i], clouds[k]).w2()
            dkj = w2_empirical_assignment(clouds[k], clouds[j]).w2()
            assert dij <= dik + dkj + 1e-10
        assert w2_empirical_assignment(clouds[0], clouds[0]).w2() == 0.0

    def test_dilation_scaling(self):
        g = RngStream(6, 0).generator()
        a = g.standard_normal((12, 2))
        b = g.standard_normal((12, 2))
        base = w2_empirical_assignment(EmpiricalMeasure(a), EmpiricalMeasure(b)).w2()
        for s in (0.25, -3.0):
            scaled = w2_empirical_assignment(
                EmpiricalMeasure(s * a), EmpiricalMeasure(s * b)).w2()
            assert scaled == pytest.approx(abs(s) * base, abs=1e-10)

    def test_caps_and_mismatch(self):
        with pytest.raises(ValueError, match="equal"):
            w2_empirical_assignment(cloud([[0.0]]), cloud([[0.0], [1.0]]))
        big = EmpiricalMeasure(np.zeros((4097, 1)))
        with pytest.raises(ValueError, match="cap"):
            w2_empirical_assignment(big, big)


class TestGridW1:
    def test_identity(self):
        g = gaussian_grid(-10, 10, 501, 0.0, 1.0)
        assert w1_grid(g, g) == 0.0

    def test_gaussian_translation(self):
        a = gaussian_grid(-10, 10, 2001, 0.0, 1.0)
        b = gaussian_grid(-10, 10, 2001, 0.5, 1.0)
        assert w1_grid(a, b) == pytest.approx(0.5, abs=1e-3)

    def test_uniform_by_hand(self):
        x = np.linspace(0.0, 2.0, 2001)
        mu = grid_normalize(GridMeasure1D(0.0, 2.0, (x <= 1.0).astype(float)))
        nu = grid_normalize(GridMeasure1D(0.0, 2.0, np.ones_like(x)))
        assert w1_grid(mu, nu) == pytest.approx(0.5, abs=2e-3)

    def test_grid_mismatch_rejected(self):
        a = gaussian_grid(-10, 10, 501)
        b = gaussian_grid(-10, 10, 601)
        with pytest.raises(ValueError, match="share"):
            w1_grid(a, b)


class TestDeltaD:
    def test_low_dimension(self):
        assert delta_d(100, 1) == pytest.approx(0.1, abs=1e-15)

    def test_critical_dimension(self):
        assert delta_d(100, 4) == pytest.approx(np.log(101.0) / 10.0, abs=1e-15)

    def test_high_dimension(self):
        assert delta_d(32, 8) == pytest.approx(32.0 ** (-0.25), abs=1e-15)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            delta_d(0, 1)


class TestEmpiricalRate:
    def test_gaussian_sampling_rate_d1(self):
        """RMS transport error to the quantile reference scales like n^{-1/2}.

        The squared statistic decays faster than the delta_d envelope in d=1
        (the envelope is an upper bound), so the envelope ratios must not grow.
        """
        g = RngStream(8, 0).generator()
        ref = gaussian_grid(-10, 10, 4001, 0.0, 1.0)
        ns = [32, 128, 512, 2048]
        rms = []
        sq = []
        for n in ns:
            quant = grid_quantile_cloud(ref, n)
            acc = []
            for _ in range(120):
                samp = EmpiricalMeasure(g.standard_normal((n, 1)))
                acc.append(wp_empirical_1d(samp, quant, 2) ** 2)
            sq.append(float(np.mean(acc)))
            rms.append(float(np.sqrt(np.mean(acc))))
        slope = np.polyfit(np.log(ns), np.log(rms), 1)[0]
        assert slope == pytest.approx(-0.5, abs=0.1)
        ratios = [s / delta_d(n, 1) for s, n in zip(sq, ns)]
        assert all(r <= ratios[0] * 1.05 for r in ratios)

    def test_quantile_cloud_quality(self):
        ref = gaussian_grid(-10, 10, 4001, 0.0, 1.0)
        q = grid_quantile_cloud(ref, 512)
        assert np.mean(q.points) == pytest.approx(0.0, abs=1e-3)
        exact = stats.norm.ppf((np.arange(512) + 0.5) / 512)
        assert np.max(np.abs(q.points[:, 0] - exact)) < 5e-3
