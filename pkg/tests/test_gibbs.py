import numpy as np
import pytest

from mflang import fields as F
from mflang.energy import EnergySpec, TwoBody, intrinsic_derivative
from mflang.gibbs import (
    contraction_ratio,
    gibbs_map,
    n_particle_gibbs_logdensity,
    picard_iterate,
    stationarity_residual,
)
from mflang.measures import EmpiricalMeasure, GridMeasure1D, RngStream, gaussian_grid, grid_normalize

STD_GAUSS = EnergySpec(TwoBody(F.quadratic(0.5), F.zero_field()), declared_lambda=1.0)
# V = x^2 (lambda_V = 2), W = x^2/2 (kappa = 1): fixed point N(0, 1/3)
LQ = EnergySpec(TwoBody(F.quadratic(1.0), F.quadratic(0.5)),
                declared_lambda=3.0, declared_d2m_bound=1.0)
COS = EnergySpec(TwoBody(F.quadratic(2.0), F.cosine(0.1)),
                 declared_lambda=3.9, declared_d2m_bound=0.1)


def grid0(mean=0.0, sd=1.0, m=2001):
    return gaussian_grid(-10.0, 10.0, m, mean, sd)


class TestGibbsMap:
    def test_interaction_free_gaussian(self):
        out = gibbs_map(STD_GAUSS, grid0(3.0, 1.0))
        x = out.nodes
        exact = np.exp(-x * x / 2.0) / np.sqrt(2.0 * np.pi)
        assert np.max(np.abs(out.density - exact)) < 1e-6

    def test_linear_quadratic_complete_the_square(self):
        mbar = 1.2
        out = gibbs_map(LQ, grid0(mbar, 0.8))
        assert out.mean() == pytest.approx(mbar / 3.0, abs=1e-9)
        assert out.variance() == pytest.approx(1.0 / 3.0, abs=1e-9)

    def test_additive_shift_invariance(self):
        # stabilization cancels the constant up to the last ulp of the shifted
        # float sums; exact cancellation is not representable
        shifted = EnergySpec(TwoBody(F.quadratic(0.5, 0.0, 7.0), F.zero_field()))
        a = gibbs_map(STD_GAUSS, grid0())
        b = gibbs_map(shifted, grid0())
        assert np.max(np.abs(a.density - b.density) / np.maximum(a.density, 1e-300)) < 1e-14

    def test_output_normalized_and_nonnegative(self):
        out = gibbs_map(COS, grid0(-2.0, 1.5))
        assert out.total_mass() == pytest.approx(1.0, abs=1e-12)
        assert np.all(out.density >= 0.0)

    def test_domain_too_small_diagnostic(self):
        flat = EnergySpec(TwoBody(F.quadratic(0.005), F.zero_field()))
        with pytest.raises(ValueError, match="too small"):
            gibbs_map(flat, gaussian_grid(-2.0, 2.0, 201, 0.0, 1.0))


class TestPicard:
    def test_linear_quadratic_fixed_point(self):
        hist = picard_iterate(LQ, grid0(3.0, 1.0), tol=1e-9, max_iter=100)
        assert hist.converged
        assert hist.fixed_point.variance() == pytest.approx(1.0 / 3.0, abs=1e-3)
        assert abs(hist.fixed_point.mean()) < 1e-6
        # contraction factor of the mean recursion is kappa/(lambda_V+kappa) = 1/3
        assert hist.ratio_estimates[1] == pytest.approx(1.0 / 3.0, abs=0.02)

    def test_interaction_free_converges_in_one_step(self):
        hist = picard_iterate(STD_GAUSS, grid0(2.0, 1.0), tol=1e-12, max_iter=10)
        assert hist.converged
        assert hist.step_distances[1] == 0.0
        assert len(hist.step_distances) == 2

    def test_ratio_envelope_for_cosine_interaction(self):
        hist = picard_iterate(COS, grid0(2.5, 1.0), tol=1e-10, max_iter=60)
        assert hist.converged
        assert max(hist.ratio_estimates) <= 0.1 / 3.9 + 0.05

    def test_history_rows_shape(self):
        hist = picard_iterate(LQ, grid0(1.0, 1.0), tol=1e-8, max_iter=50)
        rows = hist.rows()
        assert rows[0][0] == 1 and np.isnan(rows[0][2])
        assert len(hist.ratio_estimates) == len(hist.step_distances) - 1


class TestContractionRatio:
    def test_interaction_free_ratio_zero(self):
        assert contraction_ratio(STD_GAUSS, grid0(1.0), grid0(-1.0)) == 0.0

    def test_envelope_on_random_mixtures(self):
        g = RngStream(23, 0).generator()
        x = np.linspace(-10, 10, 1201)
        bound = 0.1 / 3.9 + 0.02

        def mixture():
            dens = np.zeros_like(x)
            for _ in range(int(g.integers(1, 4))):
                m, s = g.uniform(-3, 3), g.uniform(0.5, 1.5)
                dens += g.random() * np.exp(-((x - m) ** 2) / (2 * s * s)) / s
            return grid_normalize(GridMeasure1D(-10.0, 10.0, dens))

        for _ in range(50):
            r = contraction_ratio(COS, mixture(), mixture())
            assert r <= bound

    def test_symmetry(self):
        a, b = grid0(1.0), grid0(-0.5, 1.2)
        assert contraction_ratio(COS, a, b) == pytest.approx(
            contraction_ratio(COS, b, a), rel=1e-12)

    def test_zero_distance_rejected(self):
        g = grid0()
        with pytest.raises(ValueError, match="W1"):
            contraction_ratio(COS, g, g)


class TestStationarityResidual:
    def test_picard_fixed_point_is_stationary(self):
        hist = picard_iterate(LQ, grid0(3.0, 1.0), tol=1e-9, max_iter=100)
        assert stationarity_residual(LQ, hist.fixed_point) < 1e-3

    def test_exact_gaussian_interaction_free(self):
        assert stationarity_residual(STD_GAUSS, grid0(0.0, 1.0)) < 1e-6

    def test_shifted_gaussian_detected(self):
        res = stationarity_residual(STD_GAUSS, grid0(1.0, 1.0))
        assert res == pytest.approx(1.0, abs=1e-6)


class TestInvariantLoopClosure:
    """Fixed point, long-time particle law, and zero residual agree (LQ model)."""

    def test_three_characterizations_identify_one_gaussian(self):
        from mflang.dynamics import OverdampedState, step_overdamped
        from mflang.measures import StreamAllocator, sample_gaussian_cloud

        hist = picard_iterate(LQ, grid0(2.0, 1.0), tol=1e-9, max_iter=100)
        fp = hist.fixed_point
        assert stationarity_residual(LQ, fp) < 1e-3

        alloc = StreamAllocator(41, 0)
        cloud = sample_gaussian_cloud(4096, 1, 2.0, 1.0, alloc.stream())
        st = OverdampedState(0.0, cloud)
        noise = alloc.block_source(4096)
        dt, steps = 1e-3, 4000
        block = noise.normal_block(steps, 1)
        for k in range(steps):
            st = step_overdamped(st, LQ, dt, block[:, k, :])
        pts = st.cloud.points[:, 0]
        # Monte-Carlo errors: se(mean) ~ sd/sqrt(n), se(var) ~ var*sqrt(2/n)
        assert abs(pts.mean() - fp.mean()) < 4 * np.sqrt(fp.variance() / 4096)
        assert abs(pts.var() - fp.variance()) < 5 * fp.variance() * np.sqrt(2.0 / 4096)

    def test_gibbs_map_accepts_polynomial_family_on_grids(self):
        from mflang.energy import Polynomial

        poly = EnergySpec(Polynomial(F.quadratic(1.0), (F.pair_interaction(F.quadratic(0.5)),)),
                          declared_lambda=3.0, declared_d2m_bound=1.0)
        out_two = gibbs_map(LQ, grid0(1.0, 1.0, m=801))
        out_poly = gibbs_map(poly, grid0(1.0, 1.0, m=801))
        assert np.max(np.abs(out_two.density - out_poly.density)) < 1e-12


class TestNParticleLogDensity:
    def test_single_particle(self):
        assert n_particle_gibbs_logdensity(STD_GAUSS, np.array([[2.0]])) == pytest.approx(-2.0)

    def test_product_structure_without_interaction(self):
        pts = np.array([[0.5], [-1.0], [2.0]])
        val = n_particle_gibbs_logdensity(STD_GAUSS, pts)
        assert val == pytest.approx(-float(np.sum(pts**2 / 2.0)), abs=1e-12)

    def test_gradient_matches_drift(self):
        g = RngStream(29, 0).generator()
        pts = g.standard_normal((5, 1))
        mu = EmpiricalMeasure(pts)
        step = 1e-6
        for i in range(5):
            up, dn = pts.copy(), pts.copy()
            up[i, 0] += step
            dn[i, 0] -= step
            fd = (n_particle_gibbs_logdensity(COS, up) - n_particle_gibbs_logdensity(COS, dn)) / (2 * step)
            drift = intrinsic_derivative(COS, mu, pts[i])[0]
            assert fd == pytest.approx(-drift, rel=1e-5, abs=1e-6)
