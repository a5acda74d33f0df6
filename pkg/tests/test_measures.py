import numpy as np
import pytest
from scipy.special import erf

from mflang.measures import (
    EmpiricalMeasure,
    GaussianBlockSource,
    GridMeasure1D,
    RngStream,
    SingleStreamSource,
    StreamAllocator,
    grid_normalize,
    sample_gaussian_cloud,
    second_moment,
)


class TestSecondMoment:
    def test_point_mass_at_origin(self):
        assert second_moment(EmpiricalMeasure(np.array([[0.0]]))) == 0.0

    def test_symmetric_pair(self):
        assert second_moment(EmpiricalMeasure(np.array([[-1.0], [1.0]]))) == 1.0

    def test_2d_hand_value(self):
        mu = EmpiricalMeasure(np.array([[1.0, 2.0], [3.0, 4.0]]))
        assert second_moment(mu) == pytest.approx(15.0, abs=0)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(3)
        pts = rng.standard_normal((40, 3))
        perm = rng.permutation(40)
        assert second_moment(EmpiricalMeasure(pts)) == pytest.approx(
            second_moment(EmpiricalMeasure(pts[perm])), rel=1e-15)


class TestGaussianCloud:
    def test_degenerate_sd_collapses_to_mean(self):
        mu = sample_gaussian_cloud(3, 1, 0.0, 0.0, RngStream(1, 0))
        assert np.all(mu.points == 0.0)

    def test_law_of_large_numbers(self):
        mu = sample_gaussian_cloud(10_000, 1, 0.0, 1.0, RngStream(7, 0))
        assert second_moment(mu) == pytest.approx(1.0, rel=0.05)

    def test_same_seed_reproduces(self):
        a = sample_gaussian_cloud(100, 2, 0.5, 2.0, RngStream(42, 9))
        b = sample_gaussian_cloud(100, 2, 0.5, 2.0, RngStream(42, 9))
        assert np.array_equal(a.points, b.points)

    def test_negative_sd_rejected(self):
        with pytest.raises(ValueError, match="sd"):
            sample_gaussian_cloud(3, 1, 0.0, -0.1, RngStream(1, 0))

    def test_nonfinite_points_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            EmpiricalMeasure(np.array([[0.0], [np.inf]]))


class TestGridNormalize:
    def test_uniform_density(self):
        g = grid_normalize(GridMeasure1D(0.0, 1.0, np.full(11, 2.0)))
        assert np.allclose(g.density, 1.0, atol=1e-15)
        assert g.total_mass() == pytest.approx(1.0, abs=1e-12)

    def test_gaussian_against_erf_normalizer(self):
        x = np.linspace(-8.0, 8.0, 1601)
        g = grid_normalize(GridMeasure1D(-8.0, 8.0, np.exp(-x * x / 2.0)))
        assert g.total_mass() == pytest.approx(1.0, abs=1e-12)
        assert g.nodes[np.argmax(g.density)] == 0.0
        # exact normalizer on the truncated domain
        z = np.sqrt(2 * np.pi) * erf(8.0 / np.sqrt(2.0))
        assert g.density[800] == pytest.approx(1.0 / z, rel=1e-12)

    def test_negative_entry_rejected_with_node(self):
        dens = np.ones(11)
        dens[7] = -0.5
        with pytest.raises(ValueError, match="node 7"):
            GridMeasure1D(0.0, 1.0, dens)

    def test_nonfinite_entry_rejected_with_node(self):
        dens = np.ones(11)
        dens[3] = np.nan
        with pytest.raises(ValueError, match="node 3"):
            GridMeasure1D(0.0, 1.0, dens)

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError, match="identically zero"):
            grid_normalize(GridMeasure1D(0.0, 1.0, np.zeros(11)))

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        g = grid_normalize(GridMeasure1D(-2.0, 5.0, rng.random(301)))
        g2 = grid_normalize(g)
        assert np.max(np.abs(g2.density - g.density)) < 1e-15


class TestStreams:
    def test_identical_key_identical_sequence(self):
        a = RngStream(11, 4).generator().standard_normal(32)
        b = RngStream(11, 4).generator().standard_normal(32)
        assert np.array_equal(a, b)

    def test_distinct_ids_decorrelated(self):
        a = RngStream(11, 4).generator().standard_normal(4096)
        b = RngStream(11, 5).generator().standard_normal(4096)
        assert not np.array_equal(a, b)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.08

    def test_block_source_rows_match_streams(self):
        ids = [3, 9, 27]
        src = GaussianBlockSource(5, ids)
        block = src.normal_block(steps=6, d=2)
        for i, sid in enumerate(ids):
            direct = RngStream(5, sid).generator().standard_normal((6, 2))
            assert np.array_equal(block[i], direct)

    def test_block_source_chunking_continues_streams(self):
        src1 = GaussianBlockSource(5, [1, 2])
        one = np.concatenate([src1.normal_block(3, 1), src1.normal_block(4, 1)], axis=1)
        direct = np.stack([RngStream(5, i).generator().standard_normal((7, 1)) for i in (1, 2)])
        assert np.array_equal(one, direct)

    def test_allocator_ranges_disjoint_and_ordered(self):
        alloc = StreamAllocator(0, base=100)
        assert alloc.take(3) == [100, 101, 102]
        assert alloc.stream().stream_id == 103
        assert alloc.block_source(2).stream_ids == [104, 105]

    def test_bulk_source_deterministic(self):
        a = SingleStreamSource(7, 42, 5).normal_block(4, 1)
        b = SingleStreamSource(7, 42, 5).normal_block(4, 1)
        assert np.array_equal(a, b)
