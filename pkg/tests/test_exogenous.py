"""Tests for the exogenous input processes."""

import numpy as np
import pytest

from app.core.errors import ConfigurationError
from app.services.exogenous import (
    GaussianInputProcess,
    clipped_normal_moments,
    discretize_gaussian,
    episode_seed,
    sample_sequence,
)


class TestGaussianInputProcess:
    """Tests for the clipped Gaussian process."""

    def test_same_seed_same_stream(self):
        """Test that equal seeds give identical draws."""
        a = GaussianInputProcess(seed=3)
        b = GaussianInputProcess(seed=3)
        assert [a.draw() for _ in range(20)] == [b.draw() for _ in range(20)]

    def test_reset_restarts_stream(self):
        """Test that reset replays the stream from the seed."""
        proc = GaussianInputProcess(seed=5)
        first = [proc.draw() for _ in range(5)]
        proc.reset()
        assert [proc.draw() for _ in range(5)] == first

    def test_zero_std_is_deterministic(self):
        """Test that std=0 always returns the clipped mean."""
        proc = GaussianInputProcess(mean=0.7, std=0.0)
        assert {proc.draw() for _ in range(10)} == {0.7}

    def test_draws_are_clipped(self):
        """Test that every draw lies inside the clip range."""
        proc = GaussianInputProcess(mean=2.0, std=3.0, clip_lo=-2.6, clip_hi=2.6, seed=1)
        values = sample_sequence(proc, 1000)
        assert min(values) >= -2.6
        assert max(values) <= 2.6
        assert max(values) == 2.6

    def test_draw_many_continues_the_stream(self):
        """Test that draw_many matches sample_sequence on the same seed and advances the stream."""
        a = GaussianInputProcess(seed=4)
        b = GaussianInputProcess(seed=4)
        batch = a.draw_many(50)
        assert batch.shape == (50,)
        assert batch.tolist() == sample_sequence(b, 50)
        assert a.draw_many(5).tolist() == sample_sequence(b, 5)

    def test_draw_many_rejects_empty(self):
        """Test that asking for no samples raises ConfigurationError."""
        with pytest.raises(ConfigurationError):
            GaussianInputProcess().draw_many(0)

    @pytest.mark.parametrize("lag", [1, 2, 5])
    def test_draws_are_uncorrelated(self, lag):
        """Test that the sample autocorrelation stays below 4/sqrt(n)."""
        n = 20_000
        values = GaussianInputProcess(mean=0.0, std=1.0, seed=11).draw_many(n)
        centered = values - values.mean()
        rho = float(np.dot(centered[:-lag], centered[lag:]) / np.dot(centered, centered))
        assert abs(rho) < 4 / np.sqrt(n)

    def test_negative_std_rejected(self):
        """Test that a negative std raises ConfigurationError."""
        with pytest.raises(ConfigurationError):
            GaussianInputProcess(std=-0.1)

    def test_describe_records_generator(self):
        """Test that metadata names the bit generator."""
        assert GaussianInputProcess(seed=9).describe()["bit_generator"] == "PCG64"


class TestMoments:
    """Tests for the clipped-normal helpers."""

    def test_unclipped_limit(self):
        """Test that wide bounds give the plain normal moments."""
        mean, std = clipped_normal_moments(0.3, 0.5, -100.0, 100.0)
        assert mean == pytest.approx(0.3)
        assert std == pytest.approx(0.5)

    def test_matches_monte_carlo(self):
        """Test closed-form moments against a large clipped sample."""
        proc = GaussianInputProcess(mean=1.5, std=1.0, clip_lo=-2.6, clip_hi=2.6, seed=11)
        sample = np.array(sample_sequence(proc, 200_000))
        mean, std = clipped_normal_moments(1.5, 1.0, -2.6, 2.6)
        assert sample.mean() == pytest.approx(mean, abs=0.01)
        assert sample.std() == pytest.approx(std, abs=0.01)

    def test_three_point_discretization(self):
        """Test the mean +/- sqrt(3) std nodes with weights 1/6, 2/3, 1/6."""
        values, probabilities = discretize_gaussian(0.0, 0.5, -2.6, 2.6)
        assert values == pytest.approx([-np.sqrt(3) * 0.5, 0.0, np.sqrt(3) * 0.5])
        assert probabilities == pytest.approx([1 / 6, 2 / 3, 1 / 6])

    def test_discretization_clips_nodes(self):
        """Test that nodes outside the range are clipped."""
        values, _ = discretize_gaussian(2.0, 1.0, -2.6, 2.6)
        assert values.max() == 2.6


class TestEpisodeSeed:
    """Tests for derived seeds."""

    def test_deterministic_and_distinct(self):
        """Test that seeds depend on every key and are reproducible."""
        assert episode_seed(1, 2) == episode_seed(1, 2)
        assert episode_seed(1, 2) != episode_seed(2, 1)
        assert 0 <= episode_seed(0) < 2**32
