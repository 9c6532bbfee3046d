"""
Unit tests for the block-parallel reduction.

This module tests:
- Block boundaries
- Sums independent of the worker count
- Ordered parallel maps
"""

import numpy as np
import pytest

from app.services.workers import block_bounds, blockwise_sum, parallel_map


# ============================================================================
# Fixtures
# ============================================================================


@pytest.fixture
def rows():
    """Rows of values with a wide dynamic range."""
    rng = np.random.default_rng(7)
    return rng.normal(size=(200, 3)) * np.logspace(-8, 8, 200)[:, None]


# ============================================================================
# Tests
# ============================================================================


class TestBlockBounds:
    """Tests for block_bounds."""

    def test_covers_range(self):
        """Test that the blocks cover the axis without gaps."""
        bounds = block_bounds(70, 32)
        assert bounds == [(0, 32), (32, 64), (64, 70)]

    def test_invalid_blocking(self):
        """Test that empty axes and zero block sizes are rejected."""
        with pytest.raises(ValueError):
            block_bounds(0, 32)
        with pytest.raises(ValueError):
            block_bounds(10, 0)


class TestBlockwiseSum:
    """Tests for blockwise_sum."""

    def test_matches_plain_sum(self, rows):
        """Test that the block reduction equals the direct sum."""
        total = blockwise_sum(lambda a, b: rows[a:b].sum(axis=0), len(rows), block=16)
        np.testing.assert_allclose(total, rows.sum(axis=0), rtol=1e-12)

    @pytest.mark.parametrize("workers", [2, 4, -1])
    def test_bit_identical_across_workers(self, rows, workers):
        """Test that any worker count reproduces the serial result exactly."""

        def evaluate(start, stop):
            return rows[start:stop].sum(axis=0)

        serial = blockwise_sum(evaluate, len(rows), block=16, workers=1)
        parallel = blockwise_sum(evaluate, len(rows), block=16, workers=workers)
        assert np.array_equal(serial, parallel)


class TestParallelMap:
    """Tests for parallel_map."""

    @pytest.mark.parametrize("workers", [1, 3, -1])
    def test_keeps_input_order(self, workers):
        """Test that results come back in input order for any worker count."""
        items = list(range(25))
        assert parallel_map(lambda k: k * k, items, workers=workers) == [k * k for k in items]

    def test_empty_input(self):
        """Test that no items give no results."""
        assert parallel_map(lambda k: k, [], workers=4) == []
