"""
Tests for parameter and FLOPs accounting.
"""

from fractions import Fraction

import pytest

from t3dnet.core.errors import ContractError
from t3dnet.nn.costs import count_flops, count_params, flops_table, human_count


class TestCanonicalCounts:
    """Reference numbers for the canonical 40-class MSG configuration at 1024 points."""

    def test_params(self, canonical_spec):
        assert count_params(canonical_spec) == 1_747_368
        assert count_params(canonical_spec, "1/2") == 443_368
        assert count_params(canonical_spec, "1/4") == 114_120
        assert count_params(canonical_spec, Fraction(1, 8)) == 30_184

    def test_flops(self, canonical_spec):
        assert count_flops(canonical_spec) == 8_000_870_440
        assert count_flops(canonical_spec, "1/4") == 541_926_952
        assert count_flops(canonical_spec, "1/8") == 149_439_272

    def test_reduction_ratios(self, canonical_spec):
        full = count_flops(canonical_spec)
        assert 53.0 < full / count_flops(canonical_spec, "1/8") < 54.0
        assert 14.5 < full / count_flops(canonical_spec, "1/4") < 15.0
        assert 57.0 < count_params(canonical_spec) / count_params(canonical_spec, "1/8") < 58.5


class TestFlopsTable:

    def test_rows_sum_to_total(self, micro_spec):
        rows = flops_table(micro_spec)
        assert sum(r.flops for r in rows) == count_flops(micro_spec)
        assert sum(r.params for r in rows) == count_params(micro_spec)

    def test_flops_do_not_depend_on_points(self, micro_spec):
        # centroid counts are fixed; group-all only sees the previous stage
        assert count_flops(micro_spec, n_points=64) == count_flops(micro_spec, n_points=32)
        assert count_flops(micro_spec, n_points=4096) == count_flops(micro_spec, n_points=32)

    def test_too_few_points(self, micro_spec):
        with pytest.raises(ContractError):
            count_flops(micro_spec, n_points=4)


@pytest.mark.parametrize("value, expected", [
    (1_747_368, "1.75M"),
    (8_000_870_440, "8.00G"),
    (30_184, "30.18K"),
    (999, "999"),
])
def test_human_count(value, expected):
    assert human_count(value) == expected
