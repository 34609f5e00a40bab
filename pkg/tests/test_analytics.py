import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roikit import analytics
from roikit.analytics import VoteTally


class TestPreference:
    def test_indifference(self):
        assert analytics.preference(0.5) == 1.0

    def test_two_thirds_is_exactly_double(self):
        assert float(analytics.preference(Fraction(2, 3))) == 2.0

    def test_endpoints_rejected(self):
        for p in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                analytics.preference(p)

    @settings(max_examples=100)
    @given(st.floats(0.001, 0.999))
    def test_reciprocal_property(self, p):
        assert analytics.preference(p) * analytics.preference(1 - p) == pytest.approx(
            1.0, rel=1e-9
        )


class TestTallySummary:
    def test_even_split(self):
        s = analytics.tally_summary(VoteTally(100, 100))
        assert s.fraction == 0.5
        assert s.halfwidth == pytest.approx(0.0693, abs=5e-5)
        assert s.preference == 1.0

    def test_ablation_style_interval(self):
        # 0.67 preference over n=576 votes reads as 0.67 +/- 0.04
        n = 576
        a = round(0.67 * n)
        s = analytics.tally_summary(VoteTally(a, n - a))
        assert s.fraction == pytest.approx(0.67, abs=1e-3)
        assert s.halfwidth == pytest.approx(0.0384, abs=1e-3)
        assert round(s.halfwidth, 2) == 0.04

    def test_unanimous_has_no_finite_preference(self):
        assert analytics.tally_summary(VoteTally(1, 0)).preference is None
        assert analytics.tally_summary(VoteTally(0, 5)).preference is None

    def test_dataset_fraction(self):
        s = analytics.tally_summary(VoteTally(158, 20))
        assert round(s.fraction, 4) == 0.8876
        assert s.preference == pytest.approx(158 / 20)

    def test_empty_tally_rejected(self):
        with pytest.raises(ValueError):
            analytics.tally_summary(VoteTally(0, 0))

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            VoteTally(-1, 2)

    def test_wilson_interval_stays_inside_unit_interval(self):
        s = analytics.tally_summary(VoteTally(1, 19), wilson=True)
        n, z2 = s.n, analytics.Z_95**2
        center = (s.fraction + z2 / (2 * n)) / (1 + z2 / n)
        assert center - s.halfwidth > -1e-12
        assert center + s.halfwidth < 1 + 1e-12
        wald = analytics.tally_summary(VoteTally(1, 19), wilson=False)
        assert s.halfwidth != wald.halfwidth

    @settings(max_examples=50)
    @given(st.integers(1, 500), st.integers(1, 500))
    def test_counts_only_no_order_effects(self, a, b):
        s = analytics.tally_summary(VoteTally(a, b))
        assert s.fraction == a / (a + b)
        assert s.n == a + b
        assert s.preference == pytest.approx(a / b)


class TestTallyFile:
    def test_parse(self, tmp_path):
        f = tmp_path / "votes.txt"
        f.write_text("# comment\nvid1 10 5\nvid2,3,7\n\n")
        rows = analytics.read_tally_file(f)
        assert rows == [("vid1", VoteTally(10, 5)), ("vid2", VoteTally(3, 7))]

    def test_malformed_line(self, tmp_path):
        f = tmp_path / "votes.txt"
        f.write_text("vid1 10\n")
        with pytest.raises(ValueError, match="line 1"):
            analytics.read_tally_file(f)
