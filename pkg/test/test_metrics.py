import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from calibration.metrics import (BinScheme, BinSpec, RELIABILITY_HEADER, accuracy, assign_bins, ece, evaluate,
                                 reliability_rows, reliability_table, write_reliability_csv)
from calibration.numerics import ConfidenceOutcome, confidence_outcomes
from calibration.prediction_store import LabelSpace, PredictionSet, SplitTag

FOUR_OUTCOMES = [
    ConfidenceOutcome(0, 0.95, True),
    ConfidenceOutcome(0, 0.85, True),
    ConfidenceOutcome(1, 0.85, False),
    ConfidenceOutcome(0, 0.55, True),
]

outcome_lists = st.lists(
    st.builds(ConfidenceOutcome, st.just(0), st.floats(min_value=1e-6, max_value=1.0), st.booleans()),
    min_size=1, max_size=200)
bin_specs = st.builds(BinSpec, st.integers(1, 20), st.sampled_from(list(BinScheme)))


def oracle_ece(outcomes, k):
    """Equal-width ECE by direct edge comparison."""
    members = {}
    for o in outcomes:
        i = max(j for j in range(k) if o.confidence >= j / k)
        members.setdefault(i, []).append(o)
    total = 0.0
    for group in members.values():
        conf = sum(o.confidence for o in group) / len(group)
        acc = sum(o.correct for o in group) / len(group)
        total += len(group) / len(outcomes) * abs(acc - conf)
    return total


def oracle_equal_mass_ece(outcomes, k):
    """Equal-mass ECE: sort by (confidence, correct), then split into k near-equal runs."""
    ordered = sorted(outcomes, key=lambda o: (o.confidence, o.correct))
    n = len(ordered)
    sizes = [n // k + (1 if i < n % k else 0) for i in range(k)]
    total, start = 0.0, 0
    for size in sizes:
        group = ordered[start:start + size]
        start += size
        if group:
            conf = sum(o.confidence for o in group) / size
            acc = sum(o.correct for o in group) / size
            total += size / n * abs(acc - conf)
    return total


def random_outcome_sets(seed, count):
    """Outcomes of random softmax predictions: n in [1, 64], 2 to 5 classes."""
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n, num_classes = int(rng.integers(1, 65)), int(rng.integers(2, 6))
        logits = rng.normal(scale=rng.uniform(0.1, 4.0), size=(n, num_classes))
        labels = rng.integers(0, num_classes, size=n)
        probs = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        predicted = probs.argmax(axis=1)
        yield [ConfidenceOutcome(int(p), float(row[p]), bool(p == y))
               for row, p, y in zip(probs, predicted, labels)]


class TestBinSpec:

    def test_edges(self):
        np.testing.assert_array_equal(BinSpec(4).edges(), [0.0, 0.25, 0.5, 0.75, 1.0])

    @pytest.mark.parametrize('k', [0, -3, True, 2.5])
    def test_invalid(self, k):
        with pytest.raises(ValueError):
            BinSpec(k)

    def test_scheme_from_string(self):
        assert BinSpec(5, 'equal-mass').scheme is BinScheme.EQUAL_MASS

    def test_boundary_goes_to_higher_bin(self):
        index = assign_bins(np.array([0.5, 0.1, 0.09999, 1.0]), np.zeros(4, dtype=bool), BinSpec(10))
        np.testing.assert_array_equal(index, [5, 1, 0, 9])


class TestReliabilityTable:

    def test_single_outcome(self):
        table = reliability_table([ConfidenceOutcome(0, 1.0, True)], BinSpec(10))
        assert len(table.bins) == 10
        last = table.bins[-1]
        assert (last.count, last.mean_confidence, last.accuracy) == (1, 1.0, 1.0)
        assert all(b.is_empty for b in table.bins[:-1])
        assert table.bins[0].mean_confidence is None

    def test_four_outcomes(self):
        table = reliability_table(FOUR_OUTCOMES, BinSpec(10))
        summary = [(b.lo, b.count, b.mean_confidence, b.accuracy) for b in table.non_empty_bins]
        assert summary == [(0.5, 1, 0.55, 1.0), (0.8, 2, 0.85, 0.5), (0.9, 1, 0.95, 1.0)]
        assert table.bins[-1].hi == 1.0
        assert table.total == 4

    def test_equal_mass_counts(self):
        table = reliability_table(FOUR_OUTCOMES, BinSpec(2, BinScheme.EQUAL_MASS))
        assert [b.count for b in table.bins] == [2, 2]
        assert table.bins[0].lo == 0.0 and table.bins[-1].hi == 1.0
        assert table.bins[0].hi == 0.85

    def test_equal_mass_uneven(self):
        outcomes = [ConfidenceOutcome(0, c, True) for c in (0.9, 0.3, 0.5, 0.7, 0.6)]
        table = reliability_table(outcomes, BinSpec(2, BinScheme.EQUAL_MASS))
        assert [b.count for b in table.bins] == [3, 2]
        assert table.bins[0].mean_confidence == pytest.approx((0.3 + 0.5 + 0.6) / 3)

    def test_more_bins_than_outcomes(self):
        table = reliability_table(FOUR_OUTCOMES, BinSpec(6, BinScheme.EQUAL_MASS))
        assert sum(b.count for b in table.bins) == 4
        assert len(table.bins) == 6

    def test_empty_equal_mass_bin_collapses(self):
        table = reliability_table(FOUR_OUTCOMES, BinSpec(6, BinScheme.EQUAL_MASS))
        assert [b.count for b in table.bins] == [1, 1, 1, 1, 0, 0]
        assert table.bins[4].lo == table.bins[4].hi == 0.95
        assert (table.bins[5].lo, table.bins[5].hi) == (0.95, 1.0)

    def test_tied_equal_mass_bin_collapses(self):
        outcomes = [ConfidenceOutcome(0, 0.8, True)] * 4
        table = reliability_table(outcomes, BinSpec(4, BinScheme.EQUAL_MASS))
        assert [(b.lo, b.hi) for b in table.bins] == [(0.0, 0.8), (0.8, 0.8), (0.8, 0.8), (0.8, 1.0)]

    @given(outcome_lists, bin_specs)
    def test_bounds_are_ordered_and_contiguous(self, outcomes, spec):
        bins = reliability_table(outcomes, spec).bins
        assert bins[0].lo == 0.0 and bins[-1].hi == 1.0
        for b in bins:
            assert b.lo <= b.hi
            if spec.scheme is BinScheme.EQUAL_WIDTH:
                assert b.lo < b.hi
        for left, right in zip(bins, bins[1:]):
            assert left.hi == right.lo

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            reliability_table([], BinSpec())

    @pytest.mark.parametrize('confidence', [0.0, 1.5, -0.2])
    def test_rejects_out_of_range_confidence(self, confidence):
        with pytest.raises(ValueError):
            reliability_table([ConfidenceOutcome(0, confidence, True)])

    @given(outcome_lists, bin_specs)
    def test_counts_add_up(self, outcomes, spec):
        table = reliability_table(outcomes, spec)
        assert len(table.bins) == spec.num_bins
        assert sum(b.count for b in table.bins) == len(outcomes)
        for b in table.non_empty_bins:
            assert 0.0 <= b.accuracy <= 1.0
            assert b.gap == abs(b.accuracy - b.mean_confidence)

    @given(outcome_lists)
    def test_equal_width_membership(self, outcomes):
        spec = BinSpec(10)
        index = assign_bins(np.array([o.confidence for o in outcomes]), np.zeros(len(outcomes), dtype=bool), spec)
        edges = spec.edges()
        for o, i in zip(outcomes, index):
            assert edges[i] <= o.confidence
            assert o.confidence < edges[i + 1] or i == spec.num_bins - 1


class TestEce:

    def test_perfect(self):
        assert ece(reliability_table([ConfidenceOutcome(0, 1.0, True)] * 7)) == 0.0

    def test_maximal_gap(self):
        assert ece(reliability_table([ConfidenceOutcome(0, 1.0, False)])) == 1.0

    def test_four_outcomes(self):
        value = ece(reliability_table(FOUR_OUTCOMES, BinSpec(10)))
        assert value == pytest.approx(0.25 * 0.45 + 0.5 * 0.35 + 0.25 * 0.05, abs=1e-12)
        assert value == pytest.approx(0.30, abs=1e-12)

    @given(outcome_lists)
    def test_single_bin_is_confidence_accuracy_gap(self, outcomes):
        table = reliability_table(outcomes, BinSpec(1))
        assert ece(table) == abs(table.accuracy - table.mean_confidence)

    @settings(max_examples=50)
    @given(outcome_lists, bin_specs, st.data())
    def test_permutation_invariant(self, outcomes, spec, data):
        shuffled = data.draw(st.permutations(outcomes))
        first = reliability_table(outcomes, spec)
        second = reliability_table(shuffled, spec)
        assert first == second
        assert ece(first) == ece(second)

    @given(outcome_lists, bin_specs)
    def test_bounded(self, outcomes, spec):
        assert 0.0 <= ece(reliability_table(outcomes, spec)) <= 1.0

    def test_matches_direct_computation(self):
        rng = np.random.default_rng(11)
        confidence = rng.uniform(0.01, 1.0, size=1000)
        correct = rng.random(1000) < confidence ** 2
        outcomes = [ConfidenceOutcome(0, float(c), bool(k)) for c, k in zip(confidence, correct)]
        for k in (1, 5, 10, 15):
            assert ece(reliability_table(outcomes, BinSpec(k))) == pytest.approx(oracle_ece(outcomes, k), abs=1e-12)

    def test_random_sets_match_brute_force(self):
        for outcomes in random_outcome_sets(seed=2024, count=1000):
            for k in (1, 5, 10):
                width = ece(reliability_table(outcomes, BinSpec(k, BinScheme.EQUAL_WIDTH)))
                mass = ece(reliability_table(outcomes, BinSpec(k, BinScheme.EQUAL_MASS)))
                assert abs(width - oracle_ece(outcomes, k)) <= 1e-12
                assert abs(mass - oracle_equal_mass_ece(outcomes, k)) <= 1e-12


@pytest.mark.slow
class TestRuntime:

    def test_million_predictions(self):
        rng = np.random.default_rng(5)
        cached = PredictionSet(LabelSpace(4), rng.normal(size=(1_000_000, 4)), rng.integers(4, size=1_000_000),
                               SplitTag.IN_DOMAIN_TEST)
        start = time.perf_counter()
        result = evaluate(cached, 1.0, BinSpec(10))
        assert time.perf_counter() - start < 1.0
        assert 0.0 <= result.ece <= 1.0

    def test_random_sets(self):
        sets = list(random_outcome_sets(seed=2024, count=1000))
        start = time.perf_counter()
        for outcomes in sets:
            for k in (1, 5, 10):
                for scheme in BinScheme:
                    ece(reliability_table(outcomes, BinSpec(k, scheme)))
        assert time.perf_counter() - start < 5.0


class TestAccuracy:

    @pytest.mark.parametrize('flags, expected', [
        ([True, True, True], 1.0),
        ([False, False], 0.0),
        ([True, False, True, True], 0.75),
    ])
    def test_counting(self, flags, expected):
        assert accuracy([ConfidenceOutcome(0, 0.9, f) for f in flags]) == expected

    def test_empty(self):
        with pytest.raises(ValueError):
            accuracy([])


class TestEvaluate:

    @pytest.fixture
    def confident_set(self):
        return PredictionSet(LabelSpace(2), [[10.0, 0.0]] * 50, [0] * 50, SplitTag.IN_DOMAIN_TEST)

    def test_confident_set(self, confident_set):
        acc, value, table = evaluate(confident_set)
        assert acc == 1.0
        assert value == pytest.approx(1.0 - 1.0 / (1.0 + math.exp(-10.0)), rel=1e-9)
        assert value == pytest.approx(4.54e-5, abs=1e-7)
        assert [b.count for b in table.non_empty_bins] == [50]

    def test_high_temperature_increases_ece(self, confident_set):
        assert evaluate(confident_set, 5.0).ece > evaluate(confident_set, 1.0).ece
        assert evaluate(confident_set, 5.0).accuracy == 1.0

    def test_deterministic(self, overconfident_dev):
        assert evaluate(overconfident_dev, 0.7, BinSpec(15)) == evaluate(overconfident_dev, 0.7, BinSpec(15))

    def test_four_outcome_set(self, four_outcome_set):
        result = evaluate(four_outcome_set)
        assert result.accuracy == 0.75
        assert result.ece == pytest.approx(0.30, abs=1e-12)

    def test_batch_and_list_agree(self, overconfident_dev):
        batch = confidence_outcomes(overconfident_dev, 2.0)
        assert reliability_table(batch) == reliability_table(batch.outcomes())

    def test_invalid_temperature(self, four_outcome_set):
        with pytest.raises(ValueError):
            evaluate(four_outcome_set, 0.0)


class TestReliabilityExport:

    def test_rows(self):
        rows = list(reliability_rows(reliability_table(FOUR_OUTCOMES, BinSpec(10))))
        assert rows[0] == list(RELIABILITY_HEADER)
        assert len(rows) == 11
        assert rows[1] == ['0', '0.1', '0', '', '', '']
        assert [row[2] for row in rows[1:]] == ['0', '0', '0', '0', '0', '1', '0', '0', '2', '1']
        assert rows[9][:5] == ['0.8', '0.9', '2', '0.85', '0.5']

    def test_csv_file(self, tmp_path, four_outcome_set):
        path = tmp_path / 'reliability.csv'
        write_reliability_csv(evaluate(four_outcome_set).table, path)
        lines = path.read_text(encoding='utf-8').splitlines()
        assert lines[0] == ','.join(RELIABILITY_HEADER)
        assert len(lines) == 11
        assert lines[-1].startswith('0.9,1,1,')
