import itertools

import numpy as np
import pytest

from sketchret import metrics
from sketchret.errors import ContractError, ValidationError


def oracle_p_at_k(rel, k):
    kk = min(k, len(rel))
    return sum(rel[:kk]) / kk


def oracle_ap_at_k(rel, k):
    # brute force: recompute precision from scratch at every relevant rank
    kk = min(k, len(rel))
    precisions = []
    for rank in range(1, kk + 1):
        if rel[rank - 1]:
            precisions.append(sum(rel[:rank]) / rank)
    return sum(precisions) / len(precisions) if precisions else 0.0


class TestPrecisionAtK:
    def test_all_relevant_prefix(self):
        assert metrics.precision_at_k([1, 1, 0, 0], 2) == 1.0

    def test_nothing_relevant(self):
        assert metrics.precision_at_k([0, 0, 0], 3) == 0.0

    def test_half(self):
        assert metrics.precision_at_k([1, 0, 1, 0], 4) == 0.5

    def test_k_clamped_to_length(self):
        assert metrics.precision_at_k([1, 0], 10) == 0.5

    def test_empty_list_rejected(self):
        with pytest.raises(ValidationError, match="empty"):
            metrics.precision_at_k([], 3)
        with pytest.raises(ValidationError):
            metrics.precision_at_k([1], 0)


class TestAveragePrecisionAtK:
    def test_perfect_ranking(self):
        assert metrics.average_precision_at_k([1, 1, 1], 3) == 1.0

    def test_alternating(self):
        got = metrics.average_precision_at_k([1, 0, 1, 0], 4)
        assert got == pytest.approx((1 + 2 / 3) / 2)

    def test_no_relevant_within_k(self):
        assert metrics.average_precision_at_k([0, 0, 1], 2) == 0.0

    def test_total_variant(self):
        got = metrics.average_precision_at_k([1, 0, 1, 0], 4, ap_variant="total",
                                             total_relevant=5)
        assert got == pytest.approx((1 + 2 / 3) / 4)

    def test_total_variant_needs_count(self):
        with pytest.raises(ContractError):
            metrics.average_precision_at_k([1], 1, ap_variant="total")

    def test_unknown_variant(self):
        with pytest.raises(ValidationError):
            metrics.average_precision_at_k([1], 1, ap_variant="geometric")


class TestOracleEquivalence:
    def test_exhaustive_small(self):
        for length in range(1, 7):
            for bits in itertools.product((0, 1), repeat=length):
                for k in range(1, 8):
                    assert metrics.precision_at_k(list(bits), k) == \
                        oracle_p_at_k(list(bits), k)
                    assert metrics.average_precision_at_k(list(bits), k) == \
                        oracle_ap_at_k(list(bits), k)

    def test_promoting_relevant_item_never_hurts_ap(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            length = int(rng.integers(2, 12))
            rel = rng.integers(0, 2, size=length).tolist()
            k = int(rng.integers(1, 11))
            swaps = [i for i in range(min(k, length) - 1)
                     if rel[i] == 0 and rel[i + 1] == 1]
            if not swaps:
                continue
            i = swaps[int(rng.integers(len(swaps)))]
            promoted = rel.copy()
            promoted[i], promoted[i + 1] = promoted[i + 1], promoted[i]
            assert metrics.average_precision_at_k(promoted, k) >= \
                metrics.average_precision_at_k(rel, k)


class TestEvaluate:
    def test_absent_category_scores_zero(self):
        rankings = [(0, np.array([0, 1, 2]))]
        report = metrics.evaluate(rankings, query_labels=[9], gallery_labels=[1, 2, 3],
                                  k=3)
        assert report.mean_ap == 0.0 and report.mean_p == 0.0

    def test_leading_relevant_items_score_one(self):
        rankings = [(0, np.array([2, 0, 1]))]
        report = metrics.evaluate(rankings, query_labels=[7], gallery_labels=[5, 5, 7],
                                  k=1)
        assert report.mean_ap == 1.0 and report.mean_p == 1.0

    def test_random_case_matches_hand_scoring(self):
        rng = np.random.default_rng(1)
        gallery_labels = rng.integers(0, 3, size=6)
        query_labels = rng.integers(0, 3, size=3)
        rankings = [(qi, rng.permutation(6)) for qi in range(3)]
        report = metrics.evaluate(rankings, query_labels, gallery_labels, k=4)
        for row, (qi, order) in enumerate(rankings):
            rel = [int(gallery_labels[g] == query_labels[qi]) for g in order]
            assert report.p[row] == oracle_p_at_k(rel, 4)
            assert report.ap[row] == oracle_ap_at_k(rel, 4)
        assert report.mean_ap == pytest.approx(float(np.mean(report.ap)))

    def test_relabeling_bijection_invariance(self):
        rng = np.random.default_rng(2)
        gallery_labels = rng.integers(0, 4, size=8)
        query_labels = rng.integers(0, 4, size=4)
        rankings = [(qi, rng.permutation(8)) for qi in range(4)]
        base = metrics.evaluate(rankings, query_labels, gallery_labels, k=5)
        relabel = np.array([3, 0, 2, 1])
        mapped = metrics.evaluate(rankings, relabel[query_labels],
                                  relabel[gallery_labels], k=5)
        np.testing.assert_array_equal(base.ap, mapped.ap)
        np.testing.assert_array_equal(base.p, mapped.p)

    def test_k_clamped_to_gallery(self):
        report = metrics.evaluate([(0, np.array([0, 1]))], [1], [1, 2], k=100)
        assert report.k == 2

    def test_query_index_out_of_range(self):
        with pytest.raises(IndexError, match="query index"):
            metrics.evaluate([(5, np.array([0]))], [1], [1], k=1)

    def test_gallery_index_out_of_range(self):
        with pytest.raises(IndexError, match="gallery"):
            metrics.evaluate([(0, np.array([4]))], [1], [1, 1], k=1)


class TestReportOutput:
    @pytest.fixture
    def report(self):
        return metrics.evaluate([(0, np.array([0, 1])), (1, np.array([1, 0]))],
                                [1, 2], [1, 2], k=2)

    def test_text_table(self, report):
        text = metrics.format_report(report)
        assert "mean" in text
        assert f"AP@{report.k}" in text
        assert str(report.n_queries) in text

    def test_csv(self, report, tmp_path):
        path = tmp_path / "report.csv"
        metrics.write_report_csv(report, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "query_index,ap,p_at_k"
        assert len(lines) == 3
        qi, ap, p = lines[1].split(",")
        assert int(qi) == 0 and 0.0 <= float(ap) <= 1.0 and 0.0 <= float(p) <= 1.0
