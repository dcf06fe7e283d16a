import itertools
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from django.test import SimpleTestCase

from aucformer.mechanisms import first_price_auction, second_price_auction
from numerics import ops
from numerics.flops import FLOPS
from numerics.params import ParamStore
from numerics.tensor import Tensor
from recformer.config import RecFormerConfig
from recformer.model import RecFormer

from .exceptions import FlopsConfigError, MetricInputError
from .flops import (
    FlopsConfig,
    FlopsReport,
    approx_ratio,
    auf,
    block,
    block2,
    flops_closed_form,
    flops_compare,
    fusion_paradigm_flops,
    gcf,
    measure_sections,
    mif,
    pre,
    rank,
)
from .metrics import (
    auc_score,
    deviation,
    expected_value_metrics,
    ranking_metrics,
    realized_metrics,
    recall_at_k,
)
from .regret import GAMMA_GRID, empirical_regret, psi_from_terms, psi_metric, regret_from_utilities
from .reports import MetricReport, summarize_runs, write_csv
from .serializers import FlopsReportSerializer, MetricReportSerializer


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


# ==============================================================================
# Ranking and expected-value metrics
# ==============================================================================

class RankingMetricTests(SimpleTestCase):
    def test_auc_examples(self):
        self.assertEqual(auc_score([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]), 1.0)
        self.assertAlmostEqual(auc_score([0.9, 0.8, 0.1], [1, 0, 1]), 0.5)

    def test_auc_absent_without_both_classes(self):
        self.assertIsNone(auc_score([0.3, 0.2], [0, 0]))
        self.assertIsNone(auc_score([0.3, 0.2], [1, 1]))

    def test_auc_matches_pairwise_count(self):
        rng = np.random.default_rng(0)
        checked = 0
        for _ in range(500):
            n = int(rng.integers(2, 11))
            scores = rng.integers(0, 4, n) / 4.0
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                continue
            self.assertAlmostEqual(auc_score(scores, labels), pairwise_auc(scores, labels), places=12)
            checked += 1
        self.assertGreater(checked, 300)

    def test_recall_at_k(self):
        scores, labels = [0.9, 0.1, 0.8, 0.7], [1, 1, 0, 0]
        self.assertEqual(recall_at_k(scores, labels, 1), 0.5)
        self.assertEqual(recall_at_k(scores, labels, 4), 1.0)
        self.assertEqual(recall_at_k(scores, labels, 10), 1.0)
        self.assertEqual(recall_at_k(scores, labels, 2, positives=[2, 3]), 0.5)
        self.assertIsNone(recall_at_k(scores, [0, 0, 0, 0], 2))

    def test_ranking_metrics_bundle(self):
        metrics = ranking_metrics([0.9, 0.8, 0.1], [1, 0, 1], k=2)
        self.assertAlmostEqual(metrics.auc, 0.5)
        self.assertEqual(metrics.recall_at_k, 0.5)

    def test_malformed_inputs_rejected(self):
        with self.assertRaises(MetricInputError):
            auc_score([0.1, 0.2], [1])
        with self.assertRaises(MetricInputError):
            auc_score([0.1, 0.2], [1, 2])


class ExpectedValueTests(SimpleTestCase):
    def test_single_slot(self):
        ectr, erpm = expected_value_metrics([([0.05], [1.0])])
        self.assertAlmostEqual(ectr, 5.0)
        self.assertAlmostEqual(erpm, 50.0)

    def test_mean_over_requests_and_zero_payments(self):
        ectr, erpm = expected_value_metrics([([0.1, 0.1], [0.0, 0.0]), ([0.3], [0.0])])
        self.assertAlmostEqual(ectr, 25.0)
        self.assertEqual(erpm, 0.0)

    def test_empty_or_mismatched_rejected(self):
        with self.assertRaises(MetricInputError):
            expected_value_metrics([])
        with self.assertRaises(MetricInputError):
            expected_value_metrics([([0.1, 0.2], [1.0])])

    def test_deviation(self):
        self.assertEqual(deviation(0.05, 0.05), 0.0)
        self.assertAlmostEqual(deviation(0.06, 0.05), 0.2)
        self.assertEqual(deviation(0.0, 0.05), 1.0)
        self.assertIsNone(deviation(0.05, 0.0))

    def test_realized_metrics(self):
        rng = np.random.default_rng(0)
        ctr, rpm = realized_metrics([([1.0, 1.0], [2.0, 4.0]), ([0.0], [9.0])], rng)
        self.assertAlmostEqual(ctr, 200.0 / 3.0)
        self.assertAlmostEqual(rpm, 6.0 / 3.0 * 1000.0)

    def test_realized_frequency_follows_probability(self):
        rng = np.random.default_rng(1)
        ctr, _ = realized_metrics([([0.25] * 1000, [1.0] * 1000)] * 20, rng)
        self.assertAlmostEqual(ctr, 25.0, delta=1.0)


# ==============================================================================
# Regret and IC metric
# ==============================================================================

class RegretTests(SimpleTestCase):
    def test_grid(self):
        self.assertEqual(len(GAMMA_GRID), 10)
        self.assertIn(1.0, GAMMA_GRID)
        self.assertEqual(GAMMA_GRID[0], 0.2)
        self.assertEqual(GAMMA_GRID[-1], 2.0)

    def test_first_price_regret(self):
        ctr = np.ones(2)
        estimate = empirical_regret(lambda b: first_price_auction(ctr, b), [1.0, 0.5], 0, [1.0])
        self.assertAlmostEqual(estimate.regret, 0.4)
        self.assertEqual(estimate.best_gamma, 0.6)

    def test_second_price_regret_is_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            ctr = rng.uniform(0.05, 1.0, 2)
            bids = rng.uniform(0.1, 3.0, 2)
            for ad in (0, 1):
                estimate = empirical_regret(lambda b: second_price_auction(ctr, b), bids, ad, [bids[ad]])
                self.assertEqual(estimate.regret, 0.0)

    def test_regret_is_never_negative(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(2, 5))
            ctr, bids = rng.uniform(0.05, 1.0, n), rng.uniform(0.1, 3.0, n)
            values = rng.uniform(0.1, 3.0, 3)
            estimate = empirical_regret(lambda b: first_price_auction(ctr, b), bids, 0, values)
            self.assertGreaterEqual(estimate.regret, 0.0)
            self.assertEqual(estimate.samples, 3)

    def test_psi_second_price_is_exactly_zero(self):
        rng = np.random.default_rng(2)
        requests = []
        for _ in range(100):
            ctr, bids = rng.uniform(0.05, 1.0, 3), rng.uniform(0.1, 3.0, 3)
            requests.append((lambda b, ctr=ctr: second_price_auction(ctr, b), bids, bids.copy()))
        result = psi_metric(requests)
        self.assertEqual(result.psi, 0.0)
        self.assertEqual(result.terms + result.skipped, 100)

    def test_psi_first_price_shaded_bid(self):
        ctr = np.ones(2)
        result = psi_metric([(lambda b: first_price_auction(ctr, b), np.array([0.9, 0.5]), np.array([1.0, 0.5]))])
        self.assertEqual(result.terms, 1)
        self.assertAlmostEqual(result.psi, 0.36 / 0.1, places=9)
        self.assertGreater(result.psi, 0.0)

    def test_psi_skips_zero_utility(self):
        ctr = np.ones(2)
        result = psi_metric([(lambda b: first_price_auction(ctr, b), np.array([1.0, 0.5]), np.array([1.0, 0.5]))])
        self.assertIsNone(result.psi)
        self.assertEqual(result.skipped, 1)

    def test_psi_from_terms(self):
        self.assertAlmostEqual(psi_from_terms([0.5, 1.0], [1.0, 2.0]).psi, 0.5)
        result = psi_from_terms([0.1, 0.2], [0.0, 1e-12])
        self.assertIsNone(result.psi)
        self.assertEqual(result.skipped, 2)

    def test_differentiable_regret_from_utilities(self):
        reference = Tensor(np.array([[0.3]]), requires_grad=True)
        better = Tensor(np.array([[0.5]]), requires_grad=True)
        regret = regret_from_utilities(reference, [Tensor(np.array([[0.1]])), better, None])
        self.assertAlmostEqual(regret.item(), 0.2)
        regret.backward()
        self.assertEqual(better.grad[0, 0], 1.0)
        self.assertEqual(reference.grad[0, 0], -1.0)
        self.assertEqual(regret_from_utilities(reference, [None]).item(), 0.0)
        self.assertAlmostEqual(regret_from_utilities(None, [better]).item(), 0.5)


# ==============================================================================
# FLOPs
# ==============================================================================

class ClosedFormTests(SimpleTestCase):
    def test_plug_ins(self):
        self.assertEqual(block(1, 1), 28)
        self.assertEqual(block2(1, 1, 1), 28)
        self.assertEqual(pre(1, 1, 1), 3)
        self.assertEqual(rank(1, 1, 1, 1), 4 * 4 + 24 * 2)
        self.assertEqual(gcf(1, 1, 1, 1), 34)
        self.assertEqual(mif(1, 1, 1, 1, 1), 2)
        self.assertEqual(auf(1, 1, 1, 1), 28 + 26)

    def test_formulas_at_random_integers(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            l, l2, d, n, n_c, m = (int(v) for v in rng.integers(1, 50, 6))
            self.assertEqual(block(l, d), 4 * l * l * d + 24 * l * d * d)
            self.assertEqual(block2(l, l2, d), 4 * l * l2 * d + 20 * l * d * d + 4 * l2 * d * d)
            self.assertEqual(gcf(m, n, n_c, d), m * (10 * n * n_c * d + 24 * n * d * d))

    def test_approximation_ratio(self):
        config = FlopsConfig(n=100_000, l=1000, d=128, n_c=128, m=4, m_c=2, m_e=2, k=5)
        self.assertEqual(config.m_k, 2)
        report = flops_closed_form(config)
        self.assertAlmostEqual(report.approx_ratio, 0.97, delta=0.005)
        self.assertAlmostEqual(approx_ratio(2, 4, 100_000, 3300.0, 1000, 128), 256 / 264)

    def test_report_totals(self):
        report = flops_closed_form(FlopsConfig(n=500, l=64, d=32, n_c=16, m=2, m_c=1, m_e=2, k=5))
        closed = report.closed_form
        self.assertEqual(closed["ega"], closed["gcf"] + closed["mif"] + closed["auf"])
        self.assertEqual(closed["mca"], closed["pre"] + closed["rank"])
        self.assertTrue(all(v > 0 for v in closed.values()))
        self.assertAlmostEqual(report.ratio, closed["ega"] / closed["mca"])

    def test_invalid_config(self):
        with self.assertRaises(FlopsConfigError):
            FlopsConfig(n=0, l=1, d=1, n_c=1, m=1, m_c=1, m_e=1, k=1)
        with self.assertRaises(FlopsConfigError):
            FlopsConfig(n=1, l=1, d=1, n_c=1, m=1, m_c=1, m_e=1, k=1, alpha=0.0)

    def test_fusion_paradigms(self):
        figures = fusion_paradigm_flops(m=10, m_c=2, n=100_000, l=1000, n_c=100, d=1)
        self.assertLess(figures["mid"] / figures["early"], 1e-4)
        self.assertAlmostEqual(figures["mid"] / figures["late"], 0.46, delta=0.01)


class FlopsCompareTests(SimpleTestCase):
    def test_flags_deltas_beyond_tolerance(self):
        report = FlopsReport(closed_form={"gcf": 100.0, "mif": 100.0, "auf": 100.0})
        flops_compare({"gcf": 105, "mif": 150}, report)
        rows = {row.module: row for row in report.comparisons}
        self.assertFalse(rows["gcf"].flagged)
        self.assertEqual(rows["gcf"].note, "")
        self.assertTrue(rows["mif"].flagged)
        self.assertTrue(rows["mif"].note)
        self.assertEqual(rows["auf"].ratio, 0.0)
        self.assertTrue(rows["auf"].flagged)

    def test_measure_sections(self):
        def run():
            with FLOPS.section("mif"):
                ops.matmul(Tensor(np.ones((3, 4))), Tensor(np.ones((4, 5))))

        spent = measure_sections(run)
        self.assertEqual(spent["mif"], 2 * 3 * 4 * 5)
        self.assertEqual(spent["gcf"], 0)

    def test_zero_layer_model_spends_nothing_in_encoder(self):
        rng = np.random.default_rng(0)
        model = RecFormer(ParamStore(), RecFormerConfig(m=0, m_c=1, d=4, n_clusters=2, n_heads=2), rng)
        spent = measure_sections(lambda: model.forward(Tensor(rng.normal(size=(6, 4))),
                                                       Tensor(rng.normal(size=(3, 4)))))
        self.assertEqual(spent["gcf"], 0)
        self.assertEqual(spent["gcf_usr"], 0)
        self.assertEqual(spent["mif"], 0)


# ==============================================================================
# Reports
# ==============================================================================

class ReportTests(SimpleTestCase):
    def make_reports(self):
        return [
            MetricReport(run_id="a", variant="ega", auc=0.7, erpm=10.0, psi=0.02),
            MetricReport(run_id="b", variant="ega", auc=0.8, erpm=14.0, psi=None),
            MetricReport(run_id="a", variant="gsp", auc=0.7, erpm=8.0),
        ]

    def test_summary_mean_and_std(self):
        summary = summarize_runs(self.make_reports())
        self.assertAlmostEqual(summary["ega"]["erpm"]["mean"], 12.0)
        self.assertAlmostEqual(summary["ega"]["erpm"]["std"], float(np.std([10.0, 14.0], ddof=1)))
        self.assertEqual(summary["ega"]["psi"]["count"], 1)
        self.assertEqual(summary["gsp"]["erpm"]["std"], 0.0)
        self.assertEqual(summarize_runs([]), {})

    def test_csv_has_one_row_per_report(self):
        with tempfile.TemporaryDirectory() as out:
            path = write_csv(self.make_reports(), Path(out) / "report.csv")
            frame = pd.read_csv(path)
        self.assertEqual(len(frame), 3)
        self.assertEqual(list(frame["variant"]), ["ega", "ega", "gsp"])

    def test_out_of_range_rejected(self):
        with self.assertRaises(ValueError):
            MetricReport(run_id="a", variant="ega", auc=1.5)
        with self.assertRaises(ValueError):
            MetricReport(run_id="a", variant="ega", deviation=-0.1)

    def test_metric_report_serializer_round_trip(self):
        report = MetricReport(run_id="r1", variant="ega", auc=0.75, recall_at_k=0.5, ectr=12.0, erpm=30.0,
                              deviation=0.1, psi=0.03, psi_skipped=2, mean_regret=0.01, requests=40)
        serializer = MetricReportSerializer(data=MetricReportSerializer(report).data)
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.to_record(), report)

    def test_flops_report_serializer(self):
        report = flops_closed_form(FlopsConfig(n=50, l=8, d=4, n_c=2, m=2, m_c=1, m_e=1, k=3))
        flops_compare({"gcf": 10, "mif": 4, "auf": 7}, report)
        serializer = FlopsReportSerializer(data=FlopsReportSerializer(report).data)
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.to_record(), report)
        data = FlopsReportSerializer(report).data
        data["closed_form"] = {"gcf": 0.0}
        self.assertFalse(FlopsReportSerializer(data=data).is_valid())
