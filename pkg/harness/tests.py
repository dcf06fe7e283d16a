import dataclasses
import json
import tempfile
from pathlib import Path
from unittest import skipUnless

import numpy as np
from click.testing import CliRunner
from django.conf import settings
from django.test import SimpleTestCase
from rest_framework.exceptions import ValidationError
from scipy.special import expit

from evaluation.reports import reports_frame
from feature_store.corpus import write_ads

from .cli import cli
from .config import RunConfig, load_run_config
from .exceptions import MissingCheckpointError, WorldConfigError
from .experiment import RunPaths, run_experiment, run_phase
from .report import read_report, read_reports
from .world import BAYES_AUC_TARGET, ClickOracle, WorldConfig, generate_world, simulate_request

SMALL_WORLD = WorldConfig(seed=3, n_total=60, n=20, k=3, l=6, n_s=5, n_users=12, check_requests=20)

TINY = dict(
    n_total=40, n=12, k=2, l=4, n_s=4, n_users=8, latent_dim=3,
    ad_features=2, ad_vocab=5, user_features=2, user_vocab=4, context_features=1, context_vocab=3,
    check_requests=10, n_train=8, n_test=4,
    d=8, n_clusters=2, n_heads=2, m=1, m_c=1, m_e=1,
    batch_size=4, pretrain_steps=2, reward_steps=2, rlaf_steps=2, payment_steps=1, recall_k=5,
)


def tiny_config(**overrides) -> RunConfig:
    return RunConfig(**{**TINY, **overrides})


def write_config(directory, **overrides) -> Path:
    path = Path(directory) / "run.cfg"
    lines = [f"{key} = {value}" for key, value in {**TINY, **overrides}.items()]
    path.write_text("# tiny world\n" + "\n".join(lines) + "\n", encoding="utf-8")
    return path


# ==============================
# WORLD
# ==============================
class WorldConfigTests(SimpleTestCase):
    def test_slots_above_pool_rejected_with_bound(self):
        with self.assertRaises(WorldConfigError) as ctx:
            WorldConfig(n=4, k=5)
        self.assertIn("K=5", str(ctx.exception))

    def test_pool_above_corpus_rejected(self):
        with self.assertRaises(WorldConfigError) as ctx:
            WorldConfig(n_total=10, n=20)
        self.assertIn("N_total=10", str(ctx.exception))

    def test_values_below_bids_rejected(self):
        with self.assertRaises(WorldConfigError):
            WorldConfig(value_scale=0.5)

    def test_schema_follows_config(self):
        schema = SMALL_WORLD.schema
        self.assertEqual(schema.behavior_length, 6)
        self.assertEqual(len(schema.ad_vocab), SMALL_WORLD.ad_features)


class GenerateWorldTests(SimpleTestCase):
    def test_same_seed_gives_identical_corpus_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            first, second = Path(tmp) / "a.jsonl", Path(tmp) / "b.jsonl"
            write_ads(first, generate_world(SMALL_WORLD).ads)
            write_ads(second, generate_world(SMALL_WORLD).ads)
            self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_other_seed_gives_other_corpus(self):
        a = generate_world(SMALL_WORLD)
        b = generate_world(dataclasses.replace(SMALL_WORLD, seed=4))
        self.assertNotEqual([ad.bid for ad in a.ads], [ad.bid for ad in b.ads])

    def test_private_values_scale_bids(self):
        world = generate_world(dataclasses.replace(SMALL_WORLD, value_scale=1.5))
        for ad in world.ads:
            self.assertAlmostEqual(ad.private_value, 1.5 * ad.bid)
            self.assertGreater(ad.bid, 0)

    def test_features_within_vocabulary(self):
        world = generate_world(SMALL_WORLD)
        for ad in world.ads:
            self.assertTrue(all(1 <= f < SMALL_WORLD.ad_vocab for f in ad.features))
        for user in world.users:
            self.assertEqual(len(user.behaviors), SMALL_WORLD.l)
            self.assertTrue(all(1 <= b <= SMALL_WORLD.n_total for b in user.behaviors))

    def test_zero_latent_dimension_leaves_position_bias(self):
        world = generate_world(dataclasses.replace(SMALL_WORLD, latent_dim=0))
        p = world.oracle.probabilities(0, [1, 2, 3], slots=[0, 1, 2])
        np.testing.assert_allclose(p, expit(-SMALL_WORLD.position_decay * np.arange(3)), rtol=0, atol=1e-15)

    def test_zero_latents_and_biases_give_one_half(self):
        oracle = ClickOracle(np.zeros((2, 4)), np.zeros((6, 4)), np.zeros(3))
        self.assertTrue(np.all(oracle.probabilities(1, [1, 2, 5], slots=[0, 1, 2]) == 0.5))

    def test_bayes_auc_above_target(self):
        config = WorldConfig(seed=0, n_total=300, n=100, k=5, l=8, n_s=10, n_users=100, check_requests=50)
        world = generate_world(config)
        self.assertGreater(world.bayes_auc, BAYES_AUC_TARGET)


class SimulateRequestTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.world = generate_world(SMALL_WORLD)

    def test_sizes_and_membership(self):
        sample = simulate_request(self.world, 2, np.random.default_rng(0), request_id=7)
        self.assertEqual(sample.request_id, 7)
        self.assertEqual(len(sample.candidates), SMALL_WORLD.n)
        self.assertEqual(len(set(sample.candidates)), SMALL_WORLD.n)
        self.assertEqual(len(sample.exposed), SMALL_WORLD.k)
        self.assertEqual(len(sample.unexposed), SMALL_WORLD.n_s)
        self.assertTrue(set(sample.exposed) <= set(sample.candidates))
        self.assertFalse(set(sample.exposed) & set(sample.unexposed))

    def test_labels_reproducible_under_fixed_rng(self):
        a = simulate_request(self.world, 5, np.random.default_rng(42))
        b = simulate_request(self.world, 5, np.random.default_rng(42))
        self.assertEqual(a, b)

    def test_infinite_temperature_exposes_uniformly(self):
        config = dataclasses.replace(SMALL_WORLD, n=10, k=2, noise_temperature=float("inf"))
        world = generate_world(config)
        draws, hits = 2000, 0
        for i in range(draws):
            sample = simulate_request(world, i % config.n_users, np.random.default_rng(i))
            logits = world.oracle.logits(i % config.n_users, sample.candidates)
            hits += sample.candidates[int(np.argmax(logits))] in sample.exposed
        self.assertAlmostEqual(hits / draws, config.k / config.n, delta=0.05)

    def test_certain_click_always_labelled(self):
        c = SMALL_WORLD
        oracle = ClickOracle(np.full((c.n_users, 1), 50.0), np.full((c.n_total + 1, 1), 50.0), np.zeros(c.k))
        world = dataclasses.replace(self.world, oracle=oracle)
        labels = []
        for i in range(334):
            labels.extend(simulate_request(world, i % c.n_users, np.random.default_rng(i)).exposed_clicks)
        self.assertGreaterEqual(len(labels), 1000)
        self.assertTrue(all(label == 1 for label in labels))


# ==============================
# RUN CONFIG
# ==============================
class RunConfigTests(SimpleTestCase):
    def test_defaults_without_file(self):
        config = load_run_config()
        self.assertEqual((config.n, config.k, config.l, config.d, config.m), (500, 5, 64, 32, 2))
        self.assertEqual(config.variant, "ega")

    def test_file_values_are_typed(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = load_run_config(write_config(tmp, fusion_mode="none", lr="0.01"))
        self.assertEqual(config.n, 12)
        self.assertIsInstance(config.n, int)
        self.assertEqual(config.lr, 0.01)
        self.assertEqual(config.variant, "ega-mif")

    def test_seed_flag_overrides_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = load_run_config(write_config(tmp, seed=5), seed=11)
        self.assertEqual(config.seed, 11)

    def test_unknown_key_rejected(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ValidationError) as ctx:
                load_run_config(write_config(tmp, slots=3))
        self.assertIn("slots", ctx.exception.detail)

    def test_untyped_value_rejected(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ValidationError) as ctx:
                load_run_config(write_config(tmp, n="many"))
        self.assertIn("n", ctx.exception.detail)

    def test_heads_must_divide_width(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ValidationError) as ctx:
                load_run_config(write_config(tmp, n_heads=3))
        self.assertIn("n_heads", ctx.exception.detail)

    def test_penalty_weight_must_be_positive(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ValidationError) as ctx:
                load_run_config(write_config(tmp, rho="0.0"))
        self.assertIn("rho", ctx.exception.detail)

    def test_world_bound_named(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ValidationError) as ctx:
                load_run_config(write_config(tmp, k=13))
        self.assertIn("K=13", str(ctx.exception.detail["world"]))

    def test_ablation_names(self):
        self.assertEqual(tiny_config(allocator="gsp").variant, "ega-auf")
        self.assertEqual(tiny_config(fusion_mode="target").variant, "ega-ca")
        self.assertEqual(tiny_config(fusion_mode="context").variant, "ega-ta")
        self.assertEqual(tiny_config(fusion_mode="late").variant, "ega-late")
        self.assertEqual(tiny_config(seed=4).run_id, "ega-ega-s4")


# ==============================
# EXPERIMENT DRIVER
# ==============================
class ExperimentTests(SimpleTestCase):
    def test_phase_without_prerequisite_names_it(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(MissingCheckpointError) as ctx:
                run_phase(tiny_config(), tmp, "rlaf")
        self.assertEqual(ctx.exception.phase, "pretrain")
        self.assertIn("pretrain", str(ctx.exception))

    def test_pipeline_writes_artifacts_and_reloads_report(self):
        with tempfile.TemporaryDirectory() as tmp:
            report = run_experiment(tiny_config(), tmp)
            paths = RunPaths(Path(tmp))
            for phase in ("pretrain", "reward", "rlaf", "payment"):
                self.assertTrue(paths.checkpoint(phase).is_file())
            self.assertTrue((paths.out / "metrics.jsonl").is_file())
            self.assertEqual([m.variant for m in report.metrics], ["ega", "gsp"])
            self.assertIsNotNone(report.flops)
            self.assertEqual(read_reports(tmp), [report])
            stored = read_report(paths.out / "reports" / f"{report.run_id}-pipeline.json")
            self.assertEqual(stored.metrics, report.metrics)

    def test_same_seed_gives_identical_metrics(self):
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            a = run_experiment(tiny_config(seed=2), first)
            b = run_experiment(tiny_config(seed=2), second)
        self.assertEqual(a.metrics, b.metrics)
        self.assertEqual(a.losses, b.losses)

    def test_gsp_allocator_ablation_runs_end_to_end(self):
        with tempfile.TemporaryDirectory() as tmp:
            report = run_experiment(tiny_config(allocator="gsp"), tmp)
        self.assertEqual([m.variant for m in report.metrics], ["ega-auf"])
        self.assertNotIn("rlaf", report.losses)

    def assert_comparable(self, ablated, full):
        self.assertEqual(len(ablated.metrics), len(full.metrics))
        self.assertEqual(list(reports_frame(ablated.metrics).columns), list(reports_frame(full.metrics).columns))
        self.assertEqual(set(ablated.losses), set(full.losses))
        for ours, theirs in zip(ablated.metrics, full.metrics):
            self.assertEqual(ours.requests, theirs.requests)
            # same world and test split, so the label-driven metrics exist in both or neither
            self.assertEqual(ours.auc is None, theirs.auc is None)
            self.assertEqual(ours.recall_at_k is None, theirs.recall_at_k is None)
            self.assertTrue(np.isfinite([ours.ectr, ours.erpm, ours.mean_regret]).all())

    def test_mif_ablation_runs_end_to_end(self):
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            full = run_experiment(tiny_config(), first)
            ablated = run_experiment(tiny_config(fusion_mode="none"), second)
            self.assertTrue(RunPaths(Path(second)).checkpoint("payment").is_file())
        self.assertEqual([m.variant for m in ablated.metrics], ["ega-mif", "gsp"])
        self.assertEqual(ablated.run_id, "ega-ega-mif-s0")
        self.assert_comparable(ablated, full)

    def test_late_fusion_runs_end_to_end(self):
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            full = run_experiment(tiny_config(), first)
            late = run_experiment(tiny_config(fusion_mode="late"), second)
        self.assertEqual([m.variant for m in late.metrics], ["ega-late", "gsp"])
        self.assert_comparable(late, full)

    def test_untrained_evaluation_reports_metrics(self):
        with tempfile.TemporaryDirectory() as tmp:
            report = run_experiment(tiny_config(), tmp, phases=("evaluate",))
        self.assertEqual(report.phase, "evaluate")
        for metric in report.metrics:
            self.assertEqual(metric.requests, TINY["n_test"])
            self.assertGreaterEqual(metric.mean_regret, 0.0)


@skipUnless(settings.EGA_DIRECTIONAL_TESTS, "set EGA_DIRECTIONAL_TESTS=True for the desk-scale training checks")
class TrainingDirectionTests(SimpleTestCase):
    """Default world, fixed seed: each training phase moves its metric the right way."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        config = RunConfig(seed=0)
        cls.reports = {
            step: run_experiment(config, cls.tmp.name, phases=(*phases, "evaluate"))
            for step, phases in (
                ("untrained", ()),
                ("pretrain", ("pretrain",)),
                ("reward", ("reward",)),
                ("rlaf", ("rlaf",)),
                ("payment", ("payment",)),
            )
        }

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def metric(self, step, variant="ega"):
        return next(m for m in self.reports[step].metrics if m.variant == variant)

    def test_pretraining_reaches_auc(self):
        self.assertGreaterEqual(self.metric("pretrain").auc, 0.70)
        self.assertGreater(self.metric("pretrain").auc, self.metric("untrained").auc)

    def test_rlaf_raises_erpm(self):
        self.assertGreater(self.metric("rlaf").erpm, self.metric("reward").erpm)

    def test_payment_training_halves_regret_and_keeps_revenue(self):
        before, after = self.metric("rlaf"), self.metric("payment")
        self.assertLessEqual(after.mean_regret, 0.5 * before.mean_regret)
        self.assertLessEqual(abs(after.erpm - before.erpm), 0.2 * before.erpm)

    def test_full_pipeline_beats_gsp(self):
        ega, gsp = self.metric("payment"), self.metric("payment", "gsp")
        self.assertGreater(ega.erpm, gsp.erpm)
        self.assertLess(ega.psi, gsp.psi)

    def test_runs_within_half_an_hour(self):
        self.assertLess(sum(report.wall_time for report in self.reports.values()), 30 * 60)


# ==============================
# CLI
# ==============================
class CliTests(SimpleTestCase):
    def setUp(self):
        self.runner = CliRunner(mix_stderr=False)
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.config = str(write_config(self.tmp.name))
        self.out = str(Path(self.tmp.name) / "out")

    def invoke(self, *args):
        return self.runner.invoke(cli, list(args), catch_exceptions=False)

    def test_gen_data_then_pretrain(self):
        result = self.invoke("gen-data", "--config", self.config, "--out", self.out)
        self.assertEqual(result.exit_code, 0, result.stderr)
        self.assertEqual(json.loads(result.stdout)["train"], TINY["n_train"])
        result = self.invoke("pretrain", "--config", self.config, "--out", self.out)
        self.assertEqual(result.exit_code, 0, result.stderr)
        self.assertTrue(RunPaths(Path(self.out)).checkpoint("pretrain").is_file())

    def test_rlaf_without_pretrain_names_it(self):
        result = self.invoke("rlaf", "--config", self.config, "--out", self.out)
        self.assertEqual(result.exit_code, 1)
        record = json.loads(result.stderr)
        self.assertEqual(record["error"], "MissingCheckpointError")
        self.assertEqual(record["phase"], "pretrain")

    def test_invalid_config_is_a_machine_readable_error(self):
        config = str(write_config(self.tmp.name, n_heads=3))
        result = self.invoke("gen-data", "--config", config, "--out", self.out)
        self.assertEqual(result.exit_code, 1)
        self.assertEqual(json.loads(result.stderr)["error"], "ValidationError")

    def test_unknown_subcommand_is_usage_error(self):
        result = self.invoke("bogus")
        self.assertEqual(result.exit_code, 2)

    def test_unknown_flag_is_usage_error(self):
        result = self.invoke("flops", "--slots", "3")
        self.assertEqual(result.exit_code, 2)

    def test_flops_prints_table_without_output_files(self):
        result = self.invoke("flops", "--config", self.config, "--out", self.out)
        self.assertEqual(result.exit_code, 0, result.stderr)
        self.assertIn("gcf", result.stdout)
        self.assertIn("ega / mca", result.stdout)
        self.assertFalse(Path(self.out).exists())

    def test_report_without_runs_fails(self):
        result = self.invoke("report", "--out", self.out)
        self.assertEqual(result.exit_code, 1)
        self.assertEqual(json.loads(result.stderr)["error"], "MissingDataError")

    def test_evaluate_then_report_writes_csv(self):
        result = self.invoke("evaluate", "--config", self.config, "--out", self.out)
        self.assertEqual(result.exit_code, 0, result.stderr)
        result = self.invoke("report", "--out", self.out)
        self.assertEqual(result.exit_code, 0, result.stderr)
        self.assertTrue(RunPaths(Path(self.out)).csv.is_file())
        self.assertIn("gsp", result.stdout)
