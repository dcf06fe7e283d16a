import itertools
import math
import tempfile

import numpy as np
from django.test import SimpleTestCase

from aucformer.generator import log_selection_probabilities
from feature_store.records import AdFeatureRecord, FeatureSchema, UserFeatureRecord
from numerics.optim import Adam
from numerics.params import gradient_of

from .exceptions import InvalidSampleError, NegativeSamplingError, UnknownPhaseError
from .metrics_log import MetricsLog, read_metrics
from .model import PHASE_TRAINABLE, EGAModel, ModelConfig
from .phases import PhaseSettings, run_payment, run_pretrain
from .samples import RequestSample
from .sampling import popularity_weights, sample_negatives
from .serializers import RequestSampleSerializer, StepLogSerializer
from .steps import (
    LagrangianState,
    RlafBatch,
    build_rlaf_batch,
    compute_rlaf_rewards,
    dual_update,
    payment_loss,
    payment_step,
    pretrain_loss,
    pretrain_step,
    reward_model_loss,
    rlaf_loss,
    rlaf_step,
)

SCHEMA = FeatureSchema(ad_vocab=(5, 4), user_vocab=(3,), context_vocab=(3,), behavior_length=3)
CONFIG = ModelConfig(d=8, k=2, n_clusters=2, n_heads=2, m=1, m_c=1, m_e=1)
N_ADS = 12


def make_model(test, config=CONFIG, seed=0):
    rng = np.random.default_rng(seed)
    ads = []
    for i in range(N_ADS):
        bid = float(rng.uniform(0.5, 2.0))
        ads.append(AdFeatureRecord(ad_id=i + 1, features=(int(rng.integers(1, 5)), int(rng.integers(1, 4))),
                                   bid=bid, private_value=bid))
    model = EGAModel(config, SCHEMA, ads, seed=seed, namespace=f"training-{test.id()}")
    model.features.publish_users([
        UserFeatureRecord(user_id=u, features=(1 + u % 2,), behaviors=(1, 2 + u), timestamps=(1, 2),
                          context=(1 + u % 2,))
        for u in range(3)
    ])
    return model


def make_samples(count, k=2, n_s=3, n_candidates=6, seed=0):
    rng = np.random.default_rng(seed)
    samples = []
    for request_id in range(count):
        candidates = [int(a) for a in rng.choice(np.arange(1, N_ADS + 1), size=n_candidates, replace=False)]
        exposed = candidates[:k]
        rest = [a for a in range(1, N_ADS + 1) if a not in exposed]
        unexposed = [int(a) for a in rng.choice(rest, size=n_s, replace=False)]
        samples.append(RequestSample(
            request_id=request_id,
            user_id=request_id % 3,
            candidates=tuple(candidates),
            exposed=tuple(exposed),
            exposed_clicks=tuple(int(c) for c in rng.integers(0, 2, k)),
            unexposed=tuple(unexposed),
            unexposed_clicks=tuple(int(c) for c in rng.integers(0, 2, n_s)),
        ))
    return samples


def lexicographic_slate(z, allowed):
    """Greedy slate by enumeration: the allowed sequence with the best z per slot in order."""
    length = min(z.shape[1], len(allowed))
    best, best_key = [], None
    for seq in itertools.permutations(allowed, length):
        key = tuple(v for slot, ad in enumerate(seq) for v in (z[ad, slot], -ad))
        if best_key is None or key > best_key:
            best, best_key = list(seq), key
    return best


# ==============================================================================
# Popularity sampling
# ==============================================================================

class SamplingTests(SimpleTestCase):
    def test_smoothed_mass_ratio(self):
        weights = popularity_weights([16, 1])
        self.assertAlmostEqual(weights[0] / weights[1], 8.0, places=12)

    def test_uniform_counts_give_uniform_frequencies(self):
        rng = np.random.default_rng(0)
        ids, draws = np.arange(1, 11), 100_000
        hits = np.zeros(10)
        for _ in range(draws):
            hits[sample_negatives(ids, np.full(10, 5.0), 1, rng)[0] - 1] += 1
        sigma = math.sqrt(0.1 * 0.9 / draws)
        np.testing.assert_array_less(np.abs(hits / draws - 0.1), 3 * sigma)

    def test_zero_count_never_sampled(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            drawn = sample_negatives([1, 2, 3, 4], [0, 1, 1, 1], 3, rng)
            self.assertNotIn(1, drawn)
            self.assertEqual(len(set(drawn.tolist())), 3)

    def test_excluded_ads_never_sampled(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            self.assertNotIn(2, sample_negatives([1, 2, 3], [1, 1, 1], 2, rng, exclude=[2]))

    def test_deterministic_under_seed(self):
        a = sample_negatives(np.arange(1, 50), np.arange(1, 50), 10, np.random.default_rng(7))
        b = sample_negatives(np.arange(1, 50), np.arange(1, 50), 10, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_too_many_negatives_rejected(self):
        rng = np.random.default_rng(0)
        with self.assertRaises(NegativeSamplingError):
            sample_negatives([1, 2, 3], [1, 1, 1], 4, rng)
        with self.assertRaises(NegativeSamplingError):
            sample_negatives([1, 2, 3], [1, 0, 0], 2, rng)
        with self.assertRaises(NegativeSamplingError):
            popularity_weights([])


class RequestSampleTests(SimpleTestCase):
    def test_label_and_size_contracts(self):
        with self.assertRaises(InvalidSampleError):
            RequestSample(1, 0, (1, 2), (1,), (2,), (), ())
        with self.assertRaises(InvalidSampleError):
            RequestSample(1, 0, (1, 2), (1, 1), (0, 1), (), ())
        sample = make_samples(1)[0]
        sample.check_sizes(2, 3)
        with self.assertRaises(InvalidSampleError):
            sample.check_sizes(3, 3)

    def test_sample_ads_put_exposed_first(self):
        sample = make_samples(1)[0]
        self.assertEqual(sample.sample_ads[:2], sample.exposed)
        self.assertEqual(sample.sample_labels.shape, (5, 1))

    def test_serializer_round_trip(self):
        sample = make_samples(1)[0]
        serializer = RequestSampleSerializer(data=RequestSampleSerializer(sample).data)
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.to_record(), sample)

    def test_serializer_rejects_exposed_non_candidate(self):
        data = RequestSampleSerializer(make_samples(1)[0]).data
        data["exposed"] = [N_ADS + 5, data["exposed"][1]]
        self.assertFalse(RequestSampleSerializer(data=data).is_valid())

    def test_step_log_rejects_unknown_phase(self):
        serializer = StepLogSerializer(data={"phase": "finetune", "step": 0, "loss": 1.0})
        self.assertFalse(serializer.is_valid())


# ==============================================================================
# Pre-training and reward model
# ==============================================================================

class PretrainTests(SimpleTestCase):
    def test_loss_is_ln2_per_ad_when_heads_output_half(self):
        model = make_model(self)
        model.recformer.ctr_mlp.final.zero_()
        model.set_phase("pretrain")
        loss = pretrain_loss(model, make_samples(4))
        self.assertAlmostEqual(loss.item(), 5 * math.log(2.0), places=12)

    def test_freeze_contract(self):
        model = make_model(self)
        model.set_phase("pretrain")
        grads = gradient_of(pretrain_loss(model, make_samples(3)), model.store)
        for name, grad in grads.items():
            if not name.startswith(PHASE_TRAINABLE["pretrain"]):
                self.assertFalse(grad.any(), name)
        self.assertTrue(any(grads[n].any() for n in model.store.names("feature_store/")))
        self.assertTrue(any(grads[n].any() for n in model.store.names("recformer/")))

    def test_repeated_steps_reduce_loss(self):
        model = make_model(self)
        batch = make_samples(4)
        optimizer = Adam(lr=1e-2)
        losses = [pretrain_step(model, optimizer, batch) for _ in range(25)]
        self.assertLess(losses[-1], losses[0])

    def test_unknown_phase_rejected(self):
        model = make_model(self)
        with self.assertRaises(UnknownPhaseError):
            model.set_phase("finetune")


class RewardModelTests(SimpleTestCase):
    def test_loss_is_ln2_per_exposed_ad_when_evaluator_outputs_half(self):
        model = make_model(self)
        model.evaluator.mlp.final.zero_()
        model.set_phase("reward")
        self.assertAlmostEqual(reward_model_loss(model, make_samples(3)).item(), 2 * math.log(2.0), places=12)

    def test_embedding_gradients_are_exactly_zero(self):
        model = make_model(self)
        model.set_phase("reward")
        grads = gradient_of(reward_model_loss(model, make_samples(3)), model.store)
        for name in model.store.names("feature_store/"):
            self.assertFalse(grads[name].any(), name)
        for name in model.store.names("aucformer/generator/") + model.store.names("aucformer/payment/"):
            self.assertFalse(grads[name].any(), name)
        self.assertTrue(any(grads[n].any() for n in model.store.names("aucformer/evaluator/")))


# ==============================================================================
# RLAF
# ==============================================================================

def ones(winners):
    return np.ones(len(winners))


class RlafRewardTests(SimpleTestCase):
    def test_single_slot_marginal_revenue(self):
        winners, rewards = compute_rlaf_rewards(np.array([[0.7], [0.3]]), [3.0, 2.0], ones)
        self.assertEqual(winners, [0])
        np.testing.assert_allclose(rewards, [1.0])

    def test_perfect_substitute_earns_nothing(self):
        _, rewards = compute_rlaf_rewards(np.array([[0.5], [0.4], [0.1]]), [2.0, 2.0, 1.0], ones)
        np.testing.assert_allclose(rewards, [0.0])

    def test_short_replacement_slate(self):
        winners, rewards = compute_rlaf_rewards(np.array([[0.6, 0.3], [0.4, 0.7]]), [3.0, 2.0], ones)
        self.assertEqual(winners, [0, 1])
        np.testing.assert_allclose(rewards, [3.0, 2.0])

    def test_irrelevant_ad_changes_nothing(self):
        z = np.array([[0.6], [0.3], [0.1]])
        _, with_extra = compute_rlaf_rewards(z, [3.0, 2.0, 9.0], ones)
        _, without = compute_rlaf_rewards(z[:2] / z[:2].sum(axis=0), [3.0, 2.0], ones)
        np.testing.assert_allclose(with_extra, without)

    def test_matches_exhaustive_oracle(self):
        for seed in range(300):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(1, 7))
            k = int(rng.integers(1, min(2, n) + 1))
            z = rng.random((n, k))
            bids = rng.uniform(0.1, 3.0, n)
            q = rng.uniform(0.01, 1.0, (n, k))

            def evaluate(winners):
                return q[list(winners), np.arange(len(winners))]

            def revenue(slate):
                return float(np.dot(bids[slate], evaluate(slate))) if slate else 0.0

            winners, rewards = compute_rlaf_rewards(z, bids, evaluate)
            slate = lexicographic_slate(z, list(range(n)))
            self.assertEqual(winners, slate)
            expected = sum(revenue(slate) - revenue(lexicographic_slate(z, [a for a in range(n) if a != ad]))
                           for ad in slate)
            self.assertAlmostEqual(float(rewards.sum()), expected, places=12)


class RlafStepTests(SimpleTestCase):
    def test_only_generator_receives_gradients(self):
        model = make_model(self)
        batch = build_rlaf_batch(model, make_samples(3))
        self.assertEqual([len(s) for s in batch.sequences], [2, 2, 2])
        grads = gradient_of(rlaf_loss(batch), model.store)
        for name, grad in grads.items():
            if not name.startswith("aucformer/generator/"):
                self.assertFalse(grad.any(), name)

    def test_zero_rewards_give_zero_gradient(self):
        model = make_model(self)
        model.set_phase("rlaf")
        sample = make_samples(1)[0]
        encoded = model.encode_frozen(sample.candidates, sample.user_id)
        allocation = model.generator(encoded.h_ad, encoded.ctr, encoded.bids, training=True)
        batch = RlafBatch([allocation.winners], [np.zeros(2)], [log_selection_probabilities(allocation)])
        grads = gradient_of(rlaf_loss(batch), model.store)
        self.assertFalse(any(g.any() for g in grads.values()))

    def test_positive_reward_raises_chosen_probability(self):
        model = make_model(self, config=ModelConfig(d=8, k=1, n_clusters=2, n_heads=2, m=1, m_c=1, m_e=1))
        model.set_phase("rlaf")
        sample = make_samples(1, k=1)[0]
        encoded = model.encode_frozen(sample.candidates, sample.user_id)
        before = model.generator(encoded.h_ad, encoded.ctr, encoded.bids, training=True)
        chosen = before.winners[0]
        batch = RlafBatch([before.winners], [np.array([1.0])], [log_selection_probabilities(before)])
        rlaf_step(model, Adam(lr=1e-3), batch)
        after = model.generator(encoded.h_ad, encoded.ctr, encoded.bids, training=True)
        self.assertGreater(after.probabilities[chosen, 0], before.probabilities[chosen, 0])


# ==============================================================================
# Payment network
# ==============================================================================

class DualUpdateTests(SimpleTestCase):
    def test_examples(self):
        state = dual_update(LagrangianState(rho=1.0), {7: 0.2})
        self.assertAlmostEqual(state.multiplier(7), 0.2)
        self.assertAlmostEqual(dual_update(state, {7: 0.0}).multiplier(7), 0.2)

    def test_repeated_positive_regret_is_strictly_increasing(self):
        state, previous = LagrangianState(rho=0.5), 0.0
        for _ in range(5):
            state = dual_update(state, {1: 0.1})
            self.assertGreater(state.multiplier(1), previous)
            previous = state.multiplier(1)

    def test_update_period(self):
        state = dual_update(LagrangianState(rho=1.0, update_period=2), {1: 0.3})
        self.assertEqual(state.multiplier(1), 0.0)
        self.assertAlmostEqual(dual_update(state, {1: 0.3}).multiplier(1), 0.3)

    def test_invalid_inputs(self):
        with self.assertRaises(ValueError):
            dual_update(LagrangianState(), {1: -0.1})
        for rho in (0.0, -1.0):
            with self.assertRaises(ValueError):
                LagrangianState(rho=rho)
        with self.assertRaises(ValueError):
            LagrangianState(lambdas={1: -0.5})


class PaymentTrainingTests(SimpleTestCase):
    def test_loss_is_negative_revenue_without_constraint_terms(self):
        model = make_model(self)
        model.set_phase("payment")
        batch = make_samples(3)
        loss, regrets, revenue = payment_loss(model, batch, LagrangianState(), rho=0.0)
        self.assertAlmostEqual(loss.item(), -revenue, places=12)
        expected = []
        for sample in batch:
            encoded = model.encode_frozen(sample.candidates, sample.user_id)
            expected.append(model.mechanism(encoded)(encoded.bids).revenue)
        self.assertAlmostEqual(revenue, float(np.mean(expected)), places=12)
        self.assertTrue(all(r >= 0 for values in regrets.values() for r in values))

    def test_revenue_step_raises_revenue(self):
        model = make_model(self)
        batch = make_samples(3)

        def total_revenue():
            out = 0.0
            for sample in batch:
                encoded = model.encode_frozen(sample.candidates, sample.user_id)
                out += model.mechanism(encoded)(encoded.bids).revenue
            return out

        before = total_revenue()
        payment_step(model, Adam(lr=1e-3), batch, LagrangianState(), rho=0.0)
        self.assertGreater(total_revenue(), before)

    def test_only_payment_network_receives_gradients(self):
        model = make_model(self)
        model.set_phase("payment")
        loss, _, _ = payment_loss(model, make_samples(2), LagrangianState(rho=1.0, lambdas={1: 0.5}))
        grads = gradient_of(loss, model.store)
        for name, grad in grads.items():
            if not name.startswith("aucformer/payment/"):
                self.assertFalse(grad.any(), name)

    def test_payment_phase_keeps_individual_rationality(self):
        model = make_model(self)
        samples = make_samples(6)
        losses, state = run_payment(model, samples, PhaseSettings(steps=3, batch_size=3, lr=1e-2),
                                    np.random.default_rng(0))
        self.assertEqual(len(losses), 3)
        self.assertTrue(all(v >= 0 for v in state.lambdas.values()))
        for sample in samples:
            encoded = model.encode_frozen(sample.candidates, sample.user_id)
            outcome = model.mechanism(encoded)(encoded.bids)
            np.testing.assert_array_less(outcome.payments, encoded.bids[outcome.winners] + 1e-12)


class PhaseDriverTests(SimpleTestCase):
    def test_metrics_log_records_every_step(self):
        model = make_model(self)
        with tempfile.TemporaryDirectory() as out:
            log = MetricsLog.in_directory(out)
            losses = run_pretrain(model, make_samples(4), PhaseSettings(steps=3, batch_size=2),
                                  np.random.default_rng(0), log)
            records = read_metrics(log.path)
        self.assertEqual([r.step for r in records], [0, 1, 2])
        self.assertEqual({r.phase for r in records}, {"pretrain"})
        np.testing.assert_allclose([r.loss for r in records], losses)

    def test_invalid_settings_rejected(self):
        with self.assertRaises(ValueError):
            PhaseSettings(batch_size=0)
        with self.assertRaises(ValueError):
            PhaseSettings(lr=0.0)
