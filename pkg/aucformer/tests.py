import itertools

import numpy as np
from django.test import SimpleTestCase
from rest_framework import serializers

from numerics import ops
from numerics.gradcheck import finite_difference_errors
from numerics.params import ParamStore, gradient_of
from numerics.tensor import Tensor, no_grad

from .allocation import allocation_probabilities, greedy_select
from .evaluator import Evaluator
from .exceptions import InvalidBidError, SlotCountError
from .generator import Generator, generator_scores, log_selection_probabilities
from .mechanisms import (
    EGAMechanism,
    GSPMechanism,
    MechanismOutcome,
    first_price_auction,
    gsp_allocate,
    second_price_auction,
)
from .payment import PaymentNetwork, other_bids
from .serializers import AllocationRecordSerializer

D = 4


def make_generator(k=2, m_e=1, seed=0):
    store = ParamStore()
    rng = np.random.default_rng(seed)
    return Generator(store, D, k, n_heads=2, n_clusters=2, m_e=m_e, rng=rng), store, rng


def brute_force_select(z, k):
    """Lexicographic best K-permutation: highest z per slot in order, lowest index on ties."""
    n = z.shape[0]
    best, best_key = None, None
    for seq in itertools.permutations(range(n), k):
        key = tuple(v for slot, ad in enumerate(seq) for v in (z[ad, slot], -ad))
        if best_key is None or key > best_key:
            best, best_key = list(seq), key
    return best


# ==============================================================================
# Generator and allocation
# ==============================================================================

class GeneratorTests(SimpleTestCase):
    def test_single_candidate_takes_every_slot_probability(self):
        generator, _, rng = make_generator(k=3)
        allocation = generator.scores(Tensor(rng.normal(size=(1, D))), [0.3], [2.0])
        np.testing.assert_array_equal(allocation.probabilities, np.ones((1, 3)))

    def test_symmetric_candidates_split_evenly(self):
        generator, _, rng = make_generator(k=2)
        row = rng.normal(size=(1, D))
        allocation = generator.scores(Tensor(np.repeat(row, 2, axis=0)), [0.5, 0.5], [1.0, 1.0])
        np.testing.assert_array_equal(allocation.probabilities, np.full((2, 2), 0.5))

    def test_columns_are_distributions(self):
        generator, _, rng = make_generator(k=3)
        allocation = generator.scores(Tensor(rng.normal(size=(9, D))), rng.uniform(0.01, 1, 9), rng.uniform(0.1, 5, 9))
        np.testing.assert_allclose(allocation.probabilities.sum(axis=0), 1.0, atol=1e-9)
        self.assertEqual(allocation.scores.shape, (9, 3))

    def test_nonpositive_bid_rejected(self):
        generator, _, rng = make_generator()
        for bad in (0.0, -1.0):
            with self.assertRaises(InvalidBidError):
                generator.scores(Tensor(rng.normal(size=(3, D))), [0.5] * 3, [1.0, bad, 1.0])

    def test_raising_a_bid_raises_every_slot_probability(self):
        generator, _, rng = make_generator(k=3)
        h = Tensor(rng.normal(size=(6, D)))
        ctr, bids = rng.uniform(0.05, 1, 6), rng.uniform(0.5, 2, 6)
        previous = None
        for bid in np.linspace(0.1, 5.0, 20):
            bids[2] = bid
            z = generator.scores(h, ctr, bids).probabilities[2]
            if previous is not None:
                self.assertTrue((z > previous).all())
            previous = z

    def test_monotonicity_on_random_instances(self):
        rng = np.random.default_rng(11)
        grid = np.linspace(0.1, 5.0, 20)
        for _ in range(1000):
            n, k = int(rng.integers(2, 11)), int(rng.integers(1, 4))
            scores, ctr, bids = rng.normal(size=(n, k)), rng.uniform(0.01, 1, n), rng.uniform(0.1, 5, n)
            w_z, i = rng.uniform(-1, 1), int(rng.integers(n))
            sweep = []
            for bid in grid:
                bids[i] = bid
                sweep.append(allocation_probabilities(scores, ctr, bids, w_z)[i])
            self.assertTrue((np.diff(np.array(sweep), axis=0) > 0).all())

    def test_rescore_matches_full_forward(self):
        generator, store, rng = make_generator(k=2)
        store.load("aucformer/generator/w_z", [[0.4]])
        h, ctr = Tensor(rng.normal(size=(5, D))), rng.uniform(0.1, 1, 5)
        allocation = generator.scores(h, ctr, np.ones(5))
        new_bids = rng.uniform(0.5, 3, 5)
        np.testing.assert_allclose(
            Generator.rescore(allocation, ctr, new_bids),
            generator.scores(h, ctr, new_bids).probabilities,
            atol=1e-12,
        )

    def test_log_probabilities_of_selected_ads(self):
        generator, _, rng = make_generator(k=2)
        allocation = generator(Tensor(rng.normal(size=(4, D))), rng.uniform(0.1, 1, 4), rng.uniform(0.5, 2, 4))
        logs = log_selection_probabilities(allocation).data[:, 0]
        expected = [np.log(allocation.probabilities[ad, slot]) for slot, ad in enumerate(allocation.winners)]
        np.testing.assert_allclose(logs, expected)

    def test_dominant_bid_keeps_later_slots_finite(self):
        generator, store, rng = make_generator(k=2)
        h = Tensor(rng.normal(size=(3, D)))
        ctr, bids = [1.0, 1.0, 1.0], [1000.0, 1.0, 1.0]
        allocation = generator(h, ctr, bids, training=True)
        self.assertEqual(allocation.probabilities[1, 1], 0.0)
        self.assertEqual(allocation.winners[0], 0)
        runner_up = 1 + int(np.argmax(allocation.scores[1:, 1]))
        self.assertEqual(allocation.winners, [0, runner_up])
        logs = log_selection_probabilities(allocation)
        self.assertTrue(np.isfinite(logs.data).all())
        self.assertLess(logs.data[1, 0], -700.0)
        grads = gradient_of(ops.total(logs), store)
        self.assertTrue(all(np.isfinite(g).all() for g in grads.values()))

    def test_generator_scores_matches_generator_pass(self):
        generator, _, rng = make_generator(k=2)
        h, ctr, bids = Tensor(rng.normal(size=(4, D))), rng.uniform(0.1, 1, 4), rng.uniform(0.5, 2, 4)
        allocation = generator_scores(h, ctr, bids, generator)
        np.testing.assert_array_equal(allocation.probabilities, generator.scores(h, ctr, bids).probabilities)
        self.assertEqual(allocation.winners, [])

    def test_gradients_match_finite_differences(self):
        for seed in range(20):
            generator, store, rng = make_generator(k=3, seed=seed)
            store.load("aucformer/generator/w_z", [[rng.uniform(-0.5, 0.5)]])
            h = rng.normal(size=(5, D))
            ctr, bids = rng.uniform(0.1, 1, 5), rng.uniform(0.5, 2, 5)
            weights = rng.normal(size=(5, 3))

            def loss_fn():
                return ops.total(generator.scores(Tensor(h), ctr, bids, training=True).z * weights)

            errors = finite_difference_errors(loss_fn, store, rng=rng, entries_per_tensor=2)
            self.assertLess(max(errors.values()), 1e-4, msg=f"seed {seed}")


class GreedySelectTests(SimpleTestCase):
    def test_masked_argmax_example(self):
        z = np.array([[0.5, 0.1], [0.3, 0.6], [0.2, 0.3]])
        self.assertEqual(greedy_select(z), [0, 1])

    def test_earlier_slot_masks_later_choice(self):
        z = np.array([[0.6, 0.7], [0.4, 0.3]])
        self.assertEqual(greedy_select(z), [0, 1])

    def test_ties_go_to_lowest_index(self):
        self.assertEqual(greedy_select(np.full((3, 2), 1 / 3)), [0, 1])

    def test_full_slate_is_a_permutation(self):
        z = np.random.default_rng(0).dirichlet(np.ones(5), size=5).T
        self.assertEqual(sorted(greedy_select(z)), list(range(5)))

    def test_more_slots_than_candidates_rejected(self):
        with self.assertRaises(SlotCountError):
            greedy_select(np.ones((2, 3)) / 2)

    def test_exclusion_can_shorten_the_slate(self):
        z = np.array([[0.5, 0.5], [0.5, 0.5]])
        self.assertEqual(greedy_select(z, exclude=[0]), [1])

    def test_matches_exhaustive_oracle(self):
        shapes = [(n, k) for n, k in itertools.product(range(1, 9), range(1, 4)) if k <= n]
        for (n, k), seed in itertools.product(shapes, range(50)):
            rng = np.random.default_rng([n, k, seed])
            z = rng.dirichlet(np.ones(n), size=k).T
            if seed % 3 == 0:
                z = np.round(z, 1)
            winners = greedy_select(z)
            self.assertEqual(len(set(winners)), k)
            self.assertEqual(winners, brute_force_select(z, k), msg=f"N={n} K={k} seed {seed}")


# ==============================================================================
# Evaluator and payment network
# ==============================================================================

class EvaluatorTests(SimpleTestCase):
    def make(self, k=3, seed=0):
        store = ParamStore()
        rng = np.random.default_rng(seed)
        return Evaluator(store, D, k, n_heads=2, n_clusters=16, m_e=2, rng=rng), store, rng

    def test_cluster_count_capped_at_slot_count(self):
        evaluator, _, _ = self.make(k=3)
        self.assertEqual([layer.n_clusters for layer in evaluator.layers], [3, 3])

    def test_zero_final_layer_gives_half(self):
        evaluator, _, rng = self.make()
        evaluator.mlp.final.zero_()
        q = evaluator(Tensor(rng.normal(size=(3, D))), Tensor(rng.normal(size=(1, D))))
        np.testing.assert_array_equal(q.data, np.full((3, 1), 0.5))

    def test_slot_position_changes_prediction(self):
        evaluator, _, rng = self.make()
        h_ad, e_u = Tensor(rng.normal(size=(4, D))), Tensor(rng.normal(size=(1, D)))
        first = evaluator.score_slate(h_ad, [0, 1, 2], e_u).data[:, 0]
        swapped = evaluator.score_slate(h_ad, [1, 0, 2], e_u).data[:, 0]
        self.assertEqual(first.shape, (3,))
        self.assertTrue(((first > 0) & (first < 1)).all())
        self.assertFalse(np.allclose(first[:2], swapped[[1, 0]]))

    def test_short_and_empty_slates(self):
        evaluator, _, rng = self.make()
        e_u = Tensor(rng.normal(size=(1, D)))
        self.assertEqual(evaluator(Tensor(rng.normal(size=(2, D))), e_u).shape, (2, 1))
        self.assertEqual(evaluator(Tensor(np.zeros((0, D))), e_u).shape, (0, 1))
        with self.assertRaises(SlotCountError):
            evaluator(Tensor(rng.normal(size=(4, D))), e_u)

    def test_gradients_match_finite_differences(self):
        for seed in range(20):
            evaluator, store, rng = self.make(seed=seed)
            h, e_u = rng.normal(size=(3, D)), rng.normal(size=(1, D))
            labels = (rng.random((3, 1)) < 0.5).astype(float)

            def loss_fn():
                return ops.total(ops.bce(evaluator(Tensor(h), Tensor(e_u), training=True), labels))

            errors = finite_difference_errors(loss_fn, store, rng=rng, entries_per_tensor=2)
            self.assertLess(max(errors.values()), 1e-4, msg=f"seed {seed}")


class PaymentNetworkTests(SimpleTestCase):
    def make(self, k=3, seed=0):
        store = ParamStore()
        rng = np.random.default_rng(seed)
        return PaymentNetwork(store, D, k, rng), store, rng

    def test_other_bids_bookkeeping(self):
        np.testing.assert_array_equal(other_bids([2.0, 1.0], 2), [[1.0], [2.0]])
        np.testing.assert_array_equal(other_bids([3.0, 1.0], 3), [[1.0, 0.0], [3.0, 0.0]])

    def test_zero_final_layer_charges_half_the_bid(self):
        network, _, rng = self.make()
        network.mlp.final.zero_()
        bids = np.array([2.0, 1.0, 4.0])
        result = network(Tensor(rng.normal(size=(3, D))), Tensor(rng.uniform(size=(3, 1))), bids)
        np.testing.assert_array_equal(result.rates, [0.5, 0.5, 0.5])
        np.testing.assert_array_equal(result.payments, bids / 2)

    def test_individual_rationality_on_random_evaluations(self):
        network, store, rng = self.make(k=5)
        violations, evaluations = 0, 0
        with no_grad():
            for trial in range(20000):
                if trial % 1000 == 0:
                    scale = 1.0 + trial / 250
                    for name in store.names():
                        store.load(name, rng.normal(scale=scale, size=store[name].shape))
                bids = rng.lognormal(0.0, 2.0, size=5)
                result = network(Tensor(rng.normal(size=(5, D))), Tensor(rng.uniform(size=(5, 1))), bids)
                violations += int((result.payments > bids).sum())
                evaluations += 5
        self.assertEqual(evaluations, 100000)
        self.assertEqual(violations, 0)

    def test_gradients_match_finite_differences(self):
        for seed in range(20):
            network, store, rng = self.make(seed=seed)
            h, q, bids = rng.normal(size=(3, D)), rng.uniform(size=(3, 1)), rng.uniform(0.5, 2, 3)

            def loss_fn():
                result = network(Tensor(h), Tensor(q), bids, training=True)
                return ops.total(result.payment * q)

            errors = finite_difference_errors(loss_fn, store, rng=rng, entries_per_tensor=2)
            self.assertLess(max(errors.values()), 1e-4, msg=f"seed {seed}")


# ==============================================================================
# Mechanisms
# ==============================================================================

class GSPTests(SimpleTestCase):
    def test_winner_pays_next_price(self):
        winners, payments = gsp_allocate([0.5, 0.5], [2.0, 1.0], 1)
        self.assertEqual(winners, [0])
        self.assertEqual(payments.tolist(), [1.0])

    def test_identical_scores_favor_lowest_index(self):
        winners, _ = gsp_allocate([0.5, 0.25, 0.5], [1.0, 2.0, 1.0], 2)
        self.assertEqual(winners, [0, 1])

    def test_single_candidate_pays_zero(self):
        winners, payments = gsp_allocate([0.3], [2.0], 1)
        self.assertEqual((winners, payments.tolist()), ([0], [0.0]))

    def test_last_slot_without_runner_up_pays_zero(self):
        _, payments = gsp_allocate([0.5, 0.4], [1.0, 1.0], 3)
        self.assertEqual(payments.tolist(), [0.8, 0.0])

    def test_payments_never_exceed_bids(self):
        rng = np.random.default_rng(5)
        for _ in range(500):
            n = int(rng.integers(1, 12))
            ctr, bids = rng.uniform(0.01, 1, n), rng.lognormal(0, 1, n)
            winners, payments = gsp_allocate(ctr, bids, 3)
            self.assertTrue((payments <= bids[winners]).all())

    def test_mechanism_uses_slate_ctr_when_given(self):
        mechanism = GSPMechanism([0.5, 0.4, 0.1], 2, slate_ctr=lambda winners: np.full(len(winners), 0.2))
        outcome = mechanism(np.array([1.0, 1.0, 1.0]))
        self.assertEqual(outcome.winners, [0, 1])
        np.testing.assert_array_equal(outcome.ctr, [0.2, 0.2])


class ReferenceMechanismTests(SimpleTestCase):
    def test_first_price_pays_own_bid(self):
        outcome = first_price_auction([1.0, 1.0], [0.6, 0.5])
        self.assertEqual(outcome.winners, [0])
        self.assertAlmostEqual(outcome.utility(0, 1.0), 0.4)
        self.assertEqual(outcome.utility(1, 0.5), 0.0)

    def test_second_price_pays_runner_up(self):
        outcome = second_price_auction([1.0, 1.0], [1.0, 0.5])
        self.assertEqual(outcome.payments.tolist(), [0.5])
        self.assertEqual(outcome.revenue, 0.5)

    def test_outcome_utility_sums_over_slots(self):
        outcome = MechanismOutcome([3, 1], np.array([1.0, 0.5]), np.array([0.1, 0.2]))
        self.assertAlmostEqual(outcome.utility(1, 2.0), 0.3)
        self.assertAlmostEqual(outcome.expected_clicks, 0.3)


class EGAMechanismTests(SimpleTestCase):
    def setUp(self):
        store = ParamStore()
        rng = np.random.default_rng(2)
        self.generator = Generator(store, D, 2, 2, 2, 1, rng)
        self.evaluator = Evaluator(store, D, 2, 2, 2, 1, rng)
        self.payment = PaymentNetwork(store, D, 2, rng)
        self.h_ad = Tensor(rng.normal(size=(5, D)))
        self.ctr = rng.uniform(0.1, 0.9, 5)
        self.e_u = Tensor(rng.normal(size=(1, D)))
        self.bids = rng.uniform(0.5, 2.0, 5)
        self.mechanism = EGAMechanism(self.h_ad, self.ctr, self.e_u, self.bids,
                                      self.generator, self.evaluator, self.payment)

    def test_outcome_matches_generator_slate(self):
        outcome = self.mechanism(self.bids)
        self.assertEqual(outcome.winners, self.generator(self.h_ad, self.ctr, self.bids).winners)
        np.testing.assert_allclose(
            outcome.ctr, self.evaluator.score_slate(self.h_ad, outcome.winners, self.e_u).data[:, 0]
        )
        self.assertTrue((outcome.payments <= self.bids[outcome.winners]).all())

    def test_replaced_bids_can_change_the_slate(self):
        bids = self.bids.copy()
        loser = next(i for i in range(5) if i not in self.mechanism(bids).winners)
        bids[loser] = 1e4
        self.assertEqual(self.mechanism(bids).winners[0], loser)

    def test_second_slot_follows_logits_when_probabilities_underflow(self):
        bids = self.bids.copy()
        bids[4] = 1e4
        winners, z = self.mechanism.allocate(bids)
        logits = self.mechanism.scores[:, 1] + np.exp(self.mechanism.w_z) * self.ctr * bids
        logits[4] = -np.inf
        self.assertEqual(z[0, 1], 0.0)
        self.assertEqual(winners, [4, int(np.argmax(logits))])

    def test_exclusion_reallocates(self):
        winners, _ = self.mechanism.allocate(self.bids)
        without, _ = self.mechanism.allocate(self.bids, exclude=[winners[0]])
        self.assertNotIn(winners[0], without)
        self.assertEqual(len(without), 2)


class AllocationRecordSerializerTests(SimpleTestCase):
    def test_outcome_record_validates(self):
        outcome = MechanismOutcome([1, 0], np.array([0.5, 0.25]), np.array([0.1, 0.2]))
        record = outcome.to_record(7, candidate_ids=[11, 12], bids=[1.0, 2.0])
        serializer = AllocationRecordSerializer(data=AllocationRecordSerializer(record).data)
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.to_record(), record)
        self.assertEqual(record.ad_ids, [12, 11])

    def test_payment_above_bid_rejected(self):
        serializer = AllocationRecordSerializer(data={
            "request_id": 1, "ad_ids": [3], "bids": [1.0], "payments": [1.5], "ctr": [0.1],
        })
        with self.assertRaises(serializers.ValidationError):
            serializer.is_valid(raise_exception=True)
