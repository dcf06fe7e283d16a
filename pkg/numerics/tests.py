import numpy as np
from django.test import SimpleTestCase

from . import ops
from .checkpoint import MAGIC, load_store, read_checkpoint, save_store
from .exceptions import (
    CheckpointError,
    FrozenParameterError,
    NumericalError,
    ShapeMismatchError,
    UnsupportedOperationError,
)
from .flops import FLOPS, measure
from .gradcheck import finite_difference_errors
from .layers import DiceMLP, LayerNorm, Linear, dice, dice_state
from .optim import Adam
from .params import ParamStore, gradient_of
from .tensor import Tensor, no_grad


class MatmulTests(SimpleTestCase):
    def test_identity(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = ops.matmul(np.eye(2), m)
        np.testing.assert_array_equal(out.data, m)

    def test_hand_arithmetic(self):
        out = ops.matmul([[1.0, 2.0], [3.0, 4.0]], np.array([[0.0], [1.0]]))
        np.testing.assert_array_equal(out.data, [[2.0], [4.0]])

    def test_flop_count(self):
        rng = np.random.default_rng(3)
        with measure() as spent:
            ops.matmul(rng.normal(size=(7, 5)), rng.normal(size=(5, 3)))
        self.assertEqual(spent["flops"], 210)

    def test_flops_are_additive(self):
        rng = np.random.default_rng(4)
        a, b, c = rng.normal(size=(3, 4)), rng.normal(size=(4, 6)), rng.normal(size=(6, 2))
        with measure() as first:
            ab = ops.matmul(a, b)
        with measure() as second:
            ops.matmul(ab, c)
        with measure() as both:
            ops.matmul(ops.matmul(a, b), c)
        self.assertEqual(both["flops"], first["flops"] + second["flops"])

    def test_sections_nest(self):
        with measure("outer") as outer, measure("inner") as inner:
            with FLOPS.section("outer"), FLOPS.section("inner"):
                ops.matmul(np.ones((2, 2)), np.ones((2, 2)))
        self.assertEqual(outer["flops"], 16)
        self.assertEqual(inner["flops"], 16)

    def test_mismatch_reports_both_shapes(self):
        with self.assertRaises(ShapeMismatchError) as ctx:
            ops.matmul(np.ones((2, 3)), np.ones((2, 3)))
        self.assertIn("(2, 3) x (2, 3)", str(ctx.exception))


class SoftmaxTests(SimpleTestCase):
    def test_uniform_row(self):
        out = ops.softmax_rows(np.zeros((1, 3)))
        np.testing.assert_allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)

    def test_log_two(self):
        out = ops.softmax_rows([[np.log(2.0), 0.0]])
        np.testing.assert_allclose(out.data, [[2 / 3, 1 / 3]], atol=1e-15)

    def test_matches_reference(self):
        out = ops.softmax_rows([[1.0, 2.0, 3.0]])
        e = np.exp([1.0, 2.0, 3.0])
        np.testing.assert_allclose(out.data[0], e / e.sum(), atol=1e-12)

    def test_rows_sum_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(5)
        x = rng.normal(scale=30.0, size=(6, 9))
        out = ops.softmax_rows(x).data
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
        shifted = ops.softmax_rows(x + rng.normal(size=(6, 1)) * 100).data
        np.testing.assert_allclose(out, shifted, atol=1e-12)

    def test_log_softmax_is_finite_where_softmax_underflows(self):
        x = np.array([[1000.0, 1.0, 0.0]])
        self.assertEqual(ops.softmax_rows(x).data[0, 2], 0.0)
        out = ops.log_softmax_rows(x).data
        np.testing.assert_allclose(out, [[0.0, -999.0, -1000.0]])

    def test_log_softmax_matches_log_of_softmax(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(4, 3))
        np.testing.assert_allclose(ops.log_softmax_cols(x).data, np.log(ops.softmax_cols(x).data), atol=1e-12)

    def test_log_softmax_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        store = ParamStore()
        a = store.add("a", rng.normal(size=(5, 3)))
        weights = rng.normal(size=(5, 3))

        def loss_fn():
            return ops.total(ops.log_softmax_cols(a * 3.0) * weights)

        errors = finite_difference_errors(loss_fn, store)
        self.assertLess(max(errors.values()), 1e-4)

    def test_column_softmax(self):
        rng = np.random.default_rng(6)
        out = ops.softmax_cols(rng.normal(size=(5, 3))).data
        np.testing.assert_allclose(out.sum(axis=0), 1.0, atol=1e-12)


class DiceTests(SimpleTestCase):
    def make(self, epsilon=1e-8, alpha=0.0):
        store = ParamStore()
        state = dice_state(store, "act", 1, epsilon=epsilon)
        store.load("act/alpha", np.full((1, 1), alpha))
        return state

    def test_zero_input(self):
        out = dice(Tensor([[0.0]]), self.make(), training=False)
        self.assertEqual(out.item(), 0.0)

    def test_alpha_one_is_identity(self):
        state = self.make(alpha=1.0)
        x = Tensor(np.linspace(-3, 3, 7).reshape(-1, 1))
        np.testing.assert_allclose(dice(x, state, training=False).data, x.data, atol=1e-15)

    def test_scalar_evaluation(self):
        out = dice(Tensor([[1.0]]), self.make(epsilon=1e-300), training=False)
        self.assertAlmostEqual(out.item(), 1.0 / (1.0 + np.exp(-1.0)), places=12)
        self.assertAlmostEqual(out.item(), 0.73106, places=5)

    def test_training_updates_running_statistics(self):
        state = self.make()
        x = Tensor([[1.0], [3.0]])
        dice(x, state, training=True)
        self.assertAlmostEqual(float(state.running_mean[0, 0]), 0.01 * 2.0)
        self.assertAlmostEqual(float(state.running_var[0, 0]), 0.99 + 0.01 * 1.0)

    def test_inference_leaves_statistics(self):
        state = self.make()
        dice(Tensor([[1.0], [3.0]]), state, training=False)
        self.assertEqual(float(state.running_mean[0, 0]), 0.0)


class GradientTests(SimpleTestCase):
    def test_linear_case(self):
        store = ParamStore()
        w = store.add("w", np.random.default_rng(0).normal(size=(3, 4)))
        x = np.array([[1.0], [-2.0], [0.5], [3.0]])
        grads = gradient_of(ops.total(ops.matmul(w, x)), store)
        np.testing.assert_array_equal(grads["w"], np.tile(x.T, (3, 1)))

    def test_sigmoid_bce_at_zero_logit(self):
        store = ParamStore()
        logit = store.add("logit", [[0.0]])
        loss = ops.total(ops.bce(ops.sigmoid(logit), [[1.0]]))
        self.assertAlmostEqual(loss.item(), np.log(2.0), places=12)
        grads = gradient_of(loss, store)
        self.assertAlmostEqual(float(grads["logit"][0, 0]), -0.5, places=12)

    def test_bce_clamp_floor(self):
        loss = ops.bce([[1.0]], [[1.0]])
        self.assertAlmostEqual(loss.item(), -np.log(1.0 - 1e-7), places=12)

    def test_two_layer_net_matches_finite_differences(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            store = ParamStore()
            mlp = DiceMLP(store, "net", [4, 6, 1], rng)
            norm = LayerNorm(store, "norm", 4)
            x = rng.normal(size=(5, 4))
            y = (rng.random((5, 1)) < 0.5).astype(float)

            def loss_fn():
                p = ops.sigmoid(mlp(norm(Tensor(x)), training=True))
                return ops.mean(ops.bce(p, y))

            errors = finite_difference_errors(loss_fn, store)
            self.assertLess(max(errors.values()), 1e-4, msg=f"seed {seed}: {errors}")

    def test_structural_ops_match_finite_differences(self):
        rng = np.random.default_rng(11)
        store = ParamStore()
        a = store.add("a", rng.normal(size=(4, 3)))
        b = store.add("b", rng.normal(size=(4, 2)))

        def loss_fn():
            joined = ops.concat([a, b], axis=1)
            picked = ops.take_rows(joined, [0, 2, 2, 3])
            part = ops.slice_cols(picked, 1, 4)
            soft = ops.softmax_cols(part)
            scaled = ops.exp(part * 0.1) / ops.sqrt(ops.total(part * part, axis=1) + 1.0)
            tail = ops.mean(ops.transpose(b), axis=0)
            return ops.total(ops.log(soft + 1.0) * scaled) + ops.total(tail * tail)

        errors = finite_difference_errors(loss_fn, store)
        self.assertLess(max(errors.values()), 1e-4)

    def test_gradients_are_deterministic(self):
        def run():
            rng = np.random.default_rng(9)
            store = ParamStore()
            layer = Linear(store, "lin", 3, 2, rng)
            loss = ops.total(ops.sigmoid(layer(Tensor(rng.normal(size=(4, 3))))))
            return gradient_of(loss, store)

        first, second = run(), run()
        for name in first:
            self.assertEqual(first[name].tobytes(), second[name].tobytes())

    def test_no_grad_records_nothing(self):
        store = ParamStore()
        w = store.add("w", [[1.0, 2.0]])
        with no_grad():
            out = ops.total(w * 3.0)
        self.assertFalse(out.requires_grad)


class OperationSetTests(SimpleTestCase):
    def test_numpy_ufunc_rejected(self):
        with self.assertRaises(TypeError):
            np.tanh(Tensor([[1.0]]))

    def test_power_rejected(self):
        with self.assertRaises(UnsupportedOperationError):
            Tensor([[2.0]]) ** 2

    def test_implicit_conversion_rejected(self):
        with self.assertRaises(UnsupportedOperationError):
            Tensor([[1.0]]).__array__()

    def test_non_finite_output_rejected(self):
        with self.assertRaises(NumericalError):
            ops.log([[-1.0]])

    def test_three_dimensional_rejected(self):
        with self.assertRaises(ShapeMismatchError):
            Tensor(np.zeros((2, 2, 2)))


class ParamStoreTests(SimpleTestCase):
    def setUp(self):
        self.store = ParamStore()
        rng = np.random.default_rng(1)
        self.embed = Linear(self.store, "feature_store/ad", 3, 2, rng)
        self.head = Linear(self.store, "recformer/head", 2, 1, rng)

    def test_frozen_parameters_get_zero_gradients(self):
        self.store.freeze("feature_store/")
        loss = ops.total(self.head(self.embed(Tensor(np.ones((2, 3))))))
        grads = gradient_of(loss, self.store)
        self.assertFalse(grads["feature_store/ad/weight"].any())
        self.assertTrue(grads["recformer/head/weight"].any())

    def test_update_of_frozen_parameter_rejected(self):
        self.store.freeze("feature_store/")
        with self.assertRaises(FrozenParameterError):
            self.store.assign("feature_store/ad/weight", np.zeros((3, 2)))
        grads = self.store.grads()
        with self.assertRaises(FrozenParameterError):
            Adam().step(self.store, grads, names=["feature_store/ad/weight"])

    def test_adam_moves_against_gradient(self):
        before = self.store["recformer/head/bias"].data.copy()
        loss = ops.total(self.head(Tensor(np.ones((1, 2)))))
        Adam(lr=0.1).step(self.store, gradient_of(loss, self.store))
        self.assertLess(self.store["recformer/head/bias"].data[0, 0], before[0, 0])


class CheckpointTests(SimpleTestCase):
    def test_store_restores_parameters_and_buffers(self):
        import tempfile
        from pathlib import Path

        rng = np.random.default_rng(2)
        store = ParamStore()
        DiceMLP(store, "net", [3, 4, 1], rng)
        store.set_buffer("net/dice0/running_mean", np.arange(4.0).reshape(1, 4))
        with tempfile.TemporaryDirectory() as tmp:
            path = save_store(Path(tmp) / "model.ckpt", store)
            self.assertEqual(path.read_bytes()[:4], MAGIC)
            self.assertEqual(path.read_bytes()[4], 1)
            fresh = ParamStore()
            DiceMLP(fresh, "net", [3, 4, 1], np.random.default_rng(99))
            load_store(path, fresh)
            for name, (values, _) in store.state().items():
                np.testing.assert_array_equal(fresh.state()[name][0], values)
            self.assertFalse(read_checkpoint(path)["net/dice0/running_mean"][1])

    def test_bad_magic_rejected(self):
        import tempfile
        from pathlib import Path

        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.ckpt"
            path.write_bytes(b"NOPE\x01\x00\x00\x00\x00")
            with self.assertRaises(CheckpointError):
                read_checkpoint(path)
