import itertools

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase

from numerics import ops
from numerics.flops import measure
from numerics.gradcheck import finite_difference_errors
from numerics.params import ParamStore
from numerics.tensor import Tensor, no_grad

from .attention import (
    ClusterAttentionLayer,
    FullAttentionLayer,
    cluster_aggregate,
    cluster_attention_layer,
    cluster_matrix,
    full_attention_layer,
    normalize_columns,
)
from .config import RecFormerConfig
from .exceptions import InvalidConfigError
from .model import RecFormer


# ==============================================================================
# Loop-based reference implementation
# ==============================================================================

def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def np_dice(x, store, prefix):
    mean = store.buffer(f"{prefix}/running_mean")[0]
    var = store.buffer(f"{prefix}/running_var")[0]
    alpha = store[f"{prefix}/alpha"].data[0]
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            p = _sigmoid((x[i, j] - mean[j]) / np.sqrt(var[j] + settings.EGA_DICE_EPSILON))
            out[i, j] = p * x[i, j] + (1.0 - p) * alpha[j] * x[i, j]
    return out


def np_linear(x, store, prefix):
    out = x @ store[f"{prefix}/weight"].data
    if f"{prefix}/bias" in store:
        out = out + store[f"{prefix}/bias"].data
    return out


def np_layer_norm(x, store, prefix):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        mu = x[i].mean()
        var = ((x[i] - mu) ** 2).mean()
        out[i] = (x[i] - mu) / np.sqrt(var + 1e-5)
    return out * store[f"{prefix}/gamma"].data + store[f"{prefix}/beta"].data


def np_softmax_rows(x):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        e = np.exp(x[i] - x[i].max())
        out[i] = e / e.sum()
    return out


def loop_aggregate(q, k, v, s, s_q, store, prefix):
    n_c, d = s.shape[1], q.shape[1]

    def surrogate(weights, x):
        a = np.zeros((n_c, d))
        for c in range(n_c):
            column = sum(weights[i, c] for i in range(weights.shape[0]))
            norm = column if column != 0 else 1.0
            for i in range(weights.shape[0]):
                a[c] += weights[i, c] * x[i] / norm
        return a

    a_q, a_k, a_v = surrogate(s_q, q), surrogate(s, k), surrogate(s, v)
    w_gk, b_gk = store[f"{prefix}/gate_k/weight"].data, store[f"{prefix}/gate_k/bias"].data[0, 0]
    w_gv, b_gv = store[f"{prefix}/gate_v/weight"].data, store[f"{prefix}/gate_v/bias"].data[0, 0]
    k_prime, v_prime = np.zeros((n_c, d)), np.zeros((n_c, d))
    for c in range(n_c):
        phi_k = _sigmoid(sum(np.dot(a_q[c], a_v[j]) * w_gk[j, 0] for j in range(n_c)) + b_gk)
        phi_v = _sigmoid(sum(np.dot(a_q[c], a_k[j]) * w_gv[j, 0] for j in range(n_c)) + b_gv)
        tq_k = np_linear(a_q[c:c + 1], store, f"{prefix}/transform_k")[0]
        tk = np_linear(a_k[c:c + 1], store, f"{prefix}/transform_k")[0]
        tq_v = np_linear(a_q[c:c + 1], store, f"{prefix}/transform_v")[0]
        tv = np_linear(a_v[c:c + 1], store, f"{prefix}/transform_v")[0]
        k_prime[c] = phi_k * tq_k + (1.0 - phi_k) * tk
        v_prime[c] = phi_v * tq_v + (1.0 - phi_v) * tv
    return k_prime, v_prime


def loop_layer(layer, h, kv=None):
    store, p, d = layer.store, layer.prefix, layer.d
    weight, bias = store[f"{p}/qkv/weight"].data, store[f"{p}/qkv/bias"].data
    if layer.cross:
        q = np_dice(h @ weight[:, :d] + bias[:, :d], store, f"{p}/qkv_dice_q")
        kv_proj = np_dice(kv @ weight[:, d:] + bias[:, d:], store, f"{p}/qkv_dice_kv")
        k, v, source = kv_proj[:, :d], kv_proj[:, d:], kv
    else:
        fused = np_dice(h @ weight + bias, store, f"{p}/qkv_dice")
        q, k, v, source = fused[:, :d], fused[:, d:2 * d], fused[:, 2 * d:], h
    w_c = store[f"{p}/cluster/weight"].data
    s = np_softmax_rows(source @ w_c)
    s_q = np_softmax_rows(h @ w_c) if layer.cross else s
    k_prime, v_prime = loop_aggregate(q, k, v, s, s_q, store, p)

    heads = np.zeros((h.shape[0], d))
    dh = layer.d_head
    for head in range(layer.n_heads):
        lo, hi = head * dh, (head + 1) * dh
        for i in range(h.shape[0]):
            scores = np.array([np.dot(q[i, lo:hi], k_prime[j, lo:hi]) / np.sqrt(dh) for j in range(k_prime.shape[0])])
            w = np.exp(scores - scores.max())
            w /= w.sum()
            for j in range(k_prime.shape[0]):
                heads[i, lo:hi] += w[j] * v_prime[j, lo:hi]
    attn = np_dice(np_linear(heads, store, f"{p}/out"), store, f"{p}/out_dice")
    mid = np_layer_norm(h + attn, store, f"{p}/norm_attn")
    ffn = np_linear(np_dice(np_linear(mid, store, f"{p}/ffn_in"), store, f"{p}/ffn_dice"), store, f"{p}/ffn_out")
    return np_layer_norm(mid + ffn, store, f"{p}/norm_ffn")


def randomize(store, rng):
    """Give biases, normalization and Dice statistics non-trivial values."""
    for name in store.buffer_names():
        shape = store.buffer(name).shape
        if name.endswith("running_mean"):
            store.set_buffer(name, rng.normal(scale=0.3, size=shape))
        else:
            store.set_buffer(name, rng.uniform(0.5, 2.0, size=shape))
    for name in store.names():
        shape = store[name].shape
        if name.endswith(("/alpha", "/bias", "/beta")):
            store.load(name, rng.uniform(-0.5, 0.5, size=shape))
        elif name.endswith("/gamma"):
            store.load(name, rng.uniform(0.5, 1.5, size=shape))


def make_layer(d=4, heads=2, clusters=2, cross=False, seed=0, randomized=True):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    layer = ClusterAttentionLayer(store, "layer", d, heads, clusters, rng, cross=cross)
    if randomized:
        randomize(store, rng)
    return layer, rng


# ==============================================================================
# Cluster matrix and aggregation
# ==============================================================================

class ClusterMatrixTests(SimpleTestCase):
    def test_single_cluster_is_all_ones(self):
        layer, rng = make_layer(clusters=1)
        s = cluster_matrix(Tensor(rng.normal(size=(5, 4))), layer)
        np.testing.assert_array_equal(s.data, np.ones((5, 1)))

    def test_zero_projection_is_uniform(self):
        layer, rng = make_layer(clusters=3)
        layer.store.load("layer/cluster/weight", np.zeros((4, 3)))
        s = cluster_matrix(Tensor(rng.normal(size=(6, 4))), layer)
        np.testing.assert_allclose(s.data, np.full((6, 3), 1 / 3), atol=1e-15)

    def test_rows_follow_input_permutation(self):
        layer, rng = make_layer(clusters=3)
        h = rng.normal(size=(7, 4))
        perm = rng.permutation(7)
        s = cluster_matrix(Tensor(h), layer).data
        s_perm = cluster_matrix(Tensor(h[perm]), layer).data
        np.testing.assert_allclose(s_perm, s[perm], atol=1e-14)
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)


class ClusterAggregateTests(SimpleTestCase):
    def test_single_token_half_mix(self):
        layer, rng = make_layer(d=4, heads=1, clusters=1, randomized=False)
        store = layer.store
        for gate in ("gate_k", "gate_v"):
            store.load(f"layer/{gate}/weight", np.zeros((1, 1)))
        for transform in ("transform_k", "transform_v"):
            store.load(f"layer/{transform}/weight", np.eye(4))
        q, k, v = (Tensor(rng.normal(size=(1, 4))) for _ in range(3))
        s = Tensor(np.ones((1, 1)))
        k_prime, v_prime = cluster_aggregate(q, k, v, s, layer)
        np.testing.assert_allclose(k_prime.data, 0.5 * (q.data + k.data), atol=1e-15)
        np.testing.assert_allclose(v_prime.data, 0.5 * (q.data + v.data), atol=1e-15)

    def test_identical_keys_average_to_the_shared_row(self):
        rng = np.random.default_rng(1)
        row = rng.normal(size=(1, 3))
        s = ops.softmax_rows(rng.normal(size=(5, 2)))
        a_k = ops.matmul(ops.transpose(normalize_columns(s)), np.repeat(row, 5, axis=0))
        np.testing.assert_allclose(a_k.data, np.repeat(row, 2, axis=0), atol=1e-14)

    def test_empty_column_stays_zero(self):
        s = Tensor([[1.0, 0.0], [1.0, 0.0]])
        np.testing.assert_array_equal(normalize_columns(s).data, [[0.5, 0.0], [0.5, 0.0]])

    def test_random_instance_matches_loop_oracle(self):
        layer, rng = make_layer(d=4, clusters=2, seed=3)
        q, k, v = (rng.normal(size=(6, 4)) for _ in range(3))
        s = np_softmax_rows(rng.normal(size=(6, 2)))
        k_prime, v_prime = cluster_aggregate(Tensor(q), Tensor(k), Tensor(v), Tensor(s), layer)
        ref_k, ref_v = loop_aggregate(q, k, v, s, s, layer.store, "layer")
        np.testing.assert_allclose(k_prime.data, ref_k, rtol=0, atol=1e-12)
        np.testing.assert_allclose(v_prime.data, ref_v, rtol=0, atol=1e-12)

    def test_all_small_shapes_match_loop_oracle(self):
        for n, n_c, d in itertools.product(range(1, 9), range(1, 5), range(1, 5)):
            layer, rng = make_layer(d=d, heads=1, clusters=n_c, seed=n * 100 + n_c * 10 + d)
            q, k, v = (rng.normal(size=(n, d)) for _ in range(3))
            s = np_softmax_rows(rng.normal(size=(n, n_c)))
            k_prime, v_prime = cluster_aggregate(Tensor(q), Tensor(k), Tensor(v), Tensor(s), layer)
            ref_k, ref_v = loop_aggregate(q, k, v, s, s, layer.store, "layer")
            np.testing.assert_allclose(k_prime.data, ref_k, rtol=0, atol=1e-12, err_msg=f"{n},{n_c},{d}")
            np.testing.assert_allclose(v_prime.data, ref_v, rtol=0, atol=1e-12, err_msg=f"{n},{n_c},{d}")


# ==============================================================================
# Layers
# ==============================================================================

class ClusterAttentionLayerTests(SimpleTestCase):
    def test_output_shape(self):
        layer, rng = make_layer()
        for n in (1, 3, 17):
            self.assertEqual(cluster_attention_layer(Tensor(rng.normal(size=(n, 4))), None, layer).shape, (n, 4))

    def test_self_mode_matches_loop_oracle(self):
        for n, n_c, d in itertools.product((1, 3, 8), (1, 2, 4), (2, 4)):
            heads = 2 if d % 2 == 0 else 1
            layer, rng = make_layer(d=d, heads=heads, clusters=n_c, seed=n + 7 * n_c + 31 * d)
            h = rng.normal(size=(n, d))
            out = layer(Tensor(h), training=False).data
            np.testing.assert_allclose(out, loop_layer(layer, h), rtol=0, atol=1e-10)

    def test_cross_mode_matches_loop_oracle(self):
        layer, rng = make_layer(d=4, heads=2, clusters=3, cross=True, seed=5)
        h, kv = rng.normal(size=(5, 4)), rng.normal(size=(7, 4))
        out = layer(Tensor(h), Tensor(kv), training=False).data
        np.testing.assert_allclose(out, loop_layer(layer, h, kv), rtol=0, atol=1e-10)

    def test_permutation_equivariance(self):
        layer, rng = make_layer(d=4, clusters=3, seed=8)
        h = rng.normal(size=(9, 4))
        perm = rng.permutation(9)
        for training in (False, True):
            out = layer(Tensor(h), training=training).data
            out_perm = layer(Tensor(h[perm]), training=training).data
            np.testing.assert_allclose(out_perm, out[perm], atol=1e-10)

    def test_attention_rows_sum_to_one(self):
        layer, rng = make_layer(d=4, heads=2, clusters=3)
        weights = []
        layer(Tensor(rng.normal(size=(6, 4))), weights_out=weights)
        self.assertEqual(len(weights), 2)
        for w in weights:
            np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)

    def test_empty_key_source_leaves_only_residual(self):
        layer, rng = make_layer(cross=True)
        h = rng.normal(size=(3, 4))
        out = layer(Tensor(h), Tensor(np.zeros((0, 4)))).data
        store = layer.store
        mid = np_layer_norm(h, store, "layer/norm_attn")
        ffn = np_linear(np_dice(np_linear(mid, store, "layer/ffn_in"), store, "layer/ffn_dice"), store, "layer/ffn_out")
        np.testing.assert_allclose(out, np_layer_norm(mid + ffn, store, "layer/norm_ffn"), atol=1e-12)

    def test_gradients_match_finite_differences(self):
        for seed in range(20):
            layer, rng = make_layer(d=4, heads=2, clusters=2, cross=bool(seed % 2), seed=seed)
            h, kv = rng.normal(size=(4, 4)), rng.normal(size=(3, 4))
            target = rng.normal(size=(4, 4))

            def loss_fn():
                out = layer(Tensor(h), Tensor(kv) if layer.cross else None, training=True)
                diff = out - target
                return ops.mean(diff * diff)

            errors = finite_difference_errors(loss_fn, layer.store, rng=rng, entries_per_tensor=3)
            self.assertLess(max(errors.values()), 1e-4, msg=f"seed {seed}")


class ComplexityTests(SimpleTestCase):
    SIZES = (250, 500, 1000, 2000)

    def slope(self, layer, d):
        rng = np.random.default_rng(0)
        counts = []
        for n in self.SIZES:
            h = Tensor(rng.normal(size=(n, d)))
            with no_grad(), measure() as spent:
                layer(h)
            counts.append(spent["flops"])
        return np.polyfit(np.log(self.SIZES), np.log(counts), 1)[0]

    def test_cluster_attention_is_linear_in_n(self):
        layer, _ = make_layer(d=4, heads=1, clusters=2, randomized=False)
        self.assertTrue(0.95 <= self.slope(layer, 4) <= 1.05)

    def test_full_attention_is_quadratic_in_n(self):
        store = ParamStore()
        layer = FullAttentionLayer(store, "full", 4, 1, np.random.default_rng(0))
        self.assertTrue(1.9 <= self.slope(layer, 4) <= 2.1)

    def test_full_attention_counts_the_block_formula(self):
        store = ParamStore()
        layer = FullAttentionLayer(store, "full", 8, 2, np.random.default_rng(0))
        with no_grad(), measure() as spent:
            full_attention_layer(Tensor(np.random.default_rng(1).normal(size=(10, 8))), None, layer)
        self.assertEqual(spent["flops"], 4 * 10 * 10 * 8 + 24 * 10 * 8 * 8)

    def test_full_attention_entry_point_ignores_keys_of_a_self_layer(self):
        store = ParamStore()
        layer = FullAttentionLayer(store, "full", 4, 2, np.random.default_rng(0))
        rng = np.random.default_rng(2)
        h, kv = rng.normal(size=(5, 4)), rng.normal(size=(3, 4))
        with no_grad():
            np.testing.assert_array_equal(full_attention_layer(Tensor(h), Tensor(kv), layer).data,
                                          layer(Tensor(h)).data)

    def test_doubling_n_doubles_cluster_flops(self):
        layer, rng = make_layer(d=32, heads=4, clusters=16, randomized=False)
        counts = []
        for n in (1000, 2000):
            with no_grad(), measure() as spent:
                layer(Tensor(rng.normal(size=(n, 32))))
            counts.append(spent["flops"])
        self.assertTrue(1.95 <= counts[1] / counts[0] <= 2.05)


# ==============================================================================
# RecFormer
# ==============================================================================

def make_recformer(m=2, m_c=1, d=4, clusters=2, heads=2, mode="both", seed=0):
    store = ParamStore()
    config = RecFormerConfig(m=m, m_c=m_c, d=d, n_clusters=clusters, n_heads=heads, fusion_mode=mode)
    return RecFormer(store, config, np.random.default_rng(seed)), store


class RecFormerConfigTests(SimpleTestCase):
    def test_fusion_schedule(self):
        config = RecFormerConfig(m=6, m_c=2, d=128, n_clusters=128, n_heads=4)
        self.assertEqual(config.fusion_layers, (2, 4, 6))
        self.assertEqual(config.m_k, 3)
        self.assertEqual(RecFormerConfig(m=4, m_c=2, d=8, n_clusters=2, n_heads=2).m_k, 2)

    def test_invalid_bounds_rejected(self):
        with self.assertRaises(InvalidConfigError):
            RecFormerConfig(m=2, m_c=1, d=6, n_clusters=2, n_heads=4)
        with self.assertRaises(InvalidConfigError):
            RecFormerConfig(m=2, m_c=1, d=8, n_clusters=0, n_heads=2)
        with self.assertRaises(InvalidConfigError):
            RecFormerConfig(m=2, m_c=1, d=8, n_clusters=2, n_heads=2, fusion_mode="early")

    def test_full_scale_configuration_runs(self):
        model, _ = make_recformer(m=6, m_c=2, d=128, clusters=128, heads=4)
        rng = np.random.default_rng(0)
        with no_grad():
            out = model.forward(Tensor(rng.normal(size=(3, 128))), Tensor(rng.normal(size=(2, 128))))
        self.assertEqual(out.shape, (3, 128))
        self.assertEqual(sorted(model.target_layers), [2, 4, 6])


class RecFormerTests(SimpleTestCase):
    def test_zero_depth_is_identity(self):
        model, _ = make_recformer(m=0)
        e_ad, e_bhvr = Tensor(np.ones((3, 4))), Tensor(np.ones((2, 4)))
        h_ad, h_usr = model.gcf_forward(e_ad, e_bhvr)
        self.assertIs(h_ad, e_ad)
        self.assertIs(h_usr, e_bhvr)

    def test_gcf_is_permutation_equivariant(self):
        model, _ = make_recformer(m=2)
        rng = np.random.default_rng(4)
        e_ad, e_bhvr = rng.normal(size=(6, 4)), rng.normal(size=(3, 4))
        perm = rng.permutation(6)
        out = model.forward(Tensor(e_ad), Tensor(e_bhvr)).data
        out_perm = model.forward(Tensor(e_ad[perm]), Tensor(e_bhvr)).data
        np.testing.assert_allclose(out_perm, out[perm], atol=1e-10)

    def test_doubling_depth_doubles_gcf_flops(self):
        rng = np.random.default_rng(2)
        e_ad, e_bhvr = Tensor(rng.normal(size=(50, 8))), Tensor(rng.normal(size=(5, 8)))
        counts = []
        for m in (1, 2):
            model, _ = make_recformer(m=m, d=8, clusters=4, mode="none")
            with no_grad(), measure("gcf") as spent:
                model.forward(e_ad, e_bhvr)
            counts.append(spent["flops"])
        self.assertTrue(1.95 <= counts[1] / counts[0] <= 2.05)

    def test_mif_flops_are_affine_in_candidate_count(self):
        model, _ = make_recformer(m=2, m_c=1, d=8, clusters=4)
        rng = np.random.default_rng(3)
        e_bhvr = Tensor(rng.normal(size=(6, 8)))
        counts = []
        for n in (20, 40, 60):
            with no_grad(), measure("mif") as spent:
                model.forward(Tensor(rng.normal(size=(n, 8))), e_bhvr)
            counts.append(spent["flops"])
        self.assertGreater(counts[0], 0)
        self.assertEqual(counts[0] + counts[2], 2 * counts[1])

    def test_empty_behaviors_leave_target_attention_inert(self):
        model, store = make_recformer(m=1, m_c=1, mode="target")
        rng = np.random.default_rng(6)
        h_ad = rng.normal(size=(3, 4))
        fused, _ = model.mif_forward(1, Tensor(h_ad), Tensor(np.zeros((0, 4))))
        layer = model.target_layers[1]
        p = layer.prefix
        mid = np_layer_norm(h_ad, store, f"{p}/norm_attn")
        ffn = np_linear(np_dice(np_linear(mid, store, f"{p}/ffn_in"), store, f"{p}/ffn_dice"), store, f"{p}/ffn_out")
        np.testing.assert_allclose(fused.data, np_layer_norm(mid + ffn, store, f"{p}/norm_ffn"), atol=1e-12)

    def test_fusion_modes_build_expected_layers(self):
        self.assertEqual(len(make_recformer(mode="none")[0].target_layers), 0)
        model, _ = make_recformer(mode="context")
        self.assertEqual((len(model.context_layers), len(model.target_layers)), (2, 0))

    def test_late_fusion_keeps_candidates_apart_from_behaviors(self):
        model, store = make_recformer(mode="late")
        self.assertEqual((len(model.context_layers), len(model.target_layers)), (0, 0))
        rng = np.random.default_rng(8)
        randomize(store, rng)
        e_ad, e_u = Tensor(rng.normal(size=(4, 4))), Tensor(rng.normal(size=(1, 4)))
        with no_grad():
            h_a, usr_a = model.encode(e_ad, Tensor(rng.normal(size=(3, 4))))
            h_b, usr_b = model.encode(e_ad, Tensor(rng.normal(size=(3, 4))))
            np.testing.assert_array_equal(h_a.data, h_b.data)
            q_a = model.ctr_head(h_a, e_u, h_usr=usr_a).data
            q_b = model.ctr_head(h_b, e_u, h_usr=usr_b).data
        self.assertFalse(np.allclose(q_a, q_b))
        self.assertTrue(((q_a > 0) & (q_a < 1)).all())

    def test_late_fusion_head_needs_the_sequence(self):
        model, _ = make_recformer(mode="late")
        h_ad, e_u = Tensor(np.ones((2, 4))), Tensor(np.ones((1, 4)))
        with self.assertRaises(InvalidConfigError):
            model.ctr_head(h_ad, e_u)
        q = model.ctr_head(h_ad, e_u, h_usr=Tensor(np.zeros((0, 4))))
        self.assertEqual(q.shape, (2, 1))

    def test_late_fusion_gradients_match_finite_differences(self):
        model, store = make_recformer(m=1, mode="late", seed=3)
        rng = np.random.default_rng(30)
        randomize(store, rng)
        e_ad, e_bhvr, e_u = rng.normal(size=(4, 4)), rng.normal(size=(3, 4)), rng.normal(size=(1, 4))
        labels = (rng.random((4, 1)) < 0.5).astype(float)

        def loss_fn():
            h_ad, h_usr = model.encode(Tensor(e_ad), Tensor(e_bhvr), training=True)
            return ops.total(ops.bce(model.ctr_head(h_ad, Tensor(e_u), training=True, h_usr=h_usr), labels))

        errors = finite_difference_errors(loss_fn, store, rng=rng, entries_per_tensor=2)
        self.assertLess(max(errors.values()), 1e-4)

    def test_zero_final_layer_gives_half(self):
        model, _ = make_recformer()
        model.ctr_mlp.final.zero_()
        rng = np.random.default_rng(0)
        q = model.ctr_head(Tensor(rng.normal(size=(5, 4))), Tensor(rng.normal(size=(1, 4))))
        np.testing.assert_array_equal(q.data, np.full((5, 1), 0.5))

    def test_ctr_strictly_inside_unit_interval(self):
        model, _ = make_recformer()
        rng = np.random.default_rng(1)
        q = model.ctr_head(Tensor(rng.normal(scale=3.0, size=(20, 4))), Tensor(rng.normal(size=(1, 4))))
        self.assertTrue(((q.data > 0) & (q.data < 1)).all())

    def test_full_forward_gradients_match_finite_differences(self):
        for seed in range(5):
            model, store = make_recformer(m=2, m_c=1, seed=seed)
            rng = np.random.default_rng(100 + seed)
            randomize(store, rng)
            e_ad, e_bhvr, e_u = rng.normal(size=(4, 4)), rng.normal(size=(3, 4)), rng.normal(size=(1, 4))
            labels = (rng.random((4, 1)) < 0.5).astype(float)

            def loss_fn():
                h_ad = model.forward(Tensor(e_ad), Tensor(e_bhvr), training=True)
                return ops.total(ops.bce(model.ctr_head(h_ad, Tensor(e_u), training=True), labels))

            errors = finite_difference_errors(loss_fn, store, rng=rng, entries_per_tensor=2)
            self.assertLess(max(errors.values()), 1e-4, msg=f"seed {seed}")
