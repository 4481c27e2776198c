import numpy as np
import pytest

from knowfuse import autodiff as ad
from knowfuse.exceptions import DimensionError
from knowfuse.fusion import AttentionTrace, FusionConfig, FusionLayer, FusionStack, pad_matching_matrix
from knowfuse.params import ParamStore

from dense_oracle import dense_co_attention, dense_entity_stream, dense_fusion_layer, dense_mha, dense_ln
from gradcheck import check_grads


def make_layer(seed=0, width=8, heads=2, ffn_mult=2):
    store = ParamStore(seed)
    return FusionLayer(store, "fusion.layer0", width, heads, ffn_mult), store


def rand_streams(rng, width=8, n_v=3, n_l=4, n_e=2):
    h_v = rng.uniform(-1, 1, (n_v, width))
    h_l = rng.uniform(-1, 1, (n_l, width))
    h_e = rng.uniform(-1, 1, (n_e, width))
    return h_v, h_l, h_e


# ---------------------------------------------------------------- co-attention

def test_co_attention_matches_dense_oracle():
    layer, _ = make_layer(seed=1)
    rng = np.random.default_rng(2)
    h_v, h_l, _ = rand_streams(rng)
    z_v, z_l = layer.co_attention(ad.Tensor(h_v), ad.Tensor(h_l))
    ref_v, ref_l = dense_co_attention(h_v, h_l, layer)
    np.testing.assert_allclose(z_v.data, ref_v, atol=1e-10)
    np.testing.assert_allclose(z_l.data, ref_l, atol=1e-10)


def test_co_attention_symmetric_with_tied_weights():
    layer, _ = make_layer(seed=3)
    # tie language-side weights to the vision side
    pairs = [
        (layer.v_self, layer.l_self), (layer.v_cross, layer.l_cross),
    ]
    for src, dst in pairs:
        for attr in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"):
            getattr(dst, attr).data[:] = getattr(src, attr).data
    for src, dst in [(layer.v_self_ln, layer.l_self_ln), (layer.v_cross_ln, layer.l_cross_ln),
                     (layer.v_pre_ffn_ln, layer.fuse_ln), (layer.v_ffn_ln, layer.l_ffn_ln)]:
        dst.gain.data[:] = src.gain.data
        dst.bias.data[:] = src.bias.data
    for attr in ("w1", "b1", "w2", "b2"):
        getattr(layer.l_ffn, attr).data[:] = getattr(layer.v_ffn, attr).data

    rng = np.random.default_rng(4)
    h = rng.uniform(-1, 1, (3, 8))
    z_v, z_l = layer.co_attention(ad.Tensor(h), ad.Tensor(h))
    np.testing.assert_allclose(z_v.data, z_l.data, atol=1e-10)


def test_cross_attention_rows_sum_to_one():
    layer, _ = make_layer(seed=5)
    rng = np.random.default_rng(6)
    h_v, h_l, h_e = rand_streams(rng)
    trace = AttentionTrace()
    layer.forward(ad.Tensor(h_v), ad.Tensor(h_l), ad.Tensor(h_e),
                  ad.Tensor(np.zeros((4, 2))), trace)
    for maps in (trace.text_to_image, trace.entity_to_image):
        for m in maps:
            assert np.abs(m.sum(axis=1) - 1.0).max() < 1e-6


def test_width_mismatch_raises():
    layer, _ = make_layer(seed=7)
    with pytest.raises(DimensionError):
        layer.forward(ad.Tensor(np.zeros((3, 8))), ad.Tensor(np.zeros((4, 6))), None, None)


# ---------------------------------------------------------------- entity stream

def test_entity_stream_single_entity_single_patch():
    layer, _ = make_layer(seed=8)
    rng = np.random.default_rng(9)
    h_e = ad.Tensor(rng.uniform(-1, 1, (1, 8)))
    h_vs = ad.Tensor(rng.uniform(-1, 1, (1, 8)))
    out = layer.entity_stream_step(h_e, h_vs)
    h_es = dense_ln(h_e.data + dense_mha(h_e.data, h_e.data, layer.e_self), layer.e_self_ln)
    patch_value = dense_mha(h_es, h_vs.data, layer.e_cross)
    expected = dense_ln(h_es + patch_value, layer.e_cross_ln)
    np.testing.assert_allclose(out.data, expected, atol=1e-10)


def test_entity_stream_empty_returns_empty():
    layer, _ = make_layer(seed=10)
    out = layer.entity_stream_step(ad.Tensor(np.zeros((0, 8))), ad.Tensor(np.zeros((3, 8))))
    assert out.shape == (0, 8)


def test_entity_stream_matches_dense_oracle():
    layer, _ = make_layer(seed=11)
    rng = np.random.default_rng(12)
    h_e = rng.uniform(-1, 1, (3, 8))
    h_vs = rng.uniform(-1, 1, (4, 8))
    out = layer.entity_stream_step(ad.Tensor(h_e), ad.Tensor(h_vs))
    np.testing.assert_allclose(out.data, dense_entity_stream(h_e, h_vs, layer), atol=1e-10)


# ---------------------------------------------------------------- Eq-16 style fusion

def test_fuse_text_zero_matrix_is_baseline():
    layer, _ = make_layer(seed=13)
    rng = np.random.default_rng(14)
    h_lc = rng.uniform(-1, 1, (4, 8))
    h_ec = rng.uniform(-1, 1, (2, 8))
    fused = layer.fuse_text_with_entities(ad.Tensor(h_ec), ad.Tensor(h_lc), ad.Tensor(np.zeros((4, 2))))
    np.testing.assert_allclose(fused.data, dense_ln(h_lc, layer.fuse_ln), atol=1e-12)


def test_fuse_text_routes_single_entity_to_its_token():
    layer, _ = make_layer(seed=15)
    rng = np.random.default_rng(16)
    h_lc = rng.uniform(-1, 1, (4, 8))
    h_ec = rng.uniform(-1, 1, (1, 8))
    p = np.zeros((4, 1))
    p[2, 0] = 1.0
    fused = layer.fuse_text_with_entities(ad.Tensor(h_ec), ad.Tensor(h_lc), ad.Tensor(p))
    expected_pre = h_lc.copy()
    expected_pre[2] += h_ec[0]
    np.testing.assert_allclose(fused.data, dense_ln(expected_pre, layer.fuse_ln), atol=1e-12)


def test_fuse_text_matches_matmul_oracle():
    layer, _ = make_layer(seed=17)
    rng = np.random.default_rng(18)
    h_lc = rng.uniform(-1, 1, (5, 8))
    h_ec = rng.uniform(-1, 1, (3, 8))
    p = (rng.random((5, 3)) < 0.4).astype(np.float64)
    fused = layer.fuse_text_with_entities(ad.Tensor(h_ec), ad.Tensor(h_lc), ad.Tensor(p))
    np.testing.assert_allclose(fused.data, dense_ln(p @ h_ec + h_lc, layer.fuse_ln), atol=1e-10)


def test_fuse_text_shape_mismatch():
    layer, _ = make_layer(seed=19)
    with pytest.raises(DimensionError):
        layer.fuse_text_with_entities(ad.Tensor(np.zeros((2, 8))), ad.Tensor(np.zeros((4, 8))),
                                      ad.Tensor(np.zeros((4, 3))))


def test_full_fusion_layer_matches_dense_oracle():
    layer, _ = make_layer(seed=20)
    rng = np.random.default_rng(21)
    h_v, h_l, h_e = rand_streams(rng, n_v=4, n_l=5, n_e=3)
    p = (rng.random((5, 3)) < 0.5).astype(np.float64)
    z_v, z_l, z_e = layer.forward(ad.Tensor(h_v), ad.Tensor(h_l), ad.Tensor(h_e), ad.Tensor(p))
    ref_v, ref_l, ref_e = dense_fusion_layer(h_v, h_l, h_e, p, layer)
    np.testing.assert_allclose(z_v.data, ref_v, atol=1e-10)
    np.testing.assert_allclose(z_l.data, ref_l, atol=1e-10)
    np.testing.assert_allclose(z_e.data, ref_e, atol=1e-10)


# ---------------------------------------------------------------- stack-level properties

def stack_and_inputs(rk_enabled, seed=22, layers=2):
    store = ParamStore(seed)
    cfg = FusionConfig(layers=layers, width=8, heads=2, ffn_mult=2, rk_enabled=rk_enabled)
    stack = FusionStack(store, "fusion", cfg)
    rng = np.random.default_rng(23)
    h_v, h_l, h_e = rand_streams(rng, n_v=3, n_l=4, n_e=2)
    p = np.zeros((4, 2))
    p[1, 0] = 1.0
    p[2, 1] = 1.0
    return stack, store, h_v, h_l, h_e, p


def test_zero_fusion_layers_identity():
    stack, _, h_v, h_l, h_e, p = stack_and_inputs(True, layers=0)
    z_v, z_l, z_e = stack.forward(ad.Tensor(h_v), ad.Tensor(h_l), ad.Tensor(h_e), ad.Tensor(p))
    np.testing.assert_array_equal(z_v.data, h_v)
    np.testing.assert_array_equal(z_l.data, h_l)
    np.testing.assert_array_equal(z_e.data, h_e)


def test_rk_disabled_equals_empty_entity_stream():
    stack_on, _, h_v, h_l, _, _ = stack_and_inputs(True)
    stack_off, _, _, _, _, _ = stack_and_inputs(False)  # same seed, same params
    empty_e = np.zeros((0, 8))
    empty_p = np.zeros((6, 0))
    z_v_on, z_l_on, z_e_on = stack_on.forward(ad.Tensor(h_v), ad.Tensor(h_l),
                                              ad.Tensor(empty_e), ad.Tensor(empty_p))
    h_e = np.random.default_rng(9).uniform(-1, 1, (2, 8))
    p = np.zeros((4, 2))
    z_v_off, z_l_off, z_e_off = stack_off.forward(ad.Tensor(h_v), ad.Tensor(h_l),
                                                  ad.Tensor(h_e), ad.Tensor(p))
    np.testing.assert_allclose(z_v_on.data, z_v_off.data, atol=1e-6)
    np.testing.assert_allclose(z_l_on.data, z_l_off.data, atol=1e-6)
    assert z_e_on.shape[0] == 0 and z_e_off.shape[0] == 0


def test_output_shapes():
    stack, _, h_v, h_l, h_e, p = stack_and_inputs(True)
    z_v, z_l, z_e = stack.forward(ad.Tensor(h_v), ad.Tensor(h_l), ad.Tensor(h_e), ad.Tensor(p))
    assert z_v.shape == h_v.shape
    assert z_l.shape == h_l.shape
    assert z_e.shape == h_e.shape


def test_entity_permutation_invariance():
    stack, _, h_v, h_l, h_e, p = stack_and_inputs(True)
    perm = np.array([1, 0])
    z1 = stack.forward(ad.Tensor(h_v), ad.Tensor(h_l), ad.Tensor(h_e), ad.Tensor(p))
    z2 = stack.forward(ad.Tensor(h_v), ad.Tensor(h_l), ad.Tensor(h_e[perm]), ad.Tensor(p[:, perm]))
    np.testing.assert_allclose(z1[1].data, z2[1].data, atol=1e-10)
    np.testing.assert_allclose(z1[2].data[perm], z2[2].data, atol=1e-10)


def test_pad_matching_matrix():
    p = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    padded = pad_matching_matrix(p)
    assert padded.shape == (5, 2)
    np.testing.assert_array_equal(padded[0], 0)
    np.testing.assert_array_equal(padded[-1], 0)
    np.testing.assert_array_equal(padded[1:4], p)


def test_fusion_stack_gradcheck_all_streams():
    store = ParamStore(30)
    cfg = FusionConfig(layers=2, width=8, heads=2, ffn_mult=1, rk_enabled=True)
    stack = FusionStack(store, "fusion", cfg)
    rng = np.random.default_rng(31)
    h_v = ad.Tensor(rng.uniform(-1, 1, (3, 8)), requires_grad=True)
    h_l = ad.Tensor(rng.uniform(-1, 1, (4, 8)), requires_grad=True)
    h_e = ad.Tensor(rng.uniform(-1, 1, (2, 8)), requires_grad=True)
    p = ad.Tensor((rng.random((4, 2)) < 0.5).astype(np.float64))
    t_v = ad.Tensor(rng.uniform(-1, 1, (3, 8)))
    t_l = ad.Tensor(rng.uniform(-1, 1, (4, 8)))
    t_e = ad.Tensor(rng.uniform(-1, 1, (2, 8)))

    def build():
        z_v, z_l, z_e = stack.forward(h_v, h_l, h_e, p)
        loss = ad.add(ad.mean_squared_error(z_v, t_v), ad.mean_squared_error(z_l, t_l))
        return ad.add(loss, ad.mean_squared_error(z_e, t_e))

    leaves = [h_v, h_l, h_e] + store.tensors()
    check_grads(build, leaves, tol=1e-3)
