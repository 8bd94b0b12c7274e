import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ttstack import vit
from ttstack.errors import ConfigError
from ttstack.vit import ViTConfig, backward, cross_entropy, forward, init_model, predict, softmax

SMALL = ViTConfig(image_size=16, patch_size=4, embed_dim=8, depth=1, num_heads=2, seed=3)


def perturbed(cfg, scale=0.3, seed=0):
    """Model with O(1) weights so every gradient is well above finite-difference noise."""
    m = init_model(cfg)
    r = np.random.default_rng(seed)
    for k in m.params:
        m.params[k] = m.params[k] + r.normal(0, scale, m.params[k].shape)
    return m


def numeric_grad(model, x, y, h=1e-4):
    out = {}
    for name, a in model.params.items():
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            orig = a[idx]
            a[idx] = orig + h
            lp = cross_entropy(forward(model, x), y)
            a[idx] = orig - h
            lm = cross_entropy(forward(model, x), y)
            a[idx] = orig
            g[idx] = (lp - lm) / (2 * h)
        out[name] = g
    return out


def rel_error(a, b, floor=1e-6):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


# ------------------------------------------------------------------ config

def test_config_validation():
    with pytest.raises(ConfigError):
        ViTConfig(image_size=30, patch_size=4)
    with pytest.raises(ConfigError):
        ViTConfig(embed_dim=10, num_heads=4)
    with pytest.raises(ConfigError):
        ViTConfig(num_classes=3)
    with pytest.raises(ConfigError):
        ViTConfig(in_channels=3)


def test_init_determinism_and_tokens():
    cfg = ViTConfig(image_size=32, patch_size=4, seed=9)
    a, b = init_model(cfg), init_model(cfg)
    assert a.checksum() == b.checksum()
    assert cfg.num_tokens == 65
    assert a.params["pos_embed"].shape == (65, cfg.embed_dim)
    assert init_model(ViTConfig(seed=10)).checksum() != a.checksum()


def test_init_biases_zero_and_truncation():
    m = init_model(ViTConfig(seed=1))
    for name, arr in m.params.items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.startswith("b") or leaf.endswith("_b"):
            assert np.all(arr == 0), name
        elif leaf.endswith("_g"):
            assert np.all(arr == 1), name
        else:
            assert np.abs(arr).max() <= 2 * vit.INIT_STD
    w = m.params["blocks.0.w1"]
    assert 0.7 * vit.INIT_STD < w.std() < 1.0 * vit.INIT_STD


def test_heterogeneous_configs_have_different_shapes():
    a = vit.param_shapes(ViTConfig(patch_size=4, depth=1, num_heads=2))
    b = vit.param_shapes(ViTConfig(patch_size=8, depth=2, num_heads=4))
    assert a.keys() != b.keys()
    assert a["patch_w"] != b["patch_w"] and a["pos_embed"] != b["pos_embed"]


# ----------------------------------------------------------------- forward

def test_forward_shapes_and_errors(rng):
    m = init_model(SMALL)
    x = rng.uniform(-1, 1, (5, 1, 16, 16))
    logits = forward(m, x)
    assert logits.shape == (5, 2) and np.all(np.isfinite(logits))
    assert forward(m, x[0]).shape == (1, 2)
    with pytest.raises(ValueError):
        forward(m, rng.uniform(-1, 1, (2, 1, 8, 8)))


def test_attention_rows_are_distributions(rng):
    m = perturbed(ViTConfig(image_size=16, patch_size=4, embed_dim=16, depth=2, num_heads=4), scale=0.5)
    _, cache = forward(m, rng.uniform(-1, 1, (3, 1, 16, 16)), return_cache=True)
    for block in cache["blocks"]:
        a = block["attn"]
        assert a.shape == (3, 4, 17, 17)
        assert np.all(a >= 0)
        assert np.abs(a.sum(-1) - 1).max() < 1e-12


def test_layernorm_statistics(rng):
    x = rng.normal(3.0, 0.01, (4, 7, 16))
    out, _ = vit._layernorm(x, np.ones(16), np.zeros(16))
    assert np.abs(out.mean(-1)).max() < 1e-10
    assert np.abs(out.var(-1) - 1).max() < 1e-6


def test_batch_permutation_equivariance(rng):
    m = perturbed(SMALL)
    x = rng.uniform(-1, 1, (6, 1, 16, 16))
    perm = rng.permutation(6)
    np.testing.assert_allclose(forward(m, x[perm]), forward(m, x)[perm], rtol=0, atol=1e-12)


# ------------------------------------------------------------ softmax / CE

def test_softmax_values():
    np.testing.assert_array_equal(softmax([0.0, 0.0]), [0.5, 0.5])
    p = softmax([1000.0, 0.0])
    assert np.all(np.isfinite(p)) and p[0] == pytest.approx(1.0) and p[1] < 1e-300 + 1e-400
    # high-precision reference: e / (e + e^2)
    np.testing.assert_allclose(softmax([1.0, 2.0]), [0.2689414213699951, 0.7310585786300049], rtol=1e-15)


@settings(max_examples=100, deadline=None)
@given(a=st.floats(-50, 50), b=st.floats(-50, 50), c=st.floats(-100, 100))
def test_softmax_shift_invariance(a, b, c):
    p = softmax([a, b])
    assert abs(p.sum() - 1) < 1e-15
    np.testing.assert_allclose(softmax([a + c, b + c]), p, rtol=0, atol=1e-12)


def test_cross_entropy_values():
    assert cross_entropy([[0.0, 0.0]], [0]) == pytest.approx(math.log(2), abs=1e-15)
    assert cross_entropy([[0.0, 0.0]], [1]) == pytest.approx(math.log(2), abs=1e-15)
    assert cross_entropy([[20.0, -20.0]], [0]) < 1e-8
    assert cross_entropy([[1.0, 2.0]], [1]) == pytest.approx(0.31326168751822283, rel=1e-14)
    with pytest.raises(ValueError):
        cross_entropy([[0.0, 0.0]], [2])


# ---------------------------------------------------------------- backward

def test_gradients_match_finite_differences(rng):
    m = perturbed(SMALL)
    x = rng.uniform(-1, 1, (2, 1, 16, 16))
    y = np.array([0, 1])
    loss, grads = backward(m, x, y)
    assert loss == pytest.approx(cross_entropy(forward(m, x), y), abs=1e-14)
    num = numeric_grad(m, x, y)
    assert grads.keys() == m.params.keys()
    for name in grads:
        assert grads[name].shape == m.params[name].shape
        assert rel_error(grads[name], num[name]).max() < 1e-4, name


def test_gradients_two_blocks_spot_check(rng):
    cfg = ViTConfig(image_size=8, patch_size=4, embed_dim=8, depth=2, num_heads=4, mlp_ratio=2, seed=5)
    m = perturbed(cfg, seed=2)
    x = rng.uniform(-1, 1, (3, 1, 8, 8))
    y = np.array([1, 0, 1])
    _, grads = backward(m, x, y)
    num = numeric_grad(m, x, y)
    for name in grads:
        assert rel_error(grads[name], num[name]).max() < 1e-4, name


def test_duplicated_batch_same_gradients(rng):
    m = perturbed(SMALL)
    x = rng.uniform(-1, 1, (3, 1, 16, 16))
    y = np.array([0, 1, 1])
    l1, g1 = backward(m, x, y)
    l2, g2 = backward(m, np.concatenate([x, x]), np.concatenate([y, y]))
    assert l1 == pytest.approx(l2, rel=1e-14)
    for k in g1:
        np.testing.assert_allclose(g2[k], g1[k], rtol=1e-10, atol=1e-15)


def test_zero_head_gives_ln2_and_no_upstream_gradient(rng):
    m = perturbed(SMALL)
    m.params["head_w"][:] = 0
    m.params["head_b"][:] = 0
    loss, grads = backward(m, rng.uniform(-1, 1, (4, 1, 16, 16)), np.array([0, 1, 0, 1]))
    assert loss == math.log(2)
    for k, g in grads.items():
        if k not in ("head_w", "head_b"):
            assert np.all(g == 0), k


def test_forward_backward_pure(rng):
    m = perturbed(SMALL)
    before = m.checksum()
    x = rng.uniform(-1, 1, (2, 1, 16, 16))
    l1, g1 = backward(m, x, [0, 1])
    l2, g2 = backward(m, x, [0, 1])
    assert m.checksum() == before and l1 == l2
    assert all(np.array_equal(g1[k], g2[k]) for k in g1)


# ----------------------------------------------------------------- predict

def test_argmax_tie_break():
    np.testing.assert_array_equal(vit.argmax_logits([[3.2, -1.0], [0.0, 0.0], [-1.0, 1.0]]), [0, 0, 1])


def test_argmax_agrees_with_softmax():
    r = np.random.default_rng(0)
    logits = r.normal(0, 3, (1000, 2))
    np.testing.assert_array_equal(vit.argmax_logits(logits), vit.argmax_logits(softmax(logits)))


def test_predict_shape(rng):
    m = init_model(SMALL)
    p = predict(m, rng.uniform(-1, 1, (4, 1, 16, 16)))
    assert p.shape == (4,) and set(p.tolist()) <= {0, 1}


# -------------------------------------------------------------- checkpoint

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    m = perturbed(ViTConfig(image_size=16, patch_size=8, embed_dim=8, depth=2, num_heads=2, seed=4))
    vit.save_checkpoint(m, tmp_path / "m.ckpt")
    back = vit.load_checkpoint(tmp_path / "m.ckpt")
    assert back.config == m.config
    assert list(back.params) == list(m.params)
    assert all(np.array_equal(back.params[k], m.params[k]) for k in m.params)
    assert vit.checkpoint_bytes(back) == (tmp_path / "m.ckpt").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x").write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        vit.load_checkpoint(tmp_path / "x")
