import dataclasses

import numpy as np
import pytest

from editflow import numerics as nx
from editflow.flow import loss_masked
from editflow.model import ModelConfig, attention_weights, forward, init_params, rope_rotate, rope_tables
from editflow.sequence import TemporalMask, build_layout

TINY = ModelConfig(depth=1, d_model=16, heads=2, d_text=8, mlp_ratio=2)


def setup(cfg=TINY, d_lat=6, refs=(2,), target=2, grid=(1, 2), seed=0, head_scale=0.5):
    params = init_params(cfg, d_lat, vocab_size=5, max_len=4, seed=seed)
    rng = np.random.default_rng(seed + 100)
    # a live head so every parameter reaches the output
    params["head"] = nx.Tensor(rng.standard_normal(params["head"].shape) * head_scale, requires_grad=True)
    layout = build_layout(list(refs), target, grid)
    tokens = rng.standard_normal((layout.n_tokens, d_lat))
    ids = np.array([2, 3, 0, 0])
    return params, layout, tokens, ids


def test_default_bands():
    assert ModelConfig().rope_bands == (16, 8, 8)
    assert ModelConfig().head_dim == 32


@pytest.mark.parametrize("kw", [{"d_model": 30, "heads": 4}, {"prediction": "noise"},
                                {"d_model": 6, "heads": 2}])
def test_bad_config(kw):
    with pytest.raises(ValueError):
        ModelConfig(**kw)


def test_output_shape_batched_and_not():
    cfg = ModelConfig(depth=1, d_model=32, heads=2, d_text=8)
    params = init_params(cfg, 768, 5, 4)
    layout = build_layout([3], 3, (2, 2))
    tok = np.random.default_rng(0).standard_normal((2, layout.n_tokens, 768))
    assert forward(params, cfg, tok, layout, np.array([[2, 0, 0, 0]] * 2), [0.1, 0.7]).shape == (2, 3, 2, 2, 768)
    assert forward(params, cfg, tok[0], layout, np.array([2, 0, 0, 0]), 0.3).shape == (3, 2, 2, 768)


def test_rope_identity_at_origin():
    x = np.random.default_rng(0).standard_normal((4, 32))
    z = np.zeros(4, int)
    np.testing.assert_allclose(rope_rotate(x, z, z, z, ModelConfig()).data, x, atol=1e-6)


def test_rope_preserves_norm():
    x = np.random.default_rng(0).standard_normal((5, 32))
    i = np.arange(5)
    out = rope_rotate(x, i, 2 * i, 3 * i, ModelConfig()).data
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), np.linalg.norm(x, axis=1), rtol=1e-5)


@pytest.mark.parametrize("axis", [0, 1, 2])
def test_rope_relative_offsets(axis):
    # <R(p) q, R(p') k> depends only on p - p', on every axis band
    cfg = ModelConfig()
    rng = np.random.default_rng(axis)
    q, k = rng.standard_normal((1, 32)), rng.standard_normal((1, 32))

    def score(pq, pk):
        iq, ik = [np.zeros(1, int)] * 3, [np.zeros(1, int)] * 3
        iq[axis], ik[axis] = np.array([pq]), np.array([pk])
        with nx.precision(np.float64):
            return float((rope_rotate(q, *iq, cfg).data * rope_rotate(k, *ik, cfg).data).sum())
    assert score(3, 1) == pytest.approx(score(7, 5), rel=1e-9)
    assert score(3, 1) == pytest.approx(score(2, 0), rel=1e-9)
    assert score(3, 1) != pytest.approx(score(3, 2), rel=1e-6)


def test_rope_bands_independent():
    # moving only the h index leaves the t and w bands untouched
    cfg = ModelConfig()
    x = np.random.default_rng(0).standard_normal((1, 32))
    z = np.zeros(1, int)
    a = rope_rotate(x, z, z, z, cfg).data
    b = rope_rotate(x, z, z + 3, z, cfg).data
    np.testing.assert_allclose(a[:, :16], b[:, :16], atol=1e-6)
    np.testing.assert_allclose(a[:, 24:], b[:, 24:], atol=1e-6)
    assert not np.allclose(a[:, 16:24], b[:, 16:24])


def test_rope_tables_shape():
    cos, sin = rope_tables(np.arange(6), np.zeros(6), np.zeros(6), ModelConfig())
    assert cos.shape == sin.shape == (6, 32)


def test_attention_rows_sum_to_one_and_bias_masks():
    rng = np.random.default_rng(0)
    q, k = rng.standard_normal((1, 2, 5, 8)), rng.standard_normal((1, 2, 4, 8))
    bias = np.array([0, 0, -1e9, -1e9])[None, None, None, :]
    w = attention_weights(nx.Tensor(q), nx.Tensor(k), bias).data
    np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-6)
    assert np.all(w[..., 2:] == 0)


def test_pad_positions_inert():
    params, layout, tok, ids = setup()
    base = forward(params, TINY, tok, layout, ids, 0.4).data
    pos = params["text_pos"].data.copy()
    pos[2:] += 10.0
    params["text_pos"] = nx.Tensor(pos)
    np.testing.assert_array_equal(forward(params, TINY, tok, layout, ids, 0.4).data, base)


def test_conditioning_is_live():
    params, layout, tok, ids = setup()
    with nx.precision(np.float64):
        def run(tokens=tok, text=ids, t=0.4):
            return forward(params, TINY, tokens, layout, text, t).data
        base = run()
        # at init cross-attention is near uniform, so the word set matters more than the order
        assert np.abs(run(text=np.array([2, 4, 0, 0])) - base).max() > 1e-9
        assert np.abs(run(t=0.6) - base).max() > 1e-3
        tok2 = tok.copy()
        tok2[0] += 1.0  # reference token only
        assert np.abs(run(tokens=tok2) - base).max() > 1e-3


def test_reference_attention_reaches_target_without_skips():
    cfg = dataclasses.replace(TINY, ref_skip=False, ref_align=False)
    params, layout, tok, ids = setup(cfg)
    base = forward(params, cfg, tok, layout, ids, 0.4).data
    tok2 = tok.copy()
    tok2[1] -= 2.0
    assert not np.allclose(forward(params, cfg, tok2, layout, ids, 0.4).data, base)


def test_zero_head_velocity_mode_is_zero():
    cfg = dataclasses.replace(TINY, prediction="velocity")
    params = init_params(cfg, 6, 5, 4)
    layout = build_layout([2], 2, (1, 2))
    tok = np.random.default_rng(0).standard_normal((layout.n_tokens, 6))
    assert np.abs(forward(params, cfg, tok, layout, np.array([2, 0, 0, 0]), 0.5).data).max() == 0


def test_zero_head_data_mode_points_at_reference():
    # x1_hat = reference, so v = (ref - x_t) / (1 - t)
    params = init_params(TINY, 6, 5, 4)
    layout = build_layout([2], 2, (1, 2))
    tok = np.random.default_rng(0).standard_normal((layout.n_tokens, 6))
    v = forward(params, TINY, tok, layout, np.array([2, 0, 0, 0]), 0.5).data.reshape(4, 6)
    np.testing.assert_allclose(v, (tok[:4] - tok[4:]) / 0.5, rtol=1e-5, atol=1e-5)


def test_too_many_references():
    params, _, _, ids = setup()
    layout = build_layout([1, 1, 1], 1, (1, 2))
    with pytest.raises(ValueError):
        forward(params, TINY, np.zeros((layout.n_tokens, 6)), layout, ids, 0.5)


def test_timestep_range_and_token_count():
    params, layout, tok, ids = setup()
    with pytest.raises(ValueError):
        forward(params, TINY, tok, layout, ids, 1.5)
    with pytest.raises(nx.ShapeError):
        forward(params, TINY, tok[:-1], layout, ids, 0.5)


@pytest.mark.parametrize("prediction", ["data", "velocity"])
def test_forward_gradients_match_finite_differences(prediction):
    cfg = dataclasses.replace(TINY, prediction=prediction)
    params, layout, tok, ids = setup(cfg)
    names = sorted(params)
    weights = np.random.default_rng(9).standard_normal((2, 1, 2, 6))

    def f(*arrays):
        p = dict(zip(names, arrays))
        return nx.sum_(forward(p, cfg, tok, layout, ids, 0.3) * weights)
    assert nx.fd_check(f, [params[n].data for n in names], eps=1e-3, order=4, coords=24) < 1e-3


def test_training_loss_gradient_depth1_d32():
    cfg = ModelConfig(depth=1, d_model=32, heads=2, d_text=8, mlp_ratio=2)
    d_lat = 12
    params = init_params(cfg, d_lat, 5, 4, seed=0)
    rng = np.random.default_rng(0)
    params["head"] = nx.Tensor(rng.standard_normal(params["head"].shape) * 0.02)
    layout = build_layout([2], 2, (1, 2), TemporalMask(np.array([1, 0], np.int8), 0.25))
    x1 = rng.standard_normal((layout.n_tokens, d_lat)) * 0.3
    x0 = rng.standard_normal((4, d_lat))
    t = 0.4
    tok = np.concatenate([x1[:4], t * x1[4:] + (1 - t) * x0])
    v = (x1[4:] - x0).reshape(2, 1, 2, d_lat)
    ids = np.array([2, 3, 0, 0])
    names = sorted(params)

    def f(*arrays):
        pred = forward(dict(zip(names, arrays)), cfg, tok, layout, ids, t)
        return loss_masked(pred, v, layout.loss_weight).loss
    assert nx.fd_check(f, [params[n].data for n in names], eps=1e-3, order=4, coords=16) < 1e-3


def test_masked_weights_survive_layout():
    layout = build_layout([3], 3, (2, 2), TemporalMask(np.array([1, 0, 0], np.int8), 0.25))
    assert layout.loss_weight.sum() == 8
