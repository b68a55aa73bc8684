import dataclasses

import numpy as np
import pytest

from editflow import numerics as nx
from editflow.codec import LatentVideo, build_codec, decode, encode
from editflow.inference import SamplerConfig, edit, euler_integrate, euler_sample, working_clips
from editflow.model import ModelConfig, init_params
from editflow.synth import gen_sample, vocabulary_words
from editflow.text import Vocab, tokenize

CODEC = build_codec()
VOCAB = Vocab.from_words(vocabulary_words())
SMALL = ModelConfig(depth=1, d_model=32, heads=2, d_text=16)


def refs(seed=0, length=3):
    return [LatentVideo(np.random.default_rng(seed).standard_normal((length, 2, 2, 768)).astype(np.float32))]


@pytest.mark.parametrize("k", [1, 4, 20])
def test_constant_field_exact(k):
    # K equal steps of 1/K sum to one whole step of the constant field
    v = np.full((3, 2, 2, 768), 0.5, np.float32)
    cfg = SamplerConfig(steps=k, seed=3)
    out = euler_sample(None, SMALL, refs(), np.zeros(16, int), cfg, field=lambda x, t: v).tokens
    seed = np.random.default_rng(3).standard_normal((3, 2, 2, 768)).astype(np.float32)
    np.testing.assert_allclose(out, seed + v, atol=1e-5)


def test_one_step_closed_form_reaches_target():
    x1 = np.random.default_rng(9).standard_normal((3, 2, 2, 768)).astype(np.float32)
    seed = np.random.default_rng(4).standard_normal(x1.shape).astype(np.float32)
    out = euler_sample(None, SMALL, refs(), np.zeros(16, int), SamplerConfig(steps=1, seed=4),
                       field=lambda x, t: x1 - seed).tokens
    # exact up to one float32 rounding of seed + (x1 - seed)
    np.testing.assert_allclose(out, x1, rtol=0, atol=1e-6)


def test_euler_time_grid():
    seen = []
    euler_integrate(lambda x, t: seen.append(t) or np.zeros_like(x), np.zeros(2), 4)
    assert seen == [0.0, 0.25, 0.5, 0.75]


def test_zero_velocity_model_returns_seed():
    cfg = dataclasses.replace(SMALL, prediction="velocity")
    params = init_params(cfg, 768, len(VOCAB), VOCAB.max_len)
    ids = tokenize("invert all colors", VOCAB)
    out = euler_sample(params, cfg, refs(), ids, SamplerConfig(steps=5, seed=8)).tokens
    np.testing.assert_array_equal(out, np.random.default_rng(8).standard_normal(out.shape).astype(np.float32))


def test_sampling_deterministic_and_seeded():
    params = init_params(SMALL, 768, len(VOCAB), VOCAB.max_len)
    params["head"] = nx.Tensor(np.random.default_rng(0).standard_normal(params["head"].shape) * 0.02)
    ids = tokenize("invert all colors", VOCAB)
    a = euler_sample(params, SMALL, refs(), ids, SamplerConfig(steps=3, seed=1)).tokens
    b = euler_sample(params, SMALL, refs(), ids, SamplerConfig(steps=3, seed=1)).tokens
    c = euler_sample(params, SMALL, refs(), ids, SamplerConfig(steps=3, seed=2)).tokens
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def test_target_length_override():
    out = euler_sample(None, SMALL, refs(), np.zeros(16, int), SamplerConfig(steps=1, target_length=5),
                       field=lambda x, t: np.zeros_like(x))
    assert out.length == 5


def test_sampler_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(steps=0)


@pytest.mark.parametrize("task, origin", [("recolor_object", "image"), ("translate_object", "video"),
                                          ("multi_ref_palette_transfer", "image")])
def test_edit_output_shape_and_range(task, origin):
    s = gen_sample(task, origin, 2)
    params = init_params(SMALL, 768, len(VOCAB), VOCAB.max_len)
    params["head"] = nx.Tensor(np.random.default_rng(0).standard_normal(params["head"].shape) * 0.5)
    out = edit(params, SMALL, s, CODEC, VOCAB, SamplerConfig(steps=2))
    _, target = working_clips(s, CODEC, 9)
    assert out.shape == target.shape
    assert out.pixels.min() >= 0 and out.pixels.max() <= 1


def test_zero_head_data_mode_copies_reference():
    # with the reference skip an untrained model reproduces the input clip
    s = gen_sample("recolor_object", "image", 6)
    params = init_params(SMALL, 768, len(VOCAB), VOCAB.max_len)
    out = edit(params, SMALL, s, CODEC, VOCAB, SamplerConfig(steps=20))
    ref, _ = working_clips(s, CODEC, 9)
    assert np.abs(out.pixels - ref[0].pixels).max() < 1e-4


def test_working_clips_repeat():
    s = gen_sample("remove_object", "image", 1)
    r, t = working_clips(s, CODEC, 17)
    assert r[0].frames == 17 and t.frames == 17
    r, t = working_clips(s, CODEC, 17, use_repeat=False)
    assert t.frames == 1
    v = gen_sample("remove_object", "video", 1)
    assert working_clips(v, CODEC, 17)[1].frames == 9
    assert decode(encode(t, CODEC), CODEC).frames == 1
