"""
Images as pseudo-videos
=======================

An edited image is repeated N times so it looks like a (static) clip to the
video codec. With 4x temporal grouping N=49 frames become 13 latent frames,
and a quarter of those are swapped for pure noise during training.
"""
import numpy as np

from editflow.codec import build_codec, decode, encode
from editflow.evaluation import temporal_consistency
from editflow.sequence import apply_frame_noise, build_layout, repeat_image, sample_temporal_mask
from editflow.synth import gen_sample

codec = build_codec(seed=0)  # 8x8 patches, 4 frames per group, d_lat = 768
sample = gen_sample("recolor_object", "image", 11)
print(sample.instruction)

clip = repeat_image(sample.target, 49)
z = encode(clip, codec)
print("pixels", clip.shape, "-> latents", z.tokens.shape)
print("round trip max error %.1e" % np.abs(decode(z, codec).pixels - clip.pixels).max())
print("temporal consistency of the repeat:", temporal_consistency(clip))

rng = np.random.default_rng(0)
mask = sample_temporal_mask(z.length, 0.25, rng)
print("masked latent frames:", np.flatnonzero(mask.bits), "of", z.length)

noisy = apply_frame_noise(z, mask, rng)
i = int(np.flatnonzero(mask.bits)[0])
print("masked frame mean %.3f var %.3f" % (noisy.tokens[i].mean(), noisy.tokens[i].var()))

# masked frames get loss weight 0 on every spatial token
layout = build_layout([z.length], z.length, z.grid, mask)
print("target tokens", layout.target.n_tokens, "supervised", int(layout.loss_weight.sum()))
