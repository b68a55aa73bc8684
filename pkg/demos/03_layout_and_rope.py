"""
Sequence layout and reset temporal indices
==========================================

References and target are concatenated along time, but each segment's
temporal index starts again at 0, so frame k of the reference and frame k of
the target share the same rotary phase.
"""
import numpy as np

from editflow.model import ModelConfig, rope_rotate, rope_tables
from editflow.sequence import build_layout

cfg = ModelConfig()
print("head_dim", cfg.head_dim, "bands (t, h, w)", cfg.rope_bands)

layout = build_layout([3, 3], 3, (2, 2))  # two references and a target, 3 latent frames each
print([s.role for s in layout.segments])
print("t_idx per segment:", layout.t_idx.reshape(3, -1)[:, ::4].tolist())

cos, sin = rope_tables(layout.t_idx, layout.h_idx, layout.w_idx, cfg)
same = np.array_equal(cos[:12], cos[24:]) and np.array_equal(sin[:12], sin[24:])
print("reference 1 and target share phases:", same)

# attention logits depend only on index differences
rng = np.random.default_rng(0)
q, k = rng.standard_normal((5, 32)), rng.standard_normal((5, 32))
t = np.arange(5)
zeros = np.zeros(5, int)


def logits(shift):
    return rope_rotate(q, t + shift, zeros, zeros, cfg).data @ rope_rotate(k, t + shift, zeros, zeros, cfg).data.T


print("max change under a shift of 7: %.1e" % np.abs(logits(7) - logits(0)).max())
