"""
A short training run and an edit
================================

Trains a small model on recolor pairs for a few hundred steps, then edits a
held-out image and reports PSNR against the oracle target. This is a smoke
run: at this budget the output stays close to the input clip.
"""
import numpy as np

from editflow.config import from_dict
from editflow.evaluation import psnr
from editflow.inference import SamplerConfig, edit, working_clips
from editflow.runner import corpus_counts, held_out, make_codec, make_vocab, train, train_pool
from editflow.synth import gen_dataset, regenerate

cfg = from_dict({
    "model": {"depth": 2, "d_model": 64, "heads": 2, "d_text": 32},
    "data": {"counts": {"recolor_object": {"image": 200}}},
    "stages": [{"stage_id": 1, "image_fraction": 1.0, "tasks": ["recolor_object"], "steps": 200}],
})
manifest, _ = gen_dataset(corpus_counts(cfg), cfg.seed, materialize=False)
res = train(cfg, None, pool=train_pool(manifest), checkpoint=False)
print("loss: first 10 avg %.4f, last 20 avg %.4f, %.0fs"
      % (np.mean(res.losses[:10]), np.mean(res.losses[-20:]), res.seconds))

codec, vocab = make_codec(cfg), make_vocab()
for entry in held_out(manifest, 3):
    s = regenerate(entry)
    out = edit(res.params, cfg.model_config(), s, codec, vocab, SamplerConfig(steps=20, seed=entry.seed))
    refs, target = working_clips(s, codec, cfg.train.repeat_n)
    print(f"'{s.instruction}': PSNR {psnr(out, target):.2f} dB (copying the input: {psnr(refs[0], target):.2f} dB)")
