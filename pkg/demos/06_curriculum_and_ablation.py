"""
Curriculum mixing and the ablation harness
==========================================

Stage 1 is image heavy (2M images to 350K videos), stage 2 adds the
multi-reference task at 260K images to 116K videos. The harness trains one
run per toggle row or mixing ratio and scores all of them on the same split.
"""
import numpy as np

from editflow.ablation import ablation_csv, ablation_matrix, ratio_grid, toggle_grid
from editflow.config import from_dict
from editflow.curriculum import default_schedule, next_sample
from editflow.runner import corpus_counts
from editflow.synth import TASKS, gen_dataset

sched = default_schedule()
draws = [next_sample(sched, k) for k in range(sched.total_steps)]
for stage in (1, 2):
    refs = [r for r, s in draws if s == stage]
    print(f"stage {stage}: {len(refs)} draws, image fraction {np.mean([r.origin == 'image' for r in refs]):.3f}, "
          f"tasks {sorted({r.task_id for r in refs})}")

# a deliberately tiny budget, just to show the report
base = from_dict({
    "model": {"depth": 1, "d_model": 32, "heads": 2, "d_text": 16},
    "data": {"counts": {t: {o: 4 for o in spec.modalities} for t, spec in TASKS.items()}},
    "train": {"batch_size": 2},
    "stages": [{"stage_id": 1, "image_fraction": 0.85, "tasks": ["recolor_object", "translate_object"], "steps": 3},
               {"stage_id": 2, "image_fraction": 0.69, "tasks": list(TASKS), "steps": 2}],
    "sampler": {"steps": 4},
})
manifest, _ = gen_dataset(corpus_counts(base), base.seed, materialize=False)
rows = ablation_matrix(toggle_grid(base) + ratio_grid(base), manifest, per_task=1)
print(ablation_csv(rows))
