"""
The command line
================

gen-data, train (interrupted and resumed), sample and eval in a scratch run
directory, driven through the same entry point as the ``editflow`` script.
"""
import json
import sys
import tempfile
from pathlib import Path

from editflow.cli import main

run = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="editflow_"))
run.mkdir(parents=True, exist_ok=True)
(run / "config.json").write_text(json.dumps({
    "model": {"depth": 1, "d_model": 32, "heads": 2, "d_text": 16},
    "data": {"counts": {"recolor_object": {"image": 20, "video": 10}, "translate_object": {"video": 10}}},
    "train": {"batch_size": 4, "checkpoint_every": 10},
    "stages": [{"stage_id": 1, "image_fraction": 0.8, "tasks": ["recolor_object", "translate_object"],
                "steps": 30}],
    "sampler": {"steps": 10},
    "eval": {"per_task": 3},
}))

base = ["--run-dir", str(run)]
main(base + ["gen-data"])
main(base + ["train", "--until", "20"])  # stop early
main(base + ["train"])  # resumes from the step-20 checkpoint
main(base + ["sample", "--task", "translate_object", "--count", "2"])
main(base + ["eval"])
print("run directory:", run)
for p in sorted(run.rglob("*")):
    if p.is_file() and "checkpoints" not in p.parts and p.suffix != ".ppm":
        print("  ", p.relative_to(run))
