"""
Synthetic editing tasks
=======================

Each task renders a source scene and computes its target exactly, so PSNR
against the oracle replaces a learned judge. Frames are dumped as PPM files.
"""
import sys
from pathlib import Path

import numpy as np

from editflow.synth import TASKS, gen_sample

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_tasks")
out.mkdir(exist_ok=True)


def ppm(path, frame):
    px = np.clip(np.round(frame.transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
    path.write_bytes(b"P6\n16 16\n255\n" + px.tobytes())


for task, spec in TASKS.items():
    for origin in spec.modalities:
        s = gen_sample(task, origin, 3)
        changed = float(np.mean(np.any(s.target.pixels != s.references[0].pixels, axis=1)))
        print(f"{task:28s} {origin:5s} refs={len(s.references)} frames={s.target.frames} "
              f"changed={changed:.2f}  '{s.instruction}'")
        ppm(out / f"{task}_{origin}_source.ppm", s.references[0].pixels[0])
        ppm(out / f"{task}_{origin}_target.ppm", s.target.pixels[-1])
print("frames written to", out)
