"""Procedural editing pairs with exact pixel-level targets.

Scenes are small RGB canvases with a flat background and one or two
circles/squares. Every operator computes its target directly from the scene
description, so the generator doubles as the ground-truth oracle.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .codec import VideoClip

GENERATOR_VERSION = "1"

PALETTE = {
    "red": (0.9, 0.1, 0.1),
    "green": (0.1, 0.8, 0.2),
    "blue": (0.15, 0.2, 0.9),
    "yellow": (0.95, 0.9, 0.1),
    "cyan": (0.1, 0.85, 0.9),
    "magenta": (0.85, 0.15, 0.8),
    "orange": (1.0, 0.55, 0.05),
    "white": (0.95, 0.95, 0.95),
}
BACKGROUNDS = {
    "black": (0.05, 0.05, 0.05),
    "gray": (0.45, 0.45, 0.45),
    "navy": (0.1, 0.1, 0.35),
    "olive": (0.4, 0.4, 0.1),
}
SHAPES = ("circle", "square")
POSITIONS = {"top left": (4, 4), "top right": (4, 11), "bottom left": (11, 4),
             "bottom right": (11, 11), "center": (8, 8)}
DIRECTIONS = {"left": (0, -1), "right": (0, 1), "up": (-1, 0), "down": (1, 0)}

TEMPLATES = {
    "recolor_object": "recolor the {color} {shape} to {new_color}",
    "remove_object": "remove the {color} {shape}",
    "add_object": "add a {color} {shape} at the {position}",
    "global_style_invert": "invert all colors",
    "translate_object": "move the {color} {shape} {direction}",
    "multi_ref_palette_transfer": "paint the {color} {shape} with the palette of the second reference",
}


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    template: str
    modalities: tuple[str, ...]
    n_refs: int = 1


TASKS = {
    "recolor_object": TaskSpec("recolor_object", TEMPLATES["recolor_object"], ("image", "video")),
    "remove_object": TaskSpec("remove_object", TEMPLATES["remove_object"], ("image", "video")),
    "add_object": TaskSpec("add_object", TEMPLATES["add_object"], ("image", "video")),
    "global_style_invert": TaskSpec("global_style_invert", TEMPLATES["global_style_invert"], ("image", "video")),
    "translate_object": TaskSpec("translate_object", TEMPLATES["translate_object"], ("video",)),
    "multi_ref_palette_transfer": TaskSpec("multi_ref_palette_transfer", TEMPLATES["multi_ref_palette_transfer"],
                                           ("image", "video"), n_refs=2),
}
MULTI_REF_TASKS = tuple(k for k, v in TASKS.items() if v.n_refs > 1)


@dataclass(frozen=True)
class Shape:
    kind: str
    color: str
    cy: int
    cx: int
    size: int  # radius for circles, half side for squares
    vy: int = 0
    vx: int = 0

    def at(self, k: int, size: int | None = None) -> "Shape":
        """Position at frame k; with ``size`` the centre is clamped so the shape stays on the canvas."""
        cy, cx = self.cy + k * self.vy, self.cx + k * self.vx
        if size is not None:
            lo, hi = self.size, size - 1 - self.size
            cy, cx = min(max(cy, lo), hi), min(max(cx, lo), hi)
        return replace(self, cy=cy, cx=cx)


@dataclass(frozen=True)
class Scene:
    background: str
    shapes: tuple[Shape, ...]
    frames: int
    size: int = 16


@dataclass
class EditSample:
    references: list[VideoClip]
    target: VideoClip
    instruction: str
    task_id: str
    origin: str
    seed: int
    attributes: dict = field(default_factory=dict)


def shape_mask(shape: Shape, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - shape.cy, xx - shape.cx
    if shape.kind == "circle":
        return dy * dy + dx * dx <= shape.size * shape.size
    return (np.abs(dy) <= shape.size) & (np.abs(dx) <= shape.size)


def render(scene: Scene) -> VideoClip:
    s = scene.size
    px = np.empty((scene.frames, 3, s, s), dtype=np.float32)
    bg = np.array(BACKGROUNDS[scene.background], dtype=np.float32)
    for k in range(scene.frames):
        img = np.broadcast_to(bg[:, None, None], (3, s, s)).copy()
        for sh in scene.shapes:
            m = shape_mask(sh.at(k, s), s)
            img[:, m] = np.array(PALETTE[sh.color], dtype=np.float32)[:, None]
        px[k] = img
    return VideoClip(px)


def flat_clip(color: str, frames: int, size: int = 16) -> VideoClip:
    c = np.array(PALETTE[color], dtype=np.float32)
    return VideoClip(np.broadcast_to(c[None, :, None, None], (frames, 3, size, size)).copy())


def _fits(sh: Shape, frames: int, size: int) -> bool:
    """Whole unclamped trajectory stays on the canvas."""
    for k in (0, frames - 1):
        s = sh.at(k)
        if min(s.cy, s.cx) - s.size < 0 or max(s.cy, s.cx) + s.size > size - 1:
            return False
    return True


def _overlaps(a: Shape, b: Shape, frames: int, size: int) -> bool:
    return any(max(abs(a.at(k, size).cy - b.at(k, size).cy), abs(a.at(k, size).cx - b.at(k, size).cx))
               <= a.size + b.size + 1 for k in range(frames))


def _random_scene(rng, frames: int, n_shapes: int, moving: bool, size: int = 16,
                  max_tries: int = 200) -> Scene:
    bg = str(rng.choice(sorted(BACKGROUNDS)))
    colors = rng.choice(sorted(PALETTE), size=n_shapes, replace=False)
    for _ in range(max_tries):
        shapes: list[Shape] = []
        for i in range(n_shapes):
            r = int(rng.integers(2, 4))
            v = (0, 0)
            if moving and i == 0:
                v = DIRECTIONS[str(rng.choice(sorted(DIRECTIONS)))]
            sh = Shape(str(rng.choice(SHAPES)), str(colors[i]), int(rng.integers(r, size - r)),
                       int(rng.integers(r, size - r)), r, *v)
            if not _fits(replace(sh, vy=0, vx=0), 1, size) or any(_overlaps(sh, o, frames, size) for o in shapes):
                break
            shapes.append(sh)
        if len(shapes) == n_shapes:
            return Scene(bg, tuple(shapes), frames, size)
    raise GenerationError("could not place shapes without overlap")


def _derive_seed(*parts) -> int:
    h = hashlib.blake2b(":".join(map(str, parts)).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


def gen_sample(task: TaskSpec | str, origin: str, rng: np.random.Generator | int,
               video_frames: int = 9, size: int = 16) -> EditSample:
    """One editing pair; ``rng`` may be a seed, recorded on the sample."""
    task = TASKS[task] if isinstance(task, str) else task
    if origin not in task.modalities:
        raise GenerationError(f"task {task.task_id} does not support origin {origin!r}")
    seed = rng if isinstance(rng, (int, np.integer)) else int(rng.integers(2**62))
    rng = np.random.default_rng(int(seed))
    frames = 1 if origin == "image" else video_frames
    moving = origin == "video" and task.task_id != "translate_object"
    tid = task.task_id

    if tid == "add_object":
        scene = _random_scene(rng, frames, 1, moving, size)
        pos = str(rng.choice(sorted(POSITIONS)))
        present = {s.color for s in scene.shapes}
        color = str(rng.choice(sorted(set(PALETTE) - present)))
        cy, cx = POSITIONS[pos]
        new = Shape(str(rng.choice(SHAPES)), color, cy, cx, 2)
        tgt_scene = replace(scene, shapes=scene.shapes + (new,))
        attrs = {"color": color, "shape": new.kind, "position": pos}
        refs = [render(scene)]
        target = render(tgt_scene)
    else:
        n_shapes = 1 if tid in ("translate_object", "multi_ref_palette_transfer") else int(rng.integers(1, 3))
        scene = _random_scene(rng, frames, n_shapes, moving, size)
        if tid == "translate_object":
            d = str(rng.choice(sorted(DIRECTIONS)))
            vy, vx = DIRECTIONS[d]
            sh = scene.shapes[0]
            # back the start off so the trajectory fits when it can; long clips clamp at the edge
            for _ in range(size):
                if _fits(replace(sh, vy=vy, vx=vx), frames, size):
                    break
                sh = replace(sh, cy=int(np.clip(sh.cy - vy, sh.size, size - 1 - sh.size)),
                             cx=int(np.clip(sh.cx - vx, sh.size, size - 1 - sh.size)))
            src = replace(scene, shapes=(sh,))
            tgt_scene = replace(scene, shapes=(replace(sh, vy=vy, vx=vx),))
            attrs = {"color": sh.color, "shape": sh.kind, "direction": d, "start": (sh.cy, sh.cx),
                     "step": (vy, vx)}
            refs = [render(src)]
            target = render(tgt_scene)
        else:
            focus = scene.shapes[int(rng.integers(len(scene.shapes)))]
            attrs = {"color": focus.color, "shape": focus.kind}
            refs = [render(scene)]
            if tid == "recolor_object":
                present = {s.color for s in scene.shapes}
                new_color = str(rng.choice(sorted(set(PALETTE) - present)))
                attrs["new_color"] = new_color
                target = render(replace(scene, shapes=tuple(
                    replace(s, color=new_color) if s == focus else s for s in scene.shapes)))
            elif tid == "remove_object":
                target = render(replace(scene, shapes=tuple(s for s in scene.shapes if s != focus)))
            elif tid == "global_style_invert":
                attrs = {}
                target = VideoClip(1.0 - refs[0].pixels)
            elif tid == "multi_ref_palette_transfer":
                new_color = str(rng.choice(sorted(set(PALETTE) - {focus.color})))
                attrs["palette"] = new_color
                refs.append(flat_clip(new_color, frames, size))
                target = render(replace(scene, shapes=(replace(focus, color=new_color),)))
            else:
                raise GenerationError(f"unknown task {tid}")
    instruction = task.template.format(**{k: v for k, v in attrs.items() if isinstance(v, str)})
    return EditSample(refs, target, instruction, tid, origin, int(seed), attrs)


def parse_instruction(text: str) -> tuple[str, dict]:
    """Invert the templates: instruction -> (task id, string attributes)."""
    words = text.split()
    if words == ["invert", "all", "colors"]:
        return "global_style_invert", {}
    if words[:2] == ["recolor", "the"] and len(words) == 6 and words[4] == "to":
        return "recolor_object", {"color": words[2], "shape": words[3], "new_color": words[5]}
    if words[:2] == ["remove", "the"] and len(words) == 4:
        return "remove_object", {"color": words[2], "shape": words[3]}
    if words[:2] == ["add", "a"] and words[4:6] == ["at", "the"]:
        return "add_object", {"color": words[2], "shape": words[3], "position": " ".join(words[6:])}
    if words[:2] == ["move", "the"] and len(words) == 5:
        return "translate_object", {"color": words[2], "shape": words[3], "direction": words[4]}
    if words[:2] == ["paint", "the"]:
        return "multi_ref_palette_transfer", {"color": words[2], "shape": words[3]}
    raise ValueError(f"unrecognised instruction {text!r}")


def vocabulary_words() -> list[str]:
    words = set()
    for t in TEMPLATES.values():
        words.update(w for w in t.split() if not w.startswith("{"))
    words.update(PALETTE)
    words.update(SHAPES)
    words.update(DIRECTIONS)
    for p in POSITIONS:
        words.update(p.split())
    return sorted(words)


# ---------------------------------------------------------------- datasets

@dataclass(frozen=True)
class ManifestEntry:
    seed: int
    task_id: str
    origin: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    base_seed: int
    version: str = GENERATOR_VERSION

    def counts(self) -> dict[tuple[str, str], int]:
        out: dict[tuple[str, str], int] = {}
        for e in self.entries:
            out[(e.task_id, e.origin)] = out.get((e.task_id, e.origin), 0) + 1
        return out

    def to_text(self) -> str:
        head = [f"# generator_version {self.version}", f"# base_seed {self.base_seed}"]
        return "\n".join(head + [f"{e.seed}\t{e.task_id}\t{e.origin}" for e in self.entries]) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DatasetManifest":
        version, base, entries = GENERATOR_VERSION, 0, []
        for line in text.splitlines():
            if line.startswith("# generator_version"):
                version = line.split()[-1]
            elif line.startswith("# base_seed"):
                base = int(line.split()[-1])
            elif line.strip():
                s, t, o = line.split("\t")
                entries.append(ManifestEntry(int(s), t, o))
        return cls(entries, base, version)

    def split(self) -> tuple["DatasetManifest", "DatasetManifest"]:
        """(train, held_out) by seed parity."""
        tr = [e for e in self.entries if e.seed % 2 == 0]
        te = [e for e in self.entries if e.seed % 2 == 1]
        return DatasetManifest(tr, self.base_seed, self.version), DatasetManifest(te, self.base_seed, self.version)


def sample_seed(base_seed: int, task_id: str, origin: str, index: int) -> int:
    return _derive_seed(base_seed, task_id, origin, index)


def gen_dataset(counts: dict, base_seed: int, video_frames: int = 9,
                materialize: bool = True) -> tuple[DatasetManifest, list[EditSample]]:
    """``counts`` maps task id or (task id, origin) to a count.

    A bare task id uses that task's first supported modality.
    """
    entries = []
    for key in sorted(counts, key=str):
        task_id, origin = key if isinstance(key, tuple) else (key, TASKS[key].modalities[0])
        if counts[key] < 0:
            raise ValueError("counts must be non-negative")
        for i in range(counts[key]):
            entries.append(ManifestEntry(sample_seed(base_seed, task_id, origin, i), task_id, origin))
    manifest = DatasetManifest(entries, base_seed)
    samples = [regenerate(e, video_frames) for e in entries] if materialize else []
    return manifest, samples


def regenerate(entry: ManifestEntry, video_frames: int = 9) -> EditSample:
    return gen_sample(entry.task_id, entry.origin, entry.seed, video_frames)


# ---------------------------------------------------------------- raw clip files

def write_clip(path, clip: VideoClip) -> None:
    """Header of four little-endian int32 (f, c, h, w), then float32 pixels."""
    f, c, h, w = clip.shape
    with open(path, "wb") as fh:
        fh.write(np.array([f, c, h, w], dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(clip.pixels, dtype="<f4").tobytes())


def read_clip(path) -> VideoClip:
    raw = open(path, "rb").read()
    f, c, h, w = np.frombuffer(raw[:16], dtype="<i4")
    px = np.frombuffer(raw[16:], dtype="<f4")
    if px.size != f * c * h * w:
        raise ValueError(f"{path}: pixel count {px.size} does not match header {(f, c, h, w)}")
    return VideoClip(px.reshape(f, c, h, w).copy())
