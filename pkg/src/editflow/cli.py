"""Command line entry point: gen-data, train, sample, eval, ablate.

All paths are relative to ``--run-dir``. Failures exit non-zero with a single
``error <category>: <message>`` line on stderr.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .ablation import ablation_csv, run_from_dir
from .evaluation import psnr, samples_csv, summary_csv, summary_text, task_sr
from .inference import SamplerConfig, edit, working_clips
from .runner import (CheckpointError, CorpusError, evaluate, held_out, list_checkpoints, load_checkpoint,
                     make_codec, read_corpus, train, write_corpus)
from .synth import regenerate, write_clip

log = logging.getLogger("editflow")

EXIT_CODES = {"config": 2, "io": 3, "checkpoint": 4, "data": 5, "runtime": 1}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        self.category = category
        super().__init__(message)


def _load_config(args) -> config_mod.RunConfig:
    run_dir = Path(args.run_dir)
    path = Path(args.config) if args.config else run_dir / "config.json"
    if args.config or path.exists():
        cfg = config_mod.load(path)
    else:
        cfg = config_mod.RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(run_dir / "config.json")
    return cfg


def _checkpoint(args, run_dir: Path) -> Path:
    if getattr(args, "checkpoint", None):
        p = Path(args.checkpoint)
        p = p if p.is_absolute() else run_dir / p
        if not p.exists():
            raise CheckpointError(f"checkpoint {p} does not exist")
        return p
    ckpts = list_checkpoints(run_dir)
    if not ckpts:
        raise CheckpointError(f"no checkpoints under {run_dir / 'checkpoints'}")
    return ckpts[-1]


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    manifest = write_corpus(cfg, Path(args.run_dir), blobs=args.blobs)
    digest = hashlib.sha256(manifest.to_text().encode()).hexdigest()
    print(f"wrote {len(manifest.entries)} entries, manifest sha256 {digest}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    res = train(cfg, Path(args.run_dir), until=args.until, resume=not args.fresh)
    last = res.losses[-1] if res.losses else float("nan")
    print(f"trained steps {res.start_step}..{res.start_step + len(res.losses)} final loss {last:.6g}")
    return 0


def _ppm(path: Path, frame: np.ndarray) -> None:
    c, h, w = frame.shape
    px = np.clip(np.round(frame.transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
    path.write_bytes(f"P6\n{w} {h}\n255\n".encode() + px.tobytes())


def cmd_sample(args) -> int:
    cfg = _load_config(args)
    run_dir = Path(args.run_dir)
    params, _, _, vocab = load_checkpoint(_checkpoint(args, run_dir))
    entries = held_out(read_corpus(run_dir), cfg.eval.per_task)
    if args.task:
        entries = [e for e in entries if e.task_id == args.task]
    if args.origin:
        entries = [e for e in entries if e.origin == args.origin]
    entries = entries[args.index: args.index + args.count]
    if not entries:
        raise CorpusError("sample selector matched no held-out entries")
    codec = make_codec(cfg)
    out = run_dir / "samples"
    out.mkdir(exist_ok=True)
    lines = []
    for e in entries:
        s = regenerate(e, cfg.data.video_frames)
        sampler = SamplerConfig(cfg.sampler.steps, seed=(cfg.seed * 1_000_003 + e.seed) % 2**63)
        clip = edit(params, cfg.model_config(), s, codec, vocab, sampler, cfg.train.repeat_n, cfg.train.use_repeat)
        _, target = working_clips(s, codec, cfg.train.repeat_n, cfg.train.use_repeat)
        stem = f"{e.task_id}_{e.origin}_{e.seed}"
        write_clip(out / f"{stem}.raw", clip)
        for k, frame in enumerate(clip.pixels):
            _ppm(out / f"{stem}_f{k:02d}.ppm", frame)
        lines.append(f"{stem}\tpsnr\t{psnr(clip, target):.4f}")
        log.info(lines[-1])
    with open(out / "samples.log", "a") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    run_dir = Path(args.run_dir)
    params, _, _, vocab = load_checkpoint(_checkpoint(args, run_dir))
    entries = held_out(read_corpus(run_dir), cfg.eval.per_task)
    reports = evaluate(params, cfg.model_config(), cfg, entries, vocab=vocab)
    bd = task_sr(reports, cfg.eval.threshold_db)
    out = run_dir / "eval"
    out.mkdir(exist_ok=True)
    (out / "samples.csv").write_text(samples_csv(reports))
    (out / "summary.csv").write_text(summary_csv(bd))
    (out / "summary.txt").write_text(summary_text(bd))
    print(summary_text(bd), end="")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    run_dir = Path(args.run_dir)
    rows = run_from_dir(cfg, run_dir, args.which)
    out = run_dir / "ablation"
    out.mkdir(exist_ok=True)
    (out / "ablation.csv").write_text(ablation_csv(rows))
    for r in rows:
        (out / f"{r.grid.name}_summary.csv").write_text(summary_csv(r.breakdown))
    print(ablation_csv(rows), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="editflow", description=__doc__.splitlines()[0])
    ap.add_argument("--run-dir", required=True, help="directory holding config, corpus, checkpoints, reports")
    ap.add_argument("--config", help="JSON run config (default: <run-dir>/config.json, else defaults)")
    ap.add_argument("--seed", type=int, help="override the global seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the synthetic corpus manifest")
    p.add_argument("--blobs", action="store_true", help="also write raw pixel files")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run (or resume) the training schedule")
    p.add_argument("--until", type=int, help="stop after this global step")
    p.add_argument("--fresh", action="store_true", help="ignore existing checkpoints")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="edit held-out samples and dump decoded clips")
    p.add_argument("--checkpoint")
    p.add_argument("--task")
    p.add_argument("--origin", choices=("image", "video"))
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score a checkpoint on the held-out split")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the toggle matrix and mixing-ratio sweep")
    p.add_argument("--which", choices=("all", "toggles", "ratios"), default="all")
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except config_mod.ConfigError as e:
        category, msg = "config", str(e)
    except CheckpointError as e:
        category, msg = "checkpoint", str(e)
    except CorpusError as e:
        category, msg = "data", str(e)
    except OSError as e:
        category, msg = "io", f"{e.filename or ''}: {e.strerror or e}"
    except CliError as e:
        category, msg = e.category, str(e)
    print(f"error {category}: {msg}", file=sys.stderr)
    return EXIT_CODES[category]


if __name__ == "__main__":
    sys.exit(main())
