import json

import numpy as np
import pytest

from editflow import config as config_mod
from editflow.cli import main
from editflow.evaluation import read_samples_csv, task_sr
from editflow.runner import list_checkpoints, load_checkpoint, read_loss_log, train

TINY = {
    "seed": 3,
    "model": {"depth": 1, "d_model": 32, "heads": 2, "d_text": 16},
    "data": {"counts": {"recolor_object": {"image": 6, "video": 4}, "translate_object": {"video": 4},
                        "multi_ref_palette_transfer": {"image": 4}}},
    "train": {"batch_size": 2, "checkpoint_every": 2},
    "stages": [{"stage_id": 1, "image_fraction": 0.8, "tasks": ["recolor_object", "translate_object"], "steps": 4},
               {"stage_id": 2, "image_fraction": 0.7,
                "tasks": ["recolor_object", "translate_object", "multi_ref_palette_transfer"], "steps": 2}],
    "sampler": {"steps": 2},
    "eval": {"per_task": 1, "ablation_ratios": ["1:1", "1:4"]},
}


@pytest.fixture
def run_dir(tmp_path):
    d = tmp_path / "run"
    d.mkdir()
    (d / "config.json").write_text(json.dumps(TINY))
    assert main(["--run-dir", str(d), "gen-data"]) == 0
    return d


def test_gen_data_is_deterministic(run_dir, tmp_path, capsys):
    other = tmp_path / "other"
    other.mkdir()
    (other / "config.json").write_text(json.dumps(TINY))
    main(["--run-dir", str(other), "gen-data"])
    assert (run_dir / "data" / "manifest.txt").read_text() == (other / "data" / "manifest.txt").read_text()
    lines = (run_dir / "data" / "manifest.txt").read_text().splitlines()
    assert lines[0] == "# generator_version 1" and len(lines) == 2 + 18


def test_gen_data_blobs(tmp_path):
    d = tmp_path / "b"
    d.mkdir()
    cfg = dict(TINY, data={"counts": {"remove_object": {"image": 2}}})
    (d / "config.json").write_text(json.dumps(cfg))
    assert main(["--run-dir", str(d), "gen-data", "--blobs"]) == 0
    assert len(list((d / "data").glob("*.raw"))) == 4


def test_train_resume_matches_uninterrupted(run_dir, tmp_path):
    assert main(["--run-dir", str(run_dir), "train", "--until", "3"]) == 0
    # step 3 is not a checkpoint boundary except as the run end
    assert [p.name for p in list_checkpoints(run_dir)] == ["step_000002", "step_000003"]
    assert main(["--run-dir", str(run_dir), "train"]) == 0
    resumed = read_loss_log(run_dir)

    fresh = tmp_path / "fresh"
    fresh.mkdir()
    (fresh / "config.json").write_text(json.dumps(TINY))
    main(["--run-dir", str(fresh), "gen-data"])
    main(["--run-dir", str(fresh), "train"])
    straight = read_loss_log(fresh)
    assert [r[0] for r in resumed] == list(range(6))
    assert resumed == straight
    a, _, meta, _ = load_checkpoint(list_checkpoints(run_dir)[-1])
    b, _, _, _ = load_checkpoint(list_checkpoints(fresh)[-1])
    assert all(a[k].data.tobytes() == b[k].data.tobytes() for k in a)
    assert meta["step"] == 6 and meta["optimizer_step_count"] == 6


def test_loss_log_records_stage_boundary(run_dir):
    main(["--run-dir", str(run_dir), "train"])
    rows = read_loss_log(run_dir)
    assert [r[4] for r in rows] == [1, 1, 1, 1, 2, 2]
    assert rows[0][5] == pytest.approx(0.8) and rows[-1][5] == pytest.approx(0.7)
    assert all(np.isfinite(r[1]) and r[1] > 0 for r in rows)


def test_checkpoint_contents(run_dir):
    main(["--run-dir", str(run_dir), "train", "--until", "2"])
    ck = list_checkpoints(run_dir)[0]
    names = {p.name for p in ck.iterdir()}
    assert {"params.manifest", "params.bin", "optim.manifest", "optim.bin", "vocab.txt", "meta.json"} <= names
    meta = json.loads((ck / "meta.json").read_text())
    assert meta["model"]["d_model"] == 32 and meta["codec"] == {"seed": 0, "p": 8, "s_t": 4, "c": 3}
    params, opt, _, _ = load_checkpoint(ck)
    assert set(opt.m) == set(params)


def test_sample_and_eval(run_dir, capsys):
    main(["--run-dir", str(run_dir), "train"])
    assert main(["--run-dir", str(run_dir), "sample", "--task", "translate_object", "--count", "1"]) == 0
    out = run_dir / "samples"
    assert len(list(out.glob("*.raw"))) == 1 and len(list(out.glob("*.ppm"))) == 9
    ppm = next(out.glob("*.ppm")).read_bytes()
    assert ppm.startswith(b"P6\n16 16\n255\n") and len(ppm) == 13 + 16 * 16 * 3
    assert "psnr" in (out / "samples.log").read_text()

    assert main(["--run-dir", str(run_dir), "eval"]) == 0
    ev = run_dir / "eval"
    reports = read_samples_csv((ev / "samples.csv").read_text())
    assert len(reports) == 4  # one per held-out (task, origin)
    # recomputation from the 6-decimal per-sample table agrees up to that rounding
    rows = [ln.split(",") for ln in (ev / "summary.csv").read_text().splitlines()[1:]]
    again = task_sr(reports)
    assert [r[0] for r in rows] == list(again.per_task)
    for r in rows:
        assert float(r[2]) == pytest.approx(again.per_task[r[0]]["mean_psnr"], abs=1e-5)
        assert int(r[6]) == int(again.per_task[r[0]]["passed"])
    assert f"task_sr {again.task_sr:.6f}" in (ev / "summary.txt").read_text()
    assert (ev / "summary.txt").read_text().startswith("threshold_db 25")


def test_ablate_ratios_rows_and_determinism(run_dir):
    assert main(["--run-dir", str(run_dir), "ablate", "--which", "ratios"]) == 0
    first = (run_dir / "ablation" / "ablation.csv").read_text()
    lines = first.splitlines()
    assert lines[0].startswith("row,image,repeat,noise,stage2,image_fraction")
    assert [ln.split(",")[0] for ln in lines[1:]] == ["ratio_1to1", "ratio_1to4"]
    main(["--run-dir", str(run_dir), "ablate", "--which", "ratios"])
    assert (run_dir / "ablation" / "ablation.csv").read_text() == first


def test_error_exit_codes(tmp_path, capsys):
    d = tmp_path / "e"
    d.mkdir()
    (d / "config.json").write_text(json.dumps({"trian": {}}))
    assert main(["--run-dir", str(d), "gen-data"]) == 2
    assert capsys.readouterr().err.startswith("error config:")

    (d / "config.json").write_text(json.dumps(TINY))
    assert main(["--run-dir", str(d), "train"]) == 5
    assert "gen-data" in capsys.readouterr().err
    assert main(["--run-dir", str(d), "eval"]) == 4
    assert main(["--run-dir", str(d), "sample", "--checkpoint", "nope"]) == 4
    assert main(["--run-dir", str(d), "--config", str(d / "missing.json"), "gen-data"]) == 3


@pytest.mark.parametrize("bad, where", [
    ({"model": {"width": 3}}, "model"),
    ({"train": {"batch": 3}}, "train"),
    ({"stages": [{"stage_id": 1, "image_fraction": 0.5, "tasks": [], "steps": 1, "extra": 1}]}, "stages[0]"),
    ({"data": {"counts": {"nope": {"image": 1}}}}, "unknown task"),
    ({"data": {"counts": {"translate_object": {"image": 1}}}}, "no image"),
    ({"train": {"repeat_n": 10}}, "repeat_n"),
    ({"data": {"size": 32}}, "size"),
])
def test_config_rejects(bad, where):
    with pytest.raises(config_mod.ConfigError, match=where.replace("[", r"\[").replace("]", r"\]")):
        config_mod.from_dict(bad)


def test_config_roundtrip(tmp_path):
    cfg = config_mod.from_dict(TINY)
    cfg.save(tmp_path / "c.json")
    back = config_mod.load(tmp_path / "c.json")
    assert back.dumps() == cfg.dumps()
    assert config_mod.RunConfig().schedule().total_steps == 2400


def test_train_in_memory_matches_pool_run():
    cfg = config_mod.from_dict(dict(TINY, stages=TINY["stages"][:1]))
    pool = {("recolor_object", "image"): [2, 4], ("recolor_object", "video"): [6],
            ("translate_object", "video"): [8]}
    a = train(cfg, None, pool=pool, checkpoint=False)
    b = train(cfg, None, pool=pool, checkpoint=False)
    assert a.losses == b.losses and len(a.losses) == 4
