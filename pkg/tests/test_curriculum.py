import numpy as np
import pytest

from editflow.curriculum import (MIX_RATIOS, SINGLE_REF_TASKS, STAGE1_IMAGE_FRACTION, STAGE2_IMAGE_FRACTION,
                                 Schedule, ScheduleError, StageSpec, default_schedule, next_sample, parse_ratio,
                                 ratio_sweep)
from editflow.synth import MULTI_REF_TASKS


def test_stage_fractions():
    assert STAGE1_IMAGE_FRACTION == pytest.approx(0.851, abs=5e-4)
    assert STAGE2_IMAGE_FRACTION == pytest.approx(0.691, abs=5e-4)


@pytest.mark.parametrize("ratio, frac", [("1:1", 0.5), ("1:2", 2 / 3), ("1:3", 0.75), ("1:4", 0.8),
                                         ((1, 3), 0.75), (0.25, 0.25)])
def test_parse_ratio(ratio, frac):
    assert parse_ratio(ratio) == pytest.approx(frac)


def test_parse_ratio_bad():
    with pytest.raises(ScheduleError):
        parse_ratio("0:0")
    assert MIX_RATIOS == ("1:1", "1:2", "1:3", "1:4")


def test_boundaries_and_stage_at():
    s = default_schedule(stage1_steps=10, stage2_steps=4)
    assert s.total_steps == 14 and s.boundaries() == [0, 10]
    assert s.stage_at(9).stage_id == 1 and s.stage_at(10).stage_id == 2
    with pytest.raises(ScheduleError):
        s.stage_at(14)


def test_multi_ref_only_in_stage_two():
    s = default_schedule(stage1_steps=200, stage2_steps=200)
    first = {next_sample(s, k)[0].task_id for k in range(200)}
    second = {next_sample(s, k)[0].task_id for k in range(200, 400)}
    assert not first & set(MULTI_REF_TASKS)
    assert set(MULTI_REF_TASKS) <= second


def test_image_fraction_empirical():
    s = default_schedule(stage1_steps=4000, stage2_steps=4000)
    n = 4000
    img1 = np.mean([next_sample(s, k)[0].origin == "image" for k in range(n)])
    img2 = np.mean([next_sample(s, k)[0].origin == "image" for k in range(n, 2 * n)])
    for got, p in ((img1, STAGE1_IMAGE_FRACTION), (img2, STAGE2_IMAGE_FRACTION)):
        assert abs(got - p) < 4 * np.sqrt(p * (1 - p) / n)


def test_next_sample_pure_and_even_seeds():
    s = default_schedule(seed=5)
    a = [next_sample(s, k, slot) for k in range(20) for slot in range(3)]
    b = [next_sample(s, k, slot) for k in range(20) for slot in range(3)]
    assert a == b
    assert all(r.seed % 2 == 0 for r, _ in a)


def test_pool_restricts_draws():
    s = Schedule((StageSpec(1, 0.5, SINGLE_REF_TASKS, 50),))
    pool = {("remove_object", "image"): [4, 8], ("translate_object", "video"): [2]}
    for k in range(50):
        ref, _ = next_sample(s, k, 0, pool)
        assert (ref.task_id, ref.origin) in pool and ref.seed in pool[(ref.task_id, ref.origin)]


def test_pool_without_origin_fails():
    s = Schedule((StageSpec(1, 1.0, ("recolor_object",), 5),))
    with pytest.raises(ScheduleError):
        next_sample(s, 0, 0, {("recolor_object", "video"): [2]})


def test_task_weights():
    s = Schedule((StageSpec(1, 1.0, SINGLE_REF_TASKS, 100, task_weights={"global_style_invert": 0.0, "remove_object": 1.0}),))
    assert {next_sample(s, k)[0].task_id for k in range(100)} == {"remove_object"}


@pytest.mark.parametrize("kw", [{"image_fraction": 1.5}, {"steps": 0}, {"tasks": ("nope",)}, {"mask_ratio": 1.0}])
def test_stage_validation(kw):
    base = dict(stage_id=1, image_fraction=0.5, tasks=SINGLE_REF_TASKS, steps=10)
    with pytest.raises(ScheduleError):
        StageSpec(**(base | kw))


def test_ratio_sweep_differs_only_in_fraction():
    runs = ratio_sweep(MIX_RATIOS, steps=10)
    assert [r.stages[0].image_fraction for r in runs] == pytest.approx([0.5, 2 / 3, 0.75, 0.8])
    assert len({(r.stages[0].tasks, r.stages[0].steps, r.seed) for r in runs}) == 1
