import pytest

from editflow.ablation import ABLATION_COLUMNS, ratio_grid, toggle_grid
from editflow.config import RunConfig
from editflow.curriculum import MIX_RATIOS


def test_toggle_rows():
    rows = toggle_grid(RunConfig())
    assert [(r.image, r.repeat, r.noise, r.stage2) for r in rows] == [
        (False, False, False, False), (True, False, False, False), (True, True, False, False),
        (True, True, True, False), (True, True, True, True)]
    base = rows[0].config
    # all toggles off is the video-only baseline
    assert base.stages[0].image_fraction == 0.0 and len(base.stages) == 1
    assert not base.train.use_repeat and not base.train.use_noise
    assert len(rows[-1].config.stages) == 2
    assert all(r.config.train.init_seed == base.train.init_seed for r in rows)


def test_ratio_rows():
    rows = ratio_grid(RunConfig(), MIX_RATIOS)
    assert [r.name for r in rows] == ["ratio_1to1", "ratio_1to2", "ratio_1to3", "ratio_1to4"]
    assert [r.config.stages[0].image_fraction for r in rows] == pytest.approx([0.5, 2 / 3, 0.75, 0.8])
    assert {r.config.stages[0].steps for r in rows} == {RunConfig().stages[0].steps}


def test_columns_frozen():
    assert ABLATION_COLUMNS[:5] == ("row", "image", "repeat", "noise", "stage2")
    assert "task_sr" in ABLATION_COLUMNS and "dynamics_error" in ABLATION_COLUMNS
