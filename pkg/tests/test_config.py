from pathlib import Path

import pytest

from gpslio.config import ConfigError, RunConfig, load_config
from gpslio.pipeline import PipelineConfig
from gpslio.simulator import Scenario

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_default_file_matches_dataclass_defaults():
    cfg = load_config(CONFIGS / "default.ini")
    assert cfg.scenario == Scenario()
    assert cfg.pipeline == PipelineConfig()
    assert cfg.paths.log.endswith("default.jsonl")


def test_campus_like_file_loads():
    cfg = load_config(CONFIGS / "campus_like.ini")
    assert cfg.scenario.trajectory_kind == "figure_eight"
    assert cfg.scenario.lio_drift_rate == 0.005
    assert len(cfg.scenario.dropout_windows) == 2


def test_no_file_gives_defaults():
    assert load_config(None) == RunConfig()


def _write(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    return p


@pytest.mark.parametrize("text", [
    "[scenario]\nbogus = 1\n",
    "[nonsense]\n",
    "[gate]\nthresholds = 1,2\n",
    "[gate]\nthresholds = 1,-2,3\n",
    "[filter]\nq_diag = 1,2,3\n",
    "[scenario]\nduration = abc\n",
    "[scenario]\ndropout_windows = 5-6\n",
    "[gate]\nmode = magic\n",
    "[evaluation]\ntolerance = 0\n",
    "no section header\n",
])
def test_invalid_configs_raise(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, text))


def test_partial_overrides(tmp_path):
    cfg = load_config(_write(tmp_path, "[scenario]\nseed = 5\nrate_lio = 10\n[gate]\nretro_anchor = yes\n"))
    assert cfg.scenario.seed == 5
    assert cfg.scenario.sample_rates["lio"] == 10.0
    assert cfg.pipeline.retro_anchor
    assert cfg.scenario.duration == Scenario().duration
