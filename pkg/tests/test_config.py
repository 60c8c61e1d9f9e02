from pathlib import Path

import pytest

from dsduda import config
from dsduda.config import ConfigError

ROOT = Path(__file__).resolve().parents[1]


def test_defaults_round_trip():
    cfg = config.load_text(config.defaults_text())
    assert cfg == config.Config()


def test_every_key_written_and_covered():
    text = config.defaults_text()
    assert [line.split(" = ")[0] for line in text.splitlines()] == config.keys()
    assert config._check_schema_covers_dataclasses()


def test_values_and_overrides():
    cfg = config.load_text(
        "# comment\ntrain.gamma = 2e-3  # trailing\ndata.target.tempo_range = 1.0, 1.4\n"
        "eval.ablations = baseline, dat_and_mim\n",
        {"train.seed": "9"},
    )
    assert cfg.train.gamma == 2e-3
    assert cfg.train.seed == 9
    assert cfg.data.target.tempo_range == (1.0, 1.4)
    assert cfg.eval.ablations == ("baseline", "dat_and_mim")


def test_non_default_round_trip():
    cfg = config.load_text("loss.mi = 0.5\ndata.source.stimulus_mix = 0.2, 0.3, 0.5\nmodel.n_banks = 3\n")
    assert config.load_text(cfg.to_text()) == cfg


def test_all_problems_reported_at_once():
    text = "train.gamma = -1\nbogus.key = 3\nno equals sign\ntrain.epochs = many\nmodel.hidden = 4\nmodel.hidden = 5\n"
    with pytest.raises(ConfigError) as exc:
        config.load_text(text)
    problems = exc.value.problems
    assert len(problems) == 5
    joined = "\n".join(problems)
    for needle in ("train.gamma", "bogus.key: unknown key", "expected 'key = value'", "train.epochs", "duplicate key"):
        assert needle in joined


def test_negative_loss_weight_rejected():
    with pytest.raises(ConfigError, match="loss.mi"):
        config.load_text("loss.mi = -1e-4")


@pytest.mark.parametrize("text,key", [
    ("train.ablation = everything", "train.ablation"),
    ("data.target.stimulus_mix = 0.5, 0.6, 0.1", "data.target.stimulus_mix"),
    ("data.source.tempo_range = 2, 1", "data.source.tempo_range"),
    ("data.modulation_slowdown = 0.5", "data.modulation_slowdown"),
    ("eval.mode = sideways", "eval.mode"),
    ("eval.ablations = baseline, nothing", "eval.ablations"),
])
def test_bad_values_name_their_key(text, key):
    with pytest.raises(ConfigError, match=key):
        config.load_text(text)


def test_within_mode_rejects_uda_ablations():
    with pytest.raises(ConfigError, match="within-domain"):
        config.load_text("eval.mode = within")
    cfg = config.load_text("eval.mode = within\neval.ablations = baseline")
    assert cfg.eval.mode == "within"


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        config.load(tmp_path / "missing.conf")


def test_shipped_experiment_config_loads():
    cfg = config.load(ROOT / "configs" / "experiment.conf")
    assert cfg.eval.rounds == 5
    assert cfg.eval.ablations == ("baseline", "dat_only", "mim_only", "dat_and_mim")
