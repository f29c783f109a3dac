import pytest

from czsl_engine.config import PRESETS, RunConfig, env_overrides
from czsl_engine.errors import ConfigError

from conftest import TINY, tiny_config


def test_defaults_are_valid():
    config = RunConfig()
    config.validate()
    assert config.model.n == 1024 and config.model.d_emb == 300
    assert config.loss.unseen_anchors == "seen_plus_target"
    assert config.optim.decay_epochs == [30, 40]


def test_preset_then_overrides():
    config = tiny_config()
    assert config.model.delta == 20.0
    assert config.model.n0 == 16
    assert config.optim.decay_epochs == []
    assert config.eval.ks == [1, 2]
    assert config.train.epochs == 2


def test_presets_are_complete_configs():
    for name in PRESETS:
        config = RunConfig.from_flat({"train.preset": name})
        assert config.train.preset == name
    assert RunConfig.from_flat({"train.preset": "vaw_czsl"}).eval.ks == [3, 5]


@pytest.mark.parametrize("values", [
    {"train.preset": "imagenet"},
    {"model.width": "3"},
    {"nonsense": "1"},
    {"model": "1"},
    {"model.n": "many"},
    {"eval.dump_curves": "maybe"},
    {"model.ocn_variant": "transformer"},
    {"model.d_emb": "10"},
    {"loss.alpha3": "-1"},
    {"loss.unseen_anchors": "nearest"},
    {"model.ie_dropout": "1.0"},
    {"eval.ks": "0,1"},
    {"model.lam": "0"},
])
def test_invalid_values(values):
    with pytest.raises(ConfigError):
        RunConfig.from_flat(values)


def test_booleans_and_lists():
    config = RunConfig.from_flat({"eval.dump_curves": "yes", "eval.predictions": "off", "optim.decay_epochs": "5, 9"})
    assert config.eval.dump_curves is True
    assert config.eval.predictions is False
    assert config.optim.decay_epochs == [5, 9]


def test_file_round_trip(tmp_path):
    config = tiny_config(**{"data.features": "/tmp/with space/f.oadt"})
    path = tmp_path / "run.cfg"
    config.save(path)
    assert path.read_text().startswith("# czsl-engine run configuration")
    loaded = RunConfig.from_file(path)
    assert loaded.to_flat() == config.to_flat()
    assert loaded.data.features == "/tmp/with space/f.oadt"


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.from_file(tmp_path / "missing.cfg")
    path = tmp_path / "bad.cfg"
    path.write_text("train.preset=synthetic\nmodel.n\n")
    with pytest.raises(ConfigError):
        RunConfig.from_file(path)


def test_flat_view_covers_every_section():
    flat = tiny_config().to_flat()
    for key in TINY:
        assert key in flat
    assert flat["seed"] == "0"
    assert {k.split(".")[0] for k in flat if "." in k} == {"data", "synthetic", "model", "loss", "optim", "train", "eval"}


def test_env_overrides(monkeypatch):
    monkeypatch.setenv("CZSL_WORKERS", "3")
    monkeypatch.setenv("CZSL_OUT_DIR", "")
    monkeypatch.delenv("CZSL_LOG_LEVEL", raising=False)
    assert env_overrides() == {"CZSL_WORKERS": "3"}
