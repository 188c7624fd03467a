import json

import pytest

from avua.config import RunConfig, build_backend, build_toolbox
from avua.errors import ConfigError
from avua.gateway import ScriptedBackend
from avua.sim import SimulatedBackend

from tests.conftest import FIXTURES


def test_defaults():
    cfg = RunConfig()
    assert cfg.budgets.max_steps == 15 and cfg.budgets.max_trials == 2 and cfg.budgets.sampler_cap == 16
    assert cfg.agent_config().max_trials == 2 and cfg.ablation_config.name == "ours"


def test_load_from_env(tmp_path, monkeypatch):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"ablation": "w/o-sampler", "budgets": {"max_steps": 5}}))
    monkeypatch.setenv("AVUA_CONFIG", str(p))
    cfg = RunConfig.load()
    assert cfg.ablation == "w/o-sampler" and cfg.budgets.max_steps == 5 and cfg.budgets.max_trials == 2


def test_flags_win(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"ablation": "w/o-sampler", "budgets": {"max_steps": 5}}))
    cfg = RunConfig.load(p).with_overrides(ablation="react", max_steps=9, max_trials=None)
    assert cfg.ablation == "react" and cfg.budgets.max_steps == 9 and cfg.budgets.max_trials == 2


@pytest.mark.parametrize("data", [{"bogus": 1}, {"ablation": "w/o-brain"}, {"gateway": {"kind": "psychic"}},
                                  {"toolbox": {"kind": "real"}}, {"budgets": {"max_steps": 0}}])
def test_invalid(tmp_path, data):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(data))
    with pytest.raises(ConfigError):
        RunConfig.load(p)


def test_missing_and_malformed(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        RunConfig.load(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "bad.json")


def test_digest_tracks_content():
    assert RunConfig().digest() == RunConfig().digest()
    assert RunConfig().digest() != RunConfig(ablation="react").digest()


def test_build_backend():
    assert isinstance(build_backend({"kind": "simulated"}), SimulatedBackend)
    assert isinstance(build_backend({"kind": "scripted", "script": "scripts/ego_demo.json"}, FIXTURES),
                      ScriptedBackend)
    with pytest.raises(ConfigError, match="nope.json"):
        build_backend({"kind": "scripted", "script": "nope.json"}, FIXTURES)
    with pytest.raises(ConfigError):
        build_backend({"kind": "scripted"})
    with pytest.raises(ConfigError):
        build_backend({"kind": "remote"})
    with pytest.raises(ConfigError):
        build_backend({"kind": "replay", "session": "missing.jsonl"}, FIXTURES)


def test_build_toolbox():
    box = build_toolbox({"kind": "synthetic"}, "videos/egoschema_demo.json", FIXTURES)
    assert "video_caption" in box
    with pytest.raises(ConfigError):
        build_toolbox({"kind": "synthetic"}, None)
    with pytest.raises(ConfigError):
        build_toolbox({"kind": "synthetic"}, "videos/none.json", FIXTURES)
    with pytest.raises(ConfigError):
        build_toolbox({"kind": "remote"}, None)
