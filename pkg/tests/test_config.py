"""Config parsing, validation and hashing."""

import json

import pytest

from ecglab.config import RunConfig, config_hash, write_run_manifest
from ecglab.errors import ConfigError


def test_defaults_match_reference_setup():
    cfg = RunConfig()
    assert cfg.window == 512
    assert cfg.rate_hz == 250.0
    assert cfg.base_channels == 16
    assert cfg.epochs == 300
    assert cfg.batch == 1000
    assert cfg.lr == 1e-3
    assert cfg.weight_decay == 1e-5
    assert cfg.diff_channels == 64
    assert cfg.gru_layers == 16
    assert cfg.diffusion_steps == 1000
    assert cfg.beta_start == 1e-4 and cfg.beta_end == 0.02
    assert cfg.fid_components == 32
    assert cfg.dtw_pairs == 500
    assert cfg.welch_nperseg == 256
    assert cfg.augment_count == 900


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown config keys.*widnow"):
        RunConfig.from_dict({"widnow": 256})


def test_validation_messages():
    with pytest.raises(ConfigError, match="window"):
        RunConfig.from_dict({"window": 13})
    with pytest.raises(ConfigError, match="split"):
        RunConfig.from_dict({"split": 1.5})
    with pytest.raises(ConfigError, match="betas"):
        RunConfig.from_dict({"beta_start": 0.5, "beta_end": 0.1})


def test_from_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"window": 128, "epochs": 2}))
    cfg = RunConfig.from_file(p)
    assert cfg.window == 128 and cfg.epochs == 2
    assert cfg.batch == 1000  # untouched default

    p.write_text("{not json")
    with pytest.raises(ConfigError, match="bad config JSON"):
        RunConfig.from_file(p)
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        RunConfig.from_file(p)


def test_noverlap_zero_means_half_window():
    assert RunConfig().noverlap is None  # callers then use nperseg // 2
    assert RunConfig(welch_noverlap=64).noverlap == 64


def test_config_hash_canonical():
    a = RunConfig(window=128)
    b = RunConfig(window=128)
    c = RunConfig(window=256)
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)
    assert len(config_hash(a)) == 64


def test_run_manifest_records_inputs(tmp_path):
    src = tmp_path / "in.txt"
    src.write_text("hello")
    man_path = tmp_path / "run.json"
    man = write_run_manifest(man_path, "prepare", RunConfig(), [str(src)],
                             extra={"note": 1})
    back = json.loads(man_path.read_text())
    assert back == man
    assert back["command"] == "prepare"
    assert back["note"] == 1
    assert back["backend"] in ("fast", "numpy")
    assert len(back["inputs"][str(src)]) == 64
    assert back["config"]["window"] == 512
