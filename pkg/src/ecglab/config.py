"""Run configuration and run manifests.

A RunConfig is a flat bag of knobs shared by all subcommands; JSON
configs may set any subset, and unknown keys are rejected rather than
ignored so typos fail loudly. Every command that writes artifacts also
drops a run manifest recording the exact config, input digests, backend
and package version.
"""

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, fields

from . import __version__, kernels
from .data import sha256_file
from .errors import ConfigError


@dataclass
class RunConfig:
    """Defaults follow the reference training setup; configs/desk.json
    scales everything down to laptop size."""

    seed: int = 0
    # preparation
    records: list = field(default_factory=list)
    dataset_name: str = "dataset"
    classes: list = field(default_factory=list)
    rate_hz: float = 250.0
    window: int = 512
    normalize: bool = True
    split: float = 0.8
    # classifier
    base_channels: int = 16
    se_reduction: int = 8
    epochs: int = 300
    batch: int = 1000
    lr: float = 1e-3
    weight_decay: float = 1e-5
    alpha: float = 1.0
    beta: float = 1.0
    plateau_factor: float = 0.5
    plateau_patience: int = 25
    # diffusion
    diff_channels: int = 64
    gru_layers: int = 16
    heads: int = 4
    time_dim: int = 128
    diffusion_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sample_batch: int = 64
    # metrics
    fid_components: int = 32
    dtw_pairs: int = 500
    welch_nperseg: int = 256
    welch_noverlap: int = 0  # 0 means nperseg // 2
    group_map: str = ""
    # augmentation
    augment_classes: list = field(default_factory=list)
    augment_count: int = 900

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path):
        with open(path) as f:
            try:
                d = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: bad config JSON: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(d)

    def validate(self):
        checks = [
            (self.window >= 2 and self.window % 2 == 0, "window must be even and >= 2"),
            (0.0 < self.split < 1.0, "split must be in (0, 1)"),
            (self.rate_hz > 0, "rate_hz must be positive"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.batch >= 1, "batch must be >= 1"),
            (self.lr > 0, "lr must be positive"),
            (self.weight_decay >= 0, "weight_decay must be >= 0"),
            (self.alpha >= 0 and self.beta >= 0, "task weights must be >= 0"),
            (self.base_channels >= 2 and self.base_channels % 2 == 0,
             "base_channels must be even and >= 2"),
            (self.se_reduction >= 1, "se_reduction must be >= 1"),
            (self.diff_channels >= 1, "diff_channels must be >= 1"),
            (self.gru_layers >= 1, "gru_layers must be >= 1"),
            (self.heads >= 1, "heads must be >= 1"),
            (self.time_dim >= 2 and self.time_dim % 2 == 0,
             "time_dim must be even and >= 2"),
            (self.diffusion_steps >= 1, "diffusion_steps must be >= 1"),
            (0.0 < self.beta_start <= self.beta_end < 1.0,
             "betas must satisfy 0 < start <= end < 1"),
            (self.sample_batch >= 1, "sample_batch must be >= 1"),
            (self.fid_components >= 1, "fid_components must be >= 1"),
            (self.dtw_pairs >= 1, "dtw_pairs must be >= 1"),
            (self.welch_nperseg >= 2, "welch_nperseg must be >= 2"),
            (self.augment_count >= 0, "augment_count must be >= 0"),
            (self.plateau_patience >= 1, "plateau_patience must be >= 1"),
            (0.0 < self.plateau_factor <= 1.0, "plateau_factor must be in (0, 1]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def noverlap(self):
        return self.welch_noverlap if self.welch_noverlap else None


def config_hash(cfg):
    """Stable digest of a config's canonical JSON form."""
    text = json.dumps(asdict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def write_run_manifest(path, command, cfg, inputs, extra=None):
    """Record what produced an output directory: config, input digests, backend."""
    man = {
        "command": command,
        "version": __version__,
        "backend": kernels.backend(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config": asdict(cfg),
        "inputs": {p: sha256_file(p) for p in inputs},
    }
    if extra:
        man.update(extra)
    with open(path, "w") as f:
        json.dump(man, f, indent=2)
        f.write("\n")
    return man
