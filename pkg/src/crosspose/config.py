"""Declarative run configuration: one YAML file drives a whole training
run, so ablation grids are diffable files. Every config hashes to a
stable fingerprint that run manifests record next to parameter checksums,
making reruns byte-comparable.

The ``data`` section maps each role (human, animal, target_unlabeled,
eval) either to an annotation file (``file``/``image_root``) or to inline
synthetic domain specs (``synth`` for one spec, ``synth_mix`` for a
merged list), which generate deterministically from their seeds.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .datasets import AnnotationSet, parse_annotations
from .errors import ConfigError
from .losses import LossConfig
from .network import ModelConfig
from .pplo import PPLOConfig
from .synthetic import SynthDomainSpec, generate_domain
from .training import BatchComposition, Stage, StageSchedule


@dataclass
class AdaptationConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    stages: StageSchedule = field(default_factory=StageSchedule)
    batch: BatchComposition = field(default_factory=BatchComposition)
    pplo: PPLOConfig = field(default_factory=PPLOConfig)
    sigma: float = 2.0
    seed: int = 0
    steps_per_epoch: int | None = None
    checkpoint_every: int = 0
    pplo_epochs: int = 30
    data: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"]["stage_channels"] = list(self.model.stage_channels)
        d["model"]["head_channels"] = list(self.model.head_channels)
        d["batch"]["fractions"] = list(self.batch.fractions)
        return d

    @staticmethod
    def from_dict(d: dict) -> "AdaptationConfig":
        d = dict(d)
        known = {f.name for f in fields(AdaptationConfig)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        if "model" in d:
            kwargs["model"] = ModelConfig(**d.pop("model"))
        if "loss" in d:
            kwargs["loss"] = LossConfig(**d.pop("loss"))
        if "stages" in d:
            sd = dict(d.pop("stages"))
            stages = [Stage(**s) for s in sd.pop("stages", [])]
            kwargs["stages"] = StageSchedule(stages=stages, **sd) if stages else StageSchedule(**sd)
        if "batch" in d:
            kwargs["batch"] = BatchComposition(**d.pop("batch"))
        if "pplo" in d:
            kwargs["pplo"] = PPLOConfig(**d.pop("pplo"))
        kwargs.update(d)
        return AdaptationConfig(**kwargs)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path) -> AdaptationConfig:
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    except OSError as e:
        raise ConfigError(f"{path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return AdaptationConfig.from_dict(raw)


def save_config(config: AdaptationConfig, path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(config.to_dict(), f, sort_keys=True)


def apply_overrides(config: AdaptationConfig, overrides: list[str]) -> AdaptationConfig:
    """Apply dotted key=value pairs (e.g. ``loss.w2=1``) on top of a config."""
    d = config.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"override {key!r}: no such config section {p!r}")
            node = node[p]
        if parts[-1] not in node and parts[0] != "data":
            raise ConfigError(f"override {key!r}: no such key")
        node[parts[-1]] = yaml.safe_load(value)
    return AdaptationConfig.from_dict(d)


def load_dataset(entry: dict, labeled: bool = True) -> AnnotationSet:
    """Materialize one data role from its config entry."""
    if not isinstance(entry, dict):
        raise ConfigError(f"data entry must be a mapping, got {type(entry).__name__}")
    if "file" in entry:
        return parse_annotations(entry["file"], image_root=entry.get("image_root"))
    if "synth" in entry:
        return generate_domain(SynthDomainSpec(**entry["synth"]), labeled=labeled)
    if "synth_mix" in entry:
        sets = [generate_domain(SynthDomainSpec(**spec), labeled=labeled)
                for spec in entry["synth_mix"]]
        instances = [inst for s in sets for inst in s.instances]
        return AnnotationSet(instances, sets[0].schema)
    raise ConfigError(f"data entry needs 'file', 'synth' or 'synth_mix': got keys {sorted(entry)}")


@dataclass
class RunManifest:
    """What a finished run consisted of: enough to reproduce and audit it."""

    config_hash: str
    seed: int
    command: str
    datasets: dict
    checkpoints: list[str]
    metric_logs: list[str]
    stage_reached: int
    param_checksum: str
    extras: dict = field(default_factory=dict)

    def save(self, path) -> None:
        for artifact in list(self.checkpoints) + list(self.metric_logs):
            if not Path(artifact).exists():
                raise ConfigError(f"manifest references missing artifact {artifact}")
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=1, sort_keys=True)

    @staticmethod
    def load(path) -> "RunManifest":
        with open(path) as f:
            return RunManifest(**json.load(f))
