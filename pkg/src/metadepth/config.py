"""Versioned experiment configuration files."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from metadepth.errors import ConfigurationError
from metadepth.evaluation import PROTOCOLS, EvalProtocol
from metadepth.experiments import DESK_META, DESK_SUPERVISED
from metadepth.metainit import (
    GRAD_ACCUM_PRESETS,
    REFERENCE_CONVNEXT,
    REFERENCE_RESNET,
    SIMPLE_PRETRAIN_PRESETS,
    STRATEGIES,
    MetaConfig,
)
from metadepth.numerics.network import DESK_SPEC, NetworkSpec
from metadepth.scenes.generator import SceneGenConfig
from metadepth.trainer import REFERENCE_SUPERVISED, SupervisedConfig

SCHEMA_VERSION = 1
META_PRESETS = {"paper": REFERENCE_RESNET, "paper-convnext": REFERENCE_CONVNEXT, "desk": DESK_META}


@dataclass(frozen=True)
class Stage1:
    strategy: str = "reptile"
    meta: MetaConfig = DESK_META
    pretrain_preset: str = "S1-row-2"
    grad_accum_preset: str = "Setting-1"
    fomaml_meta_lr: float | None = None

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.pretrain_preset not in SIMPLE_PRETRAIN_PRESETS:
            raise ConfigurationError(f"unknown pretraining preset {self.pretrain_preset!r}")
        if self.grad_accum_preset not in GRAD_ACCUM_PRESETS:
            raise ConfigurationError(f"unknown gradient-accumulation preset {self.grad_accum_preset!r}")
        self.meta.validate(allow_zero_steps=self.strategy == "fomaml")

    def to_dict(self):
        return {
            "strategy": self.strategy,
            "meta": self.meta.to_dict(),
            "pretrain_preset": self.pretrain_preset,
            "grad_accum_preset": self.grad_accum_preset,
            "fomaml_meta_lr": self.fomaml_meta_lr,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        _reject_unknown(d, cls.__dataclass_fields__, "stage1")
        if "meta" in d:
            d["meta"] = MetaConfig.from_dict(d["meta"])
        return cls(**d)


def _reject_unknown(d, allowed, where):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigurationError(f"unknown {where} keys: {sorted(unknown)}")


def _protocol_from_dict(d):
    _reject_unknown(d, ("cap", "median_scaling", "name"), "protocol")
    return EvalProtocol(**d)


@dataclass(frozen=True)
class ExperimentConfig:
    generator: SceneGenConfig = field(default_factory=SceneGenConfig)
    network: NetworkSpec = DESK_SPEC
    stage1: Stage1 = field(default_factory=Stage1)
    stage2: SupervisedConfig = DESK_SUPERVISED
    protocol: EvalProtocol = PROTOCOLS["intra"]
    seeds: tuple = (0,)
    output_dir: str = "runs"

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def validate(self):
        self.generator.validate()
        self.network.validate()
        self.stage1.validate()
        self.stage2.validate()
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if self.stage1.meta.depth_range != self.stage2.depth_range:
            raise ConfigurationError("stage-1 and stage-2 depth ranges differ")
        return self

    def to_dict(self):
        return {
            "version": SCHEMA_VERSION,
            "generator": self.generator.to_dict(),
            "network": self.network.to_dict(),
            "stage1": self.stage1.to_dict(),
            "stage2": self.stage2.to_dict(),
            "protocol": self.protocol.to_dict(),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigurationError("config must be a JSON object")
        d = dict(d)
        version = d.pop("version", None)
        if version != SCHEMA_VERSION:
            raise ConfigurationError(f"config version must be {SCHEMA_VERSION}, got {version!r}")
        _reject_unknown(d, cls.__dataclass_fields__, "config")
        kw = {}
        if "generator" in d:
            kw["generator"] = SceneGenConfig.from_dict(d["generator"])
        if "network" in d:
            kw["network"] = NetworkSpec.from_dict(d["network"])
        if "stage1" in d:
            kw["stage1"] = Stage1.from_dict(d["stage1"])
        if "stage2" in d:
            kw["stage2"] = SupervisedConfig.from_dict(d["stage2"])
        if "protocol" in d:
            kw["protocol"] = _protocol_from_dict(d["protocol"])
        for k in ("seeds", "output_dir"):
            if k in d:
                kw[k] = d[k]
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    def digest(self) -> str:
        """Canonical hash; ``output_dir`` is excluded so relocating a run keeps its identity."""
        d = self.to_dict()
        del d["output_dir"]
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def for_seed(self, seed: int) -> ExperimentConfig:
        """Fan a master seed out to the generator, sampler, augmentation and init streams."""
        meta = replace(self.stage1.meta, seed=seed)
        return replace(
            self,
            generator=replace(self.generator, seed=seed),
            stage1=replace(self.stage1, meta=meta),
            stage2=replace(self.stage2, seed=seed),
            seeds=(seed,),
        )

    @property
    def seed(self) -> int:
        return self.seeds[0]

    def with_meta_preset(self, name: str) -> ExperimentConfig:
        if name not in META_PRESETS:
            raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(META_PRESETS)}")
        meta = replace(META_PRESETS[name], seed=self.stage1.meta.seed, depth_range=self.stage2.depth_range)
        stage2 = REFERENCE_SUPERVISED if name.startswith("paper") else self.stage2
        stage2 = replace(stage2, seed=self.stage2.seed, depth_range=self.stage2.depth_range)
        return replace(self, stage1=replace(self.stage1, meta=meta), stage2=stage2)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(data).validate()


def dump_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    return path
