"""Run configuration: one merged, serializable view of every knob.

Any leaf key can be overridden by an environment variable named
RTCABR_<SECTION>_<KEY> (upper-cased), e.g. RTCABR_TRAIN_WORKERS=4.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .codec import CodecConfig
from .controllers import GccConfig
from .errors import ConfigError
from .qoe import NormalizationConfig, RewardWeights

ENV_PREFIX = "RTCABR"


@dataclass
class TrainConfig:
    workers: int = 16
    epochs: int = 20
    episodes_per_epoch: int = 16
    rollout_len: int = 50
    episode_intervals: int = 120
    actor_lr: float = 0.00025
    critic_lr: float = 0.0015
    beta: float = 0.15
    gamma: float = 0.9
    interval_s: float = 0.2            # adaptation granularity; 0.1/0.5/1.0 for ablations
    reward_scale: float = 0.02         # applied to rewards inside training only
    initial_crf: int = 36
    disable_content_factors: bool = False
    session_duration_s: float = 60.0
    checkpoint_every: int = 5
    eval_episodes: int = 4
    seed: int = 0

    def validate(self):
        if self.workers < 1 or self.epochs < 1 or self.rollout_len < 1:
            raise ConfigError("workers, epochs, rollout_len must all be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in [0,1], got {self.gamma}")
        if self.interval_s <= 0:
            raise ConfigError("interval_s must be > 0")


@dataclass
class RunConfig:
    codec: CodecConfig = field(default_factory=CodecConfig)
    weights: RewardWeights = field(default_factory=RewardWeights)
    norms: NormalizationConfig = field(default_factory=NormalizationConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    gcc: GccConfig = field(default_factory=GccConfig)
    seed: int = 0
    max_queue_ms: float = 500.0
    playout_delay_ms: float = 100.0
    traces_dir: str = ""
    profiles_dir: str = ""

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        def build(klass, sub: dict):
            names = {f.name for f in dataclasses.fields(klass)}
            unknown = set(sub) - names
            if unknown:
                raise ConfigError(f"unknown {klass.__name__} keys: {sorted(unknown)}")
            return klass(**sub)

        try:
            cfg = cls(
                codec=build(CodecConfig, d.get("codec", {})),
                weights=build(RewardWeights, d.get("weights", {})),
                norms=build(NormalizationConfig, d.get("norms", {})),
                train=build(TrainConfig, d.get("train", {})),
                gcc=build(GccConfig, d.get("gcc", {})),
                seed=int(d.get("seed", 0)),
                max_queue_ms=float(d.get("max_queue_ms", 500.0)),
                playout_delay_ms=float(d.get("playout_delay_ms", 100.0)),
                traces_dir=str(d.get("traces_dir", "")),
                profiles_dir=str(d.get("profiles_dir", "")),
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None
        cfg.train.validate()
        return cfg

    @classmethod
    def load(cls, path, env: dict | None = None) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as f:
                d = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"malformed config {path}: {e}") from None
        d = apply_env_overrides(d, env if env is not None else os.environ)
        return cls.from_dict(d)


def apply_env_overrides(d: dict, env) -> dict:
    """Overlay RTCABR_<SECTION>_<KEY> (or RTCABR_<KEY> for top-level) values."""
    out = json.loads(json.dumps(d))  # deep copy
    for name, raw in env.items():
        if not name.startswith(ENV_PREFIX + "_"):
            continue
        parts = name[len(ENV_PREFIX) + 1:].lower().split("_", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if len(parts) == 2 and parts[0] in ("codec", "weights", "norms", "train", "gcc"):
            out.setdefault(parts[0], {})[parts[1]] = value
        else:
            out["_".join(parts)] = value
    return out
