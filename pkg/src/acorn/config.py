"""Run configuration: one YAML document with per-module sections.

Every section falls back to desk-scale defaults when omitted. Parsing is
strict: unknown keys anywhere are an error, which guards ablation sweeps
against silently ignored typos.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import yaml

from .data import REFERENCE_SCOPES
from .loss import LossConfig
from .policy import PolicyConfig
from .sim import NOISE_PRESETS, ArmConfig


class ConfigError(ValueError):
    """The run config file is malformed or contains unknown keys."""


def _check_keys(d: dict, cls, section: str) -> dict:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {unknown}")
    return dict(d)


@dataclass
class PolicySection:
    """Architecture knobs; observation/action widths come from the env.

    Desk-scale defaults: relu hidden layers with trig input features fit
    the capped expert controller far more accurately than tanh on raw
    angles (the cap makes the target function kinked), which the success
    tolerance of the reach-and-hold task demands.
    """

    chunk_k: int = 8
    latent_dim: int = 4
    encoder_hidden: tuple[int, ...] = (96, 96, 96)
    decoder_hidden: tuple[int, ...] = (96, 96, 96)
    activation: str = "relu"
    obs_features: str = "trig"
    replan_every: int | None = None

    def __post_init__(self):
        self.encoder_hidden = tuple(int(w) for w in self.encoder_hidden)
        self.decoder_hidden = tuple(int(w) for w in self.decoder_hidden)


@dataclass
class TrainSection:
    """Optimization settings. ``lr_final`` turns on exponential learning
    rate decay from ``lr`` down to that value over the run."""

    steps: int = 60000
    batch_size: int = 32
    seed: int = 0
    lr: float = 1e-3
    lr_final: float | None = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    l1_baseline: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("train.steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.lr_final is not None and not 0 < self.lr_final <= self.lr:
            raise ConfigError("train.lr_final must lie in (0, lr]")


@dataclass
class EvalSection:
    episodes_per_condition: int = 100
    seed: int = 1000
    noise_levels: tuple[str, ...] = ("none", "light", "normal", "heavy")
    tdl_c: float = 2.0
    reference_scope: str = "timestep"

    def __post_init__(self):
        if self.episodes_per_condition < 1:
            raise ConfigError("eval.episodes_per_condition must be >= 1")
        self.noise_levels = tuple(str(l) for l in self.noise_levels)
        unknown = sorted(set(self.noise_levels) - set(NOISE_PRESETS))
        if unknown:
            raise ConfigError(f"unknown eval noise levels: {unknown}")
        if self.reference_scope not in REFERENCE_SCOPES:
            raise ConfigError(f"eval.reference_scope must be one of {REFERENCE_SCOPES}")
        if self.tdl_c <= 0:
            raise ConfigError("eval.tdl_c must be > 0")


@dataclass
class PathsSection:
    """Output locations, resolved relative to the run's --out directory."""

    demos: str = "demos.jsonl"
    checkpoints: str = "checkpoints"
    logs: str = "logs"
    reports: str = "reports"


@dataclass
class RunConfig:
    env: ArmConfig = field(default_factory=ArmConfig)
    policy: PolicySection = field(default_factory=PolicySection)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def policy_config(self) -> PolicyConfig:
        angle_scale = [max(abs(lo), abs(hi)) for lo, hi in self.env.joint_limits]
        reach = float(sum(self.env.link_lengths))
        return PolicyConfig(
            obs_dim=self.env.obs_dim,
            action_dim=self.env.n_joints,
            chunk_k=self.policy.chunk_k,
            latent_dim=self.policy.latent_dim,
            encoder_hidden=self.policy.encoder_hidden,
            decoder_hidden=self.policy.decoder_hidden,
            activation=self.policy.activation,
            replan_every=self.policy.replan_every,
            obs_features=self.policy.obs_features,
            obs_scale=tuple(angle_scale) + (reach, reach),
            chunk_scale=self.env.action_cap,
        )

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("run config must be a mapping of sections")
        sections = {"env", "policy", "loss", "train", "eval", "paths"}
        unknown = sorted(set(raw) - sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {unknown}")
        try:
            env = ArmConfig.from_dict(raw.get("env", {}) or {})
            loss_cfg = LossConfig.from_dict(raw.get("loss", {}) or {})
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        policy = PolicySection(**_check_keys(raw.get("policy", {}) or {}, PolicySection, "policy"))
        train = TrainSection(**_check_keys(raw.get("train", {}) or {}, TrainSection, "train"))
        eval_ = EvalSection(**_check_keys(raw.get("eval", {}) or {}, EvalSection, "eval"))
        paths = PathsSection(**_check_keys(raw.get("paths", {}) or {}, PathsSection, "paths"))
        return cls(env=env, policy=policy, loss=loss_cfg, train=train, eval=eval_, paths=paths)

    @classmethod
    def load(cls, path=None) -> "RunConfig":
        """Parse a YAML run config; all defaults when ``path`` is None."""
        if path is None:
            return cls()
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = yaml.safe_load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        return cls.from_dict(raw or {})

    def with_seed(self, seed: int) -> "RunConfig":
        """Override both the training and evaluation master seeds."""
        return replace(
            self,
            train=replace(self.train, seed=seed),
            eval=replace(self.eval, seed=seed),
        )
