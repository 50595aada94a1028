"""Chunked behavior-cloning policy with a CVAE latent.

At training time an encoder maps (observation, ground-truth action chunk)
to a Gaussian posterior over a small latent; the decoder maps
(observation, latent sample) back to an action chunk. At inference the
latent is pinned to the prior mean (zero), so acting is fully
deterministic.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn


@dataclass
class PolicyConfig:
    """Shapes and architecture of the encoder/decoder pair.

    ``obs_scale`` and ``chunk_scale`` are fixed per-input divisors applied
    before the networks (unit normalization of raw observations and action
    chunks); they are part of the architecture and travel with
    checkpoints. Network outputs stay in raw action units.
    """

    obs_dim: int
    action_dim: int
    chunk_k: int = 8
    latent_dim: int = 4
    encoder_hidden: tuple[int, ...] = (64, 64)
    decoder_hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    replan_every: int | None = None  # None: execute the full chunk open loop
    obs_features: str = "raw"
    obs_scale: tuple[float, ...] | None = None
    chunk_scale: float = 1.0

    def __post_init__(self):
        if self.chunk_k < 1 or self.latent_dim < 1:
            raise ValueError("chunk_k and latent_dim must be >= 1")
        if self.obs_dim < 1 or self.action_dim < 1:
            raise ValueError("obs_dim and action_dim must be >= 1")
        self.encoder_hidden = tuple(int(w) for w in self.encoder_hidden)
        self.decoder_hidden = tuple(int(w) for w in self.decoder_hidden)
        if self.replan_every is not None and not 1 <= self.replan_every <= self.chunk_k:
            raise ValueError("replan_every must lie in [1, chunk_k]")
        if self.obs_features not in ("raw", "trig"):
            raise ValueError("obs_features must be 'raw' or 'trig'")
        if self.obs_features == "trig" and self.obs_dim != self.action_dim + 2:
            raise ValueError("trig features expect observations of joint angles plus a 2-D goal")
        if self.obs_scale is not None:
            self.obs_scale = tuple(float(s) for s in self.obs_scale)
            if len(self.obs_scale) != self.obs_dim or any(s <= 0 for s in self.obs_scale):
                raise ValueError("obs_scale must hold one positive divisor per obs dim")
        if self.chunk_scale <= 0:
            raise ValueError("chunk_scale must be > 0")

    @property
    def feature_dim(self) -> int:
        if self.obs_features == "trig":
            return 2 * self.action_dim + 2
        return self.obs_dim

    def features(self, obs: np.ndarray) -> np.ndarray:
        """Fixed input transform applied before both networks.

        ``raw`` divides by ``obs_scale``; ``trig`` maps joint angles to
        cos/sin of their cumulative sums (the chain's natural coordinates)
        and keeps the scaled goal. Constant w.r.t. parameters, so no
        gradient flows through it.
        """
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(f"observation width {obs.shape[-1]} != obs_dim {self.obs_dim}")
        if self.obs_features == "raw":
            if self.obs_scale is None:
                return obs
            return obs / np.asarray(self.obs_scale)
        angles = obs[..., : self.action_dim]
        goal = obs[..., self.action_dim :]
        if self.obs_scale is not None:
            goal = goal / np.asarray(self.obs_scale[self.action_dim :])
        cum = np.cumsum(angles, axis=-1)
        return np.concatenate([np.cos(cum), np.sin(cum), goal], axis=-1)

    @property
    def chunk_size(self) -> int:
        return self.chunk_k * self.action_dim

    def encoder_spec(self) -> nn.MlpSpec:
        widths = (self.feature_dim + self.chunk_size, *self.encoder_hidden, 2 * self.latent_dim)
        return nn.MlpSpec(widths, self.activation)

    def decoder_spec(self) -> nn.MlpSpec:
        widths = (self.feature_dim + self.latent_dim, *self.decoder_hidden, self.chunk_size)
        return nn.MlpSpec(widths, self.activation)

    def to_dict(self) -> dict:
        return {
            "obs_dim": self.obs_dim,
            "action_dim": self.action_dim,
            "chunk_k": self.chunk_k,
            "latent_dim": self.latent_dim,
            "encoder_hidden": list(self.encoder_hidden),
            "decoder_hidden": list(self.decoder_hidden),
            "activation": self.activation,
            "replan_every": self.replan_every,
            "obs_features": self.obs_features,
            "obs_scale": None if self.obs_scale is None else list(self.obs_scale),
            "chunk_scale": self.chunk_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown policy config keys: {unknown}")
        kwargs = dict(d)
        for key in ("encoder_hidden", "decoder_hidden"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if kwargs.get("obs_scale") is not None:
            kwargs["obs_scale"] = tuple(kwargs["obs_scale"])
        return cls(**kwargs)


@dataclass
class LatentStats:
    """Gaussian posterior parameters; both arrays share the latent width."""

    mu: np.ndarray
    logvar: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.logvar = np.asarray(self.logvar, dtype=np.float64)
        if self.mu.shape != self.logvar.shape:
            raise ValueError("mu and logvar must share a shape")
        if not np.all(np.isfinite(self.logvar)):
            raise ValueError("logvar must be finite")


def _flatten_chunk(cfg: PolicyConfig, chunk: np.ndarray) -> np.ndarray:
    chunk = np.asarray(chunk, dtype=np.float64)
    if chunk.ndim == 2:
        if chunk.shape != (cfg.chunk_k, cfg.action_dim):
            raise ValueError(
                f"chunk must have shape ({cfg.chunk_k}, {cfg.action_dim}), got {chunk.shape}"
            )
        return chunk.reshape(-1)
    if chunk.ndim == 3:
        if chunk.shape[1:] != (cfg.chunk_k, cfg.action_dim):
            raise ValueError(
                f"chunk batch must have shape (B, {cfg.chunk_k}, {cfg.action_dim}), "
                f"got {chunk.shape}"
            )
        return chunk.reshape(chunk.shape[0], -1)
    raise ValueError(f"chunk must be 2-D or 3-D, got ndim={chunk.ndim}")


def encode(
    params: nn.ParamVector,
    cfg: PolicyConfig,
    obs: np.ndarray,
    chunk: np.ndarray,
) -> LatentStats:
    """Posterior (mu, logvar) from the concatenated observation and chunk.

    Accepts a single (obs, chunk) pair or a batch; masked chunk entries are
    expected to be zeroed by the batch sampler.
    """
    obs = np.asarray(obs, dtype=np.float64)
    flat = _flatten_chunk(cfg, chunk)
    x = np.concatenate([cfg.features(obs), flat / cfg.chunk_scale], axis=-1)
    out, _ = nn.forward(params, cfg.encoder_spec(), x)
    mu, logvar = np.split(out, 2, axis=-1)
    return LatentStats(mu=mu, logvar=logvar)


def reparameterize(stats: LatentStats, rng: np.random.Generator) -> np.ndarray:
    """Sample z = mu + exp(logvar/2) * n with n drawn from the given stream."""
    noise = rng.standard_normal(stats.mu.shape)
    return stats.mu + np.exp(0.5 * stats.logvar) * noise


def decode(
    params: nn.ParamVector,
    cfg: PolicyConfig,
    obs: np.ndarray,
    z: np.ndarray,
) -> np.ndarray:
    """Action chunk(s) from observation and latent: (..., k, action_dim)."""
    obs = np.asarray(obs, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    x = np.concatenate([cfg.features(obs), z], axis=-1)
    out, _ = nn.forward(params, cfg.decoder_spec(), x)
    if out.ndim == 1:
        return out.reshape(cfg.chunk_k, cfg.action_dim)
    return out.reshape(out.shape[0], cfg.chunk_k, cfg.action_dim)


def act(params: nn.ParamVector, cfg: PolicyConfig, obs: np.ndarray) -> np.ndarray:
    """Inference-time chunk: decode with the latent at the prior mean (zero)."""
    obs = np.asarray(obs, dtype=np.float64)
    z = np.zeros(obs.shape[:-1] + (cfg.latent_dim,))
    return decode(params, cfg, obs, z)


@dataclass
class Policy:
    """Parameter bundle plus convenience plumbing for rollouts and files."""

    cfg: PolicyConfig
    encoder: nn.ParamVector
    decoder: nn.ParamVector

    @classmethod
    def init(cls, cfg: PolicyConfig, seed: int) -> "Policy":
        enc_seed, dec_seed = _network_seeds(seed)
        return cls(
            cfg=cfg,
            encoder=nn.init_params(cfg.encoder_spec(), enc_seed),
            decoder=nn.init_params(cfg.decoder_spec(), dec_seed),
        )

    def action_source(self) -> Callable[[np.ndarray], np.ndarray]:
        """Chunk-producing callable for the simulator's episode runner."""

        def source(obs: np.ndarray) -> np.ndarray:
            return act(self.decoder, self.cfg, obs)

        return source


def _network_seeds(seed: int) -> tuple[int, int]:
    children = np.random.SeedSequence(seed).spawn(2)
    return (
        int(children[0].generate_state(1)[0]),
        int(children[1].generate_state(1)[0]),
    )


def save_checkpoint(policy: Policy, directory, seed: int, steps: int) -> None:
    """Checkpoint directory: policy-config header plus one file per network."""
    os.makedirs(directory, exist_ok=True)
    header = {"schema_version": 1, "policy": policy.cfg.to_dict(), "seed": int(seed), "steps": int(steps)}
    with open(os.path.join(directory, "policy.json"), "w", encoding="utf-8") as fh:
        json.dump(header, fh, separators=(",", ":"))
        fh.write("\n")
    nn.save_params(
        os.path.join(directory, "encoder.params.json"),
        policy.cfg.encoder_spec(), policy.encoder, seed, steps,
    )
    nn.save_params(
        os.path.join(directory, "decoder.params.json"),
        policy.cfg.decoder_spec(), policy.decoder, seed, steps,
    )


def load_checkpoint(directory) -> tuple[Policy, int, int]:
    """Load a checkpoint directory; returns ``(policy, seed, steps)``."""
    header_path = os.path.join(directory, "policy.json")
    if not os.path.exists(header_path):
        raise FileNotFoundError(f"no policy checkpoint at {directory}")
    with open(header_path, "r", encoding="utf-8") as fh:
        header = json.load(fh)
    cfg = PolicyConfig.from_dict(header["policy"])
    enc_spec, enc_params, _, _ = nn.load_params(os.path.join(directory, "encoder.params.json"))
    dec_spec, dec_params, _, _ = nn.load_params(os.path.join(directory, "decoder.params.json"))
    if enc_spec != cfg.encoder_spec() or dec_spec != cfg.decoder_spec():
        raise ValueError(f"{directory}: network files do not match the policy header")
    policy = Policy(cfg=cfg, encoder=enc_params, decoder=dec_params)
    return policy, header["seed"], header["steps"]
