"""Training loop: sample chunks, differentiate the objective, step Adam.

The gradient path runs pred -> decoder -> latent sample -> encoder by
hand-chained reverse mode. The curriculum weight is treated as a constant
of each step (a schedule, not a differentiable term), so the analytic
gradient of the remaining objective is exact and finite-difference
checkable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import loss as loss_mod
from . import nn
from .config import RunConfig
from .data import ChunkBatch, DemoDataset, sample_batch
from .policy import LatentStats, Policy, PolicyConfig

VARIANTS = ("act", "acorn")


class TrainingError(RuntimeError):
    """Training aborted; carries the step index that produced the failure."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


def objective_and_grads(
    encoder: nn.ParamVector,
    decoder: nn.ParamVector,
    pcfg: PolicyConfig,
    lcfg: loss_mod.LossConfig,
    batch: ChunkBatch,
    latent_noise: np.ndarray,
    negatives: np.ndarray | None,
    reconstruction: str = "huber",
    lambda_c: float | None = None,
    schedule: Callable[[float], float] | None = None,
) -> tuple[loss_mod.LossBreakdown, nn.ParamVector, nn.ParamVector]:
    """Full objective plus exact gradients for both networks.

    ``latent_noise`` supplies the reparameterization draws (B, latent_dim)
    so the function is deterministic. ``negatives=None`` trains the plain
    reconstruction+KL baseline. The contrastive weight comes from
    ``lambda_c`` if given, else ``schedule(baseline)``, else the curriculum
    applied to the raw batch baseline; it is constant w.r.t. parameters.
    """
    obs = batch.observations
    gt = batch.target_chunks
    mask = batch.mask
    b = obs.shape[0]

    enc_spec = pcfg.encoder_spec()
    dec_spec = pcfg.decoder_spec()
    obs_feat = pcfg.features(obs)
    x_enc = np.concatenate([obs_feat, gt.reshape(b, -1) / pcfg.chunk_scale], axis=1)
    enc_out, enc_tape = nn.forward(encoder, enc_spec, x_enc)
    mu, logvar = np.split(enc_out, 2, axis=1)
    stats = LatentStats(mu=mu, logvar=logvar)

    std = np.exp(0.5 * logvar)
    z = mu + std * latent_noise
    x_dec = np.concatenate([obs_feat, z], axis=1)
    dec_out, dec_tape = nn.forward(decoder, dec_spec, x_dec)
    pred = dec_out.reshape(b, pcfg.chunk_k, pcfg.action_dim)

    if reconstruction == "huber":
        recon_val, recon_grad = loss_mod.huber_with_grad(pred, gt, mask, lcfg.huber_delta)
    elif reconstruction == "l1":
        recon_val, recon_grad = loss_mod.l1_with_grad(pred, gt, mask)
    else:
        raise ValueError(f"unknown reconstruction loss {reconstruction!r}")
    kl_val, dmu_kl, dlogvar_kl = loss_mod.kl_with_grad(stats)
    baseline = recon_val + lcfg.lambda_kl * kl_val

    if negatives is None:
        contrast_val = 0.0
        contrast_grad = np.zeros_like(pred)
        weight = 0.0 if lambda_c is None else float(lambda_c)
    else:
        contrast_val, contrast_grad = loss_mod.contrastive_with_grad(
            pred, gt, negatives, mask, lcfg.alpha
        )
        if lambda_c is not None:
            weight = float(lambda_c)
        elif schedule is not None:
            weight = float(schedule(baseline))
        else:
            weight = loss_mod.curriculum_weight(baseline, lcfg.curriculum_k)

    total = baseline + weight * contrast_val
    if not np.isfinite(total):
        raise FloatingPointError("objective is non-finite")
    breakdown = loss_mod.LossBreakdown(
        huber=recon_val,
        kl=kl_val,
        contrastive=contrast_val,
        lambda_c=weight,
        baseline=baseline,
        total=total,
    )

    dpred = recon_grad + weight * contrast_grad
    grad_dec, d_xdec = nn.backward(decoder, dec_spec, dec_tape, dpred.reshape(b, -1))
    dz = d_xdec[:, pcfg.feature_dim :]
    dmu = dz + lcfg.lambda_kl * dmu_kl
    dlogvar = dz * 0.5 * std * latent_noise + lcfg.lambda_kl * dlogvar_kl
    grad_enc, _ = nn.backward(encoder, enc_spec, enc_tape, np.concatenate([dmu, dlogvar], axis=1))
    return breakdown, grad_enc, grad_dec


def draw_negatives(
    chunks: np.ndarray,
    lcfg: loss_mod.LossConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-sample negatives (B, M, k, a); sigma drawn uniformly per negative."""
    b = chunks.shape[0]
    m = lcfg.negatives_per_sample
    out = np.zeros((b, m) + chunks.shape[1:])
    levels = lcfg.neg_sigma_levels
    for i in range(b):
        for j in range(m):
            sigma = levels[int(rng.integers(len(levels)))]
            out[i, j] = loss_mod.generate_negative(chunks[i], sigma, lcfg.neg_eps_std, rng)
    return out


@dataclass
class TrainResult:
    policy: Policy
    history: list[tuple[int, loss_mod.LossBreakdown]]

    @property
    def final_loss(self) -> float:
        return self.history[-1][1].total

    @property
    def initial_loss(self) -> float:
        return self.history[0][1].total


def train_policy(run: RunConfig, ds: DemoDataset, variant: str) -> TrainResult:
    """Train one policy; deterministic per ``run.train.seed``.

    ``variant='act'`` optimizes reconstruction+KL only (contrastive weight
    identically zero); ``'acorn'`` adds the curriculum-weighted contrastive
    term against freshly perturbed negatives.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    pcfg = run.policy_config()
    lcfg = run.loss
    tcfg = run.train
    policy = Policy.init(pcfg, tcfg.seed)

    def lr_at(step: int) -> float:
        if tcfg.lr_final is None:
            return tcfg.lr
        return tcfg.lr * (tcfg.lr_final / tcfg.lr) ** (step / tcfg.steps)

    enc_state = nn.AdamState.zeros(policy.encoder.flat.size)
    dec_state = nn.AdamState.zeros(policy.decoder.flat.size)

    rng_batch = np.random.default_rng(np.random.SeedSequence([tcfg.seed, 1]))
    rng_latent = np.random.default_rng(np.random.SeedSequence([tcfg.seed, 2]))
    rng_neg = np.random.default_rng(np.random.SeedSequence([tcfg.seed, 3]))
    reconstruction = "l1" if tcfg.l1_baseline else "huber"

    smoothed: float | None = None

    def schedule(baseline: float) -> float:
        nonlocal smoothed
        if smoothed is None or lcfg.lb_smoothing == 0.0:
            smoothed = baseline
        else:
            smoothed = lcfg.lb_smoothing * smoothed + (1.0 - lcfg.lb_smoothing) * baseline
        return loss_mod.curriculum_weight(smoothed, lcfg.curriculum_k)

    history: list[tuple[int, loss_mod.LossBreakdown]] = []
    for step in range(1, tcfg.steps + 1):
        batch = sample_batch(ds, tcfg.batch_size, pcfg.chunk_k, rng_batch)
        latent_noise = rng_latent.standard_normal((tcfg.batch_size, pcfg.latent_dim))
        negatives = draw_negatives(batch.target_chunks, lcfg, rng_neg) if variant == "acorn" else None
        try:
            breakdown, grad_enc, grad_dec = objective_and_grads(
                policy.encoder,
                policy.decoder,
                pcfg,
                lcfg,
                batch,
                latent_noise,
                negatives,
                reconstruction=reconstruction,
                schedule=schedule if variant == "acorn" else None,
            )
        except FloatingPointError as exc:
            raise TrainingError(step, str(exc)) from exc
        adam_cfg = nn.AdamConfig(
            lr=lr_at(step), beta1=tcfg.beta1, beta2=tcfg.beta2, eps=tcfg.adam_eps
        )
        policy.encoder, enc_state = nn.adam_step(policy.encoder, grad_enc, enc_state, adam_cfg)
        policy.decoder, dec_state = nn.adam_step(policy.decoder, grad_dec, dec_state, adam_cfg)
        history.append((step, breakdown))
    return TrainResult(policy=policy, history=history)


def write_history_csv(history: list[tuple[int, loss_mod.LossBreakdown]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(loss_mod.LossBreakdown.CSV_FIELDS))
        fh.write("\n")
        for step, breakdown in history:
            fh.write(breakdown.csv_row(step))
            fh.write("\n")
