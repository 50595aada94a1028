"""Composite training objective for the safety-aware policy.

Pieces: masked Huber regression on predicted action chunks, a KL
regularizer pulling the latent posterior to the standard-normal prior, a
hinge contrastive term that separates predictions from perturbed negative
chunks, and a curriculum schedule that raises the contrastive weight as
the baseline loss falls. Every term comes with an exact analytic gradient
so the whole objective is finite-difference checkable.

Functions accept a single chunk (k, action_dim) or a batch
(B, k, action_dim); batched losses are means over the batch. ``mask``
flags valid chunk entries (padding is masked out) and masked positions
contribute zero to every value and gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .policy import LatentStats

# Curriculum knots: contrastive weight is pinned low while the baseline
# loss exceeds CURRICULUM_HIGH and saturates at 1 below CURRICULUM_LOW.
CURRICULUM_LOW = 1e-3
CURRICULUM_HIGH = 1.0
CURRICULUM_FLOOR = 1e-3


@dataclass
class LossConfig:
    """Objective hyperparameters.

    ``huber_delta`` is the robust-regression threshold and ``neg_eps_std``
    the standard deviation of the additive micro-perturbation used for
    negative samples; they are unrelated quantities despite both being
    small scalars.
    """

    huber_delta: float = 0.124
    lambda_kl: float = 10.0
    alpha: float = 0.01
    curriculum_k: float = 15.0
    neg_sigma_levels: tuple[float, ...] = (0.04, 0.06, 0.08)
    neg_eps_std: float = 1e-5
    lb_smoothing: float = 0.0
    negatives_per_sample: int = 1

    def __post_init__(self):
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be > 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.curriculum_k <= 0:
            raise ValueError("curriculum_k must be > 0")
        if self.neg_eps_std <= 0:
            raise ValueError("neg_eps_std must be > 0")
        self.neg_sigma_levels = tuple(float(s) for s in self.neg_sigma_levels)
        if not self.neg_sigma_levels or any(s <= 0 for s in self.neg_sigma_levels):
            raise ValueError("neg_sigma_levels must be positive")
        if not 0.0 <= self.lb_smoothing < 1.0:
            raise ValueError("lb_smoothing must lie in [0, 1)")
        if self.negatives_per_sample < 1:
            raise ValueError("negatives_per_sample must be >= 1")

    def to_dict(self) -> dict:
        return {
            "huber_delta": self.huber_delta,
            "lambda_kl": self.lambda_kl,
            "alpha": self.alpha,
            "curriculum_k": self.curriculum_k,
            "neg_sigma_levels": list(self.neg_sigma_levels),
            "neg_eps_std": self.neg_eps_std,
            "lb_smoothing": self.lb_smoothing,
            "negatives_per_sample": self.negatives_per_sample,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown loss config keys: {unknown}")
        kwargs = dict(d)
        if "neg_sigma_levels" in kwargs:
            kwargs["neg_sigma_levels"] = tuple(kwargs["neg_sigma_levels"])
        return cls(**kwargs)


@dataclass
class LossBreakdown:
    """Per-step objective components; ``total = baseline + lambda_c * contrastive``."""

    huber: float
    kl: float
    contrastive: float
    lambda_c: float
    baseline: float
    total: float

    CSV_FIELDS = ("step", "huber", "kl", "contrastive", "lambda_c", "baseline", "total")

    def csv_row(self, step: int) -> str:
        vals = (self.huber, self.kl, self.contrastive, self.lambda_c, self.baseline, self.total)
        return ",".join([str(step)] + [repr(float(v)) for v in vals])


def _as_batch(arr: np.ndarray) -> tuple[np.ndarray, bool]:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        return arr[None, ...], True
    if arr.ndim == 3:
        return arr, False
    raise ValueError(f"expected (k, a) or (B, k, a) array, got ndim={arr.ndim}")


def _mask_for(pred: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    """Broadcast a (B, k) step mask to the (B, k, a) chunk shape."""
    if mask is None:
        return np.ones_like(pred, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == pred.ndim - 2:
        mask = mask[None, ...]
    if mask.shape != pred.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match chunks {pred.shape[:2]}")
    return np.broadcast_to(mask[..., None], pred.shape)


def huber_with_grad(
    pred: np.ndarray,
    target: np.ndarray,
    mask: np.ndarray | None,
    delta: float,
) -> tuple[float, np.ndarray]:
    """Masked-mean Huber value and its gradient w.r.t. ``pred``.

    Quadratic inside |r| <= delta, linear outside; the gradient magnitude
    is therefore capped at delta.
    """
    if delta <= 0:
        raise ValueError("delta must be > 0")
    predb, squeeze = _as_batch(pred)
    targetb, _ = _as_batch(target)
    if predb.shape != targetb.shape:
        raise ValueError(f"shape mismatch: {predb.shape} vs {targetb.shape}")
    m = _mask_for(predb, mask)
    count = int(m.sum())
    if count == 0:
        raise ValueError("mask excludes every entry")
    r = predb - targetb
    absr = np.abs(r)
    quad = absr <= delta
    vals = np.where(quad, 0.5 * r * r, delta * absr - 0.5 * delta * delta)
    value = float(vals[m].sum() / count)
    grad = np.where(quad, r, delta * np.sign(r)) * m / count
    return value, (grad[0] if squeeze else grad)


def huber(pred, target, mask=None, delta: float = 0.124) -> float:
    return huber_with_grad(pred, target, mask, delta)[0]


def l1_with_grad(
    pred: np.ndarray,
    target: np.ndarray,
    mask: np.ndarray | None,
) -> tuple[float, np.ndarray]:
    """Masked-mean absolute error; the plain reconstruction alternative."""
    predb, squeeze = _as_batch(pred)
    targetb, _ = _as_batch(target)
    if predb.shape != targetb.shape:
        raise ValueError(f"shape mismatch: {predb.shape} vs {targetb.shape}")
    m = _mask_for(predb, mask)
    count = int(m.sum())
    if count == 0:
        raise ValueError("mask excludes every entry")
    r = predb - targetb
    value = float(np.abs(r)[m].sum() / count)
    grad = np.sign(r) * m / count
    return value, (grad[0] if squeeze else grad)


def kl_with_grad(stats: LatentStats) -> tuple[float, np.ndarray, np.ndarray]:
    """KL(q || N(0, I)) with gradients w.r.t. mu and logvar.

    Per sample 0.5 * sum(exp(logvar) + mu^2 - 1 - logvar); batches are
    averaged.
    """
    mu = np.atleast_2d(stats.mu)
    logvar = np.atleast_2d(stats.logvar)
    b = mu.shape[0]
    ev = np.exp(logvar)
    value = float(0.5 * np.sum(ev + mu * mu - 1.0 - logvar) / b)
    dmu = mu / b
    dlogvar = 0.5 * (ev - 1.0) / b
    if stats.mu.ndim == 1:
        dmu, dlogvar = dmu[0], dlogvar[0]
    return value, dmu, dlogvar


def kl_divergence(stats: LatentStats) -> float:
    return kl_with_grad(stats)[0]


def generate_negative(
    chunk_gt: np.ndarray,
    sigma: float,
    eps_std: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Dual-perturbation negative sample from a ground-truth chunk.

    One scalar standard-normal draw scales the whole chunk by (1 + eta *
    sigma), keeping the perturbation temporally correlated, then
    independent N(0, eps_std^2) micro-noise is added per entry. Draw
    order is fixed: scale first, then the additive field.
    """
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if eps_std <= 0:
        raise ValueError("eps_std must be > 0")
    chunk = np.asarray(chunk_gt, dtype=np.float64)
    eta = rng.standard_normal()
    eps = rng.standard_normal(chunk.shape) * eps_std
    return (1.0 + eta * sigma) * chunk + eps


def contrastive_with_grad(
    pred: np.ndarray,
    pos: np.ndarray,
    neg: np.ndarray,
    mask: np.ndarray | None,
    alpha: float,
) -> tuple[float, np.ndarray]:
    """Hinge margin loss max(0, d+ - d- + alpha) and gradient w.r.t. ``pred``.

    Distances are L2 norms over the unmasked entries of each flattened
    chunk. ``neg`` may carry one negative per sample (B, k, a) or several
    (B, M, k, a); hinges are averaged over negatives and the batch.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    predb, squeeze = _as_batch(pred)
    posb, _ = _as_batch(pos)
    if predb.shape != posb.shape:
        raise ValueError(f"shape mismatch: {predb.shape} vs {posb.shape}")
    negb = np.asarray(neg, dtype=np.float64)
    if negb.ndim == predb.ndim - 1:
        negb = negb[None, ...]
    if negb.ndim == 3:
        negb = negb[:, None, ...]
    if negb.shape[0] != predb.shape[0] or negb.shape[2:] != predb.shape[1:]:
        raise ValueError(f"negative shape {negb.shape} does not match {predb.shape}")

    m = _mask_for(predb, mask).astype(np.float64)
    batch, n_neg = negb.shape[0], negb.shape[1]
    grad = np.zeros_like(predb)
    total = 0.0
    for b in range(batch):
        diff_pos = (predb[b] - posb[b]) * m[b]
        d_pos = float(np.linalg.norm(diff_pos))
        for j in range(n_neg):
            diff_neg = (predb[b] - negb[b, j]) * m[b]
            d_neg = float(np.linalg.norm(diff_neg))
            hinge = d_pos - d_neg + alpha
            if hinge <= 0.0:
                continue
            total += hinge
            # Subgradient 0 where a distance vanishes (norm kink at zero).
            if d_pos > 0.0:
                grad[b] += diff_pos / d_pos / (batch * n_neg)
            if d_neg > 0.0:
                grad[b] -= diff_neg / d_neg / (batch * n_neg)
    value = total / (batch * n_neg)
    return value, (grad[0] if squeeze else grad)


def contrastive(pred, pos, neg, mask=None, alpha: float = 0.01) -> float:
    return contrastive_with_grad(pred, pos, neg, mask, alpha)[0]


def curriculum_weight(lb: float, k: float = 15.0) -> float:
    """Contrastive weight as a function of the baseline loss.

    Pinned to the floor while the baseline loss is above 1, saturated at 1
    once it falls below 1e-3, and exponentially interpolated in between.
    The weight is a schedule: no gradient ever flows through it.
    """
    lb = float(lb)
    if not math.isfinite(lb):
        raise ValueError("baseline loss must be finite")
    if lb > CURRICULUM_HIGH:
        return CURRICULUM_FLOOR
    if lb < CURRICULUM_LOW:
        return 1.0
    return 1.0 - 0.999 * (1.0 - math.exp(-k * (lb - CURRICULUM_LOW)))


def composite_loss(
    pred: np.ndarray,
    chunk_gt: np.ndarray,
    neg: np.ndarray | None,
    stats: LatentStats,
    mask: np.ndarray | None,
    cfg: LossConfig,
    lb_for_schedule: float | None = None,
    lambda_c: float | None = None,
) -> LossBreakdown:
    """Assemble the full objective; the expert chunk is the positive sample.

    ``lb_for_schedule`` substitutes a smoothed baseline loss into the
    curriculum (the raw batch value is used by default); ``lambda_c``
    overrides the schedule entirely (0 gives the plain Huber+KL baseline).
    ``neg=None`` also drops the contrastive term.
    """
    for name, arr in (("pred", pred), ("chunk_gt", chunk_gt)):
        if not np.all(np.isfinite(np.asarray(arr, dtype=np.float64))):
            raise FloatingPointError(f"non-finite values in {name}")
    if not (np.all(np.isfinite(stats.mu)) and np.all(np.isfinite(stats.logvar))):
        raise FloatingPointError("non-finite values in latent stats")

    huber_val = huber(pred, chunk_gt, mask, cfg.huber_delta)
    kl_val = kl_divergence(stats)
    baseline = huber_val + cfg.lambda_kl * kl_val

    if neg is None:
        contrast_val = 0.0
        weight = 0.0 if lambda_c is None else float(lambda_c)
    else:
        contrast_val = contrastive(pred, chunk_gt, neg, mask, cfg.alpha)
        if lambda_c is not None:
            weight = float(lambda_c)
        else:
            lb = baseline if lb_for_schedule is None else float(lb_for_schedule)
            weight = curriculum_weight(lb, cfg.curriculum_k)

    total = baseline + weight * contrast_val
    if not math.isfinite(total):
        raise FloatingPointError("composite loss is non-finite")
    return LossBreakdown(
        huber=huber_val,
        kl=kl_val,
        contrastive=contrast_val,
        lambda_c=weight,
        baseline=baseline,
        total=total,
    )
