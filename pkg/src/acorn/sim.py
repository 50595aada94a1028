"""Planar N-joint arm with a reach-and-hold task.

Deterministic kinematic environment: actions are per-joint angle deltas,
clamped to joint limits; there are no dynamics. A damped-least-squares
resolved-rate controller acts as the scripted expert, and a probabilistic
multiplicative noise injector perturbs executed actions for robustness
evaluation. Every stochastic operation takes an explicit RNG stream, so
episodes are pure functions of (policy, configs, seed) and safe to run in
parallel.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .trajectory import Trajectory

JOINT_GROUPS = ("high_priority", "secondary")

# Default taxonomy for a 6-joint chain: joints 2-4 (shoulder/elbow/forearm-roll
# analogs) carry fine positioning, joints 1/5/6 handle gross orientation.
_DEFAULT_GROUPS_6 = (
    "secondary",
    "high_priority",
    "high_priority",
    "high_priority",
    "secondary",
    "secondary",
)


@dataclass
class ArmConfig:
    """Environment, task, and expert-controller parameters.

    ``reach_radius`` defaults to the total link length; it normalizes the
    dense distance reward. The expert fields (``ik_damping``,
    ``action_cap``) and task fields (``success_tolerance``, ``hold_steps``,
    ``success_bonus``) are all overridable through the run config.
    """

    n_joints: int = 6
    link_lengths: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    joint_limits: tuple[tuple[float, float], ...] | None = None
    dt: float = 0.02
    max_steps: int = 300
    joint_groups: tuple[str, ...] | None = None
    init_joint_angles: tuple[float, ...] | None = None
    goal_radius_range: tuple[float, float] = (0.25, 0.6)
    success_tolerance: float = 0.05
    hold_steps: int = 5
    success_bonus: float = 10.0
    reach_radius: float | None = None
    ik_damping: float = 1e-2
    ik_gain: float = 0.5
    action_cap: float = 0.1

    def __post_init__(self):
        self.n_joints = int(self.n_joints)
        if self.n_joints < 2:
            raise ValueError("n_joints must be >= 2")
        self.link_lengths = tuple(float(l) for l in self.link_lengths)
        if len(self.link_lengths) != self.n_joints:
            raise ValueError("link_lengths must have one entry per joint")
        if any(l <= 0 for l in self.link_lengths):
            raise ValueError("link_lengths must all be positive")
        if self.joint_limits is None:
            self.joint_limits = tuple((-2.0 * math.pi, 2.0 * math.pi) for _ in range(self.n_joints))
        self.joint_limits = tuple((float(lo), float(hi)) for lo, hi in self.joint_limits)
        if len(self.joint_limits) != self.n_joints:
            raise ValueError("joint_limits must have one [min,max] per joint")
        if any(lo >= hi for lo, hi in self.joint_limits):
            raise ValueError("each joint limit must satisfy min < max")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.joint_groups is None:
            if self.n_joints == 6:
                self.joint_groups = _DEFAULT_GROUPS_6
            else:
                # Generic fallback: middle third of the chain is high priority.
                lo, hi = self.n_joints // 3, 2 * self.n_joints // 3 + 1
                self.joint_groups = tuple(
                    "high_priority" if lo <= i < hi else "secondary"
                    for i in range(self.n_joints)
                )
        self.joint_groups = tuple(str(g) for g in self.joint_groups)
        if len(self.joint_groups) != self.n_joints:
            raise ValueError("joint_groups must label every joint exactly once")
        if any(g not in JOINT_GROUPS for g in self.joint_groups):
            raise ValueError(f"joint_groups entries must be one of {JOINT_GROUPS}")
        if self.init_joint_angles is None:
            self.init_joint_angles = tuple(0.1 for _ in range(self.n_joints))
        self.init_joint_angles = tuple(float(a) for a in self.init_joint_angles)
        if len(self.init_joint_angles) != self.n_joints:
            raise ValueError("init_joint_angles must have one entry per joint")
        lo, hi = self.goal_radius_range
        if not (0.0 < lo < hi <= 1.0):
            raise ValueError("goal_radius_range must satisfy 0 < lo < hi <= 1")
        self.goal_radius_range = (float(lo), float(hi))
        if self.reach_radius is None:
            self.reach_radius = float(sum(self.link_lengths))
        self.reach_radius = float(self.reach_radius)
        if self.reach_radius <= 0:
            raise ValueError("reach_radius must be positive")
        if self.hold_steps < 1:
            raise ValueError("hold_steps must be >= 1")
        if not 0.0 < self.ik_gain <= 1.0:
            raise ValueError("ik_gain must lie in (0, 1]")

    @property
    def obs_dim(self) -> int:
        """Observation is joint angles concatenated with the goal point."""
        return self.n_joints + 2

    @property
    def links(self) -> np.ndarray:
        return np.asarray(self.link_lengths, dtype=np.float64)

    @property
    def limits_lo(self) -> np.ndarray:
        return np.asarray([lo for lo, _ in self.joint_limits], dtype=np.float64)

    @property
    def limits_hi(self) -> np.ndarray:
        return np.asarray([hi for _, hi in self.joint_limits], dtype=np.float64)

    def group_indices(self, group: str) -> tuple[int, ...]:
        return tuple(i for i, g in enumerate(self.joint_groups) if g == group)

    def to_dict(self) -> dict:
        return {
            "n_joints": self.n_joints,
            "link_lengths": list(self.link_lengths),
            "joint_limits": [list(lim) for lim in self.joint_limits],
            "dt": self.dt,
            "max_steps": self.max_steps,
            "joint_groups": list(self.joint_groups),
            "init_joint_angles": list(self.init_joint_angles),
            "goal_radius_range": list(self.goal_radius_range),
            "success_tolerance": self.success_tolerance,
            "hold_steps": self.hold_steps,
            "success_bonus": self.success_bonus,
            "reach_radius": self.reach_radius,
            "ik_damping": self.ik_damping,
            "action_cap": self.action_cap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArmConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown env config keys: {unknown}")
        kwargs = dict(d)
        for key in ("link_lengths", "joint_groups", "init_joint_angles", "goal_radius_range"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        if kwargs.get("joint_limits") is not None:
            kwargs["joint_limits"] = tuple(tuple(lim) for lim in kwargs["joint_limits"])
        return cls(**kwargs)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass
class EnvState:
    """Instantaneous task state. ``hold_count``/``bonus_paid`` carry the
    reach-and-hold bookkeeping so :func:`step` stays a pure function."""

    joint_angles: np.ndarray
    goal_position: np.ndarray
    step_index: int = 0
    hold_count: int = 0
    bonus_paid: bool = False


NOISE_PRESETS = {
    "none": (0.0, 0.0),
    "light": (0.1, 0.04),
    "normal": (0.2, 0.06),
    "heavy": (0.3, 0.08),
}


@dataclass
class NoiseConfig:
    """Probabilistic multiplicative action noise: activation probability
    ``p`` and intensity ``sigma``."""

    p: float
    sigma: float
    label: str = "custom"

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("noise activation probability p must lie in [0, 1]")
        if self.sigma < 0.0:
            raise ValueError("noise intensity sigma must be >= 0")

    @classmethod
    def from_preset(cls, name: str) -> "NoiseConfig":
        key = name.lower()
        if key not in NOISE_PRESETS:
            raise ValueError(f"unknown noise preset {name!r}; choose from {sorted(NOISE_PRESETS)}")
        p, sigma = NOISE_PRESETS[key]
        return cls(p=p, sigma=sigma, label=key)


def forward_kinematics(joint_angles: np.ndarray, link_lengths: np.ndarray) -> np.ndarray:
    """End-effector position of a planar revolute chain.

    x = sum_i l_i * cos(theta_1 + ... + theta_i), y analogous with sin.
    Pure and deterministic.
    """
    q = np.asarray(joint_angles, dtype=np.float64)
    links = np.asarray(link_lengths, dtype=np.float64)
    if q.shape != links.shape:
        raise ValueError(f"angle/link length mismatch: {q.shape} vs {links.shape}")
    if q.size < 2:
        raise ValueError("chain needs at least 2 joints")
    cum = np.cumsum(q)
    return np.array([np.dot(links, np.cos(cum)), np.dot(links, np.sin(cum))])


def jacobian(joint_angles: np.ndarray, link_lengths: np.ndarray) -> np.ndarray:
    """2 x n position Jacobian of the planar chain."""
    q = np.asarray(joint_angles, dtype=np.float64)
    links = np.asarray(link_lengths, dtype=np.float64)
    cum = np.cumsum(q)
    sin_terms = links * np.sin(cum)
    cos_terms = links * np.cos(cum)
    # d(ee)/d(theta_j) sums contributions of links j..n; reversed cumsum.
    jx = -np.cumsum(sin_terms[::-1])[::-1]
    jy = np.cumsum(cos_terms[::-1])[::-1]
    return np.vstack([jx, jy])


def observe(state: EnvState) -> np.ndarray:
    """Policy observation: joint angles concatenated with the goal point."""
    return np.concatenate([state.joint_angles, state.goal_position])


def sample_goal(cfg: ArmConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniform polar goal inside the reachable annulus given by
    ``goal_radius_range`` (fractions of total reach)."""
    angle = rng.uniform(0.0, 2.0 * math.pi)
    lo, hi = cfg.goal_radius_range
    radius = rng.uniform(lo, hi) * float(sum(cfg.link_lengths))
    return radius * np.array([math.cos(angle), math.sin(angle)])


def reset(cfg: ArmConfig, rng: np.random.Generator) -> EnvState:
    """Fresh episode state with a sampled goal and the configured start pose."""
    return EnvState(
        joint_angles=np.asarray(cfg.init_joint_angles, dtype=np.float64).copy(),
        goal_position=sample_goal(cfg, rng),
        step_index=0,
    )


def step(
    cfg: ArmConfig,
    state: EnvState,
    action: np.ndarray,
) -> tuple[EnvState, float, bool, bool]:
    """Apply a joint-delta action; returns ``(state, reward, done, success)``.

    Angles are clamped to joint limits. The per-step reward is the dense
    term ``1 - min(1, dist/reach_radius)`` plus a one-time bonus on first
    entry within ``success_tolerance``; success fires once the end effector
    has stayed within tolerance for ``hold_steps`` consecutive steps.
    """
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (cfg.n_joints,):
        raise ValueError(f"action must have shape ({cfg.n_joints},), got {action.shape}")
    angles = np.clip(state.joint_angles + action, cfg.limits_lo, cfg.limits_hi)
    ee = forward_kinematics(angles, cfg.links)
    dist = float(np.linalg.norm(ee - state.goal_position))
    reward = 1.0 - min(1.0, dist / cfg.reach_radius)

    within = dist <= cfg.success_tolerance
    bonus_paid = state.bonus_paid
    if within and not bonus_paid:
        reward += cfg.success_bonus
        bonus_paid = True
    hold_count = state.hold_count + 1 if within else 0
    success = hold_count >= cfg.hold_steps
    step_index = state.step_index + 1
    done = success or step_index >= cfg.max_steps

    new_state = EnvState(
        joint_angles=angles,
        goal_position=state.goal_position,
        step_index=step_index,
        hold_count=hold_count,
        bonus_paid=bonus_paid,
    )
    return new_state, reward, done, success


def expert_action(cfg: ArmConfig, state: EnvState) -> np.ndarray:
    """Resolved-rate step toward the goal via damped-least-squares IK.

    The damping keeps the solve finite at singular poses; the result is
    rescaled so its infinity norm never exceeds ``action_cap``.
    """
    err = state.goal_position - forward_kinematics(state.joint_angles, cfg.links)
    jac = jacobian(state.joint_angles, cfg.links)
    gram = jac @ jac.T + cfg.ik_damping**2 * np.eye(2)
    dq = jac.T @ np.linalg.solve(gram, err)
    peak = float(np.max(np.abs(dq)))
    if peak > cfg.action_cap:
        dq *= cfg.action_cap / peak
    return dq


def expert_policy(cfg: ArmConfig) -> Callable[[np.ndarray], np.ndarray]:
    """Expert as a chunk source: one-step chunks recomputed every query."""

    def policy(obs: np.ndarray) -> np.ndarray:
        state = EnvState(
            joint_angles=np.asarray(obs[: cfg.n_joints], dtype=np.float64),
            goal_position=np.asarray(obs[cfg.n_joints :], dtype=np.float64),
        )
        return expert_action(cfg, state)[None, :]

    return policy


def inject_noise(
    action: np.ndarray,
    cfg: NoiseConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Multiplicative Gaussian perturbation with probabilistic activation.

    With probability ``p`` the whole action is scaled by ``1 + beta`` where
    ``beta = eta * sigma`` and ``eta`` is a single standard-normal draw
    shared across action dimensions; otherwise the action passes through
    untouched. Consumes exactly one uniform draw per call plus one normal
    draw when activated.
    """
    action = np.asarray(action, dtype=np.float64)
    activated = rng.random() < cfg.p
    if not activated:
        return action.copy()
    beta = rng.standard_normal() * cfg.sigma
    return (1.0 + beta) * action


def run_episode(
    policy: Callable[[np.ndarray], np.ndarray],
    env: ArmConfig,
    noise: NoiseConfig,
    seed: int,
    replan_every: int | None = None,
) -> Trajectory:
    """Roll out one episode; fully reproducible from ``seed``.

    ``policy`` maps an observation to an action chunk of shape
    ``(m, n_joints)`` (a bare vector counts as a one-step chunk). The first
    ``replan_every`` steps of each chunk (default: all of it) are executed
    open loop, each one passed through the noise injector before stepping.
    Logged actions are the policy's pre-noise outputs.
    """
    rng = np.random.default_rng(seed)
    state = reset(env, rng)

    actions, angles, ees, rewards = [], [], [], []
    done = False
    success = False
    while not done:
        chunk = np.atleast_2d(np.asarray(policy(observe(state)), dtype=np.float64))
        if chunk.shape[1] != env.n_joints:
            raise ValueError(
                f"policy chunk has width {chunk.shape[1]}, expected {env.n_joints}"
            )
        horizon = chunk.shape[0] if replan_every is None else min(replan_every, chunk.shape[0])
        for i in range(horizon):
            commanded = chunk[i]
            executed = inject_noise(commanded, noise, rng)
            state, reward, done, success = step(env, state, executed)
            actions.append(commanded.copy())
            angles.append(state.joint_angles.copy())
            ees.append(forward_kinematics(state.joint_angles, env.links))
            rewards.append(reward)
            if done:
                break

    return Trajectory(
        actions=np.array(actions),
        joint_angles=np.array(angles),
        ee_positions=np.array(ees),
        rewards=np.array(rewards),
        success=success,
        seed=seed,
        noise_level=noise.label,
        goal=state.goal_position.copy(),
    )
