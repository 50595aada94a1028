"""Demonstration corpus, reference lookup, and chunked batch sampling.

The dataset doubles as the reference set for the safety metrics: for every
timestep it can return the nearest recorded expert action (or end-effector
point) under an L2 argmin. Reference arrays are extended past each demo's
end with its final value, so lookups are defined at any timestep.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import sim
from .trajectory import (
    SCHEMA_VERSION,
    LogParseError,
    Trajectory,
    dump_record_line,
    load_log,
    parse_record_line,
    save_log,
)

__all__ = [
    "ChunkBatch",
    "DemoDataset",
    "GenerationError",
    "LogParseError",
    "Trajectory",
    "generate_demonstrations",
    "load_dataset",
    "load_log",
    "nearest_reference_action",
    "nearest_reference_ee",
    "sample_batch",
    "save_dataset",
    "save_log",
]

REFERENCE_SCOPES = ("timestep", "global")


class GenerationError(RuntimeError):
    """The scripted expert could not produce the requested demonstrations."""


@dataclass
class ChunkBatch:
    """Training mini-batch: observations plus next-k action chunks.

    Chunks that run past the end of an episode are zero padded; ``mask``
    marks the valid entries, and masked-out positions must contribute zero
    to every loss.
    """

    observations: np.ndarray   # (B, obs_dim)
    target_chunks: np.ndarray  # (B, k, action_dim)
    mask: np.ndarray           # (B, k) bool


class DemoDataset:
    """Immutable corpus of successful expert trajectories.

    Precomputes per-timestep reference tensors (final-value extended) for
    the nearest-reference lookups and per-step observations for training.
    """

    def __init__(self, trajectories: list[Trajectory], env: sim.ArmConfig):
        if not trajectories:
            raise ValueError("demo dataset must be non-empty")
        if not all(t.success for t in trajectories):
            raise ValueError("every demonstration must have succeeded")
        self.trajectories = list(trajectories)
        self.env = env
        self.env_hash = env.config_hash()

        n = env.n_joints
        t_max = max(t.length for t in self.trajectories)
        count = len(self.trajectories)
        self.t_max = t_max
        self.action_refs = np.zeros((count, t_max, n))
        self.ee_refs = np.zeros((count, t_max, 2))
        self.angle_refs = np.zeros((count, t_max, n))
        for i, traj in enumerate(self.trajectories):
            ti = traj.length
            self.action_refs[i, :ti] = traj.actions
            self.ee_refs[i, :ti] = traj.ee_positions
            self.angle_refs[i, :ti] = traj.joint_angles
            if ti < t_max:
                self.action_refs[i, ti:] = traj.actions[-1]
                self.ee_refs[i, ti:] = traj.ee_positions[-1]
                self.angle_refs[i, ti:] = traj.joint_angles[-1]
        # Flattened demo-major/time-minor candidates for global-scope lookup.
        self.action_pool = np.concatenate([t.actions for t in self.trajectories])
        self.ee_pool = np.concatenate([t.ee_positions for t in self.trajectories])

        init = np.asarray(env.init_joint_angles, dtype=np.float64)
        self.observations = []
        for traj in self.trajectories:
            pre_step_angles = np.vstack([init, traj.joint_angles[:-1]])
            goal = np.broadcast_to(traj.goal, (traj.length, 2))
            self.observations.append(np.hstack([pre_step_angles, goal]))

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def mean_length(self) -> float:
        return float(np.mean([t.length for t in self.trajectories]))


def generate_demonstrations(
    env: sim.ArmConfig,
    n: int,
    seed: int,
    max_attempts_per_demo: int = 20,
) -> DemoDataset:
    """Collect ``n`` successful expert rollouts with seeded random goals.

    Rollouts run noise-free; a failed attempt (possible for adversarial
    goal/limit combinations) is retried with a fresh episode seed. Raises
    :class:`GenerationError` once the retry budget is exhausted, which
    signals a mis-tuned expert or environment rather than bad luck.
    """
    if n < 1:
        raise ValueError("demo count must be >= 1")
    seed_rng = np.random.default_rng(seed)
    expert = sim.expert_policy(env)
    noise_free = sim.NoiseConfig(p=0.0, sigma=0.0, label="none")

    demos: list[Trajectory] = []
    for _ in range(n):
        for attempt in range(max_attempts_per_demo):
            episode_seed = int(seed_rng.integers(0, 2**63 - 1))
            traj = sim.run_episode(expert, env, noise_free, episode_seed)
            if traj.success:
                demos.append(traj)
                break
        else:
            raise GenerationError(
                f"expert failed {max_attempts_per_demo} consecutive attempts "
                f"while collecting demo {len(demos) + 1}/{n}"
            )
    return DemoDataset(demos, env)


def nearest_reference_action(
    a: np.ndarray,
    t: int,
    ds: DemoDataset,
    scope: str = "timestep",
) -> np.ndarray:
    """Closest recorded expert action to ``a`` under the L2 norm.

    ``timestep`` scope restricts candidates to each demo's action at
    timestep ``t`` (final action once a demo has ended); ``global`` scope
    searches every action of every demo. Ties resolve to the lowest demo
    index (then earliest timestep).
    """
    a = np.asarray(a, dtype=np.float64)
    candidates = _candidates(ds.action_refs, ds.action_pool, t, scope)
    dists = np.linalg.norm(candidates - a, axis=1)
    return candidates[int(np.argmin(dists))].copy()


def nearest_reference_ee(
    p: np.ndarray,
    t: int,
    ds: DemoDataset,
    scope: str = "timestep",
) -> np.ndarray:
    """Closest recorded end-effector point; same contract as the action lookup."""
    p = np.asarray(p, dtype=np.float64)
    candidates = _candidates(ds.ee_refs, ds.ee_pool, t, scope)
    dists = np.linalg.norm(candidates - p, axis=1)
    return candidates[int(np.argmin(dists))].copy()


def _candidates(refs: np.ndarray, pool: np.ndarray, t: int, scope: str) -> np.ndarray:
    if scope not in REFERENCE_SCOPES:
        raise ValueError(f"reference scope must be one of {REFERENCE_SCOPES}")
    if t < 0:
        raise ValueError("timestep must be >= 0")
    if scope == "global":
        return pool
    return refs[:, min(t, refs.shape[1] - 1), :]


def sample_batch(
    ds: DemoDataset,
    batch: int,
    k: int,
    rng: np.random.Generator,
) -> ChunkBatch:
    """Uniform (trajectory, start-index) sampling of observation/chunk pairs.

    The demo is drawn uniformly (independent of its length), then a start
    step within it. Chunks extending past the episode end are zero padded
    with the mask cleared.
    """
    if k < 1:
        raise ValueError("chunk length k must be >= 1")
    if batch < 1:
        raise ValueError("batch size must be >= 1")
    n_act = ds.env.n_joints
    obs = np.zeros((batch, ds.env.obs_dim))
    chunks = np.zeros((batch, k, n_act))
    mask = np.zeros((batch, k), dtype=bool)
    for b in range(batch):
        i = int(rng.integers(len(ds)))
        traj = ds.trajectories[i]
        start = int(rng.integers(traj.length))
        valid = min(k, traj.length - start)
        obs[b] = ds.observations[i][start]
        chunks[b, :valid] = traj.actions[start : start + valid]
        mask[b, :valid] = True
    return ChunkBatch(observations=obs, target_chunks=chunks, mask=mask)


def save_dataset(ds: DemoDataset, path) -> None:
    """Dataset file: one header line (config hash, count) then episode lines."""
    header = {
        "schema_version": SCHEMA_VERSION,
        "env_config_hash": ds.env_hash,
        "count": len(ds),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_record_line(header))
        fh.write("\n")
        for traj in ds.trajectories:
            fh.write(dump_record_line(traj.to_record()))
            fh.write("\n")


def load_dataset(path, env: sim.ArmConfig) -> DemoDataset:
    """Load a dataset file, verifying its header against ``env``.

    The stored config hash must match the provided environment; episode
    counts and per-line structure are validated fail-closed.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise LogParseError(f"{path}:1: missing dataset header")
    header = parse_record_line(lines[0], path, 1)
    for key in ("schema_version", "env_config_hash", "count"):
        if key not in header:
            raise LogParseError(f"{path}:1: dataset header missing {key!r}")
    if header["schema_version"] != SCHEMA_VERSION:
        raise LogParseError(f"{path}:1: unsupported schema_version {header['schema_version']}")
    if header["env_config_hash"] != env.config_hash():
        raise LogParseError(
            f"{path}:1: dataset was generated under a different environment config "
            f"(hash {header['env_config_hash']} != {env.config_hash()})"
        )
    trajs = []
    for lineno, line in enumerate(lines[1:], start=2):
        record = parse_record_line(line, path, lineno)
        try:
            trajs.append(Trajectory.from_record(record))
        except ValueError as exc:
            raise LogParseError(f"{path}:{lineno}: {exc}") from exc
    if len(trajs) != header["count"]:
        raise LogParseError(
            f"{path}: header promises {header['count']} episodes, found {len(trajs)}"
        )
    return DemoDataset(trajs, env)
