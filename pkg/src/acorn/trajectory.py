"""Episode records and their line-delimited log format.

One episode per line, each line a self-describing JSON object. Floats are
written with Python's shortest round-trip representation so that
``load_log(save_log(x)) == x`` holds bit for bit. Loading is fail-closed:
any malformed or truncated line raises :class:`LogParseError` naming the
offending line number.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

SCHEMA_VERSION = 1

_RECORD_KEYS = (
    "schema_version",
    "seed",
    "noise_level",
    "success",
    "goal",
    "actions",
    "joint_angles",
    "ee_positions",
    "rewards",
)


class LogParseError(ValueError):
    """A trajectory log line could not be parsed or validated."""


@dataclass
class Trajectory:
    """One episode: per-step arrays plus outcome metadata.

    ``actions`` are the policy's commanded joint deltas (pre-noise);
    ``joint_angles`` are the executed, limit-clamped angles after each step.
    All per-step arrays share the same length.
    """

    actions: np.ndarray        # (T, n_joints)
    joint_angles: np.ndarray   # (T, n_joints)
    ee_positions: np.ndarray   # (T, 2)
    rewards: np.ndarray        # (T,)
    success: bool
    seed: int
    noise_level: str
    goal: np.ndarray           # (2,)

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.joint_angles = np.asarray(self.joint_angles, dtype=np.float64)
        self.ee_positions = np.asarray(self.ee_positions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.goal = np.asarray(self.goal, dtype=np.float64)
        t = self.actions.shape[0]
        if t < 1:
            raise ValueError("trajectory must contain at least one step")
        if (
            self.joint_angles.shape[0] != t
            or self.ee_positions.shape[0] != t
            or self.rewards.shape[0] != t
        ):
            raise ValueError("per-step arrays must share the same length")
        if self.ee_positions.shape[1] != 2 or self.goal.shape != (2,):
            raise ValueError("ee_positions and goal must be planar points")
        self.success = bool(self.success)
        self.seed = int(self.seed)

    @property
    def length(self) -> int:
        return self.actions.shape[0]

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())

    def to_record(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "noise_level": self.noise_level,
            "success": self.success,
            "goal": self.goal.tolist(),
            "actions": self.actions.tolist(),
            "joint_angles": self.joint_angles.tolist(),
            "ee_positions": self.ee_positions.tolist(),
            "rewards": self.rewards.tolist(),
        }

    @classmethod
    def from_record(cls, record: dict) -> "Trajectory":
        missing = [k for k in _RECORD_KEYS if k not in record]
        if missing:
            raise ValueError(f"missing keys {missing}")
        unknown = [k for k in record if k not in _RECORD_KEYS]
        if unknown:
            raise ValueError(f"unknown keys {unknown}")
        if record["schema_version"] != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {record['schema_version']}")
        return cls(
            actions=np.array(record["actions"], dtype=np.float64),
            joint_angles=np.array(record["joint_angles"], dtype=np.float64),
            ee_positions=np.array(record["ee_positions"], dtype=np.float64),
            rewards=np.array(record["rewards"], dtype=np.float64),
            success=record["success"],
            seed=record["seed"],
            noise_level=record["noise_level"],
            goal=np.array(record["goal"], dtype=np.float64),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            np.array_equal(self.actions, other.actions)
            and np.array_equal(self.joint_angles, other.joint_angles)
            and np.array_equal(self.ee_positions, other.ee_positions)
            and np.array_equal(self.rewards, other.rewards)
            and self.success == other.success
            and self.seed == other.seed
            and self.noise_level == other.noise_level
            and np.array_equal(self.goal, other.goal)
        )


def dump_record_line(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"))


def parse_record_line(line: str, path, lineno: int) -> dict:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise LogParseError(f"{path}:{lineno}: malformed record: {exc}") from exc
    if not isinstance(record, dict):
        raise LogParseError(f"{path}:{lineno}: record is not an object")
    return record


def save_log(trajs: list[Trajectory], path) -> None:
    """Write episodes as one JSON object per line. An empty list is valid."""
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajs:
            fh.write(dump_record_line(traj.to_record()))
            fh.write("\n")


def load_log(path) -> list[Trajectory]:
    """Read a trajectory log; raises :class:`LogParseError` on any bad line."""
    trajs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip() == "":
                raise LogParseError(f"{path}:{lineno}: blank line in log")
            record = parse_record_line(line, path, lineno)
            try:
                trajs.append(Trajectory.from_record(record))
            except ValueError as exc:
                raise LogParseError(f"{path}:{lineno}: {exc}") from exc
    return trajs
