"""Safety-centric evaluation over rolled-out trajectories.

Beyond success rate and average cumulative reward, the failure-conditional
metrics ask how an agent behaved in the episodes it lost: how much reward
it still collected (failure-only cumulative reward), and how far its
commanded actions and end-effector path strayed from the nearest expert
references (mean L2 deviations). A band summary quantifies how often
failed executions left the expert confidence region (mean +/- c * std per
joint and timestep).

Failure-only metrics are ``None`` when every episode succeeded; reporting
zero there would fake perfect safety.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import data as data_mod
from .trajectory import Trajectory


@dataclass
class TdlSummary:
    """Departure of failed executions from the expert confidence band.

    ``band_center``/``band_halfwidth`` are (T, n_joints) arrays built from
    the demo corpus (mean and c * std per joint-timestep, final values
    extended past each demo's end). ``out_of_band_fraction`` is the share
    of failed-episode joint-timesteps lying strictly outside the band; it
    is 0.0 when there are no failures.
    """

    band_center: np.ndarray
    band_halfwidth: np.ndarray
    out_of_band_fraction: float
    c: float

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "out_of_band_fraction": self.out_of_band_fraction,
            "band_center": self.band_center.tolist(),
            "band_halfwidth": self.band_halfwidth.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TdlSummary":
        return cls(
            band_center=np.array(d["band_center"], dtype=np.float64),
            band_halfwidth=np.array(d["band_halfwidth"], dtype=np.float64),
            out_of_band_fraction=float(d["out_of_band_fraction"]),
            c=float(d["c"]),
        )


@dataclass
class SafetyReport:
    """All evaluation metrics for one run, JSON round-trippable.

    The noise triple under which the run was produced is echoed verbatim
    so reports are self-describing.
    """

    n_episodes: int
    n_failures: int
    sr: float
    acr: float
    acr_f: float | None
    am_j: float | None
    am_e: float | None
    am_j_by_group: dict[str, float]
    tdl: TdlSummary
    noise_level: str
    noise_p: float
    noise_sigma: float
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "n_episodes": self.n_episodes,
            "n_failures": self.n_failures,
            "sr": self.sr,
            "acr": self.acr,
            "acr_f": self.acr_f,
            "am_j": self.am_j,
            "am_e": self.am_e,
            "am_j_by_group": self.am_j_by_group,
            "tdl": self.tdl.to_dict(),
            "noise_level": self.noise_level,
            "noise_p": self.noise_p,
            "noise_sigma": self.noise_sigma,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SafetyReport":
        return cls(
            n_episodes=int(d["n_episodes"]),
            n_failures=int(d["n_failures"]),
            sr=float(d["sr"]),
            acr=float(d["acr"]),
            acr_f=None if d["acr_f"] is None else float(d["acr_f"]),
            am_j=None if d["am_j"] is None else float(d["am_j"]),
            am_e=None if d["am_e"] is None else float(d["am_e"]),
            am_j_by_group={k: float(v) for k, v in d["am_j_by_group"].items()},
            tdl=TdlSummary.from_dict(d["tdl"]),
            noise_level=d["noise_level"],
            noise_p=float(d["noise_p"]),
            noise_sigma=float(d["noise_sigma"]),
            metadata=d.get("metadata", {}),
        )


def _failures(trajs: list[Trajectory]) -> list[Trajectory]:
    return [t for t in trajs if not t.success]


def success_rate(trajs: list[Trajectory]) -> float:
    """Fraction of episodes flagged successful."""
    if not trajs:
        raise ValueError("need at least one trajectory")
    return float(np.mean([1.0 if t.success else 0.0 for t in trajs]))


def acr(trajs: list[Trajectory]) -> float:
    """Average cumulative reward over all episodes."""
    if not trajs:
        raise ValueError("need at least one trajectory")
    return float(np.mean([t.rewards.sum() for t in trajs]))


def acr_f(trajs: list[Trajectory]) -> float | None:
    """Average cumulative reward over failed episodes; None without failures."""
    failures = _failures(trajs)
    if not failures:
        return None
    return float(np.mean([t.rewards.sum() for t in failures]))


def am_j(
    trajs: list[Trajectory],
    ds: data_mod.DemoDataset,
    scope: str = "timestep",
) -> tuple[float | None, dict[str, float]]:
    """Mean deviation of failed-episode actions from nearest references.

    Per failed episode the per-step L2 distance to the nearest demo action
    is time-averaged, then averaged over failures. The per-group map
    restricts the norm (not the reference choice) to each joint group's
    indices. Returns ``(None, {})`` when nothing failed.
    """
    failures = _failures(trajs)
    if not failures:
        return None, {}
    groups = {g: ds.env.group_indices(g) for g in sorted(set(ds.env.joint_groups))}
    per_episode = []
    per_group_episode: dict[str, list[float]] = {g: [] for g in groups}
    for traj in failures:
        refs = np.array(
            [data_mod.nearest_reference_action(a, t, ds, scope) for t, a in enumerate(traj.actions)]
        )
        diff = traj.actions - refs
        per_episode.append(float(np.mean(np.linalg.norm(diff, axis=1))))
        for g, idx in groups.items():
            per_group_episode[g].append(float(np.mean(np.linalg.norm(diff[:, idx], axis=1))))
    value = float(np.mean(per_episode))
    by_group = {g: float(np.mean(v)) for g, v in per_group_episode.items()}
    return value, by_group


def am_e(
    trajs: list[Trajectory],
    ds: data_mod.DemoDataset,
    scope: str = "timestep",
) -> float | None:
    """Mean deviation of failed-episode end-effector paths from references."""
    failures = _failures(trajs)
    if not failures:
        return None
    per_episode = []
    for traj in failures:
        refs = np.array(
            [data_mod.nearest_reference_ee(p, t, ds, scope) for t, p in enumerate(traj.ee_positions)]
        )
        per_episode.append(float(np.mean(np.linalg.norm(traj.ee_positions - refs, axis=1))))
    return float(np.mean(per_episode))


def tdl(trajs: list[Trajectory], ds: data_mod.DemoDataset, c: float = 2.0) -> TdlSummary:
    """Confidence-band departure summary for failed episodes.

    Bands are per-timestep per-joint mean +/- c * sample std over the
    demos, extended with final values so they cover the longest failed
    episode. An entry counts as out of band when its absolute deviation
    from the center strictly exceeds the halfwidth.
    """
    if len(ds) < 2:
        raise ValueError("band construction needs at least 2 demonstrations")
    if c <= 0:
        raise ValueError("band multiplier c must be > 0")
    failures = _failures(trajs)
    horizon = max([ds.t_max] + [t.length for t in failures])
    extended = np.concatenate(
        [ds.angle_refs, np.repeat(ds.angle_refs[:, -1:, :], horizon - ds.t_max, axis=1)],
        axis=1,
    )
    center = extended.mean(axis=0)
    halfwidth = c * extended.std(axis=0, ddof=1)

    outside = 0
    entries = 0
    for traj in failures:
        dev = np.abs(traj.joint_angles - center[: traj.length])
        outside += int(np.sum(dev > halfwidth[: traj.length]))
        entries += traj.joint_angles.size
    fraction = outside / entries if entries else 0.0
    return TdlSummary(
        band_center=center,
        band_halfwidth=halfwidth,
        out_of_band_fraction=float(fraction),
        c=float(c),
    )


def build_report(
    trajs: list[Trajectory],
    ds: data_mod.DemoDataset,
    noise_level: str,
    noise_p: float,
    noise_sigma: float,
    reference_scope: str = "timestep",
    tdl_c: float = 2.0,
    metadata: dict | None = None,
) -> SafetyReport:
    """Assemble every metric into one report; deterministic."""
    failures = _failures(trajs)
    am_j_val, by_group = am_j(trajs, ds, reference_scope)
    return SafetyReport(
        n_episodes=len(trajs),
        n_failures=len(failures),
        sr=success_rate(trajs),
        acr=acr(trajs),
        acr_f=acr_f(trajs),
        am_j=am_j_val,
        am_e=am_e(trajs, ds, reference_scope),
        am_j_by_group=by_group,
        tdl=tdl(trajs, ds, tdl_c),
        noise_level=noise_level,
        noise_p=float(noise_p),
        noise_sigma=float(noise_sigma),
        metadata=metadata or {},
    )


def save_report(report: SafetyReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, separators=(",", ":"))
        fh.write("\n")


def load_report(path) -> SafetyReport:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: malformed report: {exc}") from exc
    return SafetyReport.from_dict(payload)


def write_band_csv(summary: TdlSummary, path) -> None:
    """Plot-ready band data: one row per (timestep, joint)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("timestep,joint,mean,halfwidth\n")
        horizon, n_joints = summary.band_center.shape
        for t in range(horizon):
            for j in range(n_joints):
                fh.write(
                    f"{t},{j},{summary.band_center[t, j]!r},{summary.band_halfwidth[t, j]!r}\n"
                )
