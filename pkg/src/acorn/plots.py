"""SVG emission of expert confidence bands with failed executions overlaid.

Static plot files only. Rendering is deterministic: the SVG hash salt is
pinned and no creation date is embedded, so identical inputs produce
byte-identical files.
"""

from __future__ import annotations

import numpy as np

from .metrics import TdlSummary
from .trajectory import Trajectory


def write_band_svg(
    summary: TdlSummary,
    failed_trajs: list[Trajectory],
    joint_groups: tuple[str, ...],
    path,
    title: str = "",
) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    horizon, n_joints = summary.band_center.shape
    steps = np.arange(horizon)
    with matplotlib.rc_context({"svg.hashsalt": "bands"}):
        fig, axes = plt.subplots(
            n_joints, 1, figsize=(7.0, 1.8 * n_joints), sharex=True, squeeze=False
        )
        for j in range(n_joints):
            ax = axes[j, 0]
            center = summary.band_center[:, j]
            half = summary.band_halfwidth[:, j]
            ax.fill_between(steps, center - half, center + half, alpha=0.3, color="tab:blue")
            ax.plot(steps, center, color="tab:blue", lw=1.0)
            for traj in failed_trajs:
                ax.plot(
                    np.arange(traj.length),
                    traj.joint_angles[:, j],
                    color="tab:red",
                    lw=0.6,
                    alpha=0.7,
                )
            ax.set_ylabel(f"j{j + 1}\n({joint_groups[j]})", fontsize=7)
        axes[-1, 0].set_xlabel("timestep")
        if title:
            axes[0, 0].set_title(title, fontsize=9)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
