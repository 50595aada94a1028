import numpy as np
import pytest

from acorn import sim
from acorn.trajectory import Trajectory


@pytest.fixture
def tiny_env():
    """Small, fast 3-joint arm used by data/metrics tests."""
    return sim.ArmConfig(
        n_joints=3,
        link_lengths=(1.0, 1.0, 1.0),
        max_steps=120,
        hold_steps=3,
    )


def make_trajectory(
    rng: np.random.Generator,
    n_joints: int = 3,
    length: int = 6,
    success: bool = False,
    seed: int = 0,
    noise_level: str = "none",
) -> Trajectory:
    """Random but structurally valid trajectory for metric tests."""
    return Trajectory(
        actions=rng.normal(scale=0.05, size=(length, n_joints)),
        joint_angles=rng.normal(scale=0.5, size=(length, n_joints)),
        ee_positions=rng.normal(scale=1.0, size=(length, 2)),
        rewards=rng.uniform(0, 1, size=length),
        success=success,
        seed=seed,
        noise_level=noise_level,
        goal=rng.normal(size=2),
    )
