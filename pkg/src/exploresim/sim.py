"""Ground-truth world stepping, odometry corruption, and run metrics.

The truth grid is never mutated; the true pose advances by the exact
unicycle model and is kept out of occupied cells (collisions truncate
motion and are reported as data, not errors). Odometry corruption acts on
the executed displacement: translational noise per step, rotational noise
per step, and an extra heading kick on scan steps. Process noise is
reported isotropically in x/y, which keeps Q frame-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grid_map import OccupancyGrid, traverse_ray_arrays
from .localization import MotionInput
from .sensor import BeamScan, SensorSpec, simulate_scan

LN2 = math.log(2.0)


@dataclass
class NoiseSpec:
    """Odometry corruption. trans_std and rot_std are random-walk
    intensities per sqrt-second (each step draws with std * sqrt(dt)),
    which reproduces the reference dead-reckoning drift of roughly
    std * sqrt(duration); heading_extra_std is an absolute kick applied
    on each scan step, stressing the orientation-correction path."""

    trans_std: float = 0.05          # displacement noise intensity [m/sqrt(s)]
    rot_std: float = 0.02            # heading noise intensity [rad/sqrt(s)]
    heading_extra_std: float = 0.01  # extra heading noise per scan step [rad]


@dataclass
class SimWorld:
    """Single-writer simulation state around an immutable truth grid."""

    truth: OccupancyGrid
    true_pose: np.ndarray
    rng: np.random.Generator
    spec: SensorSpec = field(default_factory=SensorSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    dt: float = 0.02
    scan_every: int = 5            # sim steps per scan (LiDAR rate)
    robot_radius: float = 0.15
    v_max: float = 1.5
    omega_max: float = 2.0
    step: int = 0

    def __post_init__(self):
        self.true_pose = np.asarray(self.true_pose, dtype=np.float64).reshape(3).copy()
        cell = self.truth.world_to_cell(self.true_pose[0], self.true_pose[1])
        if self.truth.probs[cell.row, cell.col] > 0.5:
            raise ValueError("initial pose is inside an occupied cell")

    def observe(self) -> BeamScan:
        """Scan from the current true pose without advancing time."""
        scan = simulate_scan(self.true_pose, self.truth, self.spec, self.rng)
        scan.timestamp = self.step
        return scan


@dataclass
class StepOutcome:
    odom: MotionInput
    scan: Optional[BeamScan]
    collided: bool


def _free_travel(world: SimWorld, x: float, y: float, angle: float,
                 dist: float) -> tuple[float, bool]:
    """Distance travelable along a heading before violating the robot's
    standoff from occupied truth; the lookahead extends past the intended
    motion by the standoff margin so walls are seen before contact."""
    if dist <= 0:
        return 0.0, False
    look = dist + world.robot_radius + world.truth.resolution
    rows, cols, _ = traverse_ray_arrays(world.truth, (x, y), angle,
                                        look, look + 1.0)
    occ = world.truth.probs[rows, cols] > 0.5
    if not np.any(occ):
        return dist, False
    first = int(np.argmax(occ))
    # ray-box entry distance of the blocking cell (slab test)
    res = world.truth.resolution
    ox, oy = world.truth.origin
    x_lo = ox + cols[first] * res
    y_lo = oy + rows[first] * res
    dx, dy = math.cos(angle), math.sin(angle)
    tx = -math.inf if dx == 0 else min((x_lo - x) / dx, (x_lo + res - x) / dx)
    ty = -math.inf if dy == 0 else min((y_lo - y) / dy, (y_lo + res - y) / dy)
    t_enter = max(tx, ty, 0.0)
    allowed = max(0.0, t_enter - world.robot_radius)
    if allowed >= dist:
        return dist, False
    return allowed, True


def step_sim(world: SimWorld, u: MotionInput) -> StepOutcome:
    """Advance the world one step under control u.

    The commanded speed/turn rate are clamped to the platform caps; motion
    into occupied space truncates at contact minus the robot radius and
    flags a collision. Odometry reports the executed displacement plus
    noise; a scan is attached on scan-rate steps.
    """
    v = float(np.clip(u.v, -world.v_max, world.v_max))
    omega = float(np.clip(u.omega, -world.omega_max, world.omega_max))
    dt = world.dt
    x, y, theta = world.true_pose

    intended = v * dt
    heading = theta if intended >= 0 else theta + math.pi
    travel, collided = _free_travel(world, x, y, heading, abs(intended))
    executed = math.copysign(travel, intended) if intended else 0.0
    nx = x + executed * math.cos(theta)
    ny = y + executed * math.sin(theta)
    # never end inside an occupied cell (grazing corner cases)
    cell = world.truth.world_to_cell(nx, ny)
    if world.truth.probs[cell.row, cell.col] > 0.5:
        nx, ny = x, y
        executed = 0.0
        collided = True
    ntheta = theta + omega * dt

    world.true_pose[0] = nx
    world.true_pose[1] = ny
    world.true_pose[2] = ntheta
    world.step += 1
    is_scan_step = world.step % world.scan_every == 0

    noise = world.noise
    sqrt_dt = math.sqrt(dt)
    trans_step_std = noise.trans_std * sqrt_dt
    rot_step_std = noise.rot_std * sqrt_dt
    d_trans = executed
    d_rot = omega * dt
    if trans_step_std > 0:
        d_trans += world.rng.normal(0.0, trans_step_std)
    if rot_step_std > 0:
        d_rot += world.rng.normal(0.0, rot_step_std)
    rot_var = rot_step_std ** 2
    if is_scan_step and noise.heading_extra_std > 0:
        d_rot += world.rng.normal(0.0, noise.heading_extra_std)
        rot_var += noise.heading_extra_std ** 2
    Q = np.diag([trans_step_std ** 2, trans_step_std ** 2, rot_var])
    odom = MotionInput(v=d_trans / dt, omega=d_rot / dt, dt=dt, Q=Q)

    scan = world.observe() if is_scan_step else None
    return StepOutcome(odom=odom, scan=scan, collided=collided)


# --- metrics ---------------------------------------------------------------


def metrics_translation(est_traj, true_traj) -> tuple[float, float]:
    """(RMSE, MAE) of the planar position error along paired trajectories."""
    est = np.asarray(est_traj, dtype=np.float64)
    true = np.asarray(true_traj, dtype=np.float64)
    if est.shape[0] != true.shape[0]:
        raise ValueError(f"trajectory length mismatch: {est.shape[0]} vs {true.shape[0]}")
    if est.shape[0] == 0:
        raise ValueError("empty trajectories")
    err = np.hypot(est[:, 0] - true[:, 0], est[:, 1] - true[:, 1])
    return float(np.sqrt(np.mean(err ** 2))), float(np.mean(err))


MAP_ERROR_SENTINEL = float("nan")


def metrics_map_error(est: OccupancyGrid, truth: OccupancyGrid) -> float:
    """Per-class RMS occupancy error against the truth, scaled by 100.

    Occupied truth cells contribute (1 - p)^2, unoccupied ones p^2, cells
    the estimate still marks unknown (|p - 0.5| < 1e-3) are excluded;
    the two class means are summed, rooted, and scaled. With every cell
    excluded the sentinel NaN is returned.
    """
    if est.probs.shape != truth.probs.shape:
        raise ValueError("map geometry mismatch")
    known = np.abs(est.probs - 0.5) >= 1e-3
    occ = truth.probs > 0.5
    occ_sel = known & occ
    unocc_sel = known & ~occ
    if not occ_sel.any() and not unocc_sel.any():
        return MAP_ERROR_SENTINEL
    total = 0.0
    if occ_sel.any():
        total += float(np.mean((1.0 - est.probs[occ_sel]) ** 2))
    if unocc_sel.any():
        total += float(np.mean(est.probs[unocc_sel] ** 2))
    return 100.0 * math.sqrt(total)


def metrics_uncertainty_reduction(entropy_series, dt_window: int = 1) -> float:
    """Mean per-step entropy reduction over the series, in bits/step.

    Averages (H[t - dt] - H[t]) / dt across the run; input series is in
    nats, output converted to bits.
    """
    h = np.asarray(entropy_series, dtype=np.float64)
    if h.size < 2 or dt_window < 1 or h.size <= dt_window:
        return 0.0
    drops = (h[:-dt_window] - h[dt_window:]) / dt_window
    return float(np.mean(drops)) / LN2
