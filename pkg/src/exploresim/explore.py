"""Frontier extraction, candidate planning, rollout prediction, and
gain-maximizing action selection, plus the live exploration step that
drives the simulator.

Candidate rollouts run on cloned belief/map state and never touch the
live estimate; they are evaluated sequentially in candidate order, and
the selection is a deterministic reduction, so results are independent of
evaluation order. Live-state execution is strictly single-writer.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .entropy import EntropySpec, map_entropy
from .grid_map import CellIndex, OccupancyGrid
from .localization import MotionInput, PoseBelief, heading_align, predict, update, wrap_angle
from .mapping import MapUpdateParams, inverse_update_scan, tempered_update_scan
from .sensor import SensorSpec, predict_scan
from .sim import NoiseSpec, SimWorld, metrics_map_error, step_sim


class NoPathError(RuntimeError):
    """Raised when no traversable path to a goal exists."""


class ExplorationComplete(Exception):
    """Signals that no candidate actions remain."""


@dataclass
class Frontier:
    """One cluster of free cells bordering unknown space."""

    cells: list[CellIndex]
    centroid: tuple[float, float]
    goal_cell: CellIndex


@dataclass
class CandidatePlan:
    """A candidate control sequence toward one frontier, with its rollout
    products once evaluated."""

    goal: Frontier
    waypoints: list[tuple[float, float]]
    controls: list[MotionInput]
    path_len: float
    index: int = 0
    rollout_belief: Optional[PoseBelief] = None
    rollout_map: Optional[OccupancyGrid] = None
    gain: Optional[float] = None


@dataclass
class AblationModes:
    """Which estimator variants run live and inside rollouts.

    loc_mode: "odom" | "decoupled" | "coupled"; map_model: "inverse" |
    "tempered". The decision_* pair governs rollouts and, when
    separate_decision_map is set, a parallel map reserved for frontier
    extraction and gain prediction ("tempered_nocov" applies the tempered
    update with the pose covariance zeroed).
    """

    loc_mode: str = "coupled"
    map_model: str = "tempered"
    decision_loc_mode: str = "coupled"
    decision_map_model: str = "tempered"
    separate_decision_map: bool = False


@dataclass
class DecisionConfig:
    """Knobs for frontier extraction, planning, and rollout prediction."""

    entropy: EntropySpec = field(default_factory=EntropySpec.shannon)
    gamma: float = 1.2
    min_cluster_size: int = 3
    free_threshold: float = 0.35
    occ_threshold: float = 0.65
    H_max: int = 400
    rollout_scan_stride: int = 5
    inflation_radius: float = 0.3
    map_params: MapUpdateParams = field(default_factory=MapUpdateParams)
    motion_noise: NoiseSpec = field(default_factory=NoiseSpec)
    v_nom: float = 1.0
    dt: float = 0.02
    omega_max: float = 2.0
    steer_gain: float = 2.5
    lookahead: float = 0.6
    waypoint_spacing: int = 5
    goal_tolerance: float = 0.5
    replan_interval: int = 50
    unknown_cost: float = 2.0

    def __post_init__(self):
        if not (0.0 < self.free_threshold < 0.5 < self.occ_threshold < 1.0):
            raise ValueError("need 0 < free_threshold < 0.5 < occ_threshold < 1")

    def process_Q(self) -> np.ndarray:
        n = self.motion_noise
        tv = n.trans_std ** 2 * self.dt
        return np.diag([tv, tv, n.rot_std ** 2 * self.dt])


# --- frontiers --------------------------------------------------------------


def extract_frontiers(grid: OccupancyGrid, cfg: DecisionConfig) -> list[Frontier]:
    """Free cells 4-adjacent to unknown space, clustered 8-connectively.

    Clusters below min_cluster_size are dropped; each survivor gets the
    free cell nearest its centroid (breadth-first over the grid) as goal.
    """
    p = grid.probs
    free = p < cfg.free_threshold
    unknown = (p >= cfg.free_threshold) & (p <= cfg.occ_threshold)

    near_unknown = np.zeros_like(free)
    near_unknown[1:, :] |= unknown[:-1, :]
    near_unknown[:-1, :] |= unknown[1:, :]
    near_unknown[:, 1:] |= unknown[:, :-1]
    near_unknown[:, :-1] |= unknown[:, 1:]
    mask = free & near_unknown
    if not mask.any():
        return []

    labels, n_labels = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    frontiers = []
    for lab in range(1, n_labels + 1):
        rows, cols = np.nonzero(labels == lab)
        if rows.size < cfg.min_cluster_size:
            continue
        cells = [CellIndex(int(r), int(c)) for r, c in zip(rows, cols)]
        cx, cy = grid.cell_centers(rows, cols)
        centroid = (float(np.mean(cx)), float(np.mean(cy)))
        # the representative goal is the cluster cell nearest the centroid
        # (cluster members are free by construction); picking within the
        # cluster keeps concave and ring-shaped fronts reachable
        d2 = (cx - centroid[0]) ** 2 + (cy - centroid[1]) ** 2
        k = int(np.argmin(d2))
        goal = CellIndex(int(rows[k]), int(cols[k]))
        frontiers.append(Frontier(cells=cells, centroid=centroid, goal_cell=goal))
    return frontiers


# --- planning ---------------------------------------------------------------


def _inflated_blocked(grid: OccupancyGrid, cfg: DecisionConfig) -> np.ndarray:
    occ = grid.probs >= cfg.occ_threshold
    radius_cells = int(math.ceil(cfg.inflation_radius / grid.resolution))
    if radius_cells <= 0:
        return occ
    yy, xx = np.ogrid[-radius_cells:radius_cells + 1, -radius_cells:radius_cells + 1]
    disk = xx * xx + yy * yy <= radius_cells * radius_cells
    return ndimage.binary_dilation(occ, structure=disk)


_MOVES = ((-1, 0, 1.0), (1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0),
          (-1, -1, math.sqrt(2)), (-1, 1, math.sqrt(2)),
          (1, -1, math.sqrt(2)), (1, 1, math.sqrt(2)))


def plan_to_goal(grid: OccupancyGrid, start_pose, goal: CellIndex,
                 cfg: DecisionConfig) -> CandidatePlan:
    """A* on the inflated grid, then a waypoint-following control rollout.

    Unknown cells are traversable at a cost multiplier — the planner is
    deliberately uncertainty-blind; penalizing unknown-space routes is the
    entropy objective's job, not the path cost's. Raises NoPathError for
    unreachable goals.
    """
    start = grid.world_to_cell(float(start_pose[0]), float(start_pose[1]))
    blocked = _inflated_blocked(grid, cfg)
    # the robot may legitimately sit inside the inflation ring; free its disc
    radius_cells = int(math.ceil(cfg.inflation_radius / grid.resolution)) + 1
    r0, r1 = max(0, start.row - radius_cells), min(grid.height, start.row + radius_cells + 1)
    c0, c1 = max(0, start.col - radius_cells), min(grid.width, start.col + radius_cells + 1)
    raw_occ = grid.probs >= cfg.occ_threshold
    blocked[r0:r1, c0:c1] &= raw_occ[r0:r1, c0:c1]

    if blocked[goal.row, goal.col]:
        raise NoPathError(f"goal {goal} inside an inflated obstacle")
    if blocked[start.row, start.col]:
        raise NoPathError(f"start cell {start} occupied")

    if start == goal:
        x, y = grid.cell_center(goal)
        return CandidatePlan(goal=None, waypoints=[(x, y)], controls=[], path_len=0.0)

    unknown = grid.probs >= cfg.free_threshold  # blocked cells never entered anyway
    res = grid.resolution
    gr, gc = goal.row, goal.col

    open_heap = [(0.0, 0, start.row, start.col)]
    g_score = {(start.row, start.col): 0.0}
    came: dict[tuple[int, int], tuple[int, int]] = {}
    closed = set()
    tie = 0
    found = False
    while open_heap:
        _, _, r, c = heapq.heappop(open_heap)
        if (r, c) in closed:
            continue
        closed.add((r, c))
        if (r, c) == (gr, gc):
            found = True
            break
        base = g_score[(r, c)]
        for dr, dc, step in _MOVES:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < grid.height and 0 <= nc < grid.width):
                continue
            if blocked[nr, nc]:
                continue
            mult = cfg.unknown_cost if unknown[nr, nc] else 1.0
            ng = base + step * mult
            if ng < g_score.get((nr, nc), math.inf) - 1e-12:
                g_score[(nr, nc)] = ng
                came[(nr, nc)] = (r, c)
                h = math.hypot(nr - gr, nc - gc)
                tie += 1
                heapq.heappush(open_heap, (ng + h, tie, nr, nc))
    if not found:
        raise NoPathError(f"no path from {start} to {goal}")

    cells = [(gr, gc)]
    while cells[-1] != (start.row, start.col):
        cells.append(came[cells[-1]])
    cells.reverse()
    path_len = sum(math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(cells, cells[1:])) * res

    picked = cells[cfg.waypoint_spacing::cfg.waypoint_spacing]
    if not picked or picked[-1] != cells[-1]:
        picked.append(cells[-1])
    waypoints = [grid.cell_centers(np.asarray([r]), np.asarray([c])) for r, c in picked]
    waypoints = [(float(x[0]), float(y[0])) for x, y in waypoints]

    controls = _follow_waypoints(start_pose, waypoints, cfg)
    return CandidatePlan(goal=None, waypoints=waypoints, controls=controls,
                         path_len=path_len)


def _steer(pose, waypoints, target_idx: int, cfg: DecisionConfig):
    """One pure-pursuit step: (MotionInput, new_target_idx, done)."""
    x, y, theta = pose
    n = len(waypoints)
    while target_idx < n - 1 and math.hypot(waypoints[target_idx][0] - x,
                                            waypoints[target_idx][1] - y) < cfg.lookahead:
        target_idx += 1
    tx, ty = waypoints[target_idx]
    dist_goal = math.hypot(waypoints[-1][0] - x, waypoints[-1][1] - y)
    if target_idx == n - 1 and dist_goal < cfg.goal_tolerance:
        return None, target_idx, True
    err = wrap_angle(math.atan2(ty - y, tx - x) - theta)
    omega = max(-cfg.omega_max, min(cfg.omega_max, cfg.steer_gain * err))
    v = cfg.v_nom if abs(err) < 1.2 else 0.15 * cfg.v_nom
    return MotionInput(v=v, omega=omega, dt=cfg.dt, Q=cfg.process_Q()), target_idx, False


def _follow_waypoints(start_pose, waypoints, cfg: DecisionConfig) -> list[MotionInput]:
    """Open-loop control sequence from simulating the follower on the mean."""
    pose = np.array([float(start_pose[0]), float(start_pose[1]), float(start_pose[2])])
    controls: list[MotionInput] = []
    target = 0
    for _ in range(cfg.H_max):
        u, target, done = _steer(pose, waypoints, target, cfg)
        if done:
            break
        controls.append(u)
        pose[0] += u.v * math.cos(pose[2]) * u.dt
        pose[1] += u.v * math.sin(pose[2]) * u.dt
        pose[2] = wrap_angle(pose[2] + u.omega * u.dt)
    return controls


# --- rollout and selection --------------------------------------------------


def _apply_loc_update(belief, scan, grid, spec, cfg, mode):
    if mode == "odom":
        return belief
    if mode == "decoupled":
        return update(belief, scan, grid, spec, cfg.gamma,
                      decoupled=True, occ_threshold=cfg.occ_threshold)
    return update(belief, scan, grid, spec, cfg.gamma)


def _apply_map_update(grid, scan, belief, cfg, spec, model):
    if model == "inverse":
        return inverse_update_scan(grid, scan, belief.mean, cfg.map_params)
    if model == "tempered_nocov":
        flat = PoseBelief(belief.mean.copy(), np.zeros((3, 3)))
        return tempered_update_scan(grid, scan, flat, cfg.map_params, spec)
    return tempered_update_scan(grid, scan, belief, cfg.map_params, spec)


def rollout(plan: CandidatePlan, belief: PoseBelief, grid: OccupancyGrid,
            cfg: DecisionConfig, spec: SensorSpec,
            modes: AblationModes | None = None) -> CandidatePlan:
    """Predict the belief/map evolution along the plan and score its gain.

    Clones the inputs (live state is never mutated), then alternates
    motion prediction with scan-rate predicted measurements: a noiseless
    raycast on the rolling map, the localization correction, and the map
    update — no heading refinement inside rollouts. The gain is the drop
    from the current map entropy to the predicted one. A rollout whose
    mean exits the grid is truncated at the last valid step.
    """
    modes = modes or AblationModes()
    bel = belief.copy()
    rolled = grid.copy()
    h_now = map_entropy(grid, cfg.entropy)

    for i, u in enumerate(plan.controls[:cfg.H_max]):
        nxt = predict(bel, u)
        if not rolled.contains_point(nxt.mean[0], nxt.mean[1]):
            break
        bel = nxt
        if (i + 1) % cfg.rollout_scan_stride == 0:
            scan = predict_scan(bel.mean, rolled, spec, cfg.occ_threshold)
            bel = _apply_loc_update(bel, scan, rolled, spec, cfg,
                                    modes.decision_loc_mode)
            _apply_map_update(rolled, scan, bel, cfg, spec, modes.decision_map_model)

    plan.rollout_belief = bel
    plan.rollout_map = rolled
    plan.gain = h_now - map_entropy(rolled, cfg.entropy)
    return plan


def select_action(candidates: list[CandidatePlan], cfg: DecisionConfig) -> CandidatePlan:
    """Argmax of predicted gain; exact ties prefer the shorter path, then
    the lower candidate index. Raises ExplorationComplete when empty."""
    scored = [c for c in candidates if c.gain is not None]
    if not scored:
        raise ExplorationComplete("no completed candidates")
    best_gain = max(c.gain for c in scored)
    tied = [c for c in scored if c.gain == best_gain]
    tied.sort(key=lambda c: (c.path_len, c.index))
    return tied[0]


# --- live loop --------------------------------------------------------------


@dataclass
class ExplorationState:
    """Live belief + map(s) plus per-run bookkeeping."""

    belief: PoseBelief
    grid: OccupancyGrid
    modes: AblationModes = field(default_factory=AblationModes)
    decision_grid: Optional[OccupancyGrid] = None
    use_heading_align: bool = False
    est_traj: list = field(default_factory=list)
    true_traj: list = field(default_factory=list)
    entropy_series: list = field(default_factory=list)
    metrics_rows: list = field(default_factory=list)
    decisions: list = field(default_factory=list)
    decision_count: int = 0
    collisions: int = 0
    _err_sq_sum: float = 0.0
    _err_abs_sum: float = 0.0
    _err_n: int = 0
    _blacklist: set = field(default_factory=set)
    _blacklist_frontier_count: int = -1

    def decision_map(self) -> OccupancyGrid:
        return self.decision_grid if self.decision_grid is not None else self.grid

    def record_metrics(self, world: SimWorld) -> None:
        ex, ey = self.belief.mean[0], self.belief.mean[1]
        tx, ty = world.true_pose[0], world.true_pose[1]
        err = math.hypot(ex - tx, ey - ty)
        self._err_sq_sum += err * err
        self._err_abs_sum += err
        self._err_n += 1
        self.est_traj.append(self.belief.mean.copy())
        self.true_traj.append(world.true_pose.copy())
        h_nats = map_entropy(self.grid, EntropySpec.shannon())
        self.entropy_series.append(h_nats)
        self.metrics_rows.append({
            "step": world.step,
            "rmse": math.sqrt(self._err_sq_sum / self._err_n),
            "mae": self._err_abs_sum / self._err_n,
            "map_error": metrics_map_error(self.grid, world.truth),
            "map_entropy_nats": h_nats,
            "trace_cov": self.belief.trace(),
            "decisions": self.decision_count,
        })


@dataclass
class StepReport:
    status: str                      # "ok" | "complete"
    steps_executed: int = 0
    decision: Optional[dict] = None


def _clear_footprint(grid: OccupancyGrid, mean) -> None:
    """The cell under the robot is free by virtue of being occupied by the
    robot; raycasts can never observe it (zero-range returns are guarded)."""
    if grid.contains_point(mean[0], mean[1]):
        cell = grid.world_to_cell(mean[0], mean[1])
        grid.probs[cell.row, cell.col] = min(grid.probs[cell.row, cell.col], 0.1)


def _estimation_scan_update(state: ExplorationState, world: SimWorld, scan,
                            cfg: DecisionConfig) -> None:
    spec = world.spec
    state.belief = _apply_loc_update(state.belief, scan, state.grid, spec, cfg,
                                     state.modes.loc_mode)
    if state.use_heading_align and state.modes.loc_mode != "odom":
        state.belief = heading_align(state.belief, scan, state.grid, spec)
    _apply_map_update(state.grid, scan, state.belief, cfg, spec, state.modes.map_model)
    _clear_footprint(state.grid, state.belief.mean)
    if state.decision_grid is not None:
        _apply_map_update(state.decision_grid, scan, state.belief, cfg, spec,
                          state.modes.decision_map_model)
        _clear_footprint(state.decision_grid, state.belief.mean)


def bootstrap(state: ExplorationState, world: SimWorld, cfg: DecisionConfig) -> None:
    """Take one standing scan so the first decision has frontiers."""
    scan = world.observe()
    _estimation_scan_update(state, world, scan, cfg)
    state.record_metrics(world)


def explore_step(state: ExplorationState, cfg: DecisionConfig, spec: SensorSpec,
                 world: SimWorld, max_steps: Optional[int] = None) -> StepReport:
    """One decision plus its execution until a replan trigger.

    extract -> plan -> rollout -> select, then the chosen plan is chased
    closed-loop against the simulator, re-running prediction, correction,
    and map updates on every real scan. Execution ends at goal arrival, a
    blocked path, a collision, the replan interval, or max_steps.
    Returns a completion report when no frontier yields a candidate.
    """
    dmap = state.decision_map()
    frontiers = extract_frontiers(dmap, cfg)
    if not frontiers:
        return StepReport(status="complete")
    if state._blacklist_frontier_count != len(frontiers):
        state._blacklist.clear()
        state._blacklist_frontier_count = len(frontiers)
    frontiers = [f for f in frontiers if f.goal_cell not in state._blacklist]
    if not frontiers:
        return StepReport(status="complete")

    candidates = []
    for frontier in frontiers:
        gx, gy = dmap.cell_center(frontier.goal_cell)
        if math.hypot(gx - state.belief.mean[0],
                      gy - state.belief.mean[1]) < cfg.goal_tolerance:
            continue  # already serviced from here; no motion possible
        try:
            plan = plan_to_goal(dmap, state.belief.mean, frontier.goal_cell, cfg)
        except NoPathError:
            snapped = _snap_goal_outside_inflation(dmap, frontier.goal_cell, cfg)
            if snapped is None:
                continue
            try:
                plan = plan_to_goal(dmap, state.belief.mean, snapped, cfg)
            except NoPathError:
                continue
        plan.goal = frontier
        plan.index = len(candidates)
        candidates.append(plan)
    if not candidates:
        return StepReport(status="complete")

    for plan in candidates:
        rollout(plan, state.belief, dmap, cfg, spec, state.modes)
    try:
        chosen = select_action(candidates, cfg)
    except ExplorationComplete:
        return StepReport(status="complete")

    state.decision_count += 1
    decision = {
        "step": world.step,
        "frontiers": len(frontiers),
        "candidates": [{
            "goal": [int(c.goal.goal_cell.row), int(c.goal.goal_cell.col)],
            "path_len": round(c.path_len, 6),
            "gain": round(float(c.gain), 9),
            "trace_cov": round(float(c.rollout_belief.trace()), 9),
        } for c in candidates],
        "chosen": chosen.index,
    }
    state.decisions.append(decision)

    executed = _execute_plan(state, chosen, cfg, world, max_steps)
    if executed == 0:
        state._blacklist.add(chosen.goal.goal_cell)
    return StepReport(status="ok", steps_executed=executed, decision=decision)


def _snap_goal_outside_inflation(grid: OccupancyGrid, goal: CellIndex,
                                 cfg: DecisionConfig, max_radius_m: float = 1.0):
    """Nearest free cell outside the inflated mask, breadth-first from a
    goal that the inflation ring swallowed; None when none is close."""
    blocked = _inflated_blocked(grid, cfg)
    if not blocked[goal.row, goal.col]:
        return goal
    max_steps = int(max_radius_m / grid.resolution)
    seen = {goal}
    queue = deque([(goal, 0)])
    while queue:
        cell, depth = queue.popleft()
        if depth > max_steps:
            continue
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            r, c = cell.row + dr, cell.col + dc
            if not (0 <= r < grid.height and 0 <= c < grid.width):
                continue
            nxt = CellIndex(r, c)
            if nxt in seen:
                continue
            seen.add(nxt)
            if not blocked[r, c] and grid.probs[r, c] < cfg.free_threshold:
                return nxt
            queue.append((nxt, depth + 1))
    return None


def _path_blocked(state: ExplorationState, waypoints, target_idx: int,
                  cfg: DecisionConfig) -> bool:
    dmap = state.decision_map()
    for wx, wy in waypoints[target_idx:target_idx + 3]:
        if not dmap.contains_point(wx, wy):
            continue
        cell = dmap.world_to_cell(wx, wy)
        if dmap.probs[cell.row, cell.col] >= cfg.occ_threshold:
            return True
    return False


def _execute_plan(state: ExplorationState, plan: CandidatePlan, cfg: DecisionConfig,
                  world: SimWorld, max_steps: Optional[int]) -> int:
    target = 0
    executed = 0
    budget = min(cfg.H_max, cfg.replan_interval)
    while executed < budget:
        if max_steps is not None and world.step >= max_steps:
            break
        u, target, done = _steer(state.belief.mean, plan.waypoints, target, cfg)
        if done:
            break
        if _path_blocked(state, plan.waypoints, target, cfg):
            break
        outcome = step_sim(world, u)
        executed += 1
        state.belief = predict(state.belief, outcome.odom)
        if outcome.scan is not None:
            _estimation_scan_update(state, world, outcome.scan, cfg)
            state.record_metrics(world)
        if outcome.collided:
            state.collisions += 1
            break
    return executed
