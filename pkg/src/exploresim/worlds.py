"""Bundled synthetic floorplans at 0.2 m resolution.

Three desk-scale worlds (a corridor ring, a room grid, a loop with
branches) stand in for large building floorplans, plus a partially
surveyed hall used by the route-selection fixtures. Truth grids are
binary: occupied cells at 1 - P_MIN, free at P_MIN.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .grid_map import OccupancyGrid, P_MIN

RESOLUTION = 0.2


def _blank(size_m: float) -> np.ndarray:
    n = int(round(size_m / RESOLUTION))
    return np.ones((n, n), dtype=bool)  # start fully occupied, carve free space


def _carve(occ: np.ndarray, x0: float, y0: float, x1: float, y1: float) -> None:
    """Mark the axis-aligned box [x0,x1) x [y0,y1) (meters) as free."""
    c0 = int(round(x0 / RESOLUTION))
    c1 = int(round(x1 / RESOLUTION))
    r0 = int(round(y0 / RESOLUTION))
    r1 = int(round(y1 / RESOLUTION))
    occ[r0:r1, c0:c1] = False


def _fill(occ: np.ndarray, x0: float, y0: float, x1: float, y1: float) -> None:
    c0 = int(round(x0 / RESOLUTION))
    c1 = int(round(x1 / RESOLUTION))
    r0 = int(round(y0 / RESOLUTION))
    r1 = int(round(y1 / RESOLUTION))
    occ[r0:r1, c0:c1] = True


def _to_grid(occ: np.ndarray) -> OccupancyGrid:
    n = occ.shape[0]
    probs = np.where(occ, 1.0 - P_MIN, P_MIN)
    return OccupancyGrid(occ.shape[1], occ.shape[0], RESOLUTION, (0.0, 0.0),
                         probs, np.zeros_like(occ, dtype=np.int32))


def corridor_world() -> OccupancyGrid:
    """25 x 25 m ring corridor (2 m wide) around a solid core.

    A single loop: drift accumulated along the ring cannot cancel, which
    is what the odometry-only baseline trips over.
    """
    occ = _blank(25.0)
    _carve(occ, 1.0, 1.0, 24.0, 24.0)   # hollow the building
    _fill(occ, 3.0, 3.0, 22.0, 22.0)    # solid core leaves a 2 m ring
    return _to_grid(occ)


def rooms_world() -> OccupancyGrid:
    """40 x 40 m: central corridor with six rooms off both sides."""
    occ = _blank(40.0)
    _carve(occ, 1.0, 18.5, 39.0, 21.5)          # central corridor, 3 m
    for i in range(3):
        x0 = 2.0 + i * 13.0
        _carve(occ, x0, 2.0, x0 + 11.0, 17.0)   # south rooms
        _carve(occ, x0, 23.0, x0 + 11.0, 38.0)  # north rooms
        door = x0 + 4.5
        _carve(occ, door, 17.0, door + 2.0, 18.5)
        _carve(occ, door, 21.5, door + 2.0, 23.0)
    return _to_grid(occ)


def loop_world() -> OccupancyGrid:
    """50 x 50 m loop corridor with two dead-end branches."""
    occ = _blank(50.0)
    _carve(occ, 2.0, 2.0, 48.0, 48.0)
    _fill(occ, 5.0, 5.0, 45.0, 45.0)            # 3 m ring
    _carve(occ, 22.0, 5.0, 25.0, 30.0)          # south branch into the core
    _carve(occ, 5.0, 22.0, 30.0, 25.0)          # west branch into the core
    return _to_grid(occ)


def route_choice_world(seed: int = 0) -> tuple[OccupancyGrid, dict]:
    """Partial survey for route-selection fixtures: a 36 x 36 m site
    whose north side is one large dark hall.

    The estimate knows the spawn hall, a walled corridor up the west side
    ending in a doorway elbow at the hall's edge, and the forecourt
    visible through a gap in the spawn hall's north wall; everything else
    is unknown. One candidate goal sits just inside the west doorway
    (reached through surveyed, wall-lined space), the other deep in the
    dark interior (reached by a long blind crossing with no occupied
    cell inside sensor reach). Known cells get a small seeded probability
    jitter so repeated trials differ.
    """
    n = int(round(36.0 / RESOLUTION))
    g = OccupancyGrid.unknown(n, n, RESOLUTION)
    g.probs[:] = 0.5

    def box(x0, y0, x1, y1, val):
        g.probs[int(round(y0 / RESOLUTION)):int(round(y1 / RESOLUTION)),
                int(round(x0 / RESOLUTION)):int(round(x1 / RESOLUTION))] = val

    box(4.0, 2.0, 32.0, 10.0, P_MIN)                       # spawn hall
    box(3.6, 1.6, 32.4, 2.0, 1 - P_MIN)
    box(3.6, 10.0, 32.4, 10.4, 1 - P_MIN)
    box(3.6, 2.0, 4.0, 10.0, 1 - P_MIN)
    box(32.0, 2.0, 32.4, 10.0, 1 - P_MIN)
    box(4.6, 10.0, 6.6, 23.0, P_MIN)                       # west corridor
    box(4.2, 10.4, 4.6, 23.4, 1 - P_MIN)
    box(6.6, 10.4, 7.0, 20.2, 1 - P_MIN)
    box(4.6, 20.6, 8.0, 23.0, P_MIN)                       # elbow to hall edge
    box(4.6, 23.0, 8.4, 23.4, 1 - P_MIN)
    box(6.6, 20.2, 8.0, 20.6, 1 - P_MIN)
    box(17.0, 10.0, 19.0, 10.4, 0.5)                       # gap toward the dark hall
    box(14.5, 10.4, 21.5, 14.5, P_MIN)                     # forecourt seen through it

    rng = np.random.default_rng(seed)
    known = np.abs(g.probs - 0.5) > 0.01
    jitter = rng.normal(0.0, 0.01, size=g.probs.shape)
    g.probs[known] = np.clip(g.probs[known] + jitter[known], P_MIN, 1.0 - P_MIN)

    info = {
        "spawn": (18.0, 6.0, math.pi / 2),
        "goal_surveyed": (10.5, 21.8),
        "goal_dark": (18.0, 24.0),
    }
    return g, info


_BUILTINS = {
    "corridor": corridor_world,
    "rooms": rooms_world,
    "loop": loop_world,
}


def get_world(name: str) -> OccupancyGrid:
    """Resolve a builtin world name ('corridor', 'rooms', 'loop')."""
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise KeyError(f"unknown builtin world {name!r}; have {sorted(_BUILTINS)}") from None


def sample_spawn(truth: OccupancyGrid, rng: np.random.Generator,
                 clearance_m: float = 2.0) -> tuple[float, float, float]:
    """Uniformly pick a free cell at least clearance_m from any occupied
    cell; heading uniform. Falls back to the max-clearance cell when the
    requested clearance is infeasible."""
    free = truth.probs < 0.5
    dist = ndimage.distance_transform_edt(free) * truth.resolution
    rows, cols = np.nonzero(dist >= clearance_m)
    if rows.size == 0:
        # narrow world: relax to three quarters of the best clearance
        rows, cols = np.nonzero(dist >= 0.75 * float(dist.max()))
    pick = int(rng.integers(rows.size))
    x, y = truth.cell_centers(rows[pick], cols[pick])
    theta = float(rng.uniform(-math.pi, math.pi))
    return float(x), float(y), theta
