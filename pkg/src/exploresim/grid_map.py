"""Occupancy-grid data structure, world/grid geometry, ray traversal, map I/O.

Probabilities are stored directly (not log-odds) because the coupled map
update is a ratio-form Bayes rule and the pose filter consumes raw p.
Every write path clamps into [P_MIN, 1 - P_MIN] so entropies and
likelihood weights stay finite.

Concurrency: reads are safe under concurrent readers; any mutation
requires exclusive access to the grid arrays.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

# Probability clamp floor; keeps cell entropies and Bayes weights finite.
P_MIN = 1e-4


class MapFormatError(ValueError):
    """Raised when a map file cannot be parsed; message carries line/offset."""


class OutOfBoundsError(ValueError):
    """Raised when a world point or cell index falls outside the grid."""


class CellIndex(NamedTuple):
    row: int
    col: int


@dataclass
class RaySets:
    """Cells a beam interacts with: traversed (free evidence) and terminal.

    pass_cells are ordered by increasing distance from the sensor origin.
    hit_cell is absent for max-range readings and for rays truncated at
    the grid boundary.
    """

    pass_cells: list[CellIndex] = field(default_factory=list)
    hit_cell: Optional[CellIndex] = None


@dataclass
class OccupancyGrid:
    """Dense 2D occupancy grid with per-cell hit counters.

    probs[row, col] is the occupancy probability of the cell; cell (0, 0)
    has its corner at ``origin`` and centers sit at
    origin + (index + 0.5) * resolution. hit_counts accumulates terminal
    beam interactions per cell (saturated by the map updater).
    """

    width: int
    height: int
    resolution: float
    origin: tuple[float, float]
    probs: np.ndarray
    hit_counts: np.ndarray

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError(f"resolution must be > 0, got {self.resolution}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"grid dims must be > 0, got {self.width}x{self.height}")
        self.probs = np.asarray(self.probs, dtype=np.float64).reshape(self.height, self.width)
        self.probs = np.clip(self.probs, P_MIN, 1.0 - P_MIN)
        self.hit_counts = np.asarray(self.hit_counts, dtype=np.int32).reshape(self.height, self.width)

    @classmethod
    def unknown(cls, width: int, height: int, resolution: float,
                origin: tuple[float, float] = (0.0, 0.0)) -> "OccupancyGrid":
        """All-unknown grid (p = 0.5 everywhere, zero hit counts)."""
        return cls(width, height, resolution, origin,
                   np.full((height, width), 0.5), np.zeros((height, width), np.int32))

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.width, self.height, self.resolution, self.origin,
                             self.probs.copy(), self.hit_counts.copy())

    # --- geometry -------------------------------------------------------

    def in_bounds(self, idx: CellIndex) -> bool:
        return 0 <= idx.row < self.height and 0 <= idx.col < self.width

    def contains_point(self, x: float, y: float) -> bool:
        ox, oy = self.origin
        return (ox <= x < ox + self.width * self.resolution
                and oy <= y < oy + self.height * self.resolution)

    def world_to_cell(self, x: float, y: float) -> CellIndex:
        """Index of the cell containing a world point (corner-inclusive)."""
        if not self.contains_point(x, y):
            raise OutOfBoundsError(f"point ({x}, {y}) outside grid extent")
        ox, oy = self.origin
        col = int(math.floor((x - ox) / self.resolution))
        row = int(math.floor((y - oy) / self.resolution))
        # floating-point edge: a point epsilon-close to the far border
        col = min(col, self.width - 1)
        row = min(row, self.height - 1)
        return CellIndex(row, col)

    def cell_center(self, idx) -> tuple[float, float]:
        row, col = idx
        ox, oy = self.origin
        return (ox + (col + 0.5) * self.resolution,
                oy + (row + 0.5) * self.resolution)

    def cell_centers(self, rows: np.ndarray, cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized cell centers for index arrays."""
        ox, oy = self.origin
        return (ox + (cols + 0.5) * self.resolution,
                oy + (rows + 0.5) * self.resolution)

    def clamp_probs(self) -> None:
        np.clip(self.probs, P_MIN, 1.0 - P_MIN, out=self.probs)

    def checksum(self) -> int:
        """Cheap content hash for mutation checks in tests."""
        return hash((self.probs.tobytes(), self.hit_counts.tobytes()))


def world_to_cell(grid: OccupancyGrid, x: float, y: float) -> CellIndex:
    return grid.world_to_cell(x, y)


def traverse_ray(grid: OccupancyGrid, origin: tuple[float, float], angle: float,
                 rng: float, z_max: float) -> RaySets:
    """Voxel-walk a beam across the grid.

    pass_cells collects every cell strictly before the endpoint cell; the
    endpoint cell becomes hit_cell only for a genuine detection
    (rng < z_max). A max-range reading or a ray leaving the grid yields
    pass cells only. Ties on exact corner crossings step the column axis
    first, which keeps the traversal deterministic.
    """
    rows, cols, has_hit = traverse_ray_arrays(grid, origin, angle, rng, z_max)
    cells = [CellIndex(int(r), int(c)) for r, c in zip(rows, cols)]
    if has_hit:
        return RaySets(pass_cells=cells[:-1], hit_cell=cells[-1])
    return RaySets(pass_cells=cells, hit_cell=None)


def traverse_ray_arrays(grid: OccupancyGrid, origin: tuple[float, float], angle: float,
                        rng: float, z_max: float) -> tuple[np.ndarray, np.ndarray, bool]:
    """Array-returning core of traverse_ray: (rows, cols, endpoint_is_hit).

    When endpoint_is_hit is True the last entry of rows/cols is the hit
    cell; everything before it (all of it otherwise) is pass cells.
    """
    if rng < 0 or rng > z_max:
        raise ValueError(f"range {rng} outside [0, z_max={z_max}]")
    x0, y0 = origin
    if not grid.contains_point(x0, y0):
        raise OutOfBoundsError(f"ray origin ({x0}, {y0}) outside grid")

    res = grid.resolution
    ox, oy = grid.origin
    dx, dy = math.cos(angle), math.sin(angle)

    col = int(math.floor((x0 - ox) / res))
    row = int(math.floor((y0 - oy) / res))
    col = min(col, grid.width - 1)
    row = min(row, grid.height - 1)

    step_c = 1 if dx > 0 else -1
    step_r = 1 if dy > 0 else -1
    # distance along the ray to the next column/row boundary
    if dx != 0.0:
        next_cx = ox + (col + (step_c > 0)) * res
        t_max_c = (next_cx - x0) / dx
        t_delta_c = res / abs(dx)
    else:
        t_max_c = math.inf
        t_delta_c = math.inf
    if dy != 0.0:
        next_ry = oy + (row + (step_r > 0)) * res
        t_max_r = (next_ry - y0) / dy
        t_delta_r = res / abs(dy)
    else:
        t_max_r = math.inf
        t_delta_r = math.inf

    out_rows = [row]
    out_cols = [col]
    truncated = False
    # a crossing at t = rng is taken (within fp slack): the endpoint sits
    # on the boundary and, by the floor convention, belongs to the next cell
    t_end = rng + 1e-9
    while True:
        if t_max_c <= t_max_r:  # tie -> column step first
            if t_max_c > t_end:
                break
            col += step_c
            t_max_c += t_delta_c
        else:
            if t_max_r > t_end:
                break
            row += step_r
            t_max_r += t_delta_r
        if not (0 <= row < grid.height and 0 <= col < grid.width):
            truncated = True
            break
        out_rows.append(row)
        out_cols.append(col)

    has_hit = (rng < z_max) and not truncated
    return np.asarray(out_rows, np.intp), np.asarray(out_cols, np.intp), has_hit


# --- file I/O -------------------------------------------------------------

_META_KEYS = ("width", "height", "resolution", "origin_x", "origin_y")


def _meta_path(path: str) -> str:
    return str(path) + ".meta"


def _write_meta(grid: OccupancyGrid, path: str) -> None:
    with open(_meta_path(path), "w") as f:
        f.write(f"width={grid.width}\n")
        f.write(f"height={grid.height}\n")
        f.write(f"resolution={grid.resolution!r}\n")
        f.write(f"origin_x={grid.origin[0]!r}\n")
        f.write(f"origin_y={grid.origin[1]!r}\n")


def _read_meta(path: str) -> dict:
    meta = {}
    try:
        with open(_meta_path(path)) as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise MapFormatError(f"{_meta_path(path)}:{lineno}: expected key=value")
                key, val = line.split("=", 1)
                meta[key.strip()] = val.strip()
    except FileNotFoundError:
        pass
    return meta


def save_map(grid: OccupancyGrid, path: str) -> None:
    """Write a PGM P5 snapshot (dark = occupied) plus a metadata sidecar.

    Pixel = round(255 * (1 - prob)) with half-up rounding, so p = 0.5
    encodes as 128 and the clamp extremes hit 0 / 255 exactly.
    """
    pixels = np.floor(255.0 * (1.0 - grid.probs) + 0.5).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{grid.width} {grid.height}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())
    _write_meta(grid, path)


def _parse_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    # header: magic, width, height, maxval separated by whitespace/comments
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = re.match(rb"(\s*(#[^\n]*\n)?)*", data[pos:])
        pos += m.end()
        m = re.match(rb"\S+", data[pos:])
        if m is None:
            raise MapFormatError(f"{path}: truncated PGM header at offset {pos}")
        tokens.append(m.group(0))
        pos += m.end()
    if tokens[0] != b"P5":
        raise MapFormatError(f"{path}: expected P5 magic, got {tokens[0]!r}")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as e:
        raise MapFormatError(f"{path}: bad PGM header token: {e}") from e
    if maxval != 255:
        raise MapFormatError(f"{path}: only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise MapFormatError(
            f"{path}: raster has {len(raster)} bytes, expected {width * height} at offset {pos}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).astype(np.float64)


def _parse_ascii(path: str) -> np.ndarray:
    rows = []
    width = None
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            vals = []
            for tok in line.split():
                try:
                    vals.append(float(tok))
                except ValueError:
                    raise MapFormatError(f"{path}:{lineno}: not a float: {tok!r}") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise MapFormatError(f"{path}:{lineno}: expected {width} values, got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise MapFormatError(f"{path}: empty map file")
    return np.asarray(rows, dtype=np.float64)


def load_map(path: str, format: str = "pgm", resolution: float = 1.0,
             origin: tuple[float, float] = (0.0, 0.0)) -> OccupancyGrid:
    """Load a floorplan raster into an occupancy grid.

    PGM pixels map to probabilities as p = 1 - pixel/255 (pixel 0 ->
    occupied, 255 -> free, mid-gray -> unknown); ASCII files carry the
    probabilities directly (1 -> occupied, 0 -> free, 0.5 -> unknown).
    Both are clamped into [P_MIN, 1 - P_MIN]; hit counts start at zero.
    A key=value sidecar, if present, overrides resolution/origin.
    """
    if format == "pgm":
        raw = _parse_pgm(path)
        probs = 1.0 - raw / 255.0
    elif format == "ascii":
        probs = _parse_ascii(path)
    else:
        raise ValueError(f"unknown map format {format!r}")

    meta = _read_meta(path)
    if meta:
        try:
            resolution = float(meta.get("resolution", resolution))
            origin = (float(meta.get("origin_x", origin[0])),
                      float(meta.get("origin_y", origin[1])))
        except ValueError as e:
            raise MapFormatError(f"{_meta_path(path)}: bad metadata value: {e}") from e

    height, width = probs.shape
    return OccupancyGrid(width, height, resolution, origin,
                         probs, np.zeros((height, width), np.int32))
