"""2D active-exploration simulator with coupled localization-mapping uncertainty.

Subpackages split along the pipeline: occupancy grids and ray geometry
(grid_map), beam sensing (sensor), Gaussian pose filtering (localization),
occupancy updates (mapping), generalized entropies (entropy), frontier
exploration and action selection (explore), ground-truth simulation and
metrics (sim), experiment harness (cli), bundled synthetic floorplans
(worlds).
"""

from .grid_map import CellIndex, OccupancyGrid, RaySets, P_MIN, traverse_ray, load_map, save_map
from .sensor import SensorSpec, BeamScan, beam_likelihood, simulate_scan, predict_scan
from .localization import PoseBelief, MotionInput, predict, update, coupled_variance, heading_align
from .mapping import (
    MapUpdateParams,
    temper_weight,
    projected_variance,
    tempered_update_cell,
    tempered_update_scan,
    inverse_update_scan,
)
from .entropy import EntropySpec, GainReport, cell_entropy, map_entropy, information_gain

__all__ = [
    "CellIndex", "OccupancyGrid", "RaySets", "P_MIN", "traverse_ray", "load_map", "save_map",
    "SensorSpec", "BeamScan", "beam_likelihood", "simulate_scan", "predict_scan",
    "PoseBelief", "MotionInput", "predict", "update", "coupled_variance", "heading_align",
    "MapUpdateParams", "temper_weight", "projected_variance",
    "tempered_update_cell", "tempered_update_scan", "inverse_update_scan",
    "EntropySpec", "GainReport", "cell_entropy", "map_entropy", "information_gain",
]
