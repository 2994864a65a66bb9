"""Occupancy map updates.

The tempered update marginalizes the pose posterior into each beam
likelihood — the projected pose covariance widens both hypothesis
variances, so an uncertain robot writes conservatively — and tempers each
hypothesis likelihood by a weight derived from the cell's accumulated hit
count, so heavily confirmed cells resist noisy new evidence. The two
hypothesis densities are normalized into a binary likelihood before
tempering: raw densities carry units of 1/m, and raising them to unequal
weight exponents would make the posterior depend on the length unit (a
saturated cell would then gain probability from every traversal simply
because densities sit below one). Normalization cancels entirely for
equal weights, so the balanced-weight arithmetic is untouched. The
classical log-odds inverse model is kept as the baseline.

Within one beam the touched cells are disjoint and could be written in
parallel; beams sharing cells are serialized in ascending beam index, so
the result is bitwise deterministic for a fixed scan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid_map import OccupancyGrid, P_MIN, traverse_ray_arrays
from .localization import PoseBelief

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class MapUpdateParams:
    """Tempering cap plus the baseline's log-odds increments.

    pass_cell_weighting selects how traversed (non-terminal) cells are
    tempered: "as_stored" uses each cell's accumulated hit count (zero
    for never-hit cells, which routes early free-space evidence through
    the occupied-hypothesis likelihood alone); "forced_one" applies unit
    weight to both hypotheses, keeping the ratio form for every cell.
    """

    N_max: int = 3
    l_occ: float = 0.85
    l_free: float = -0.4
    pass_cell_weighting: str = "as_stored"

    def __post_init__(self):
        if self.N_max < 1:
            raise ValueError(f"N_max must be >= 1, got {self.N_max}")
        if not (self.l_occ > 0 > self.l_free):
            raise ValueError(f"need l_occ > 0 > l_free, got {self.l_occ}, {self.l_free}")
        if self.pass_cell_weighting not in ("as_stored", "forced_one"):
            raise ValueError(f"unknown pass_cell_weighting {self.pass_cell_weighting!r}")


def temper_weight(n_acc, occupied_hypothesis: bool, N_max: int):
    """Evidence-tempering weight from the accumulated hit count.

    Occupied hypothesis: (N_max - n) / N_max; unoccupied: n / N_max.
    Counts clamp into [0, N_max], so a saturated cell freezes the
    occupied branch entirely. Accepts arrays.
    """
    n = np.clip(np.asarray(n_acc, dtype=np.float64), 0, N_max)
    if occupied_hypothesis:
        return (N_max - n) / N_max
    return n / N_max


def projected_variance(pose_cov: np.ndarray, H, occupied: bool, spec) -> float:
    """Scalar H Sigma H^T plus the hypothesis variance: the pose
    uncertainty projected onto the beam's range axis."""
    H = np.asarray(H, dtype=np.float64).reshape(3)
    base = float(H @ pose_cov @ H)
    return base + (spec.R_o if occupied else spec.R_u)


def _log_gauss(r, var):
    return -0.5 * (_LOG_2PI + np.log(var)) - 0.5 * r * r / var


def _posterior_from_logs(p_prior, w_occ, log_l_occ, w_unocc, log_l_unocc):
    """Ratio-form Bayes with tempered, normalized log-likelihoods.

    The hypothesis densities are normalized to sum to one before the
    weight exponents apply, keeping the update invariant to the density
    scale (for w_occ == w_unocc the normalization cancels exactly).
    """
    p = np.clip(np.asarray(p_prior, dtype=np.float64), P_MIN, 1.0 - P_MIN)
    log_norm = np.logaddexp(log_l_occ, log_l_unocc)
    log_odds = (np.log(p) - np.log1p(-p)
                + w_occ * (log_l_occ - log_norm)
                - w_unocc * (log_l_unocc - log_norm))
    post = 1.0 / (1.0 + np.exp(-log_odds))
    return np.clip(post, P_MIN, 1.0 - P_MIN)


def tempered_update_cell(p_prior: float, z: float, expected: float, n_acc: int,
                         pose_belief: PoseBelief, H, params: MapUpdateParams,
                         spec) -> float:
    """Posterior occupancy of one cell from one beam reading.

    Both hypothesis likelihoods are Gaussians in the residual
    z - expected with the pose covariance projected into their variances,
    raised to their tempering weights before the Bayes ratio. Output is
    clamped into [P_MIN, 1 - P_MIN].
    """
    H = np.asarray(H, dtype=np.float64).reshape(3)
    base = float(H @ pose_belief.cov @ H)
    r = z - expected
    w_occ = float(temper_weight(n_acc, True, params.N_max))
    w_unocc = float(temper_weight(n_acc, False, params.N_max))
    return float(_posterior_from_logs(
        p_prior, w_occ, _log_gauss(r, base + spec.R_o),
        w_unocc, _log_gauss(r, base + spec.R_u)))


def tempered_update_scan(grid: OccupancyGrid, scan, belief: PoseBelief,
                         params: MapUpdateParams, spec) -> OccupancyGrid:
    """Apply the tempered update for every cell touched by the scan.

    belief must be the already-corrected pose posterior of the same step.
    Beams are processed in ascending index; a beam's terminal cell has its
    hit count bumped (saturating at N_max) before weights are computed.
    Traversed (non-terminal) cells contribute free-space evidence only,
    so max-range beams — which have no terminal cell — never raise any
    occupancy. The grid is mutated in place and returned.
    """
    mean = belief.mean
    cov = belief.cov
    x, y, theta = mean
    if not grid.contains_point(x, y):
        return grid  # estimate wandered off the map; nothing to anchor to
    res_guard = grid.resolution / 2.0
    forced = params.pass_cell_weighting == "forced_one"
    n_max = params.N_max

    for k in range(len(scan.ranges)):
        z = float(scan.ranges[k])
        rows, cols, has_hit = traverse_ray_arrays(
            grid, (x, y), theta + float(scan.angles[k]), min(z, spec.z_max), spec.z_max)

        if has_hit:
            hr, hc = int(rows[-1]), int(cols[-1])
            grid.hit_counts[hr, hc] = min(int(grid.hit_counts[hr, hc]) + 1, n_max)

        ox, oy = grid.origin
        dxv = x - (ox + (cols + 0.5) * grid.resolution)
        dyv = y - (oy + (rows + 0.5) * grid.resolution)
        d2 = dxv * dxv + dyv * dyv
        keep = d2 >= res_guard * res_guard
        if not np.any(keep):
            continue
        hit_kept = has_hit and bool(keep[-1])
        rows, cols, d2 = rows[keep], cols[keep], d2[keep]
        d = np.sqrt(d2)
        hx = dxv[keep] / d
        hy = dyv[keep] / d
        proj = (cov[0, 0] * hx * hx + 2.0 * cov[0, 1] * hx * hy
                + cov[1, 1] * hy * hy)
        r2 = (z - d) ** 2
        var_o = proj + spec.R_o
        var_u = proj + spec.R_u
        log_lo = -0.5 * (_LOG_2PI + np.log(var_o) + r2 / var_o)
        log_lu = -0.5 * (_LOG_2PI + np.log(var_u) + r2 / var_u)
        log_norm = np.logaddexp(log_lo, log_lu)
        log_lo = log_lo - log_norm
        log_lu = log_lu - log_norm

        # stored counts are already clamped to [0, N_max]
        n = grid.hit_counts[rows, cols]
        if forced:
            # pass cells untempered; the terminal cell keeps count weights
            tempered_ratio = log_lo - log_lu
            if hit_kept:
                nh = float(n[-1])
                tempered_ratio[-1] = ((n_max - nh) * log_lo[-1]
                                      - nh * log_lu[-1]) / n_max
        else:
            tempered_ratio = ((n_max - n) * log_lo - n * log_lu) / n_max
        # traversal evidence only ever testifies against occupancy; the
        # terminal cell alone carries the signed evidence (otherwise cells
        # just short of every beam end accrete into walls that creep
        # toward the robot and destabilize association)
        if hit_kept:
            tempered_ratio[:-1] = np.minimum(tempered_ratio[:-1], 0.0)
        else:
            tempered_ratio = np.minimum(tempered_ratio, 0.0)

        p = grid.probs[rows, cols]
        log_odds = np.log(p) - np.log1p(-p) + tempered_ratio
        post = 1.0 / (1.0 + np.exp(-log_odds))
        grid.probs[rows, cols] = np.clip(post, P_MIN, 1.0 - P_MIN)

    return grid


def inverse_update_scan(grid: OccupancyGrid, scan, pose_mean,
                        params: MapUpdateParams) -> OccupancyGrid:
    """Classical log-odds inverse-model update: terminal cell gains l_occ,
    traversed cells gain l_free, clamped into the probability bounds.
    Mutates the grid in place and returns it.
    """
    x, y, theta = float(pose_mean[0]), float(pose_mean[1]), float(pose_mean[2])
    if not grid.contains_point(x, y):
        return grid
    z_max = scan.z_max
    for k in range(len(scan.ranges)):
        z = float(scan.ranges[k])
        rows, cols, has_hit = traverse_ray_arrays(
            grid, (x, y), theta + float(scan.angles[k]), min(z, z_max), z_max)
        if has_hit:
            pr, pc = rows[:-1], cols[:-1]
            hr, hc = rows[-1], cols[-1]
        else:
            pr, pc = rows, cols
            hr = hc = None
        if len(pr):
            p = grid.probs[pr, pc]
            lo = np.log(p) - np.log1p(-p) + params.l_free
            grid.probs[pr, pc] = np.clip(1.0 / (1.0 + np.exp(-lo)), P_MIN, 1.0 - P_MIN)
        if hr is not None:
            p = grid.probs[hr, hc]
            lo = math.log(p) - math.log1p(-p) + params.l_occ
            grid.probs[hr, hc] = min(max(1.0 / (1.0 + math.exp(-lo)), P_MIN), 1.0 - P_MIN)
    return grid
