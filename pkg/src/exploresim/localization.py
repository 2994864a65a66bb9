"""Gaussian pose filter over (x, y, theta): unicycle prediction plus a
map-confidence-coupled range update, with an odometry-only baseline
falling out of simply skipping the update.

The update is information-form over terminal (hit) cells only — terminal
returns carry far more range information than traversed cells. Each hit
cell contributes with an equivalent measurement variance that blends the
two beam-likelihood variances by the cell's occupancy confidence, so a
shaky map inflates the correction covariance instead of silently
over-trusting geometry. The total likelihood is tempered by gamma over
the hit-cell count, damping inconsistent multi-beam evidence.

Per-cell information contributions form an associative, commutative sum;
a fixed (beam-order) summation is used so results are bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid_map import OccupancyGrid, traverse_ray_arrays
from .sensor import BeamScan, SensorSpec, beam_likelihood

_JITTER = 1e-9


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    w = theta - 2.0 * math.pi * math.floor((theta + math.pi) / (2.0 * math.pi))
    if w <= -math.pi:
        w = math.pi
    return w


def _inv3(m: np.ndarray) -> np.ndarray:
    """Closed-form 3x3 inverse via the adjugate."""
    a, b, c = m[0]
    d, e, f = m[1]
    g, h, i = m[2]
    A = e * i - f * h
    B = -(d * i - f * g)
    C = d * h - e * g
    det = a * A + b * B + c * C
    if abs(det) < 1e-300:
        raise np.linalg.LinAlgError("singular 3x3 matrix")
    adj = np.array([
        [A, -(b * i - c * h), b * f - c * e],
        [B, a * i - c * g, -(a * f - c * d)],
        [C, -(a * h - b * g), a * e - b * d],
    ])
    return adj / det


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


@dataclass
class PoseBelief:
    """Gaussian pose estimate: mean (x, y, theta), 3x3 SPD covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3).copy()
        self.cov = _symmetrize(np.asarray(self.cov, dtype=np.float64).reshape(3, 3))
        self.mean[2] = wrap_angle(self.mean[2])

    def copy(self) -> "PoseBelief":
        return PoseBelief(self.mean.copy(), self.cov.copy())

    def trace(self) -> float:
        return float(np.trace(self.cov))


@dataclass
class MotionInput:
    """One control/odometry interval: forward speed, turn rate, duration,
    and the pose-space process noise covariance for that interval."""

    v: float
    omega: float
    dt: float
    Q: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        self.Q = np.asarray(self.Q, dtype=np.float64).reshape(3, 3)


def predict(belief: PoseBelief, u: MotionInput) -> PoseBelief:
    """Unicycle prediction: mean steps exactly, covariance by the motion
    Jacobian at the prior mean plus process noise."""
    x, y, theta = belief.mean
    c, s = math.cos(theta), math.sin(theta)
    step = u.v * u.dt
    mean = np.array([x + step * c, y + step * s, wrap_angle(theta + u.omega * u.dt)])
    F = np.array([
        [1.0, 0.0, -step * s],
        [0.0, 1.0, step * c],
        [0.0, 0.0, 1.0],
    ])
    cov = _symmetrize(F @ belief.cov @ F.T + u.Q)
    return PoseBelief(mean, cov)


def coupled_variance(p_occ, spec: SensorSpec, moment_matched: bool = False):
    """Equivalent range-measurement variance under map confidence p_occ.

    Default is the squared-weight blend p^2 R_o + (1-p)^2 R_u; the
    moment-matched mixture variance p R_o + (1-p) R_u is available for
    oracle comparisons. Accepts arrays.
    """
    p = np.asarray(p_occ, dtype=np.float64)
    if moment_matched:
        return p * spec.R_o + (1.0 - p) * spec.R_u
    return p * p * spec.R_o + (1.0 - p) * (1.0 - p) * spec.R_u


def _associate_beams(belief_mean: np.ndarray, scan: BeamScan, grid: OccupancyGrid,
                     z_max: float, occ_threshold: float, gate: float):
    """Associate each detecting beam with the map cell it is measuring.

    Along the beam direction cast from the predicted mean, the associated
    cell is the most confidently occupied cell (>= occ_threshold) within
    the gate window around the measured range; ties go to the nearest.
    Searching the window for the confidence peak keeps the association on
    the established wall core rather than on half-updated cells bleeding
    off it. Beams reading z_max or finding no thresholded cell in the
    window (unmodeled geometry; the map update owns it) are dropped.
    Returns parallel arrays (rows, cols, measured ranges).
    """
    x, y, theta = belief_mean
    rows, cols, zs = [], [], []
    if not grid.contains_point(x, y):
        return (np.asarray(rows, np.intp), np.asarray(cols, np.intp),
                np.asarray(zs, np.float64))
    for k in range(len(scan.ranges)):
        z = float(scan.ranges[k])
        if z >= z_max:
            continue
        reach = min(z + gate, z_max)
        r, c, _ = traverse_ray_arrays(grid, (x, y), theta + float(scan.angles[k]),
                                      reach, reach + 1.0)
        cx, cy = grid.cell_centers(r, c)
        d = np.hypot(cx - x, cy - y)
        resid = np.abs(z - d)
        p = np.where(resid <= gate, grid.probs[r, c], -1.0)
        pmax = float(p.max())
        if pmax < occ_threshold:
            continue
        # confidence peaks tie at the clamp; among them take the cell
        # agreeing best with the measurement
        cand = np.flatnonzero(p >= pmax - 1e-9)
        idx = int(cand[np.argmin(resid[cand])])
        rows.append(r[idx])
        cols.append(c[idx])
        zs.append(z)
    return (np.asarray(rows, np.intp), np.asarray(cols, np.intp),
            np.asarray(zs, np.float64))


def update(belief_pred: PoseBelief, scan: BeamScan, map_prior: OccupancyGrid,
           spec: SensorSpec, gamma: float = 1.2, *,
           decoupled: bool = False, occ_threshold: float = 0.65,
           assoc_gate: float = 1.0) -> PoseBelief:
    """Information-form correction over the scan's hit cells.

    Each associated cell adds (gamma / N_h) * H^T R^-1 H to the prior
    information, with R from coupled_variance of the cell's predicted
    occupancy and H the range Jacobian at the predicted mean (heading has
    no range gradient, so theta is corrected only by heading_align or
    odometry). With no hits the prior belief is returned unchanged.

    decoupled mode reproduces the classical certain-map filter: the same
    thresholded-cell association, each with fixed R_o and the cell
    treated as certainly occupied.
    """
    mean = belief_pred.mean
    rows, cols, zs = _associate_beams(mean, scan, map_prior, spec.z_max,
                                      occ_threshold, assoc_gate)
    if len(rows) == 0:
        return belief_pred

    cx, cy = map_prior.cell_centers(rows, cols)
    dx = mean[0] - cx
    dy = mean[1] - cy
    d = np.hypot(dx, dy)
    p = map_prior.probs[rows, cols]

    keep = d >= map_prior.resolution / 2.0  # singular-Jacobian guard
    if not np.any(keep):
        return belief_pred
    dx, dy, d, p, zs = dx[keep], dy[keep], d[keep], p[keep], zs[keep]

    n_h = int(d.size)
    R = np.full(n_h, spec.R_o) if decoupled else coupled_variance(p, spec)
    hx = dx / d
    hy = dy / d
    w = (gamma / n_h) / R

    # information matrix and vector accumulated in fixed beam order
    info = np.zeros((3, 3))
    info[0, 0] = np.sum(w * hx * hx)
    info[0, 1] = info[1, 0] = np.sum(w * hx * hy)
    info[1, 1] = np.sum(w * hy * hy)
    innov = zs - d + hx * mean[0] + hy * mean[1]
    vec = np.array([np.sum(w * hx * innov), np.sum(w * hy * innov), 0.0])

    prior_cov = belief_pred.cov
    try:
        prior_info = _inv3(prior_cov)
    except np.linalg.LinAlgError:
        prior_info = _inv3(prior_cov + _JITTER * np.eye(3))
    post_info = _symmetrize(prior_info + info)
    post_cov = _symmetrize(_inv3(post_info))
    post_mean = post_cov @ (prior_info @ mean + vec)
    post_mean[2] = wrap_angle(post_mean[2])
    return PoseBelief(post_mean, post_cov)


def heading_align(belief: PoseBelief, scan: BeamScan, map_prior: OccupancyGrid,
                  spec: SensorSpec, half_window: float = 0.05,
                  samples: int = 21, occ_threshold: float = 0.65,
                  assoc_gate: float = 1.0) -> PoseBelief:
    """Optional 1-D heading refinement (off by default in the pipeline).

    Grid-searches a heading offset over [-half_window, half_window],
    scoring each offset by the summed log mixture likelihood of the
    rotated beam endpoints against the prior map (endpoint scan
    matching: endpoints land on confident cells when aligned). Endpoints
    leaving the grid score the free-hypothesis density at the gate
    residual. Covariance is untouched; a flat objective (e.g. an
    all-unknown map) resolves to zero offset.
    """
    offsets = np.linspace(-half_window, half_window, samples)
    scores = np.empty(samples)
    x, y, theta = belief.mean
    detect = scan.ranges < spec.z_max
    if not np.any(detect) or not map_prior.contains_point(x, y):
        return belief
    zs = scan.ranges[detect]
    bearings = theta + scan.angles[detect]
    res = map_prior.resolution
    ox, oy = map_prior.origin
    miss = math.log(float(beam_likelihood(assoc_gate, 0.0, False, spec)))
    for j, dth in enumerate(offsets):
        ex = x + zs * np.cos(bearings + dth)
        ey = y + zs * np.sin(bearings + dth)
        cols = np.floor((ex - ox) / res).astype(np.intp)
        rows = np.floor((ey - oy) / res).astype(np.intp)
        inb = ((rows >= 0) & (rows < map_prior.height)
               & (cols >= 0) & (cols < map_prior.width))
        score = miss * float(np.sum(~inb))
        if np.any(inb):
            r_in, c_in = rows[inb], cols[inb]
            cx, cy = map_prior.cell_centers(r_in, c_in)
            d = np.hypot(x - cx, y - cy)
            p = map_prior.probs[r_in, c_in]
            mix = (p * beam_likelihood(zs[inb], d, True, spec)
                   + (1.0 - p) * beam_likelihood(zs[inb], d, False, spec))
            score += float(np.sum(np.log(np.maximum(mix, 1e-300))))
        scores[j] = score

    best = np.max(scores)
    # ties (flat objective) resolve to the smallest |offset|, zero first
    tied = np.flatnonzero(scores >= best - 1e-12)
    dth = offsets[tied[np.argmin(np.abs(offsets[tied]))]]
    out = belief.copy()
    out.mean[2] = wrap_angle(theta + dth)
    return out
