"""Generalized entropy measures over occupancy maps and information gain.

Three families over the per-cell Bernoulli: Shannon, Renyi, and the
behavioral family, which passes probabilities through the Prelec
weighting w(q) = exp(-beta * (-ln q)^alpha) before the Shannon form.
beta is pinned to the closed form (ln 2)^(1 - alpha) so that alpha is the
only free parameter: alpha = 1 recovers Shannon exactly and the uniform
cell keeps entropy ln 2 for every alpha. Natural log throughout; the
metrics layer converts to bits where reported.

map_entropy is a fixed-order reduction, so results are bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

LN2 = math.log(2.0)

_FAMILIES = ("shannon", "renyi", "behavioral")


@dataclass(frozen=True)
class EntropySpec:
    """Entropy family selector; beta derives from alpha (behavioral only)."""

    family: str = "behavioral"
    alpha: float = 1.0

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown entropy family {self.family!r}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")

    @property
    def beta(self) -> float:
        """Prelec scale, pinned so the two-outcome uniform is preserved."""
        return LN2 ** (1.0 - self.alpha)

    @classmethod
    def shannon(cls) -> "EntropySpec":
        return cls("shannon", 1.0)

    @classmethod
    def renyi(cls, alpha: float) -> "EntropySpec":
        return cls("renyi", alpha)

    @classmethod
    def behavioral(cls, alpha: float) -> "EntropySpec":
        return cls("behavioral", alpha)


@dataclass
class GainReport:
    """Information gain of a predicted map relative to the current one."""

    current_entropy: float
    predicted_entropy: float
    gain: float
    per_cell: Optional[np.ndarray] = field(default=None, repr=False)


def _shannon(p: np.ndarray) -> np.ndarray:
    q = 1.0 - p
    return -p * np.log(p) - q * np.log(q)


def _renyi(p: np.ndarray, alpha: float) -> np.ndarray:
    return np.log(p ** alpha + (1.0 - p) ** alpha) / (1.0 - alpha)


def _behavioral(p: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    out = np.zeros_like(p)
    for q in (p, 1.0 - p):
        u = beta * (-np.log(q)) ** alpha   # = -ln w(q)
        out += np.exp(-u) * u
    return out


def cell_entropy(p, spec: EntropySpec):
    """Entropy of one occupancy cell (nats). Accepts arrays.

    Renyi at alpha = 1 dispatches to Shannon (its limit); behavioral at
    alpha = 1 equals Shannon identically because the Prelec weight
    reduces to the identity.
    """
    p = np.asarray(p, dtype=np.float64)
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    if spec.family == "shannon" or (spec.family == "renyi" and spec.alpha == 1.0):
        out = _shannon(p)
    elif spec.family == "renyi":
        out = _renyi(p, spec.alpha)
    else:
        out = _behavioral(p, spec.alpha, spec.beta)
    return float(out[0]) if scalar else out


def map_entropy(grid, spec: EntropySpec) -> float:
    """Total map entropy: the factorized sum of per-cell entropies."""
    return float(np.sum(cell_entropy(grid.probs.ravel(), spec)))


def information_gain(map_now, map_predicted, spec: EntropySpec,
                     keep_cells: bool = False) -> GainReport:
    """Gain = entropy(now) - entropy(predicted) over same-geometry maps."""
    if (map_now.width != map_predicted.width
            or map_now.height != map_predicted.height
            or map_now.resolution != map_predicted.resolution):
        raise ValueError("information_gain requires identical grid geometry")
    cells_now = cell_entropy(map_now.probs.ravel(), spec)
    cells_pred = cell_entropy(map_predicted.probs.ravel(), spec)
    h_now = float(np.sum(cells_now))
    h_pred = float(np.sum(cells_pred))
    per_cell = (cells_now - cells_pred).reshape(map_now.probs.shape) if keep_cells else None
    return GainReport(h_now, h_pred, h_now - h_pred, per_cell)
