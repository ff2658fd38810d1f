"""Contrast vectors for the two tested parameters, and the one-parameter
response family used to characterize the conditioning sets.

A contrast is stored sparse (support is at most the two regions it
touches); the perturbed response ``y + (phi - v'y) * v / |v|^2`` keeps
the component orthogonal to the contrast fixed while moving the tested
statistic to exactly ``phi``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Contrast:
    indices: np.ndarray  # sorted observation indices of the support
    values: np.ndarray
    kind: str  # "sibling" or "region"
    region_ids: tuple[int, ...]
    n: int

    @property
    def norm_sq(self) -> float:
        return float(self.values @ self.values)

    def dot(self, v: np.ndarray) -> float:
        return float(self.values @ np.asarray(v)[self.indices])

    def dense(self) -> np.ndarray:
        out = np.zeros(self.n)
        out[self.indices] = self.values
        return out


def sibling_contrast(members_a, members_b, n: int, region_ids=(-1, -1)) -> Contrast:
    """Difference-of-means contrast: 1/|A| on A, -1/|B| on B."""
    a = np.asarray(members_a, dtype=np.int64)
    b = np.asarray(members_b, dtype=np.int64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both regions must be nonempty")
    if np.intersect1d(a, b).size:
        raise ValueError("regions must be disjoint")
    idx = np.concatenate([a, b])
    vals = np.concatenate([np.full(a.size, 1.0 / a.size), np.full(b.size, -1.0 / b.size)])
    order = np.argsort(idx)
    return Contrast(idx[order], vals[order], "sibling", tuple(region_ids), n)


def region_contrast(members_a, n: int, region_id: int = -1) -> Contrast:
    """Mean-of-one-region contrast: 1/|A| on A."""
    a = np.asarray(members_a, dtype=np.int64)
    if a.size == 0:
        raise ValueError("region must be nonempty")
    vals = np.full(a.size, 1.0 / a.size)
    order = np.argsort(a)
    return Contrast(a[order], vals[order], "region", (region_id,), n)


def perturbed_response(phi: float, contrast: Contrast, y: np.ndarray) -> np.ndarray:
    """Response with statistic ``phi`` and unchanged orthogonal part."""
    nsq = contrast.norm_sq
    if nsq <= 0:
        raise ValueError("contrast has zero norm")
    out = np.array(y, dtype=np.float64, copy=True)
    out[contrast.indices] += (phi - contrast.dot(y)) * contrast.values / nsq
    return out


def orthogonal_part(contrast: Contrast, y: np.ndarray) -> np.ndarray:
    """Projection of y onto the complement of the contrast direction."""
    return perturbed_response(0.0, contrast, y)
