"""
Evaluation metrics for supervoxel partitions.

- ``dsc``: Dice overlap of two voxel sets.
- ``consistency_score``: mean (1 - best Dice) of each region of S1 against
  any region of S2, for stability under translation.
- ``label_consistency``: fraction of each region carrying its majority
  ground-truth label, with ``e = 1 - l_c``.
- ``error_increase``: relative error increase of a baseline over a method.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from utils.errors import DimsMismatch, InvalidParams, ZeroBaselineError
from utils.volume_utils import Labeling, Mask, shift_grid

logger = logging.getLogger(__name__)

LC_AGGREGATIONS = ("voxel-mean", "region-mean", "region-median")


@dataclass
class OverlapReport:
    """Best-overlap scores of S1 regions against S2."""

    per_region_delta: List[float]
    c_s: float
    n_regions: int

    def to_dict(self) -> dict:
        return {"c_s": self.c_s, "delta_s": list(self.per_region_delta), "n_regions": self.n_regions}


@dataclass
class ConsistencyReport:
    """Per-region majority-label fractions and their summary."""

    per_region_lc: List[float]
    summary_lc: float
    e: float
    aggregation: str = "voxel-mean"
    region_sizes: List[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"lc_summary": self.summary_lc, "e": self.e, "per_region": list(self.per_region_lc)}


def dsc(a: np.ndarray, b: np.ndarray) -> float:
    """Dice similarity of two boolean voxel sets; 0 when both are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimsMismatch(f"voxel sets have shapes {a.shape} and {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 0.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def joint_histogram(first: np.ndarray, second: np.ndarray, n_first: int, n_second: int) -> np.ndarray:
    """Counts of voxels with label i in ``first`` and label j in ``second``."""
    both = (first >= 0) & (second >= 0)
    keys = first[both].astype(np.int64) * n_second + second[both].astype(np.int64)
    return np.bincount(keys, minlength=n_first * n_second).reshape(n_first, n_second)


def consistency_score(
    s1: Labeling, s2: Labeling, offset: Optional[Sequence[int]] = None
) -> OverlapReport:
    """
    Translation consistency C_s of ``s2`` against ``s1``.

    ``s1`` is shifted by ``offset`` into the frame of ``s2`` before overlaps
    are counted. Region sizes are taken before the shift.
    """
    if s1.dims != s2.dims:
        raise DimsMismatch(f"labelings have dims {s1.dims} and {s2.dims}")
    first = s1.labels
    if offset is not None and any(int(o) != 0 for o in offset):
        if len(offset) != len(s1.dims):
            raise DimsMismatch(f"offset {tuple(offset)} does not match {len(s1.dims)} axes")
        first = shift_grid(first, offset)

    n1, n2 = s1.num_regions, s2.num_regions
    sizes1 = s1.region_sizes().astype(np.float64)
    sizes2 = s2.region_sizes().astype(np.float64)
    overlap = joint_histogram(first, s2.labels, n1, n2).astype(np.float64)
    denominator = sizes1[:, None] + sizes2[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        dice = np.where(denominator > 0, 2.0 * overlap / denominator, 0.0)
    delta = dice.max(axis=1) if n2 else np.zeros(n1)
    c_s = float(np.mean(1.0 - delta)) if n1 else 0.0
    logger.debug(f"C_s over {n1} regions: {c_s:.6f}")
    return OverlapReport(per_region_delta=delta.tolist(), c_s=c_s, n_regions=n1)


def label_consistency(
    labeling: Labeling,
    ground_truth: np.ndarray,
    mask: Mask,
    aggregation: str = "voxel-mean",
) -> ConsistencyReport:
    """
    Majority-label fraction of every region.

    Args:
        labeling: Supervoxel partition of the mask.
        ground_truth: Integer label grid congruent with the mask.
        mask: Region of interest; only in-mask voxels are counted.
        aggregation: ``voxel-mean`` (weighted by region size), ``region-mean``
            or ``region-median``.
    """
    if aggregation not in LC_AGGREGATIONS:
        raise InvalidParams(f"unknown l_c aggregation '{aggregation}'")
    ground_truth = np.asarray(ground_truth)
    if ground_truth.shape != mask.dims or labeling.dims != mask.dims:
        raise DimsMismatch(
            f"ground truth {ground_truth.shape}, labeling {labeling.dims}, mask {mask.dims}"
        )
    inside = mask.bits & (labeling.labels >= 0)
    regions = labeling.labels[inside]
    _, truth = np.unique(ground_truth[inside], return_inverse=True)
    n_truth = int(truth.max()) + 1 if truth.size else 1
    counts = np.bincount(
        regions * n_truth + truth, minlength=labeling.num_regions * n_truth
    ).reshape(labeling.num_regions, n_truth)
    sizes = counts.sum(axis=1)
    present = sizes > 0
    per_region = counts.max(axis=1)[present] / sizes[present]

    if per_region.size == 0:
        summary = 0.0
    elif aggregation == "voxel-mean":
        summary = float(counts.max(axis=1)[present].sum() / sizes[present].sum())
    elif aggregation == "region-mean":
        summary = float(per_region.mean())
    else:
        summary = float(np.median(per_region))
    return ConsistencyReport(
        per_region_lc=per_region.tolist(),
        summary_lc=summary,
        e=1.0 - summary,
        aggregation=aggregation,
        region_sizes=sizes[present].tolist(),
    )


def error_increase(e_baseline: float, e_method: float) -> float:
    """Percentage error increase ``100 * (e_baseline - e_method) / e_method``."""
    if e_method == 0:
        raise ZeroBaselineError("method error is 0, the increase is unbounded")
    return 100.0 * (e_baseline - e_method) / e_method
