"""
Exact Euclidean distance transform over a mask and the farthest-point query.

The zero set is the background, a virtual one-voxel border around the grid,
and any seed voxels already placed. Distances are spacing-scaled.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from utils.errors import DimsMismatch, EmptyMask
from utils.volume_utils import Mask, SeedSet, normalise_spacing

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DistanceField:
    """Per-voxel distance to the nearest zero-set voxel."""

    values: np.ndarray
    spacing: Tuple[float, ...]

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(self.values.shape)


def _point_distances(
    dims: Tuple[int, ...], point: np.ndarray, spacing: Tuple[float, ...]
) -> np.ndarray:
    # Same evaluation order as scipy's distance_transform_edt so that the
    # incremental update and a full recompute agree bit for bit.
    grids = np.indices(dims, dtype=np.float64)
    deltas = grids - np.asarray(point, dtype=np.float64).reshape((-1,) + (1,) * len(dims))
    for axis, step in enumerate(spacing):
        deltas[axis, ...] *= step
    np.multiply(deltas, deltas, deltas)
    return np.sqrt(np.add.reduce(deltas, axis=0))


def exact_edt(
    mask: Mask,
    extra_zero_points: Optional[SeedSet] = None,
    spacing: Optional[Sequence[float]] = None,
) -> DistanceField:
    """
    Exact Euclidean distance transform of ``mask``.

    Args:
        mask: Region of interest; background voxels have distance 0.
        extra_zero_points: Seeds whose rounded voxels also join the zero set.
        spacing: Physical size of a voxel along each axis.

    Returns:
        DistanceField with the spacing-scaled distance for every voxel.
    """
    if not mask.bits.any():
        raise EmptyMask("distance transform needs a non-empty mask")
    spacing = normalise_spacing(spacing, mask.ndim)

    # A one-voxel false border stands in for everything outside the grid.
    padded = np.pad(mask.bits, 1, mode="constant", constant_values=False)
    if extra_zero_points is not None and extra_zero_points.count:
        if extra_zero_points.points.shape[1] != mask.ndim:
            raise DimsMismatch("seed points and mask have different dimensionality")
        voxels = extra_zero_points.voxels() + 1
        padded[tuple(voxels.T)] = False

    values = ndimage.distance_transform_edt(padded, sampling=spacing)
    inner = tuple(slice(1, -1) for _ in range(mask.ndim))
    return DistanceField(np.ascontiguousarray(values[inner]), spacing)


def update_distance_field(
    field: DistanceField, point: Sequence[float]
) -> DistanceField:
    """Add one voxel to the zero set by taking the minimum with its distance map."""
    voxel = np.floor(np.asarray(point, dtype=np.float64) + 0.5)
    distances = _point_distances(field.dims, voxel, field.spacing)
    return DistanceField(np.minimum(field.values, distances), field.spacing)


def farthest_point(field: DistanceField, mask: Mask) -> Tuple[Tuple[int, ...], float]:
    """
    Return the in-mask voxel with the largest distance and that distance.

    Ties resolve to the first voxel in row-major order.
    """
    if field.dims != mask.dims:
        raise DimsMismatch(f"field dims {field.dims} != mask dims {mask.dims}")
    if not mask.bits.any():
        raise EmptyMask("farthest point needs a non-empty mask")
    candidates = np.where(mask.bits, field.values, -np.inf)
    flat = int(np.argmax(candidates))
    coordinate = tuple(int(i) for i in np.unravel_index(flat, mask.dims))
    return coordinate, float(field.values[coordinate])
