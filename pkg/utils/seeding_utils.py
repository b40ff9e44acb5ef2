"""
Seed placement for maskSLIC.

``place_seeds`` puts N seeds one at a time at the voxel farthest from the
mask boundary and from every seed placed so far. ``relax_seeds`` then runs a
spatial-only k-means over the mask to even out the placement. ``seed_grid``
is the regular grid used by the whole-image baselines.
"""

import logging
from typing import List, Literal, Optional, Sequence, Tuple, Union, overload

import numpy as np
from scipy.spatial.distance import cdist

from utils.distance_utils import exact_edt, farthest_point, update_distance_field
from utils.errors import EmptyMask, InvalidParams, TooManySeeds
from utils.volume_utils import Mask, SeedSet, normalise_spacing, round_to_voxel

logger = logging.getLogger(__name__)

# Upper bound on the number of voxel/seed distance entries held at once.
_CHUNK_ENTRIES = 1 << 22


@overload
def place_seeds(
    mask: Mask,
    n_regions: int,
    spacing: Optional[Sequence[float]] = ...,
    return_distances: Literal[False] = ...,
) -> SeedSet: ...


@overload
def place_seeds(
    mask: Mask,
    n_regions: int,
    spacing: Optional[Sequence[float]] = ...,
    *,
    return_distances: Literal[True],
) -> Tuple[SeedSet, List[float]]: ...


def place_seeds(
    mask: Mask,
    n_regions: int,
    spacing: Optional[Sequence[float]] = None,
    return_distances: bool = False,
) -> Union[SeedSet, Tuple[SeedSet, List[float]]]:
    """
    Place ``n_regions`` seeds by iterative farthest-point selection.

    Args:
        mask: Region of interest.
        n_regions: Number of seeds N (1 <= N <= mask voxel count).
        spacing: Physical voxel size per axis.
        return_distances: Also return the distance value at each placement.

    Returns:
        SeedSet in placement order, optionally with the list of distances.
    """
    if not mask.bits.any():
        raise EmptyMask("cannot place seeds in an empty mask")
    if n_regions < 1:
        raise InvalidParams(f"n_regions must be >= 1, got {n_regions}")
    if n_regions > mask.count:
        raise TooManySeeds(
            f"{n_regions} seeds requested but the mask has {mask.count} voxels"
        )
    spacing = normalise_spacing(spacing, mask.ndim)

    field = exact_edt(mask, None, spacing)
    points: List[Tuple[int, ...]] = []
    distances: List[float] = []
    for _ in range(n_regions):
        point, distance = farthest_point(field, mask)
        points.append(point)
        distances.append(distance)
        field = update_distance_field(field, point)

    logger.debug(
        f"Placed {n_regions} seeds, placement distance {distances[0]:.3f} -> {distances[-1]:.3f}"
    )
    seeds = SeedSet(np.array(points, dtype=np.float64))
    if return_distances:
        return seeds, distances
    return seeds


def nearest_seed(
    coords: np.ndarray, centers: np.ndarray, spacing: Sequence[float]
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Index of and squared distance to the nearest center for every coordinate.

    Equal distances go to the lowest center index. Work is chunked so memory
    stays bounded for large masks.
    """
    scale = np.asarray(spacing, dtype=np.float64)
    scaled_centers = centers * scale
    n_centers = max(1, scaled_centers.shape[0])
    chunk = max(1, _CHUNK_ENTRIES // n_centers)
    labels = np.empty(coords.shape[0], dtype=np.int64)
    best = np.empty(coords.shape[0], dtype=np.float64)
    for start in range(0, coords.shape[0], chunk):
        block = coords[start : start + chunk] * scale
        d2 = cdist(block, scaled_centers, "sqeuclidean")
        idx = np.argmin(d2, axis=1)
        labels[start : start + chunk] = idx
        best[start : start + chunk] = d2[np.arange(idx.size), idx]
    return labels, best


def snap_to_mask(
    points: np.ndarray, mask: Mask, spacing: Sequence[float]
) -> np.ndarray:
    """
    Move each point to its nearest in-mask voxel, keeping voxels distinct.

    Ties resolve to the first voxel in row-major order. A point whose voxel
    is already taken moves to its nearest unoccupied in-mask voxel.
    """
    coords = mask.coordinates()
    scale = np.asarray(spacing, dtype=np.float64)
    occupied = np.zeros(coords.shape[0], dtype=bool)
    snapped = np.empty((points.shape[0], mask.ndim), dtype=np.int64)
    scaled = coords * scale
    for i, point in enumerate(points):
        d2 = np.sum((scaled - point * scale) ** 2, axis=1)
        d2[occupied] = np.inf
        idx = int(np.argmin(d2))
        occupied[idx] = True
        snapped[i] = coords[idx]
    return snapped


def relax_seeds(
    mask: Mask,
    seeds: SeedSet,
    spacing: Optional[Sequence[float]] = None,
    max_iters: int = 10,
) -> SeedSet:
    """
    Spatial-only k-means relaxation of seed positions inside the mask.

    Every in-mask voxel joins its globally nearest seed; each seed moves to
    the centroid of its voxels. Iteration stops early once no seed moves by
    half a voxel or more. Final positions are snapped to in-mask voxels.
    """
    if not mask.bits.any():
        raise EmptyMask("cannot relax seeds in an empty mask")
    spacing = normalise_spacing(spacing, mask.ndim)
    seeds.validate_for(mask)
    if seeds.count == 0:
        return seeds

    # Work relative to the mask's bounding origin so that translated masks
    # produce bitwise identical arithmetic.
    origin = mask.bounding_origin()
    coords = (mask.coordinates() - origin).astype(np.float64)
    centers = seeds.points - origin

    for iteration in range(max_iters):
        labels, _ = nearest_seed(coords, centers, spacing)
        counts = np.bincount(labels, minlength=seeds.count)
        updated = centers.copy()
        filled = counts > 0
        for axis in range(mask.ndim):
            sums = np.bincount(labels, weights=coords[:, axis], minlength=seeds.count)
            updated[filled, axis] = sums[filled] / counts[filled]
        movement = np.sqrt(np.sum((updated - centers) ** 2, axis=1))
        centers = updated
        logger.debug(
            f"Seed relaxation iteration {iteration + 1}: max movement {movement.max():.4f}"
        )
        if movement.max() < 0.5:
            break

    local_mask = Mask(mask.bits[tuple(slice(int(o), None) for o in origin)])
    snapped = snap_to_mask(centers, local_mask, spacing) + origin
    return SeedSet(snapped.astype(np.float64))


def seed_grid(
    dims: Sequence[int],
    n_regions: int,
    spacing: Optional[Sequence[float]] = None,
) -> SeedSet:
    """
    Regular grid of roughly ``n_regions`` seeds over the whole grid.

    Per-axis counts make the step close to equal in physical units; seeds sit
    half a step in from the boundary. The actual count is ``SeedSet.count``.
    """
    if n_regions < 1:
        raise InvalidParams(f"n_regions must be >= 1, got {n_regions}")
    dims = tuple(int(d) for d in dims)
    scale = np.asarray(
        spacing if spacing is not None else (1.0,) * len(dims), dtype=np.float64
    )
    extents = np.asarray(dims, dtype=np.float64) * scale
    step = (np.prod(extents) / n_regions) ** (1.0 / len(dims))
    counts = [max(1, min(d, int(round(e / step)))) for d, e in zip(dims, extents)]
    axes = []
    for size, count in zip(dims, counts):
        axis_step = size / count
        axes.append(np.floor(np.arange(count) * axis_step + axis_step / 2.0))
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    logger.debug(f"Grid seeding: per-axis counts {counts}, {points.shape[0]} seeds")
    return SeedSet(points)


def seeds_in_mask(seeds: SeedSet, mask: Mask) -> SeedSet:
    """Keep only the seeds whose voxel lies inside the mask."""
    voxels = round_to_voxel(seeds.points)
    inside = np.all((voxels >= 0) & (voxels < np.array(mask.dims)), axis=1)
    keep = np.zeros(seeds.count, dtype=bool)
    keep[inside] = mask.bits[tuple(voxels[inside].T)]
    return SeedSet(seeds.points[keep].reshape(-1, mask.ndim))
