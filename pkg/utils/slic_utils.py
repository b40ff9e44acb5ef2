"""
SLIC clustering engine.

Implements maskSLIC (farthest-point seeding, spatial relaxation, clustering
restricted to the mask), the two whole-image baselines, and the
connectivity post-processing step.

The clustering distance combines feature and spatial terms as
``d = sqrt(d_f**2 + (d_s / r)**2)`` with ``d_s`` measured in physical units
and not normalised by the region scale.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple, Union, overload

import numpy as np
from joblib import Parallel, delayed
from scipy import ndimage
from scipy.spatial.distance import cdist

from utils.errors import DimsMismatch, InvalidParams, NoSeedsInMask, TooManySeeds
from utils.seeding_utils import place_seeds, relax_seeds, seed_grid, seeds_in_mask
from utils.volume_utils import (
    BACKGROUND,
    Backend,
    FeatureVolume,
    Labeling,
    Mask,
    SeedSet,
    SlicParams,
    normalise_spacing,
    round_to_voxel,
    validate_pair,
)

logger = logging.getLogger(__name__)

# Centers handled per parallel task when n_jobs > 1.
_CENTER_BATCH = 64


@dataclass
class ClusterState:
    """Centers, assignment and objective trace of a clustering run."""

    spatial_centers: np.ndarray
    feature_centers: np.ndarray
    assignments: Labeling
    objective: float
    history: List[float] = field(default_factory=list)
    residuals: List[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.history)


@dataclass
class SegmentationResult:
    """Output of :func:`segment`."""

    labeling: Labeling
    backend: Backend
    seeds: SeedSet
    region_scale: float
    state: Optional[ClusterState] = None
    elapsed: float = 0.0

    @property
    def num_regions(self) -> int:
        return self.labeling.num_regions


def slic_distance(
    feature_delta: Sequence[float],
    spatial_delta: Sequence[float],
    r: float,
    spacing: Optional[Sequence[float]] = None,
) -> float:
    """Combined SLIC distance between a voxel and a center."""
    if not r > 0:
        raise InvalidParams(f"compactness must be positive, got {r}")
    spatial = np.asarray(spatial_delta, dtype=np.float64)
    if spacing is not None:
        spatial = spatial * np.asarray(spacing, dtype=np.float64)
    d_f = float(np.linalg.norm(np.asarray(feature_delta, dtype=np.float64)))
    d_s = float(np.linalg.norm(spatial))
    return float(np.sqrt(d_f**2 + (d_s / r) ** 2))


def region_scale(mask: Mask, n_regions: int, spacing: Optional[Sequence[float]] = None) -> float:
    """Edge length S of a region when the mask volume is split into N equal parts."""
    spacing = normalise_spacing(spacing, mask.ndim)
    volume = mask.count * float(np.prod(spacing))
    return float((volume / n_regions) ** (1.0 / mask.ndim))


def grid_scale(dims: Sequence[int], n_regions: int, spacing: Optional[Sequence[float]] = None) -> float:
    """Grid step S of whole-image SLIC with N regions."""
    spacing = normalise_spacing(spacing, len(dims))
    extent = float(np.prod(np.asarray(dims, dtype=np.float64) * np.asarray(spacing)))
    return float((extent / n_regions) ** (1.0 / len(dims)))


class _MaskedClusterer:
    """Local k-means over the voxels of one mask."""

    def __init__(
        self,
        volume: FeatureVolume,
        mask: Mask,
        compactness: float,
        scale: float,
        n_jobs: int = 1,
    ) -> None:
        self.spacing = np.asarray(volume.spacing, dtype=np.float64)
        self.inv_r2 = 1.0 / (compactness * compactness)
        self.n_jobs = n_jobs

        # Mask-relative frame: translating mask and content together leaves
        # every floating point operation below unchanged.
        self.origin = mask.bounding_origin()
        self.coords = (mask.coordinates() - self.origin).astype(np.float64)
        self.features = np.ascontiguousarray(volume.data[mask.bits])
        self.mask = mask

        extent = self.coords.max(axis=0).astype(np.int64) + 1
        self.index_grid = np.full(tuple(extent), -1, dtype=np.int64)
        self.index_grid[tuple(self.coords.astype(np.int64).T)] = np.arange(self.coords.shape[0])
        self.extent = extent
        self.half_window = 2.0 * scale / self.spacing
        logger.debug(
            f"Clusterer: {self.coords.shape[0]} voxels, S={scale:.3f}, "
            f"window half-width {np.round(self.half_window, 2).tolist()} voxels"
        )

    def cost(
        self,
        rows: np.ndarray,
        feature_center: np.ndarray,
        spatial_center: np.ndarray,
    ) -> np.ndarray:
        """Squared SLIC distance of voxels ``rows`` to the given center(s)."""
        df = self.features[rows] - feature_center
        ds = (self.coords[rows] - spatial_center) * self.spacing
        return np.sum(df * df, axis=1) + np.sum(ds * ds, axis=1) * self.inv_r2

    def window_rows(self, spatial_center: np.ndarray) -> np.ndarray:
        lo = np.maximum(np.ceil(spatial_center - self.half_window), 0).astype(np.int64)
        hi = np.minimum(np.floor(spatial_center + self.half_window), self.extent - 1).astype(np.int64)
        if np.any(hi < lo):
            return np.empty(0, dtype=np.int64)
        box = self.index_grid[tuple(slice(a, b + 1) for a, b in zip(lo, hi))]
        rows = box[box >= 0]
        return rows

    def _window_costs(
        self, centers: Sequence[int], spatial: np.ndarray, features: np.ndarray
    ) -> List[Tuple[int, np.ndarray, np.ndarray]]:
        out = []
        for k in centers:
            rows = self.window_rows(spatial[k])
            out.append((k, rows, self.cost(rows, features[k], spatial[k])))
        return out

    def assign(
        self,
        spatial: np.ndarray,
        features: np.ndarray,
        labels: Optional[np.ndarray],
    ) -> Tuple[np.ndarray, np.ndarray]:
        n_voxels = self.coords.shape[0]
        n_centers = spatial.shape[0]
        if labels is None:
            labels = np.full(n_voxels, -1, dtype=np.int64)
            best = np.full(n_voxels, np.inf)
        else:
            # The current center always stays a candidate, so reassignment
            # never raises a voxel's cost.
            labels = labels.copy()
            all_rows = np.arange(n_voxels)
            best = self.cost(all_rows, features[labels], spatial[labels])

        batches = [
            list(range(start, min(start + _CENTER_BATCH, n_centers)))
            for start in range(0, n_centers, _CENTER_BATCH)
        ]
        if self.n_jobs > 1 and len(batches) > 1:
            results = Parallel(n_jobs=self.n_jobs, prefer="threads")(
                delayed(self._window_costs)(batch, spatial, features) for batch in batches
            )
        else:
            results = [self._window_costs(batch, spatial, features) for batch in batches]

        # Reduction in center order keeps the result independent of n_jobs.
        for batch_result in results:
            for k, rows, d2 in batch_result:
                current = best[rows]
                better = (d2 < current) | ((d2 == current) & (k < labels[rows]))
                chosen = rows[better]
                best[chosen] = d2[better]
                labels[chosen] = k

        orphans = np.flatnonzero(labels < 0)
        if orphans.size:
            logger.debug(f"{orphans.size} voxels outside every window, using global nearest center")
            embedded = np.hstack(
                [self.features[orphans], self.coords[orphans] * self.spacing * np.sqrt(self.inv_r2)]
            )
            targets = np.hstack([features, spatial * self.spacing * np.sqrt(self.inv_r2)])
            nearest = np.argmin(cdist(embedded, targets, "sqeuclidean"), axis=1)
            labels[orphans] = nearest
            best[orphans] = self.cost(orphans, features[nearest], spatial[nearest])
        return labels, best

    def fill_empty(self, labels: np.ndarray, best: np.ndarray, n_centers: int) -> None:
        """Give each empty cluster the worst-fitting voxel of a cluster with spare voxels."""
        counts = np.bincount(labels, minlength=n_centers)
        for k in np.flatnonzero(counts == 0):
            candidates = np.where(counts[labels] > 1, best, -np.inf)
            v = int(np.argmax(candidates))
            counts[labels[v]] -= 1
            counts[k] += 1
            labels[v] = k
            best[v] = 0.0
            logger.debug(f"Cluster {int(k)} emptied, re-seeded at voxel row {v}")

    def update(self, labels: np.ndarray, n_centers: int) -> Tuple[np.ndarray, np.ndarray]:
        counts = np.bincount(labels, minlength=n_centers).astype(np.float64)
        spatial = np.empty((n_centers, self.coords.shape[1]))
        features = np.empty((n_centers, self.features.shape[1]))
        for axis in range(self.coords.shape[1]):
            spatial[:, axis] = np.bincount(labels, weights=self.coords[:, axis], minlength=n_centers) / counts
        for channel in range(self.features.shape[1]):
            features[:, channel] = (
                np.bincount(labels, weights=self.features[:, channel], minlength=n_centers) / counts
            )
        return spatial, features

    def objective(self, labels: np.ndarray, spatial: np.ndarray, features: np.ndarray) -> float:
        rows = np.arange(self.coords.shape[0])
        return float(np.sum(self.cost(rows, features[labels], spatial[labels])))

    def run(self, seeds: SeedSet, max_iters: int, residual_tol: float) -> ClusterState:
        n_centers = seeds.count
        seed_voxels = round_to_voxel(seeds.points) - self.origin
        seed_rows = self.index_grid[tuple(seed_voxels.T)]
        spatial = seed_voxels.astype(np.float64)
        features = self.features[seed_rows].copy()

        labels: Optional[np.ndarray] = None
        history: List[float] = []
        residuals: List[float] = []
        for iteration in range(max_iters):
            labels, best = self.assign(spatial, features, labels)
            self.fill_empty(labels, best, n_centers)
            new_spatial, features = self.update(labels, n_centers)
            moved = (new_spatial - spatial) * self.spacing
            residual = float(np.mean(np.sqrt(np.sum(moved * moved, axis=1))))
            spatial = new_spatial
            history.append(self.objective(labels, spatial, features))
            residuals.append(residual)
            logger.debug(
                f"SLIC iteration {iteration + 1}: objective {history[-1]:.6g}, residual {residual:.4g}"
            )
            if residual < residual_tol:
                break

        assert labels is not None
        full = np.full(self.mask.dims, BACKGROUND, dtype=np.int64)
        full[self.mask.bits] = labels
        return ClusterState(
            spatial_centers=spatial + self.origin,
            feature_centers=features,
            assignments=Labeling(full, n_centers),
            objective=history[-1],
            history=history,
            residuals=residuals,
        )


# Labeling, final clustering state, initial seeds and region scale.
SlicRun = Tuple[Labeling, ClusterState, SeedSet, float]


def cluster_in_mask(
    volume: FeatureVolume,
    mask: Mask,
    seeds: SeedSet,
    compactness: float,
    scale: float,
    max_iters: int = 10,
    residual_tol: float = 0.0,
    n_jobs: int = 1,
) -> ClusterState:
    """Local k-means over in-mask voxels starting from ``seeds``."""
    validate_pair(volume, mask)
    seeds.validate_for(mask)
    clusterer = _MaskedClusterer(volume, mask, compactness, scale, n_jobs=n_jobs)
    return clusterer.run(seeds, max_iters, residual_tol)


@overload
def mask_slic(
    volume: FeatureVolume, mask: Mask, params: SlicParams, return_state: Literal[False] = ...
) -> Labeling: ...


@overload
def mask_slic(
    volume: FeatureVolume, mask: Mask, params: SlicParams, return_state: Literal[True]
) -> SlicRun: ...


def mask_slic(
    volume: FeatureVolume, mask: Mask, params: SlicParams, return_state: bool = False
) -> Union[Labeling, SlicRun]:
    """
    maskSLIC: exactly ``params.n_regions`` supervoxels inside ``mask``.

    Seeds come from farthest-point placement and spatial relaxation; clustering
    only ever touches in-mask voxels.
    """
    validate_pair(volume, mask)
    if params.n_regions > mask.count:
        raise TooManySeeds(
            f"{params.n_regions} regions requested but the mask has {mask.count} voxels"
        )
    seeds = place_seeds(mask, params.n_regions, volume.spacing)
    seeds = relax_seeds(mask, seeds, volume.spacing, params.max_iters)
    scale = region_scale(mask, params.n_regions, volume.spacing)
    state = cluster_in_mask(
        volume,
        mask,
        seeds,
        params.compactness,
        scale,
        params.max_iters,
        params.residual_tol,
        params.n_jobs,
    )
    labeling = state.assignments
    if params.enforce_connectivity:
        labeling = enforce_connectivity(labeling, mask)
    if return_state:
        return labeling, state, seeds, scale
    return labeling


@overload
def naive_whole_image(
    volume: FeatureVolume, mask: Mask, params: SlicParams, return_state: Literal[False] = ...
) -> Labeling: ...


@overload
def naive_whole_image(
    volume: FeatureVolume, mask: Mask, params: SlicParams, return_state: Literal[True]
) -> SlicRun: ...


def naive_whole_image(
    volume: FeatureVolume, mask: Mask, params: SlicParams, return_state: bool = False
) -> Union[Labeling, SlicRun]:
    """
    Whole-image SLIC cut down to the mask.

    ``params.n_regions`` is the whole-image region count; the number of
    regions left inside the mask depends on the data.
    """
    validate_pair(volume, mask)
    full = Mask(np.ones(volume.dims, dtype=bool))
    seeds = seed_grid(volume.dims, params.n_regions, volume.spacing)
    scale = grid_scale(volume.dims, seeds.count, volume.spacing)
    state = cluster_in_mask(
        volume,
        full,
        seeds,
        params.compactness,
        scale,
        params.max_iters,
        params.residual_tol,
        params.n_jobs,
    )
    labeling = state.assignments
    if params.enforce_connectivity:
        labeling = enforce_connectivity(labeling, full)
    cut = np.where(mask.bits, labeling.labels, BACKGROUND)
    result = Labeling.compacted(cut)
    logger.debug(
        f"Whole-image SLIC: {labeling.num_regions} regions, {result.num_regions} inside the mask"
    )
    if return_state:
        return result, state, seeds, scale
    return result


@overload
def naive_grid_filtered(
    volume: FeatureVolume, mask: Mask, params: SlicParams, return_state: Literal[False] = ...
) -> Labeling: ...


@overload
def naive_grid_filtered(
    volume: FeatureVolume, mask: Mask, params: SlicParams, return_state: Literal[True]
) -> SlicRun: ...


def naive_grid_filtered(
    volume: FeatureVolume, mask: Mask, params: SlicParams, return_state: bool = False
) -> Union[Labeling, SlicRun]:
    """Grid seeds that fall in the mask, then SLIC over in-mask voxels only."""
    validate_pair(volume, mask)
    grid = seed_grid(volume.dims, params.n_regions, volume.spacing)
    seeds = seeds_in_mask(grid, mask)
    if seeds.count == 0:
        raise NoSeedsInMask(
            f"none of the {grid.count} grid seeds falls inside the mask"
        )
    scale = grid_scale(volume.dims, grid.count, volume.spacing)
    state = cluster_in_mask(
        volume,
        mask,
        seeds,
        params.compactness,
        scale,
        params.max_iters,
        params.residual_tol,
        params.n_jobs,
    )
    labeling = state.assignments
    if params.enforce_connectivity:
        labeling = enforce_connectivity(labeling, mask)
    if return_state:
        return labeling, state, seeds, scale
    return labeling


def _boundary_counts(
    labels: np.ndarray, fragment: np.ndarray, open_fragments: np.ndarray, settled: np.ndarray
) -> np.ndarray:
    """Rows of (fragment, neighbour label, shared faces) for open fragments."""
    keys = []
    for axis in range(labels.ndim):
        lower = [slice(None)] * labels.ndim
        upper = [slice(None)] * labels.ndim
        lower[axis] = slice(None, -1)
        upper[axis] = slice(1, None)
        for here, there in ((tuple(lower), tuple(upper)), (tuple(upper), tuple(lower))):
            frag = fragment[here]
            select = (frag >= 0) & settled[there]
            select[select] = open_fragments[frag[select]]
            keys.append(np.stack([frag[select], labels[there][select]], axis=1))
    if not keys:
        return np.empty((0, 3), dtype=np.int64)
    pairs = np.concatenate(keys)
    if pairs.size == 0:
        return np.empty((0, 3), dtype=np.int64)
    unique, counts = np.unique(pairs, axis=0, return_counts=True)
    return np.column_stack([unique, counts])


def enforce_connectivity(labeling: Labeling, mask: Mask) -> Labeling:
    """
    Make every region face-connected.

    The largest fragment of each label is kept (equal sizes: the fragment
    reached first in row-major order). Other fragments join the neighbouring
    region sharing the most faces with them, lowest label on ties. A fragment
    with no labelled neighbour keeps its label.
    """
    if labeling.dims != mask.dims:
        raise DimsMismatch(f"labeling dims {labeling.dims} != mask dims {mask.dims}")
    labels = np.array(labeling.labels, dtype=np.int64)
    structure = ndimage.generate_binary_structure(labels.ndim, 1)
    fragment = np.full(labels.shape, -1, dtype=np.int64)
    n_fragments = 0

    boxes = ndimage.find_objects(labels + 1)
    for region, box in enumerate(boxes):
        if box is None:
            continue
        components, n_components = ndimage.label(labels[box] == region, structure)
        if n_components <= 1:
            continue
        sizes = np.bincount(components.ravel())[1:]
        keep = int(np.argmax(sizes)) + 1
        local = fragment[box]
        for component in range(1, n_components + 1):
            if component == keep:
                continue
            local[components == component] = n_fragments
            n_fragments += 1

    if n_fragments == 0:
        return labeling

    logger.debug(f"Connectivity: {n_fragments} orphan fragments to merge")
    open_fragments = np.ones(n_fragments, dtype=bool)
    settled = (labels >= 0) & (fragment < 0)
    while open_fragments.any():
        table = _boundary_counts(labels, fragment, open_fragments, settled)
        if table.shape[0] == 0:
            break
        # Sort by fragment, then most shared faces, then lowest label.
        order = np.lexsort((table[:, 1], -table[:, 2], table[:, 0]))
        table = table[order]
        first = np.ones(table.shape[0], dtype=bool)
        first[1:] = table[1:, 0] != table[:-1, 0]
        target = np.full(n_fragments, -1, dtype=np.int64)
        target[table[first, 0]] = table[first, 1]

        resolved = fragment >= 0
        resolved[resolved] = target[fragment[resolved]] >= 0
        labels[resolved] = target[fragment[resolved]]
        settled |= resolved
        open_fragments[table[first, 0]] = False
        fragment[resolved] = -1

    labels[~mask.bits] = BACKGROUND
    return Labeling.compacted(labels)


def matched_region_count(volume: FeatureVolume, mask: Mask, params: SlicParams) -> int:
    """Number of regions the whole-image baseline leaves inside the mask."""
    return naive_whole_image(volume, mask, params).num_regions


_BACKENDS: Dict[Backend, Callable[..., Any]] = {
    Backend.MASK_SLIC: mask_slic,
    Backend.NAIVE_WHOLE_IMAGE: naive_whole_image,
    Backend.NAIVE_GRID_FILTERED: naive_grid_filtered,
}


def segment(volume: FeatureVolume, mask: Mask, params: SlicParams) -> SegmentationResult:
    """Run the backend selected in ``params`` and collect its diagnostics."""
    start = time.perf_counter()
    labeling, state, seeds, scale = _BACKENDS[params.backend](
        volume, mask, params, return_state=True
    )
    elapsed = time.perf_counter() - start
    logger.info(
        f"{params.backend.value}: {labeling.num_regions} regions in the mask "
        f"({state.iterations} iterations, {elapsed:.2f}s)"
    )
    return SegmentationResult(
        labeling=labeling,
        backend=params.backend,
        seeds=seeds,
        region_scale=scale,
        state=state,
        elapsed=elapsed,
    )
