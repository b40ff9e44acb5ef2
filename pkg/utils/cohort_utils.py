"""
Cohort subregion analysis on top of maskSLIC supervoxels.

Per case, time curves are reduced to principal component scores and split
into supervoxels. Region descriptors from all cases are then pooled and
clustered with k-means into a fixed number of cohort labels, which are
painted back onto each case's supervoxels. The voxelwise alternative
clusters every in-mask voxel instead.
"""

import logging
from dataclasses import dataclass, field
from itertools import permutations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.spatial.distance import cdist
from sklearn.decomposition import PCA
from sklearn.preprocessing import StandardScaler
from tqdm import tqdm

from utils.errors import DegenerateData, DimsMismatch, InvalidParams, InvalidVolume, TooFewItems
from utils.slic_utils import mask_slic
from utils.volume_utils import (
    BACKGROUND,
    FeatureVolume,
    Labeling,
    Mask,
    SlicParams,
    normalise_spacing,
)

logger = logging.getLogger(__name__)

_CHUNK_ENTRIES = 1 << 22


@dataclass(frozen=True)
class TemporalSeries:
    """3D volume sampled at T time points, values shape ``(*dims, T)``."""

    values: np.ndarray
    spacing: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 4:
            raise InvalidVolume(f"temporal series must have shape (x, y, z, T), got {values.shape}")
        if values.shape[-1] < 2:
            raise InvalidVolume("temporal series needs at least 2 frames")
        if not np.all(np.isfinite(values)):
            raise InvalidVolume("temporal series contains NaN/Inf")
        values = np.ascontiguousarray(values)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", normalise_spacing(self.spacing or None, 3))

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(self.values.shape[:-1])

    @property
    def frames(self) -> int:
        return int(self.values.shape[-1])


@dataclass
class RegionDescriptor:
    """Mean features of one supervoxel."""

    case_id: str
    region_id: int
    feature_means: np.ndarray
    voxel_count: int


@dataclass
class CohortClustering:
    """Result of cohort k-means."""

    k: int
    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float
    history: List[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.history)


def normalise_curves(series: TemporalSeries, baseline_frames: int) -> TemporalSeries:
    """Subtract each voxel's mean over the first ``baseline_frames`` frames."""
    if not 1 <= baseline_frames < series.frames:
        raise InvalidParams(
            f"baseline_frames must be in [1, {series.frames - 1}], got {baseline_frames}"
        )
    baseline = series.values[..., :baseline_frames].mean(axis=-1, keepdims=True)
    return TemporalSeries(series.values - baseline, series.spacing)


def _fix_signs(components: np.ndarray) -> np.ndarray:
    """+1/-1 per component so that its largest-magnitude coordinate is positive."""
    lead = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(components.shape[0]), lead])
    signs[signs == 0] = 1.0
    return signs


def temporal_pca(series: TemporalSeries, mask: Mask, n_components: int) -> FeatureVolume:
    """
    Principal component scores of the in-mask time curves as feature channels.

    Components are ordered by explained variance; each is signed so its
    largest-magnitude coordinate is positive. Out-of-mask voxels get 0.
    """
    if series.dims != mask.dims:
        raise DimsMismatch(f"series dims {series.dims} != mask dims {mask.dims}")
    curves = series.values[mask.bits]
    if curves.shape[0] < 2:
        raise InvalidParams("temporal PCA needs at least 2 in-mask voxels")
    if not 1 <= n_components <= min(series.frames, curves.shape[0]):
        raise InvalidParams(
            f"n_components must be in [1, {min(series.frames, curves.shape[0])}], got {n_components}"
        )
    if np.all(curves == curves[0]):
        raise DegenerateData("all in-mask time curves are identical")

    centered = curves - curves.mean(axis=0)
    pca = PCA(n_components=n_components, svd_solver="full")
    pca.fit(curves)
    signs = _fix_signs(pca.components_)
    components = pca.components_ * signs[:, None]
    scores = centered @ components.T
    logger.debug(
        f"Temporal PCA: explained variance ratio {np.round(pca.explained_variance_ratio_, 4).tolist()}"
    )

    data = np.zeros(series.dims + (n_components,), dtype=np.float64)
    data[mask.bits] = scores
    return FeatureVolume(data, series.spacing)


def fit_cohort_basis(
    series_list: Sequence[TemporalSeries], masks: Sequence[Mask], n_components: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    PCA basis fitted on the pooled in-mask curves of all cases.

    Returns:
        (mean curve, components) with components signed as in ``temporal_pca``.
    """
    pooled = np.concatenate([s.values[m.bits] for s, m in zip(series_list, masks)])
    if np.all(pooled == pooled[0]):
        raise DegenerateData("all pooled time curves are identical")
    pca = PCA(n_components=n_components, svd_solver="full").fit(pooled)
    components = pca.components_ * _fix_signs(pca.components_)[:, None]
    return pca.mean_, components


def project_curves(
    series: TemporalSeries, mask: Mask, mean: np.ndarray, components: np.ndarray
) -> FeatureVolume:
    """Scores of every in-mask curve on a fixed basis."""
    data = np.zeros(series.dims + (components.shape[0],), dtype=np.float64)
    data[mask.bits] = (series.values[mask.bits] - mean) @ components.T
    return FeatureVolume(data, series.spacing)


def extract_descriptors(
    volume: FeatureVolume, labeling: Labeling, case_id: str = "case"
) -> List[RegionDescriptor]:
    """One descriptor per label with the exact mean of each feature channel."""
    if volume.dims != labeling.dims:
        raise DimsMismatch(f"volume dims {volume.dims} != labeling dims {labeling.dims}")
    inside = labeling.labels >= 0
    regions = labeling.labels[inside]
    features = volume.data[inside]
    counts = np.bincount(regions, minlength=labeling.num_regions)
    means = np.empty((labeling.num_regions, volume.channels))
    for channel in range(volume.channels):
        sums = np.bincount(regions, weights=features[:, channel], minlength=labeling.num_regions)
        with np.errstate(invalid="ignore", divide="ignore"):
            means[:, channel] = sums / counts
    return [
        RegionDescriptor(case_id, region, means[region].copy(), int(counts[region]))
        for region in range(labeling.num_regions)
        if counts[region] > 0
    ]


def descriptors_to_frame(descriptors: Sequence[RegionDescriptor]) -> pd.DataFrame:
    """Descriptor table with columns case_id, region_id, voxel_count, f0..f{c-1}."""
    if not descriptors:
        return pd.DataFrame(columns=["case_id", "region_id", "voxel_count"])
    n_features = len(descriptors[0].feature_means)
    rows = [
        [d.case_id, d.region_id, d.voxel_count, *np.asarray(d.feature_means).tolist()]
        for d in descriptors
    ]
    columns = ["case_id", "region_id", "voxel_count"] + [f"f{i}" for i in range(n_features)]
    return pd.DataFrame(rows, columns=columns)


def frame_to_descriptors(frame: pd.DataFrame) -> List[RegionDescriptor]:
    feature_columns = [c for c in frame.columns if c.startswith("f") and c[1:].isdigit()]
    feature_columns.sort(key=lambda c: int(c[1:]))
    return [
        RegionDescriptor(
            str(row["case_id"]),
            int(row["region_id"]),
            np.asarray([row[c] for c in feature_columns], dtype=np.float64),
            int(row["voxel_count"]),
        )
        for _, row in frame.iterrows()
    ]


def _item_weights(n_items: int, weights: Optional[np.ndarray]) -> np.ndarray:
    if weights is None:
        return np.ones(n_items)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (n_items,):
        raise DimsMismatch(f"expected {n_items} item weights, got shape {weights.shape}")
    if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
        raise InvalidParams("item weights must be finite and positive")
    return weights


def standardize_items(items: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Z-score every feature over all items (constant features stay at 0).

    With ``weights`` (e.g. supervoxel voxel counts) the mean and variance are
    weighted, so supervoxel items are scaled as their voxels would be.
    """
    items = np.asarray(items, dtype=np.float64)
    if weights is None:
        return StandardScaler().fit_transform(items)
    weights = _item_weights(items.shape[0], weights)
    return StandardScaler().fit(items, sample_weight=weights).transform(items)


def _nearest_centroid(items: np.ndarray, centroids: np.ndarray, n_jobs: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    chunk = max(1, _CHUNK_ENTRIES // max(1, centroids.shape[0]))
    starts = list(range(0, items.shape[0], chunk))

    def block(start: int) -> Tuple[np.ndarray, np.ndarray]:
        d2 = cdist(items[start : start + chunk], centroids, "sqeuclidean")
        idx = np.argmin(d2, axis=1)
        return idx, d2[np.arange(idx.size), idx]

    if n_jobs > 1 and len(starts) > 1:
        parts = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(block)(s) for s in starts)
    else:
        parts = [block(s) for s in starts]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def farthest_point_init(
    items: np.ndarray, k: int, weights: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Indices of k initial centroids.

    The first is the item closest to the mean; each next one is the item
    farthest from all chosen so far. Ties go to the lowest index.

    With ``weights`` the mean is weighted and each next item maximises its
    weight times its squared distance to the chosen set.
    """
    if weights is None:
        mean = items.mean(axis=0, keepdims=True)
        w = np.ones(items.shape[0])
    else:
        w = _item_weights(items.shape[0], weights)
        mean = np.average(items, axis=0, weights=w)[None, :]
    first = int(np.argmin(cdist(items, mean, "sqeuclidean")[:, 0]))
    chosen = [first]
    nearest = cdist(items, items[[first]], "sqeuclidean")[:, 0]
    for _ in range(1, k):
        candidates = w * nearest
        candidates[chosen] = -np.inf
        pick = int(np.argmax(candidates))
        chosen.append(pick)
        nearest = np.minimum(nearest, cdist(items, items[[pick]], "sqeuclidean")[:, 0])
    return np.asarray(chosen, dtype=np.int64)


def kmeans_cohort(
    items: np.ndarray,
    k: int,
    max_iters: int = 100,
    n_jobs: int = 1,
    weights: Optional[np.ndarray] = None,
) -> CohortClustering:
    """
    Deterministic Lloyd k-means with farthest-point initialisation.

    Stops when assignments no longer change or after ``max_iters`` rounds.
    Every label keeps at least one item.

    Args:
        items: (n_items, n_features) feature vectors.
        k: Number of clusters.
        max_iters: Maximum Lloyd rounds.
        n_jobs: Threads for the assignment step; results do not depend on it.
        weights: Optional positive weight per item. Centroids become weighted
            means and inertia the weighted sum of squared distances, so
            clustering supervoxel means with their voxel counts minimises
            the voxel-level inertia over supervoxel-constant labelings.
    """
    items = np.asarray(items, dtype=np.float64)
    if items.ndim == 1:
        items = items[:, None]
    if k < 1 or k > items.shape[0]:
        raise TooFewItems(f"cannot form {k} clusters from {items.shape[0]} items")
    w = _item_weights(items.shape[0], weights)

    centroids = items[farthest_point_init(items, k, weights)].copy()
    assignment: Optional[np.ndarray] = None
    history: List[float] = []
    for iteration in range(max_iters):
        labels, best = _nearest_centroid(items, centroids, n_jobs)
        counts = np.bincount(labels, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            candidates = np.where(counts[labels] > 1, w * best, -np.inf)
            v = int(np.argmax(candidates))
            counts[labels[v]] -= 1
            counts[empty] += 1
            labels[v] = empty
        converged = assignment is not None and np.array_equal(labels, assignment)
        assignment = labels
        mass = np.bincount(labels, weights=w, minlength=k)
        for dim in range(items.shape[1]):
            centroids[:, dim] = np.bincount(labels, weights=w * items[:, dim], minlength=k) / mass
        diff = items - centroids[labels]
        history.append(float(np.sum(w[:, None] * diff * diff)))
        logger.debug(f"Cohort k-means iteration {iteration + 1}: inertia {history[-1]:.6g}")
        if converged:
            break

    assert assignment is not None
    return CohortClustering(
        k=k, centroids=centroids, assignment=assignment, inertia=history[-1], history=history
    )


def propagate_labels(
    clustering: CohortClustering,
    labeling: Labeling,
    descriptors: Sequence[RegionDescriptor],
    offset: int = 0,
) -> Labeling:
    """
    Paint cohort labels onto a case's supervoxels.

    ``descriptors`` are this case's regions; their cohort labels are
    ``clustering.assignment[offset : offset + len(descriptors)]``.
    """
    region_to_cluster = np.full(labeling.num_regions, BACKGROUND, dtype=np.int64)
    assigned = clustering.assignment[offset : offset + len(descriptors)]
    if len(assigned) != len(descriptors):
        raise DimsMismatch("clustering has fewer assignments than descriptors")
    for descriptor, cluster in zip(descriptors, assigned):
        if not 0 <= descriptor.region_id < labeling.num_regions:
            raise DimsMismatch(f"descriptor region {descriptor.region_id} not in labeling")
        region_to_cluster[descriptor.region_id] = int(cluster)

    out = np.full(labeling.dims, BACKGROUND, dtype=np.int64)
    inside = labeling.labels >= 0
    out[inside] = region_to_cluster[labeling.labels[inside]]
    return Labeling(out, clustering.k, dense=False)


def best_permutation_agreement(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of voxels whose predicted label matches truth under the best relabeling."""
    predicted = np.asarray(predicted).ravel()
    truth = np.asarray(truth).ravel()
    valid = (predicted >= 0) & (truth >= 0)
    predicted, truth = predicted[valid], truth[valid]
    if predicted.size == 0:
        return 0.0
    _, p_index = np.unique(predicted, return_inverse=True)
    _, t_index = np.unique(truth, return_inverse=True)
    size = max(p_index.max(), t_index.max()) + 1
    if size > 8:
        raise InvalidParams("exhaustive permutation search supports at most 8 labels")
    confusion = np.bincount(p_index * size + t_index, minlength=size * size).reshape(size, size)
    best = max(
        sum(confusion[i, perm[i]] for i in range(size)) for perm in permutations(range(size))
    )
    return float(best) / predicted.size


def summarise_clusters(
    descriptors: Sequence[RegionDescriptor], clustering: CohortClustering
) -> pd.DataFrame:
    """Per cohort label: region count, voxel count and voxel-weighted feature means."""
    frame = descriptors_to_frame(descriptors)
    frame["cluster"] = clustering.assignment[: len(frame)]
    feature_columns = [c for c in frame.columns if c.startswith("f") and c[1:].isdigit()]
    weighted = frame[feature_columns].multiply(frame["voxel_count"], axis=0)
    weighted["cluster"] = frame["cluster"]
    sums = weighted.groupby("cluster").sum()
    voxels = frame.groupby("cluster")["voxel_count"].sum()
    summary = sums.divide(voxels, axis=0)
    summary.insert(0, "voxel_count", voxels)
    summary.insert(0, "n_regions", frame.groupby("cluster").size())
    return summary.reset_index()


@dataclass
class CohortCase:
    """One case entering the cohort pipeline."""

    case_id: str
    series: TemporalSeries
    mask: Mask
    features: Optional[FeatureVolume] = None


@dataclass
class CohortSettings:
    k: int = 4
    mode: str = "supervoxel"
    n_components: int = 3
    n_regions: int = 50
    compactness: float = 1.0
    baseline_frames: int = 0
    standardize: bool = True
    max_iters: int = 10
    kmeans_max_iters: int = 100
    n_jobs: int = 1
    show_progress: bool = False


@dataclass
class CohortResult:
    clustering: CohortClustering
    maps: Dict[str, Labeling]
    descriptors: List[RegionDescriptor]
    supervoxels: Dict[str, Labeling]


def _case_supervoxels(case: CohortCase, settings: CohortSettings) -> Tuple[CohortCase, Labeling]:
    series = case.series
    if settings.baseline_frames:
        series = normalise_curves(series, settings.baseline_frames)
    scores = temporal_pca(series, case.mask, settings.n_components)
    params = SlicParams(
        n_regions=min(settings.n_regions, case.mask.count),
        compactness=settings.compactness,
        max_iters=settings.max_iters,
    )
    labeling = mask_slic(scores.standardized(case.mask), case.mask, params)
    logger.info(f"Case {case.case_id}: {labeling.num_regions} supervoxels")
    return CohortCase(case.case_id, series, case.mask, case.features), labeling


def run_cohort(cases: Sequence[CohortCase], settings: CohortSettings) -> CohortResult:
    """Cluster a collection of cases into ``settings.k`` shared subregion labels."""
    if settings.mode not in ("supervoxel", "voxel"):
        raise InvalidParams(f"unknown cohort mode '{settings.mode}'")
    if not cases:
        raise TooFewItems("cohort has no cases")

    prepared = [
        CohortCase(
            c.case_id,
            normalise_curves(c.series, settings.baseline_frames) if settings.baseline_frames else c.series,
            c.mask,
            c.features,
        )
        for c in cases
    ]
    if all(c.features is not None for c in prepared):
        feature_maps = {c.case_id: c.features for c in prepared}
    else:
        mean, components = fit_cohort_basis(
            [c.series for c in prepared], [c.mask for c in prepared], settings.n_components
        )
        feature_maps = {
            c.case_id: c.features if c.features is not None else project_curves(c.series, c.mask, mean, components)
            for c in prepared
        }

    supervoxels: Dict[str, Labeling] = {}
    descriptors: List[RegionDescriptor] = []
    weights: Optional[np.ndarray] = None
    progress = tqdm(prepared, desc="cohort", unit="case", disable=not settings.show_progress)
    if settings.mode == "supervoxel":
        segmented = Parallel(n_jobs=settings.n_jobs, prefer="threads")(
            delayed(_case_supervoxels)(c, CohortSettings(**{**settings.__dict__, "baseline_frames": 0}))
            for c in progress
        )
        for case, labeling in segmented:
            supervoxels[case.case_id] = labeling
            descriptors.extend(extract_descriptors(feature_maps[case.case_id], labeling, case.case_id))
        items = np.stack([d.feature_means for d in descriptors])
        weights = np.asarray([d.voxel_count for d in descriptors], dtype=np.float64)
    else:
        for case in progress:
            inside = np.where(case.mask.bits, np.cumsum(case.mask.bits).reshape(case.mask.dims) - 1, BACKGROUND)
            voxel_labels = Labeling(inside, case.mask.count)
            supervoxels[case.case_id] = voxel_labels
            values = feature_maps[case.case_id].data[case.mask.bits]
            descriptors.extend(
                RegionDescriptor(case.case_id, i, values[i], 1) for i in range(values.shape[0])
            )
        items = np.concatenate([feature_maps[c.case_id].data[c.mask.bits] for c in prepared])

    if settings.standardize:
        items = standardize_items(items, weights)
    clustering = kmeans_cohort(
        items, settings.k, settings.kmeans_max_iters, settings.n_jobs, weights=weights
    )
    logger.info(
        f"Cohort k-means ({settings.mode}): {items.shape[0]} items, k={settings.k}, "
        f"inertia {clustering.inertia:.6g} after {clustering.iterations} iterations"
    )

    maps: Dict[str, Labeling] = {}
    offset = 0
    for case in prepared:
        case_descriptors = [d for d in descriptors if d.case_id == case.case_id]
        maps[case.case_id] = propagate_labels(
            clustering, supervoxels[case.case_id], case_descriptors, offset
        )
        offset += len(case_descriptors)
    return CohortResult(clustering=clustering, maps=maps, descriptors=descriptors, supervoxels=supervoxels)
