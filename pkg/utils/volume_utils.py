"""
Core data types shared by the maskSLIC toolkit.

Coordinates are integer voxel indices; a voxel's centre is its index and
seed points are continuous coordinates in the same frame. Physical spacing
scales per-axis differences in every spatial distance.

All containers are frozen dataclasses over read-only numpy arrays; new
values are produced by constructing new objects.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from utils.errors import (
    DimsMismatch,
    EmptyMask,
    InvalidParams,
    InvalidVolume,
    OutOfBounds,
)

logger = logging.getLogger(__name__)

BACKGROUND = -1
SUPPORTED_NDIM = (2, 3)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


def normalise_spacing(spacing: Optional[Iterable[float]], ndim: int) -> Tuple[float, ...]:
    """Return spacing as a float tuple of length ``ndim`` (default all 1.0)."""
    if spacing is None:
        return (1.0,) * ndim
    values = tuple(float(s) for s in spacing)
    if len(values) != ndim:
        raise InvalidVolume(f"spacing has {len(values)} values for {ndim} axes")
    if not all(np.isfinite(v) and v > 0 for v in values):
        raise InvalidVolume(f"spacing must be finite and positive, got {values}")
    return values


def round_to_voxel(points: np.ndarray) -> np.ndarray:
    """Round continuous coordinates to the nearest voxel (halves round up)."""
    return np.floor(np.asarray(points, dtype=np.float64) + 0.5).astype(np.int64)


@dataclass(frozen=True)
class FeatureVolume:
    """Grid of per-voxel feature vectors, shape ``(*dims, channels)``."""

    data: np.ndarray
    spacing: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim - 1 not in SUPPORTED_NDIM:
            raise InvalidVolume(
                f"feature data must have shape (*dims, channels) with 2 or 3 "
                f"spatial axes, got shape {data.shape}"
            )
        if data.shape[-1] < 1 or min(data.shape) < 1:
            raise InvalidVolume(f"empty axis in feature data of shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidVolume("feature values must be finite (NaN/Inf found)")
        object.__setattr__(self, "data", _frozen(data))
        spacing = normalise_spacing(self.spacing or None, data.ndim - 1)
        object.__setattr__(self, "spacing", spacing)

    @classmethod
    def from_scalar(
        cls, image: np.ndarray, spacing: Optional[Sequence[float]] = None
    ) -> "FeatureVolume":
        """Wrap a single-channel image or volume."""
        image = np.asarray(image, dtype=np.float64)
        return cls(image[..., np.newaxis], tuple(spacing) if spacing else ())

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(self.data.shape[:-1])

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def channels(self) -> int:
        return int(self.data.shape[-1])

    def standardized(self, mask: Optional["Mask"] = None) -> "FeatureVolume":
        """Z-score each channel over the mask (or the whole grid)."""
        select = mask.bits if mask is not None else np.ones(self.dims, dtype=bool)
        values = self.data[select]
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        std[std == 0] = 1.0
        return FeatureVolume((self.data - mean) / std, self.spacing)


@dataclass(frozen=True)
class Mask:
    """Boolean region-of-interest grid; never empty."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits).astype(bool)
        if bits.ndim not in SUPPORTED_NDIM:
            raise InvalidVolume(f"mask must be 2D or 3D, got {bits.ndim} axes")
        if not bits.any():
            raise EmptyMask("mask has no foreground voxel")
        object.__setattr__(self, "bits", _frozen(bits))

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(self.bits.shape)

    @property
    def ndim(self) -> int:
        return self.bits.ndim

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def coordinates(self) -> np.ndarray:
        """Foreground voxel indices in row-major order, shape ``(count, ndim)``."""
        return np.argwhere(self.bits)

    def bounding_origin(self) -> np.ndarray:
        """Smallest foreground index per axis."""
        return self.coordinates().min(axis=0)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Mask):
            return NotImplemented
        return self.dims == other.dims and bool(np.array_equal(self.bits, other.bits))

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class SeedSet:
    """Ordered seed points in continuous voxel coordinates, shape ``(N, ndim)``."""

    points: np.ndarray

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim != 2:
            raise InvalidParams(f"seed points must be an (N, ndim) array, got {points.shape}")
        object.__setattr__(self, "points", _frozen(points))

    @property
    def count(self) -> int:
        return int(self.points.shape[0])

    def voxels(self) -> np.ndarray:
        return round_to_voxel(self.points)

    def validate_for(self, mask: Mask) -> None:
        """Check every seed rounds into the mask and no two share a voxel."""
        if self.points.shape[1] != mask.ndim:
            raise DimsMismatch(
                f"seeds have {self.points.shape[1]} axes, mask has {mask.ndim}"
            )
        voxels = self.voxels()
        inside = np.all((voxels >= 0) & (voxels < np.array(mask.dims)), axis=1)
        if not inside.all() or not mask.bits[tuple(voxels.T)].all():
            raise OutOfBounds("seed point outside the mask")
        if len({tuple(v) for v in voxels.tolist()}) != self.count:
            raise InvalidParams("two seed points round to the same voxel")

    def translated(self, offset: Sequence[int]) -> "SeedSet":
        return SeedSet(self.points + np.asarray(offset, dtype=np.float64))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SeedSet):
            return NotImplemented
        return bool(np.array_equal(self.points, other.points))

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Labeling:
    """
    Integer region map; ``-1`` marks background.

    With ``dense=True`` (the default) labels are exactly ``0..num_regions-1``
    and every one is non-empty. Cohort subregion maps use ``dense=False``:
    ids stay below ``num_regions`` but may be absent from a single case.
    """

    labels: np.ndarray
    num_regions: int = -1
    dense: bool = True

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels)
        if labels.ndim not in SUPPORTED_NDIM:
            raise InvalidVolume(f"labeling must be 2D or 3D, got {labels.ndim} axes")
        labels = labels.astype(np.int64)
        if labels.size and labels.min() < BACKGROUND:
            raise InvalidVolume("labels below -1 are not allowed")
        present = np.unique(labels[labels >= 0])
        num_regions = self.num_regions
        if num_regions < 0:
            num_regions = int(present[-1]) + 1 if present.size else 0
        if present.size and present[-1] >= num_regions:
            raise InvalidVolume(
                f"label {int(present[-1])} exceeds num_regions={num_regions}"
            )
        if self.dense and present.size != num_regions:
            raise InvalidVolume(
                f"labels must cover 0..{num_regions - 1} without gaps "
                f"({present.size} distinct labels present)"
            )
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "num_regions", int(num_regions))

    @classmethod
    def compacted(cls, labels: np.ndarray) -> "Labeling":
        """Renumber non-negative labels to ``0..K-1`` keeping their order."""
        labels = np.asarray(labels, dtype=np.int64)
        out = np.full(labels.shape, BACKGROUND, dtype=np.int64)
        foreground = labels >= 0
        present, inverse = np.unique(labels[foreground], return_inverse=True)
        out[foreground] = inverse
        return cls(out, int(present.size))

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(self.labels.shape)

    @property
    def foreground(self) -> np.ndarray:
        return self.labels >= 0

    def region_sizes(self) -> np.ndarray:
        return np.bincount(
            self.labels[self.labels >= 0], minlength=self.num_regions
        ).astype(np.int64)

    def check_against(self, mask: Mask) -> None:
        """Raise unless background is exactly the complement of ``mask``."""
        if self.dims != mask.dims:
            raise DimsMismatch(f"labeling dims {self.dims} != mask dims {mask.dims}")
        if not np.array_equal(self.foreground, mask.bits):
            raise InvalidVolume("labeling background does not match the mask")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Labeling):
            return NotImplemented
        return self.num_regions == other.num_regions and bool(
            np.array_equal(self.labels, other.labels)
        )

    __hash__ = None  # type: ignore[assignment]


class Backend(str, Enum):
    """Segmentation strategy."""

    MASK_SLIC = "maskslic"
    NAIVE_WHOLE_IMAGE = "naive1"
    NAIVE_GRID_FILTERED = "naive2"


@dataclass(frozen=True)
class SlicParams:
    """Parameters of one segmentation run."""

    n_regions: int
    compactness: float
    max_iters: int = 10
    residual_tol: float = 0.0
    enforce_connectivity: bool = True
    backend: Backend = Backend.MASK_SLIC
    n_jobs: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "backend", Backend(self.backend))
        if int(self.n_regions) < 1:
            raise InvalidParams(f"n_regions must be >= 1, got {self.n_regions}")
        if not (np.isfinite(self.compactness) and self.compactness > 0):
            raise InvalidParams(f"compactness must be > 0, got {self.compactness}")
        if int(self.max_iters) < 1:
            raise InvalidParams(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.residual_tol >= 0:
            raise InvalidParams(f"residual_tol must be >= 0, got {self.residual_tol}")
        if int(self.n_jobs) < 1:
            raise InvalidParams(f"n_jobs must be >= 1, got {self.n_jobs}")


def validate_pair(volume: FeatureVolume, mask: Mask) -> None:
    """Succeed iff volume and mask are congruent and the mask is non-empty."""
    if volume.dims != mask.dims:
        raise DimsMismatch(f"volume dims {volume.dims} != mask dims {mask.dims}")
    if not mask.bits.any():
        raise EmptyMask("mask has no foreground voxel")


def make_mask(bits: np.ndarray) -> Mask:
    """Build a mask, raising ``EmptyMask`` for all-false input."""
    return Mask(np.asarray(bits, dtype=bool))


def translate_mask(mask: Mask, offset: Sequence[int]) -> Mask:
    """Shift the foreground by an integer offset; voxels may not leave the grid."""
    offset_arr = np.asarray(offset, dtype=np.int64)
    if offset_arr.shape != (mask.ndim,):
        raise DimsMismatch(f"offset {tuple(offset)} does not match {mask.ndim} axes")
    coords = mask.coordinates() + offset_arr
    dims = np.array(mask.dims)
    if np.any(coords < 0) or np.any(coords >= dims):
        raise OutOfBounds(f"offset {tuple(offset_arr.tolist())} moves the mask off the grid")
    bits = np.zeros(mask.dims, dtype=bool)
    bits[tuple(coords.T)] = True
    return Mask(bits)


def shift_grid(values: np.ndarray, offset: Sequence[int], fill: int = BACKGROUND) -> np.ndarray:
    """Shift an array by ``offset`` filling vacated cells; cells leaving the grid are dropped."""
    values = np.asarray(values)
    out = np.full(values.shape, fill, dtype=values.dtype)
    src = []
    dst = []
    for size, step in zip(values.shape, offset):
        step = int(step)
        if abs(step) >= size:
            return out
        if step >= 0:
            src.append(slice(0, size - step))
            dst.append(slice(step, size))
        else:
            src.append(slice(-step, size))
            dst.append(slice(0, size + step))
    out[tuple(dst)] = values[tuple(src)]
    return out
