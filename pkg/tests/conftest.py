"""Shared fixtures and brute-force reference implementations."""

import logging
from typing import Optional, Sequence

import numpy as np
import pytest
from scipy import ndimage
from scipy.spatial.distance import cdist

from utils.volume_utils import FeatureVolume, Mask


def random_connected_mask(rng: np.random.Generator, dims: Sequence[int], fill: float = 0.5) -> Mask:
    """Largest face-connected component of a thresholded smooth noise field."""
    while True:
        field = ndimage.gaussian_filter(rng.normal(size=tuple(dims)), sigma=1.5)
        bits = field > np.quantile(field, 1.0 - fill)
        components, n = ndimage.label(bits)
        if n == 0:
            continue
        sizes = np.bincount(components.ravel())[1:]
        largest = components == (int(np.argmax(sizes)) + 1)
        if largest.sum() >= 4:
            return Mask(largest)


def brute_force_edt(bits: np.ndarray, spacing: Optional[Sequence[float]] = None) -> np.ndarray:
    """Distance of every voxel to the nearest background voxel or the outside border."""
    padded = np.pad(np.asarray(bits, dtype=bool), 1, constant_values=False)
    scale = np.ones(padded.ndim) if spacing is None else np.asarray(spacing, dtype=np.float64)
    zeros = np.argwhere(~padded) * scale
    points = np.argwhere(np.ones(padded.shape, dtype=bool))
    out = np.zeros(points.shape[0])
    inside = padded.ravel()
    chunk = 512
    rows = np.flatnonzero(inside)
    for start in range(0, rows.size, chunk):
        block = rows[start : start + chunk]
        out[block] = np.sqrt(cdist(points[block] * scale, zeros, "sqeuclidean").min(axis=1))
    inner = tuple(slice(1, -1) for _ in range(padded.ndim))
    return out.reshape(padded.shape)[inner]


def brute_force_farthest(values: np.ndarray, bits: np.ndarray):
    """First voxel in row-major order holding the largest in-mask value."""
    best = None
    best_value = -np.inf
    for index in np.ndindex(values.shape):
        if bits[index] and values[index] > best_value:
            best, best_value = index, values[index]
    return best, best_value


def brute_force_seeds(mask: Mask, n: int):
    """Farthest-point seeds, recomputing the full distance transform before every placement."""
    placed = []
    for _ in range(n):
        bits = mask.bits.copy()
        for point in placed:
            bits[point] = False
        point, _ = brute_force_farthest(brute_force_edt(bits), mask.bits)
        placed.append(point)
    return placed


def brute_force_overlap(labels1: np.ndarray, labels2: np.ndarray) -> np.ndarray:
    """Best Dice of each region of ``labels1`` against any region of ``labels2``."""
    n1 = int(labels1.max()) + 1
    n2 = int(labels2.max()) + 1
    best = np.zeros(n1)
    for i in range(n1):
        a = labels1 == i
        for j in range(n2):
            b = labels2 == j
            total = a.sum() + b.sum()
            if total:
                best[i] = max(best[i], 2.0 * np.logical_and(a, b).sum() / total)
    return best


def brute_force_lc(labels: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Majority-label fraction of each region, one voxel at a time."""
    out = []
    for region in range(int(labels.max()) + 1):
        counts = {}
        size = 0
        for index in zip(*np.nonzero(labels == region)):
            counts[truth[index]] = counts.get(truth[index], 0) + 1
            size += 1
        if size:
            out.append(max(counts.values()) / size)
    return np.asarray(out)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def square_mask():
    """6x6 square inside a 10x10 grid."""
    bits = np.zeros((10, 10), dtype=bool)
    bits[2:8, 2:8] = True
    return Mask(bits)


@pytest.fixture
def disk_mask():
    rows, cols = np.indices((32, 32))
    return Mask((rows - 15.5) ** 2 + (cols - 14.5) ** 2 <= 11.0**2)


@pytest.fixture
def two_blob_pair():
    """6x12 rectangle: left half feature 0, right half feature 100."""
    bits = np.zeros((10, 16), dtype=bool)
    bits[2:8, 2:14] = True
    image = np.zeros((10, 16))
    image[:, 8:] = 100.0
    return FeatureVolume.from_scalar(image), Mask(bits)


@pytest.fixture
def textured_volume(disk_mask):
    rng = np.random.default_rng(7)
    image = ndimage.gaussian_filter(rng.normal(size=disk_mask.dims), sigma=2.0) * 50.0
    return FeatureVolume.from_scalar(image)


@pytest.fixture(autouse=True)
def reset_root_logging():
    """Drop handlers installed by CLI runs so later tests never log to closed streams."""
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
