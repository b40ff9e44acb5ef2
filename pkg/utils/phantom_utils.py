"""
Synthetic phantoms with known ground truth.

- ``blobs2d``: 2D smooth blob image with an irregular mask. The content is
  defined on a fixed canvas and sampled at ``x - offset``, so translating
  the phantom moves image and mask together exactly.
- ``tumour3d``: 3D volume with four nested/adjacent labelled subregions of a
  perturbed sphere, additive Gaussian noise, textured background.
- ``perfusion4d``: 3D+time series whose mask is split into contiguous
  subregions, each following one planted enhancement-curve archetype.

Everything is drawn from ``numpy.random.default_rng(seed)``.
"""

import logging
from dataclasses import dataclass
from typing import Any, NamedTuple, Optional, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from utils.errors import BadSpec, OutOfBounds
from utils.seeding_utils import nearest_seed, place_seeds
from utils.volume_utils import BACKGROUND, FeatureVolume, Mask, translate_mask

logger = logging.getLogger(__name__)

PHANTOM_KINDS = ("blobs2d", "tumour3d", "perfusion4d")

_DEFAULT_DIMS = {
    "blobs2d": (128, 128),
    "tumour3d": (48, 48, 48),
    "perfusion4d": (24, 24, 24),
}
_DEFAULT_NOISE = {"blobs2d": 0.05, "tumour3d": 0.2, "perfusion4d": 0.3}

# Largest translation supported by blobs2d along any axis.
MAX_BLOB_OFFSET = 40

# Mean intensity step between neighbouring tumour labels.
TUMOUR_CONTRAST = 100.0


@dataclass(frozen=True)
class PhantomSpec:
    """Which phantom to build and its knobs; unset fields take the kind's defaults."""

    kind: str
    dims: Tuple[int, ...] = ()
    noise: Optional[float] = None
    offset: Tuple[int, ...] = ()
    archetypes: int = 3
    frames: int = 30

    def resolved(self) -> "PhantomSpec":
        if self.kind not in PHANTOM_KINDS:
            raise BadSpec(f"unknown phantom '{self.kind}' (choose from {', '.join(PHANTOM_KINDS)})")
        dims = tuple(int(d) for d in self.dims) or _DEFAULT_DIMS[self.kind]
        ndim = len(_DEFAULT_DIMS[self.kind])
        if len(dims) != ndim:
            raise BadSpec(f"{self.kind} needs {ndim} dims, got {dims}")
        if min(dims) < 8:
            raise BadSpec(f"phantom dims must be at least 8 per axis, got {dims}")
        noise = _DEFAULT_NOISE[self.kind] if self.noise is None else float(self.noise)
        if not np.isfinite(noise) or noise < 0:
            raise BadSpec(f"noise must be a non-negative fraction, got {noise}")
        offset = tuple(int(o) for o in self.offset) or (0,) * ndim
        if len(offset) != ndim:
            raise BadSpec(f"offset {offset} does not match {ndim} axes")
        if self.kind == "blobs2d" and max(abs(o) for o in offset) > MAX_BLOB_OFFSET:
            raise BadSpec(f"blobs2d offsets are limited to +/-{MAX_BLOB_OFFSET}")
        if self.kind != "blobs2d" and any(offset):
            raise BadSpec("offset is only supported for blobs2d")
        if self.kind == "perfusion4d":
            if self.archetypes < 1:
                raise BadSpec("perfusion4d needs at least one archetype")
            if self.frames < 8:
                raise BadSpec("perfusion4d needs at least 8 frames")
        return PhantomSpec(self.kind, dims, noise, offset, self.archetypes, self.frames)


class Phantom(NamedTuple):
    volume: Any
    mask: Mask
    truth: np.ndarray


def _blob_canvas(rng: np.random.Generator, dims: Tuple[int, ...], noise: float) -> np.ndarray:
    pad = MAX_BLOB_OFFSET
    shape = tuple(d + 2 * pad for d in dims)
    grid = np.indices(shape, dtype=np.float64)
    canvas = np.zeros(shape)
    for _ in range(12):
        centre = rng.uniform(0, shape)
        width = rng.uniform(5.0, 14.0)
        height = rng.uniform(0.5, 1.0) * rng.choice([-1.0, 1.0])
        d2 = sum((g - c) ** 2 for g, c in zip(grid, centre))
        canvas += height * np.exp(-d2 / (2.0 * width**2))
    canvas += 0.3 * gaussian_filter(rng.normal(size=shape), sigma=3.0)
    canvas += noise * rng.normal(size=shape)
    return canvas


def _blobs2d(spec: PhantomSpec, rng: np.random.Generator) -> Phantom:
    dims = spec.dims
    canvas = _blob_canvas(rng, dims, float(spec.noise))
    pad = MAX_BLOB_OFFSET
    rows, cols = np.indices(dims)
    src_r = rows - spec.offset[0] + pad
    src_c = cols - spec.offset[1] + pad
    image = canvas[src_r, src_c]

    # Irregular mask: union of three ellipses anchored left of centre so it
    # stays inside the grid for shifts up to MAX_BLOB_OFFSET along the last axis.
    h, w = dims
    ellipses = (
        (0.50 * h, 0.34 * w, 0.30 * h, 0.12 * w),
        (0.36 * h, 0.28 * w, 0.12 * h, 0.14 * w),
        (0.66 * h, 0.42 * w, 0.10 * h, 0.10 * w),
    )
    base = np.zeros(dims, dtype=bool)
    for cr, cc, rr, rc in ellipses:
        base |= ((rows - cr) / rr) ** 2 + ((cols - cc) / rc) ** 2 <= 1.0
    try:
        mask = translate_mask(Mask(base), spec.offset)
    except OutOfBounds as exc:
        raise BadSpec(f"blobs2d mask leaves the grid at offset {spec.offset}") from exc
    truth = np.where(mask.bits, (image > 0).astype(np.int64), BACKGROUND)
    return Phantom(FeatureVolume.from_scalar(image), mask, truth)


def _tumour3d(spec: PhantomSpec, rng: np.random.Generator) -> Phantom:
    dims = spec.dims
    grid = np.indices(dims, dtype=np.float64)
    size = min(dims)
    centre = np.asarray(dims, dtype=np.float64) / 2.0 + rng.uniform(-1.5, 1.5, size=3)
    radius = 0.31 * size
    rel = [g - c for g, c in zip(grid, centre)]
    distance = np.sqrt(sum(r**2 for r in rel))

    # Low-frequency radial perturbation keeps the outline irregular.
    wobble = gaussian_filter(rng.normal(size=dims), sigma=size / 8.0)
    wobble *= 0.12 * radius / max(np.abs(wobble).max(), 1e-12)
    bits = distance <= radius + wobble

    normal = rng.normal(size=3)
    normal /= np.linalg.norm(normal)
    side = sum(n * r for n, r in zip(normal, rel)) > 0

    truth = np.full(dims, BACKGROUND, dtype=np.int64)
    truth[bits & side] = 0
    truth[bits & ~side] = 1
    truth[bits & (distance <= 0.62 * radius)] = 2
    truth[bits & (distance <= 0.32 * radius)] = 3

    means = TUMOUR_CONTRAST * np.arange(1, 5, dtype=np.float64)
    image = gaussian_filter(rng.normal(size=dims), sigma=2.0)
    image = 0.5 * TUMOUR_CONTRAST * image / max(np.abs(image).max(), 1e-12)
    image[bits] = means[truth[bits]]
    image += float(spec.noise) * TUMOUR_CONTRAST * rng.normal(size=dims)
    logger.debug(f"tumour3d mask fraction {bits.mean():.3f}")
    return Phantom(FeatureVolume.from_scalar(image), Mask(bits), truth)


def archetype_curves(n: int, frames: int, rng: np.random.Generator) -> np.ndarray:
    """
    ``n`` enhancement curves of unit peak amplitude over ``frames`` frames.

    Curves are flat before bolus arrival, then rise and wash out with
    archetype-specific rates.
    """
    t = np.arange(frames, dtype=np.float64)
    arrival = max(2, frames // 6)
    after = np.clip(t - arrival, 0.0, None)
    curves = np.empty((n, frames))
    for k in range(n):
        rise = 1.0 + 6.0 * k / max(1, n - 1) + rng.uniform(-0.3, 0.3)
        washout = (0.08 * (n - 1 - k) / max(1, n - 1)) + rng.uniform(0.0, 0.01)
        curve = (1.0 - np.exp(-after / rise)) * np.exp(-washout * after)
        curves[k] = curve / max(curve.max(), 1e-12)
    return curves


def _perfusion4d(spec: PhantomSpec, rng: np.random.Generator) -> Phantom:
    from utils.cohort_utils import TemporalSeries

    dims = spec.dims
    grid = np.indices(dims, dtype=np.float64)
    centre = np.asarray(dims, dtype=np.float64) / 2.0 - 0.5
    distance = np.sqrt(sum((g - c) ** 2 for g, c in zip(grid, centre)))
    bits = distance <= 0.38 * min(dims)
    mask = Mask(bits)
    if spec.archetypes > mask.count:
        raise BadSpec(f"{spec.archetypes} archetypes do not fit in {mask.count} mask voxels")

    # Voronoi cells of well-spread centres inside a ball are convex, hence contiguous.
    centres = place_seeds(mask, spec.archetypes)
    cells, _ = nearest_seed(mask.coordinates().astype(np.float64), centres.points, (1.0,) * 3)
    truth = np.full(dims, BACKGROUND, dtype=np.int64)
    truth[bits] = cells

    curves = archetype_curves(spec.archetypes, spec.frames, rng)
    values = np.zeros(dims + (spec.frames,))
    values[bits] = curves[cells]
    values += float(spec.noise) * rng.normal(size=values.shape)
    return Phantom(TemporalSeries(values), mask, truth)


_BUILDERS = {"blobs2d": _blobs2d, "tumour3d": _tumour3d, "perfusion4d": _perfusion4d}


def make_phantom(spec: PhantomSpec, seed: int = 0) -> Phantom:
    """
    Build a phantom deterministically from ``spec`` and ``seed``.

    Returns:
        Phantom(volume, mask, truth) where truth is an integer grid with
        -1 outside the mask.
    """
    spec = spec.resolved()
    rng = np.random.default_rng(int(seed))
    phantom = _BUILDERS[spec.kind](spec, rng)
    logger.info(
        f"Built {spec.kind} phantom dims={spec.dims} noise={spec.noise} seed={seed} "
        f"mask voxels={phantom.mask.count}"
    )
    return phantom
