"""
File input/output for volumes, masks, labelings, reports and descriptor tables.

The native container is the MSLC raw format: a small little-endian header
followed by the raw samples in C order (frame outermost, channel innermost).
PGM/PNG images (via Pillow) and NIfTI-1 images (via nibabel) are accepted as
convenience inputs.
"""

import json
import logging
import math
import struct
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from utils.errors import (
    BadMagic,
    InvalidVolume,
    TruncatedPayload,
    UnsupportedFormat,
    VersionUnsupported,
)
from utils.volume_utils import FeatureVolume, Labeling, Mask

if TYPE_CHECKING:
    from utils.cohort_utils import TemporalSeries

logger = logging.getLogger(__name__)

MAGIC = b"MSLC"
FORMAT_VERSION = 1

DTYPE_U8 = 0
DTYPE_I32 = 1
DTYPE_F32 = 2
_DTYPES = {DTYPE_U8: np.dtype("<u1"), DTYPE_I32: np.dtype("<i4"), DTYPE_F32: np.dtype("<f4")}

IMAGE_SUFFIXES = (".pgm", ".png")
NIFTI_SUFFIXES = (".nii", ".nii.gz")

PathLike = Union[str, Path]


def _suffix(path: Path) -> str:
    name = path.name.lower()
    if name.endswith(".nii.gz"):
        return ".nii.gz"
    return path.suffix.lower()


def write_mslc(
    path: PathLike,
    samples: np.ndarray,
    spacing: Sequence[float],
    dtype_code: int,
    frames: int = 1,
    channels: int = 1,
) -> None:
    """
    Write raw samples shaped ``(frames, *dims, channels)`` (or without the
    leading/trailing axis when they are 1) as an MSLC file.
    """
    if dtype_code not in _DTYPES:
        raise UnsupportedFormat(f"unknown dtype code {dtype_code}")
    spatial = len(spacing)
    samples = np.asarray(samples)
    dims = tuple(samples.shape[1 : 1 + spatial]) if frames > 1 else tuple(samples.shape[:spatial])
    header = MAGIC + struct.pack("<IB", FORMAT_VERSION, spatial)
    header += struct.pack(f"<{spatial}I", *dims)
    header += struct.pack("<II", channels, frames)
    header += struct.pack(f"<{spatial}f", *spacing)
    header += struct.pack("<B", dtype_code)
    payload = np.ascontiguousarray(samples.astype(_DTYPES[dtype_code], copy=False))
    path = Path(path)
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(payload.tobytes(order="C"))
    logger.debug(f"Wrote {path} dims={dims} channels={channels} frames={frames}")


def read_mslc(path: PathLike) -> Tuple[np.ndarray, Tuple[float, ...], int, int]:
    """
    Read an MSLC file.

    Returns:
        (samples shaped (frames, *dims, channels), spacing, dtype code, frames)
    """
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise BadMagic(f"{path}: expected magic {MAGIC!r}, found {raw[:4]!r}")
    if len(raw) < 9:
        raise TruncatedPayload(f"{path}: header is incomplete")
    version, ndim = struct.unpack_from("<IB", raw, 4)
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"{path}: format version {version} (supported: {FORMAT_VERSION})")
    if ndim not in (2, 3):
        raise InvalidVolume(f"{path}: ndim must be 2 or 3, got {ndim}")
    header_size = 9 + 4 * ndim + 8 + 4 * ndim + 1
    if len(raw) < header_size:
        raise TruncatedPayload(f"{path}: header is incomplete")
    offset = 9
    dims = struct.unpack_from(f"<{ndim}I", raw, offset)
    offset += 4 * ndim
    channels, frames = struct.unpack_from("<II", raw, offset)
    offset += 8
    spacing = struct.unpack_from(f"<{ndim}f", raw, offset)
    offset += 4 * ndim
    (dtype_code,) = struct.unpack_from("<B", raw, offset)
    offset += 1
    if dtype_code not in _DTYPES:
        raise UnsupportedFormat(f"{path}: unknown dtype code {dtype_code}")

    dtype = _DTYPES[dtype_code]
    expected = int(np.prod(dims)) * channels * frames * dtype.itemsize
    if len(raw) - offset < expected:
        raise TruncatedPayload(
            f"{path}: payload has {len(raw) - offset} bytes, header promises {expected}"
        )
    samples = np.frombuffer(raw, dtype=dtype, count=expected // dtype.itemsize, offset=offset)
    samples = samples.reshape((frames,) + tuple(dims) + (channels,))
    return samples, tuple(float(s) for s in spacing), dtype_code, frames


def _read_image(path: Path) -> Tuple[np.ndarray, Tuple[float, ...]]:
    from PIL import Image

    with Image.open(path) as image:
        pixels = np.asarray(image.convert("L"), dtype=np.uint8)
    return pixels, (1.0, 1.0)


def _read_nifti(path: Path) -> Tuple[np.ndarray, Tuple[float, ...]]:
    import nibabel as nib

    image = nib.load(str(path))
    data = np.asarray(image.get_fdata(), dtype=np.float64)
    zooms = tuple(float(z) for z in image.header.get_zooms()[: min(data.ndim, 3)])
    return data, zooms


def read_volume(path: PathLike) -> Union[FeatureVolume, "TemporalSeries"]:
    """
    Read a FeatureVolume, or a TemporalSeries when the file holds several frames.

    PGM/PNG give single-channel 2D volumes; a 4D NIfTI gives a series.
    """
    from utils.cohort_utils import TemporalSeries

    path = Path(path)
    suffix = _suffix(path)
    if suffix in IMAGE_SUFFIXES:
        pixels, spacing = _read_image(path)
        return FeatureVolume.from_scalar(pixels.astype(np.float64), spacing)
    if suffix in NIFTI_SUFFIXES:
        data, zooms = _read_nifti(path)
        if data.ndim == 4:
            return TemporalSeries(data, zooms[:3])
        return FeatureVolume.from_scalar(data, zooms[: data.ndim])

    samples, spacing, _, frames = read_mslc(path)
    if frames > 1:
        if samples.shape[-1] != 1:
            raise InvalidVolume(f"{path}: temporal files must have a single channel")
        # (frames, *dims, 1) -> (*dims, frames)
        values = np.moveaxis(samples[..., 0], 0, -1).astype(np.float64)
        return TemporalSeries(values, spacing)
    return FeatureVolume(samples[0].astype(np.float64), spacing)


def write_volume(value: Union[FeatureVolume, "TemporalSeries"], path: PathLike) -> None:
    """Write a FeatureVolume or TemporalSeries as f32 MSLC."""
    from utils.cohort_utils import TemporalSeries

    if isinstance(value, TemporalSeries):
        samples = np.moveaxis(value.values, -1, 0)[..., None]
        write_mslc(path, samples, value.spacing, DTYPE_F32, frames=value.frames, channels=1)
    elif isinstance(value, FeatureVolume):
        write_mslc(path, value.data, value.spacing, DTYPE_F32, channels=value.channels)
    else:
        raise InvalidVolume(f"cannot write {type(value).__name__} as a volume")


def _read_grid(path: PathLike) -> Tuple[np.ndarray, Tuple[float, ...]]:
    path = Path(path)
    suffix = _suffix(path)
    if suffix in IMAGE_SUFFIXES:
        return _read_image(path)
    if suffix in NIFTI_SUFFIXES:
        return _read_nifti(path)
    samples, spacing, _, frames = read_mslc(path)
    if frames != 1 or samples.shape[-1] != 1:
        raise InvalidVolume(f"{path}: expected a single-channel, single-frame grid")
    return samples[0, ..., 0], spacing


def read_mask(path: PathLike) -> Mask:
    """Read a mask; any non-zero sample is inside."""
    grid, _ = _read_grid(path)
    return Mask(np.asarray(grid) != 0)


def write_mask(mask: Mask, path: PathLike, spacing: Sequence[float] = ()) -> None:
    spacing = tuple(spacing) or (1.0,) * mask.ndim
    write_mslc(path, mask.bits.astype(np.uint8), spacing, DTYPE_U8)


def read_label_grid(path: PathLike) -> np.ndarray:
    """Read an integer grid (labeling or ground truth) without validating it."""
    grid, _ = _read_grid(path)
    return np.rint(np.asarray(grid, dtype=np.float64)).astype(np.int64)


def read_labeling(path: PathLike, dense: bool = True) -> Labeling:
    return Labeling(read_label_grid(path), dense=dense)


def write_label_grid(grid: np.ndarray, path: PathLike, spacing: Sequence[float] = ()) -> None:
    """Write an integer grid as i32 MSLC; background stays -1."""
    grid = np.asarray(grid)
    spacing = tuple(spacing) or (1.0,) * grid.ndim
    write_mslc(path, grid.astype(np.int32), spacing, DTYPE_I32)


def write_labeling(labeling: Labeling, path: PathLike, spacing: Sequence[float] = ()) -> None:
    write_label_grid(labeling.labels, path, spacing)


def _nine_digits(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _nine_digits(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_nine_digits(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_nine_digits(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return float(format(value, ".9g"))
    return value


def format_report(report: Dict[str, Any]) -> str:
    """Serialise a report as JSON with every number at 9 significant digits."""
    return json.dumps(_nine_digits(report))


def write_report(report: Dict[str, Any], path: PathLike) -> None:
    Path(path).write_text(format_report(report) + "\n")


def write_descriptor_table(frame: pd.DataFrame, path: PathLike) -> None:
    """Write descriptors as CSV with header case_id, region_id, voxel_count, f0.."""
    frame.to_csv(path, index=False, float_format="%.9g")


def read_descriptor_table(path: PathLike) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"case_id": str})
    missing = [c for c in ("case_id", "region_id", "voxel_count") if c not in frame.columns]
    if missing:
        raise UnsupportedFormat(f"{path}: descriptor table lacks columns {missing}")
    return frame


def read_manifest(path: PathLike) -> List[Dict[str, str]]:
    """Read a cohort manifest CSV with columns case_id, series, mask[, features]."""
    path = Path(path)
    frame = pd.read_csv(path, dtype=str).fillna("")
    missing = [c for c in ("case_id", "series", "mask") if c not in frame.columns]
    if missing:
        raise UnsupportedFormat(f"{path}: manifest lacks columns {missing}")
    rows = []
    for record in frame.to_dict(orient="records"):
        for key in ("series", "mask", "features"):
            value = record.get(key, "")
            if value and not Path(value).is_absolute():
                record[key] = str(path.parent / value)
        rows.append(record)
    return rows
