"""
Repeat timing of segmentation backends on one volume/mask pair.
"""

import logging
import time
from dataclasses import dataclass
from typing import Dict, Sequence

import pandas as pd
from tqdm import tqdm

from utils.errors import InvalidParams
from utils.slic_utils import segment
from utils.volume_utils import Backend, FeatureVolume, Mask, SlicParams

logger = logging.getLogger(__name__)

BENCH_BACKENDS = (Backend.MASK_SLIC, Backend.NAIVE_WHOLE_IMAGE)


@dataclass
class BenchReport:
    timings: pd.DataFrame
    n_regions: int
    repeats: int
    mask_fraction: float = 0.0

    @property
    def medians(self) -> Dict[str, float]:
        return self.timings.groupby("backend")["seconds"].median().to_dict()

    @property
    def mask_slic_not_slower(self) -> bool:
        medians = self.medians
        ours = medians.get(Backend.MASK_SLIC.value)
        baseline = medians.get(Backend.NAIVE_WHOLE_IMAGE.value)
        if ours is None or baseline is None:
            return False
        return ours <= baseline

    def to_dict(self) -> Dict[str, object]:
        medians = self.medians
        return {
            "n_regions": self.n_regions,
            "repeats": self.repeats,
            "mask_fraction": self.mask_fraction,
            "median_seconds": medians,
            "mask_slic_not_slower": self.mask_slic_not_slower,
        }


def run_bench(
    volume: FeatureVolume,
    mask: Mask,
    n_regions: int,
    compactness: float = 10.0,
    repeats: int = 5,
    n_jobs: int = 1,
    backends: Sequence[Backend] = BENCH_BACKENDS,
    show_progress: bool = True,
) -> BenchReport:
    """
    Time each backend ``repeats`` times; runs are interleaved per repeat.

    Returns:
        BenchReport with one row per (repeat, backend).
    """
    if repeats < 1:
        raise InvalidParams(f"repeats must be >= 1, got {repeats}")
    rows = []
    for repeat in tqdm(range(repeats), desc="bench", unit="run", disable=not show_progress):
        for backend in backends:
            params = SlicParams(
                n_regions=n_regions, compactness=compactness, backend=backend, n_jobs=n_jobs
            )
            start = time.perf_counter()
            result = segment(volume, mask, params)
            seconds = time.perf_counter() - start
            rows.append(
                {
                    "repeat": repeat,
                    "backend": backend.value,
                    "seconds": seconds,
                    "regions_in_mask": result.num_regions,
                }
            )
    timings = pd.DataFrame(rows)
    report = BenchReport(
        timings=timings,
        n_regions=n_regions,
        repeats=repeats,
        mask_fraction=mask.count / float(mask.bits.size),
    )
    logger.info(f"Bench medians: {report.medians}")
    return report
