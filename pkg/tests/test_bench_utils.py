"""Tests for the backend timing harness."""

import pandas as pd
import pytest

from utils.bench_utils import BENCH_BACKENDS, BenchReport, run_bench
from utils.errors import InvalidParams
from utils.volume_utils import Backend


class TestRunBench:
    def test_rows_per_repeat_and_backend(self, textured_volume, disk_mask):
        report = run_bench(textured_volume, disk_mask, n_regions=9, repeats=2, show_progress=False)
        assert len(report.timings) == 2 * len(BENCH_BACKENDS)
        assert set(report.timings["backend"]) == {"maskslic", "naive1"}
        assert (report.timings["seconds"] >= 0).all()
        maskslic_rows = report.timings[report.timings["backend"] == "maskslic"]
        assert (maskslic_rows["regions_in_mask"] == 9).all()
        assert report.mask_fraction == pytest.approx(disk_mask.count / 1024.0)

    def test_report_dict(self, textured_volume, disk_mask):
        report = run_bench(
            textured_volume,
            disk_mask,
            n_regions=4,
            repeats=1,
            backends=(Backend.MASK_SLIC,),
            show_progress=False,
        )
        summary = report.to_dict()
        assert set(summary) == {
            "n_regions",
            "repeats",
            "mask_fraction",
            "median_seconds",
            "mask_slic_not_slower",
        }
        assert list(summary["median_seconds"]) == ["maskslic"]
        assert summary["mask_slic_not_slower"] is False

    def test_invalid_repeats(self, textured_volume, disk_mask):
        with pytest.raises(InvalidParams):
            run_bench(textured_volume, disk_mask, n_regions=4, repeats=0)


class TestBenchReport:
    def test_medians_and_comparison(self):
        timings = pd.DataFrame(
            {
                "repeat": [0, 0, 1, 1, 2, 2],
                "backend": ["maskslic", "naive1"] * 3,
                "seconds": [1.0, 2.0, 5.0, 3.0, 2.0, 4.0],
                "regions_in_mask": [4] * 6,
            }
        )
        report = BenchReport(timings, n_regions=4, repeats=3)
        assert report.medians == {"maskslic": 2.0, "naive1": 3.0}
        assert report.mask_slic_not_slower
