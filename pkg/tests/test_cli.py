"""End-to-end tests of the mask-slic command line."""

import json

import numpy as np
import pytest

from scripts.segmentation.mask_slic_processor import cli_run
from utils.cohort_utils import TemporalSeries
from utils.io_utils import read_labeling, read_mask, write_label_grid, write_mask, write_volume
from utils.phantom_utils import PhantomSpec, make_phantom
from utils.volume_utils import FeatureVolume, Labeling, Mask


def run_json(capsys, argv):
    code = cli_run(argv)
    captured = capsys.readouterr()
    assert code == 0, captured.err
    return json.loads(captured.out.strip().splitlines()[-1])


@pytest.fixture
def blob_files(tmp_path):
    phantom = make_phantom(PhantomSpec("blobs2d", dims=(48, 48)), seed=1)
    write_volume(phantom.volume, tmp_path / "volume.mslc")
    write_mask(phantom.mask, tmp_path / "mask.mslc")
    write_label_grid(Labeling.compacted(phantom.truth).labels, tmp_path / "truth.mslc")
    return tmp_path, phantom


class TestPhantomCommand:
    def test_writes_three_files(self, tmp_path, capsys):
        report = run_json(capsys, ["phantom", str(tmp_path / "p"), "--spec", "blobs2d", "--dims", "40,40", "--seed", "3"])
        assert report["spec"] == "blobs2d"
        assert report["seed"] == 3
        assert report["dims"] == [40, 40]
        for name in ("volume.mslc", "mask.mslc", "truth.mslc"):
            assert (tmp_path / "p" / name).exists()
        assert read_mask(tmp_path / "p" / "mask.mslc").count == report["mask_voxels"]

    def test_bad_spec(self, tmp_path, capsys):
        code = cli_run(["phantom", str(tmp_path), "--spec", "tumour3d", "--dims", "40,40"])
        assert code == 1
        assert "ERROR BAD_SPEC" in capsys.readouterr().err

    def test_bad_offset_is_usage_error(self, tmp_path, capsys):
        code = cli_run(["phantom", str(tmp_path), "--offset", "1"])
        assert code == 2
        assert "ERROR USAGE" in capsys.readouterr().err


class TestSegmentCommand:
    def test_mask_slic(self, blob_files, capsys):
        folder, phantom = blob_files
        output = folder / "out" / "labels.mslc"
        report = run_json(
            capsys,
            [
                "segment",
                str(folder / "volume.mslc"),
                str(folder / "mask.mslc"),
                str(output),
                "--n-regions",
                "12",
                "--compactness",
                "0.5",
                "--report",
                str(folder / "report.json"),
            ],
        )
        assert report["backend"] == "maskslic"
        assert report["n_regions"] == 12
        assert report["num_regions"] == 12
        assert report["iterations"] == 10
        assert len(report["objective"]) == 10
        labeling = read_labeling(output)
        labeling.check_against(phantom.mask)
        assert json.loads((folder / "report.json").read_text()) == report

    def test_compactness_per_scale(self, blob_files, capsys):
        folder, _ = blob_files
        report = run_json(
            capsys,
            [
                "segment",
                str(folder / "volume.mslc"),
                str(folder / "mask.mslc"),
                str(folder / "l.mslc"),
                "--n-regions",
                "8",
                "--compactness-per-scale",
                "0.1",
            ],
        )
        assert report["compactness"] == pytest.approx(0.1 * report["region_scale"], rel=1e-8)

    def test_naive1_matching(self, blob_files, capsys):
        folder, _ = blob_files
        report = run_json(
            capsys,
            [
                "segment",
                str(folder / "volume.mslc"),
                str(folder / "mask.mslc"),
                str(folder / "l.mslc"),
                "--match-naive1",
                "36",
                "--max-iters",
                "3",
            ],
        )
        assert report["num_regions"] == report["n_regions"]
        assert report["iterations"] == 3

    def test_naive2_without_seeds(self, tmp_path, capsys):
        bits = np.zeros((20, 20), dtype=bool)
        bits[8:12, 8:12] = True
        write_volume(FeatureVolume.from_scalar(np.zeros((20, 20))), tmp_path / "v.mslc")
        write_mask(Mask(bits), tmp_path / "m.mslc")
        code = cli_run(
            [
                "segment",
                str(tmp_path / "v.mslc"),
                str(tmp_path / "m.mslc"),
                str(tmp_path / "l.mslc"),
                "--backend",
                "naive2",
                "--n-regions",
                "4",
            ]
        )
        err = capsys.readouterr().err
        assert code == 1
        assert "ERROR NO_SEEDS_IN_MASK" in err
        assert not (tmp_path / "l.mslc").exists()

    def test_dims_mismatch(self, tmp_path, capsys):
        write_volume(FeatureVolume.from_scalar(np.zeros((10, 10))), tmp_path / "v.mslc")
        write_mask(Mask(np.ones((10, 12), dtype=bool)), tmp_path / "m.mslc")
        code = cli_run(["segment", str(tmp_path / "v.mslc"), str(tmp_path / "m.mslc"), str(tmp_path / "l.mslc")])
        assert code == 1
        assert "ERROR DIMS_MISMATCH" in capsys.readouterr().err

    def test_bad_magic(self, tmp_path, capsys):
        (tmp_path / "v.mslc").write_bytes(b"JUNK" + bytes(64))
        write_mask(Mask(np.ones((4, 4), dtype=bool)), tmp_path / "m.mslc")
        code = cli_run(["segment", str(tmp_path / "v.mslc"), str(tmp_path / "m.mslc"), str(tmp_path / "l.mslc")])
        assert code == 1
        assert "ERROR BAD_MAGIC" in capsys.readouterr().err

    def test_missing_input(self, tmp_path, capsys):
        code = cli_run(["segment", str(tmp_path / "nope.mslc"), str(tmp_path / "m.mslc"), str(tmp_path / "l.mslc")])
        assert code == 2

    def test_boilerplate_and_log_file(self, blob_files, capsys):
        folder, _ = blob_files
        run_json(
            capsys,
            [
                "--log-dir",
                str(folder / "logs"),
                "segment",
                str(folder / "volume.mslc"),
                str(folder / "mask.mslc"),
                str(folder / "run" / "l.mslc"),
                "--n-regions",
                "4",
                "--boilerplate",
            ],
        )
        assert (folder / "run" / "boilerplate.md").exists()
        info = json.loads((folder / "run" / "boilerplate.json").read_text())
        assert info["command"] == "segment"
        assert len(list((folder / "logs").glob("mask_slic_*.log"))) == 1

    def test_config_file(self, blob_files, capsys):
        folder, _ = blob_files
        (folder / "cfg.yaml").write_text("slic:\n  n_regions: 6\n  backend: naive2\n")
        report = run_json(
            capsys,
            [
                "--config",
                str(folder / "cfg.yaml"),
                "segment",
                str(folder / "volume.mslc"),
                str(folder / "mask.mslc"),
                str(folder / "l.mslc"),
            ],
        )
        assert report["backend"] == "naive2"
        assert report["n_regions"] == 6

    def test_unknown_option(self, capsys):
        assert cli_run(["segment", "--bogus"]) == 2
        assert "ERROR USAGE" in capsys.readouterr().err

    def test_bad_thread_environment(self, blob_files, capsys, monkeypatch):
        folder, _ = blob_files
        monkeypatch.setenv("MSLIC_THREADS", "lots")
        code = cli_run(["segment", str(folder / "volume.mslc"), str(folder / "mask.mslc"), str(folder / "l.mslc")])
        assert code == 1
        assert "ERROR INVALID_PARAMS" in capsys.readouterr().err


class TestMetricsCommands:
    def test_cs_against_itself(self, blob_files, capsys):
        folder, _ = blob_files
        labels = folder / "truth.mslc"
        report = run_json(capsys, ["metrics", "cs", str(labels), str(labels)])
        assert report["c_s"] == 0.0
        assert report["n_regions"] == len(report["delta_s"])

    def test_cs_with_offset(self, tmp_path, capsys):
        labels = np.ones((4, 4), dtype=int)
        labels[:, 0] = 0
        write_label_grid(labels, tmp_path / "s.mslc")
        report = run_json(capsys, ["metrics", "cs", str(tmp_path / "s.mslc"), str(tmp_path / "s.mslc"), "--offset", "0,1"])
        assert report["c_s"] == pytest.approx(5.0 / 12.0, abs=1e-9)

    def test_lc(self, blob_files, capsys):
        folder, _ = blob_files
        truth = folder / "truth.mslc"
        output = folder / "lc.json"
        report = run_json(
            capsys,
            ["metrics", "lc", str(truth), str(truth), "--lc-agg", "region-median", "--output", str(output)],
        )
        assert report["lc_summary"] == 1.0
        assert report["e"] == 0.0
        assert json.loads(output.read_text()) == report

    def test_lc_with_mask(self, blob_files, capsys):
        folder, _ = blob_files
        truth = folder / "truth.mslc"
        report = run_json(capsys, ["metrics", "lc", str(truth), str(truth), "--mask", str(folder / "mask.mslc")])
        assert report["lc_summary"] == 1.0

    def test_e(self, capsys):
        report = run_json(capsys, ["metrics", "e", "0.15", "0.11"])
        assert round(report["E"], 2) == 36.36

    def test_e_with_zero_method_error(self, capsys):
        assert run_json(capsys, ["metrics", "e", "0.1", "0"]) == {"E": "inf"}


class TestClusterCohortCommand:
    def test_voxel_mode(self, tmp_path, capsys):
        spec = PhantomSpec("perfusion4d", dims=(10, 10, 10), noise=0.02, archetypes=2, frames=12)
        lines = ["case_id,series,mask"]
        for seed in range(2):
            phantom = make_phantom(spec, seed=seed)
            assert isinstance(phantom.volume, TemporalSeries)
            write_volume(phantom.volume, tmp_path / f"s{seed}.mslc")
            write_mask(phantom.mask, tmp_path / f"m{seed}.mslc")
            lines.append(f"c{seed},s{seed}.mslc,m{seed}.mslc")
        (tmp_path / "cases.csv").write_text("\n".join(lines) + "\n")

        out = tmp_path / "out"
        report = run_json(
            capsys,
            ["cluster-cohort", str(tmp_path / "cases.csv"), str(out), "--k", "2", "--mode", "voxel", "--pca-components", "1"],
        )
        assert report["k"] == 2
        assert report["mode"] == "voxel"
        assert report["cases"] == ["c0", "c1"]
        assert (out / "c0_cohort.mslc").exists()
        assert (out / "cluster_summary.csv").exists()
        assert json.loads((out / "cohort_report.json").read_text()) == report

    def test_supervoxel_mode(self, tmp_path, capsys):
        spec = PhantomSpec("perfusion4d", dims=(10, 10, 10), noise=0.05, archetypes=2, frames=12)
        phantom = make_phantom(spec, seed=4)
        write_volume(phantom.volume, tmp_path / "s.mslc")
        write_mask(phantom.mask, tmp_path / "m.mslc")
        (tmp_path / "cases.csv").write_text("case_id,series,mask\nonly,s.mslc,m.mslc\n")
        out = tmp_path / "out"
        report = run_json(
            capsys,
            ["cluster-cohort", str(tmp_path / "cases.csv"), str(out), "--k", "2", "--n-regions", "8", "--pca-components", "2"],
        )
        assert report["n_items"] == 8
        assert (out / "only_supervoxels.mslc").exists()
        header = (out / "descriptors.csv").read_text().splitlines()[0]
        assert header == "case_id,region_id,voxel_count,f0,f1"

    def test_series_required(self, tmp_path, capsys):
        write_volume(FeatureVolume.from_scalar(np.zeros((8, 8))), tmp_path / "v.mslc")
        write_mask(Mask(np.ones((8, 8), dtype=bool)), tmp_path / "m.mslc")
        (tmp_path / "cases.csv").write_text("case_id,series,mask\na,v.mslc,m.mslc\n")
        code = cli_run(["cluster-cohort", str(tmp_path / "cases.csv"), str(tmp_path / "out")])
        assert code == 1
        assert "ERROR INVALID_VOLUME" in capsys.readouterr().err


class TestBenchCommand:
    def test_report(self, blob_files, capsys):
        folder, _ = blob_files
        report = run_json(
            capsys,
            ["bench", str(folder / "volume.mslc"), str(folder / "mask.mslc"), "--n-regions", "6", "--repeats", "1"],
        )
        assert report["repeats"] == 1
        assert set(report["median_seconds"]) == {"maskslic", "naive1"}
        assert isinstance(report["mask_slic_not_slower"], bool)
