"""Tests for configuration loading and thread resolution."""

import json

import pytest

from utils import config_utils
from utils.config_utils import (
    DEFAULT_CONFIG,
    THREADS_ENV,
    ExperimentConfig,
    deep_update,
    load_config,
    resolve_threads,
)
from utils.errors import InvalidParams
from utils.volume_utils import Backend


class TestLoadConfig:
    def test_defaults_are_copied(self):
        config = load_config()
        assert config == DEFAULT_CONFIG
        config["slic"]["n_regions"] = 1
        assert DEFAULT_CONFIG["slic"]["n_regions"] == 100

    def test_yaml_overrides_merge(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("slic:\n  n_regions: 12\nmetrics:\n  lc_aggregation: region-median\n")
        config = load_config(path)
        assert config["slic"]["n_regions"] == 12
        assert config["slic"]["compactness"] == 10.0
        assert config["metrics"]["lc_aggregation"] == "region-median"

    def test_json_overrides(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"cohort": {"k": 3}}))
        assert load_config(path)["cohort"]["k"] == 3

    def test_empty_yaml(self, tmp_path):
        path = tmp_path / "run.yml"
        path.write_text("")
        assert load_config(path) == DEFAULT_CONFIG

    def test_unsupported_suffix(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[slic]\n")
        with pytest.raises(InvalidParams):
            load_config(path)

    def test_parse_error(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{not json")
        with pytest.raises(InvalidParams):
            load_config(path)

    def test_not_a_mapping(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(InvalidParams):
            load_config(path)

    def test_shipped_file_matches_defaults(self):
        from pathlib import Path

        shipped = Path(__file__).resolve().parents[1] / "config" / "processing_config.yaml"
        assert load_config(shipped) == DEFAULT_CONFIG


class TestDeepUpdate:
    def test_nested_merge(self):
        base = {"a": {"b": 1, "c": 2}, "d": 3}
        assert deep_update(base, {"a": {"c": 5}, "e": 6}) == {"a": {"b": 1, "c": 5}, "d": 3, "e": 6}


class TestResolveThreads:
    def test_explicit(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "7")
        assert resolve_threads(3) == 3

    def test_environment(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "5")
        assert resolve_threads() == 5

    def test_auto_uses_physical_cores(self, monkeypatch):
        monkeypatch.delenv(THREADS_ENV, raising=False)
        monkeypatch.setattr(config_utils.psutil, "cpu_count", lambda logical=True: 6)
        assert resolve_threads() == 6
        assert resolve_threads(0) == 6

    def test_invalid_environment(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "many")
        with pytest.raises(InvalidParams):
            resolve_threads()

    def test_negative(self):
        with pytest.raises(InvalidParams):
            resolve_threads(-1)


class TestExperimentConfig:
    def test_from_defaults(self):
        experiment = ExperimentConfig.from_dict(load_config())
        params = experiment.slic_params()
        assert params.backend is Backend.MASK_SLIC
        assert params.n_regions == 100
        assert params.compactness == 10.0
        assert experiment.lc_aggregation == "voxel-mean"

    def test_overrides_skip_none(self):
        experiment = ExperimentConfig.from_dict(
            load_config(), {"n_regions": 7, "compactness": None, "backend": "naive2"}
        )
        assert experiment.n_regions == 7
        assert experiment.compactness == 10.0
        assert experiment.slic_params().backend is Backend.NAIVE_GRID_FILTERED

    def test_compactness_per_scale(self):
        experiment = ExperimentConfig.from_dict(load_config(), {"compactness_per_scale": 0.5})
        assert experiment.slic_params(scale=4.0).compactness == 2.0
        assert experiment.slic_params().compactness == 10.0

    @pytest.mark.parametrize(
        "overrides",
        [
            {"backend": "watershed"},
            {"compactness_per_scale": -1.0},
            {"n_regions": 0},
            {"inputs": {"volume": "/does/not/exist.mslc"}},
        ],
    )
    def test_invalid(self, overrides):
        with pytest.raises(InvalidParams):
            ExperimentConfig.from_dict(load_config(), overrides)
