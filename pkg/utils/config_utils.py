"""
Configuration handling for mask-slic runs.

Defaults live in ``DEFAULT_CONFIG`` (mirrored by
``config/processing_config.yaml``); a user file in JSON or YAML is merged on
top with ``deep_update`` and CLI flags override the merged values.
"""

import copy
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import psutil
import yaml

from utils.errors import InvalidParams
from utils.volume_utils import Backend, SlicParams

logger = logging.getLogger(__name__)

THREADS_ENV = "MSLIC_THREADS"

DEFAULT_CONFIG: Dict[str, Any] = {
    "slic": {
        "backend": "maskslic",
        "n_regions": 100,
        "compactness": 10.0,
        "compactness_per_scale": None,
        "max_iters": 10,
        "residual_tol": 0.0,
        "enforce_connectivity": True,
        "standardize": False,
    },
    "metrics": {"lc_aggregation": "voxel-mean"},
    "cohort": {
        "k": 4,
        "mode": "supervoxel",
        "pca_components": 3,
        "n_regions": 50,
        "compactness": 1.0,
        "baseline_frames": 0,
        "standardize": True,
        "kmeans_max_iters": 100,
    },
    "phantom": {"spec": "blobs2d", "seed": 0},
    "bench": {"repeats": 5},
    "system": {"threads": None, "log_dir": None},
}


def deep_update(base: Dict[Any, Any], updates: Dict[Any, Any]) -> Dict[Any, Any]:
    """Recursively merge dictionary ``updates`` into ``base``."""

    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            base[key] = deep_update(base.get(key, {}), value)
        else:
            base[key] = value
    return base


def load_config(path: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """
    Load the run configuration.

    Args:
        path: Optional ``.json``, ``.yml`` or ``.yaml`` file merged over the defaults.

    Returns:
        Merged configuration dictionary.
    """
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is None:
        return config

    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in {".json", ".yml", ".yaml"}:
        raise InvalidParams(
            f"Unsupported configuration format '{path.suffix}'. Use .json, .yml, or .yaml"
        )
    try:
        with open(path, "r") as f:
            user_config = json.load(f) if suffix == ".json" else yaml.safe_load(f)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        logger.error(f"Failed to load configuration file {path}: {exc}")
        raise InvalidParams(f"cannot parse configuration file {path}: {exc}") from exc

    if user_config is None:
        user_config = {}
    if not isinstance(user_config, dict):
        raise InvalidParams(f"configuration file {path} must hold a mapping")
    logger.debug(f"Loaded configuration overrides from {path}")
    return deep_update(config, user_config)


def resolve_threads(requested: Optional[int] = None) -> int:
    """
    Worker count: ``requested`` if given, else ``MSLIC_THREADS``.

    Zero or unset means the number of physical cores.
    """
    value: Optional[int] = requested
    if value is None:
        raw = os.environ.get(THREADS_ENV, "").strip()
        if raw:
            try:
                value = int(raw)
            except ValueError as exc:
                raise InvalidParams(f"{THREADS_ENV} must be an integer, got '{raw}'") from exc
    if value is not None and value < 0:
        raise InvalidParams(f"thread count must be >= 0, got {value}")
    if not value:
        value = psutil.cpu_count(logical=False) or os.cpu_count() or 1
    return max(1, int(value))


@dataclass
class ExperimentConfig:
    """Resolved settings of one segmentation run."""

    backend: str = "maskslic"
    n_regions: int = 100
    compactness: float = 10.0
    compactness_per_scale: Optional[float] = None
    max_iters: int = 10
    residual_tol: float = 0.0
    enforce_connectivity: bool = True
    standardize: bool = False
    lc_aggregation: str = "voxel-mean"
    seed: int = 0
    threads: int = 1
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_dict(
        cls, config: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None
    ) -> "ExperimentConfig":
        """Build from a merged config dict; non-None ``overrides`` win."""
        slic = dict(config.get("slic", {}))
        values: Dict[str, Any] = {
            key: slic[key]
            for key in (
                "backend",
                "n_regions",
                "compactness",
                "compactness_per_scale",
                "max_iters",
                "residual_tol",
                "enforce_connectivity",
                "standardize",
            )
            if key in slic
        }
        values["lc_aggregation"] = config.get("metrics", {}).get("lc_aggregation", "voxel-mean")
        values["seed"] = config.get("phantom", {}).get("seed", 0)
        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = value
        experiment = cls(**values)
        experiment.validate()
        return experiment

    def validate(self) -> None:
        try:
            Backend(self.backend)
        except ValueError as exc:
            raise InvalidParams(f"unknown backend '{self.backend}'") from exc
        if self.compactness_per_scale is not None and not self.compactness_per_scale > 0:
            raise InvalidParams("compactness per scale must be > 0")
        for role, name in self.inputs.items():
            if not Path(name).exists():
                raise InvalidParams(f"{role} file not found: {name}")
        self.slic_params()

    def slic_params(self, scale: Optional[float] = None) -> SlicParams:
        """
        Engine parameters; with ``compactness_per_scale`` set, ``scale`` (S)
        must be given and the compactness becomes ``value * S``.
        """
        compactness = float(self.compactness)
        if self.compactness_per_scale is not None and scale is not None:
            compactness = float(self.compactness_per_scale) * float(scale)
        return SlicParams(
            n_regions=int(self.n_regions),
            compactness=compactness,
            max_iters=int(self.max_iters),
            residual_tol=float(self.residual_tol),
            enforce_connectivity=bool(self.enforce_connectivity),
            backend=Backend(self.backend),
            n_jobs=int(self.threads),
        )
