"""
Generate a reproducibility boilerplate for mask-slic runs.
Writes Markdown and JSON files with system, package and run details.
"""

import datetime
import json
import platform
import socket
import sys
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Optional

import psutil

PACKAGES = ["numpy", "scipy", "scikit-learn", "pandas", "joblib", "click", "pyyaml", "nibabel", "Pillow"]


def get_system_info() -> Dict[str, Any]:
    return {
        "os": platform.platform(),
        "python": sys.version.split()[0],
        "hostname": socket.gethostname(),
        "cpu": platform.processor(),
        "physical_cores": psutil.cpu_count(logical=False),
        "ram_gb": round(psutil.virtual_memory().total / (1024.0**3), 2),
    }


def get_package_versions(packages: Optional[List[str]] = None) -> Dict[str, str]:
    versions = {}
    for name in packages or PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "not installed"
    return versions


def collect_info(
    command: str,
    cli_args: List[str],
    config: Dict[str, Any],
    inputs: Dict[str, str],
    outputs: Dict[str, str],
    config_path: Optional[str] = None,
) -> Dict[str, Any]:
    return {
        "date": datetime.datetime.now().isoformat(),
        "system": get_system_info(),
        "packages": get_package_versions(),
        "command": command,
        "cli_args": " ".join(cli_args),
        "config_path": config_path or "default config",
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
    }


def render_markdown(info: Dict[str, Any]) -> str:
    packages = "\n".join(f"- {name}: {version}" for name, version in info["packages"].items())
    files = "\n".join(
        f"- {role}: `{path}`"
        for role, path in {**info["inputs"], **info["outputs"]}.items()
    )
    md = f"""# mask-slic Run Boilerplate

**Date:** {info["date"]}
**Host:** {info["system"]["hostname"]}
**OS:** {info["system"]["os"]}
**Python:** {info["system"]["python"]}
**CPU:** {info["system"]["cpu"]} ({info["system"]["physical_cores"]} physical cores)
**RAM:** {info["system"]["ram_gb"]} GB

---

**Packages:**
{packages}

---

**Command:** `{info["command"]}`
```
{info["cli_args"]}
```

**Config File:** `{info["config_path"]}`
```json
{json.dumps(info["config"], indent=2, default=str)}
```

**Files:**
{files}

---

*This boilerplate was auto-generated for reproducibility.*
"""
    return md


def write_boilerplate(info: Dict[str, Any], output_dir: Path) -> List[Path]:
    """Write ``boilerplate.md`` and ``boilerplate.json`` into ``output_dir``."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    md_path = output_dir / "boilerplate.md"
    json_path = output_dir / "boilerplate.json"
    md_path.write_text(render_markdown(info))
    json_path.write_text(json.dumps(info, indent=2, default=str))
    return [md_path, json_path]
