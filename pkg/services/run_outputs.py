# services/run_outputs.py
"""
Result files written by the CLI commands: CSV tables at full float precision,
JSON summaries and the per-run manifest.
"""

import json
import logging
import subprocess
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd

from infra import __version__
from infra.errors import OutputError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
FLOAT_FORMAT = "%.17g"


@dataclass
class RunManifest:
    command: str
    config_path: Optional[str]
    seed: Optional[int]
    version: str
    output_dir: str
    started_at: str
    wall_clock_s: float = 0.0
    status: str = "running"
    error: Optional[str] = None

    @classmethod
    def start(cls, command: str, config_path: Optional[str], seed: Optional[int], output_dir: Union[str, Path]) -> "RunManifest":
        return cls(command, config_path, seed, version_string(), str(output_dir),
                   datetime.now(timezone.utc).isoformat(timespec="seconds"))

    def write(self) -> Path:
        return write_json(ensure_output_dir(self.output_dir) / MANIFEST_NAME, asdict(self))


def version_string() -> str:
    """`git describe` of the working tree when available, else the package version"""
    try:
        described = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                                   timeout=5, cwd=Path(__file__).resolve().parent, check=True)
        if described.stdout.strip():
            return described.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def ensure_output_dir(path: Union[str, Path]) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.touch()
        probe.unlink()
    except OSError as e:
        raise OutputError(f"Output directory {out} is not writable: {e}") from e
    return out


def write_csv(path: Union[str, Path], frame: pd.DataFrame) -> Path:
    path = Path(path)
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    except OSError as e:
        raise OutputError(f"Failed to write {path}: {e}") from e
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def _to_builtin(value: Any):
    if isinstance(value, dict):
        return {str(k): _to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_json(path: Union[str, Path], payload: Dict[str, Any]) -> Path:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(_to_builtin(payload), f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise OutputError(f"Failed to write {path}: {e}") from e
    logger.info(f"Wrote {path}")
    return path
