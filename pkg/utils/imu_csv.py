# utils/imu_csv.py
"""
IMU CSV ingestion and export.

Layout: one header line, then `timestamp_ns,wx,wy,wz,ax,ay,az` rows with
strictly increasing integer nanosecond timestamps. Line numbers in errors are
1-based file lines (the header is line 1).
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from infra.errors import ImuCsvError
from utils.imu_model import RawImuMeasurement

logger = logging.getLogger(__name__)

COLUMNS = ["timestamp_ns", "wx", "wy", "wz", "ax", "ay", "az"]
GAP_FACTOR = 3.0
NS_PER_S = 1_000_000_000

_LINE_RE = re.compile(r"line (\d+)")


def _read_frame(path: Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError:
        raise ImuCsvError(f"IMU file not found: {path}")
    except pd.errors.EmptyDataError:
        raise ImuCsvError(f"IMU file is empty: {path}", line_number=1)
    except pd.errors.ParserError as e:
        match = _LINE_RE.search(str(e))
        raise ImuCsvError(f"malformed row ({e})", line_number=int(match.group(1)) if match else None)


def read_imu_frame(path: Union[str, Path]) -> pd.DataFrame:
    """Validated frame with an int64 `timestamp_ns` column and float axes."""
    path = Path(path)
    frame = _read_frame(path)
    if len(frame.columns) != len(COLUMNS):
        raise ImuCsvError(f"expected {len(COLUMNS)} columns, found {len(frame.columns)}", line_number=1)
    frame.columns = COLUMNS

    # Short rows come back as empty strings
    for column in COLUMNS:
        coerced = pd.to_numeric(frame[column], errors="coerce")
        bad = coerced.isna().to_numpy()
        if bad.any():
            row = int(np.argmax(bad))
            raise ImuCsvError(f"non-numeric value {frame[column].iloc[row]!r} in column {column}", line_number=row + 2)
        frame[column] = coerced

    if (frame["timestamp_ns"] != frame["timestamp_ns"].round()).any():
        row = int(np.argmax((frame["timestamp_ns"] != frame["timestamp_ns"].round()).to_numpy()))
        raise ImuCsvError("timestamp is not an integer number of nanoseconds", line_number=row + 2)
    frame["timestamp_ns"] = frame["timestamp_ns"].astype(np.int64)

    values = frame[COLUMNS[1:]].to_numpy(dtype=float)
    finite = np.isfinite(values).all(axis=1)
    if not finite.all():
        raise ImuCsvError("non-finite measurement", line_number=int(np.argmax(~finite)) + 2)

    steps = np.diff(frame["timestamp_ns"].to_numpy())
    if (steps <= 0).any():
        row = int(np.argmax(steps <= 0)) + 1
        raise ImuCsvError(f"timestamp {frame['timestamp_ns'].iloc[row]} does not increase", line_number=row + 2)

    logger.info(f"Read {len(frame)} IMU rows from {path}")
    return frame


def read_imu_csv(path: Union[str, Path]) -> List[RawImuMeasurement]:
    frame = read_imu_frame(path)
    stamps = frame["timestamp_ns"].to_numpy()
    gyro = frame[["wx", "wy", "wz"]].to_numpy(dtype=float)
    accel = frame[["ax", "ay", "az"]].to_numpy(dtype=float)
    return [RawImuMeasurement(int(ns) / NS_PER_S, gyro[k], accel[k]) for k, ns in enumerate(stamps)]


def write_imu_csv(path: Union[str, Path], measurements: Sequence[RawImuMeasurement]) -> Path:
    path = Path(path)
    frame = pd.DataFrame({
        "timestamp_ns": np.array([round(m.t * NS_PER_S) for m in measurements], dtype=np.int64),
        **{name: [m.gyro[i] for m in measurements] for i, name in enumerate(("wx", "wy", "wz"))},
        **{name: [m.accel[i] for m in measurements] for i, name in enumerate(("ax", "ay", "az"))},
    })
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


@dataclass
class ImuStreamSummary:
    count: int
    duration_s: float
    rate_hz: float
    gaps: List[Tuple[int, float, float]] = field(default_factory=list)  # (line, t_start_s, gap_s)

    def as_dict(self) -> dict:
        return {
            "count": self.count,
            "duration_s": self.duration_s,
            "rate_hz": self.rate_hz,
            "gap_count": len(self.gaps),
            "gaps": [{"line": line, "t_start_s": t, "gap_s": gap} for line, t, gap in self.gaps],
        }


def summarize_stream(frame: pd.DataFrame) -> ImuStreamSummary:
    """Count, duration, median-period rate and gaps longer than GAP_FACTOR nominal periods."""
    stamps = frame["timestamp_ns"].to_numpy()
    count = len(stamps)
    if count < 2:
        return ImuStreamSummary(count, 0.0, 0.0)

    steps = np.diff(stamps)
    nominal = float(np.median(steps))
    gaps = [
        (int(k) + 2, stamps[k] / NS_PER_S, steps[k] / NS_PER_S)
        for k in np.flatnonzero(steps > GAP_FACTOR * nominal)
    ]
    for line, t, gap in gaps:
        logger.warning(f"IMU gap of {gap:.4f} s after line {line} (t={t:.6f} s)")
    return ImuStreamSummary(count, (stamps[-1] - stamps[0]) / NS_PER_S, NS_PER_S / nominal, gaps)
