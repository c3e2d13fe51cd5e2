# handlers/ingest.py - IMU CSV validation and stream summary
import logging
from pathlib import Path
from typing import Dict, Union

from utils.imu_csv import GAP_FACTOR, read_imu_frame, summarize_stream

logger = logging.getLogger(__name__)

INGEST_JSON = "ingest_summary.json"


def cmd_ingest(path: Union[str, Path]) -> Dict:
    """Validate an IMU CSV and print count, duration, rate estimate and gaps"""
    summary = summarize_stream(read_imu_frame(path))

    print(f"samples:  {summary.count}")
    print(f"duration: {summary.duration_s:.6f} s")
    print(f"rate:     {summary.rate_hz:.3f} Hz")
    print(f"gaps (> {GAP_FACTOR:g}x nominal period): {len(summary.gaps)}")
    for line, t, gap in summary.gaps:
        print(f"  line {line}: {gap:.6f} s gap after t={t:.6f} s")

    logger.info(f"Ingested {path}: {summary.count} samples, {len(summary.gaps)} gap(s)")
    return summary.as_dict()
