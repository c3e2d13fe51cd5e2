# handlers/estimate.py - End-to-end sliding-window estimation run
import logging
from typing import Dict

import numpy as np

from config.settings import RunConfig
from infra.errors import EstimatorDivergence, RankDeficientError
from services.run_outputs import ensure_output_dir, write_csv, write_json
from services.simulation import ground_truth_frame
from services.vio_pipeline import EstimationResult, run_estimation

logger = logging.getLogger(__name__)

TRAJECTORY_CSV = "trajectory.csv"
GROUND_TRUTH_CSV = "ground_truth.csv"
METRICS_JSON = "metrics.json"
DIAGNOSTIC_JSON = "divergence_dump.json"


def _diagnostics(result: EstimationResult) -> Dict:
    return {
        "metrics": result.metrics,
        "windows": [r.as_dict() for r in result.reports],
        "last_state": {
            "position": result.estimates[-1].position,
            "velocity": result.estimates[-1].velocity,
            "bias": result.estimates[-1].bias.as_vector(),
        },
    }


def cmd_estimate(config: RunConfig) -> Dict:
    out = ensure_output_dir(config.output_dir)
    settings = config.estimate()
    scenario = config.scenario()
    logger.info(f"Estimating {scenario.duration:g} s at {scenario.imu_rate:g} Hz with {len(scenario.rig)} camera(s), "
                f"{settings.mode.value} pre-integration")

    try:
        result = run_estimation(scenario, config.solver(), mode=settings.mode)
    except RankDeficientError as e:
        write_json(out / DIAGNOSTIC_JSON, {"error": str(e), "null_dimensions": e.null_dimensions})
        raise

    write_csv(out / TRAJECTORY_CSV, ground_truth_frame(result.times, result.estimates))
    write_csv(out / GROUND_TRUTH_CSV, ground_truth_frame(result.times, result.truth))

    metrics = dict(result.metrics)
    metrics["ate_bound"] = settings.ate_bound
    metrics["within_bound"] = bool(metrics["ate_rmse_m"] <= settings.ate_bound)
    write_json(out / METRICS_JSON, metrics)

    costs = [r.final_cost for r in result.reports]
    if not (np.isfinite(metrics["ate_rmse_m"]) and np.all(np.isfinite(costs))) \
            or metrics["ate_rmse_m"] > settings.divergence_bound:
        dump = write_json(out / DIAGNOSTIC_JSON, _diagnostics(result))
        raise EstimatorDivergence(f"ATE {metrics['ate_rmse_m']:.4g} m exceeds divergence bound "
                                  f"{settings.divergence_bound:g} m (diagnostics in {dump})")
    if not metrics["within_bound"]:
        logger.warning(f"ATE {metrics['ate_rmse_m']:.4g} m above regression bound {settings.ate_bound:g} m")
    return metrics
