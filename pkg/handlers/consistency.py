# handlers/consistency.py - Monte-Carlo NEES check of the pre-integration covariance
"""
Each trial simulates one noisy IMU interval, pre-integrates it at the true
initial bias and scores the 15-dof error against the noise-free deltas with
the propagated covariance. The mean NEES over M trials must fall inside the
two-sided chi-square interval of a mean of M chi2(15) samples.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import chi2

from config.settings import ConsistencySettings, RunConfig
from infra.errors import StatisticalFailure
from services.run_outputs import ensure_output_dir, write_csv, write_json
from services.simulation import AnalyticTrajectory, SimScenario, mono_rig, simulate_imu
from utils.imu_model import ImuIntrinsics, ImuNoise, compensate_stream, compensated_bias
from utils.lie_core import so3_log
from utils.preintegration import IntegrationMode, PreintegratedImu, information_sqrt, preintegrate

logger = logging.getLogger(__name__)

CONSISTENCY_CSV = "consistency.csv"
SUMMARY_JSON = "consistency_summary.json"
ERROR_DOF = 15


@dataclass(frozen=True)
class TrialSetup:
    name: str
    scenario: SimScenario
    nominal_noise: ImuNoise
    reference: PreintegratedImu
    samples: int
    b_inflation: float


def nees_interval(trials: int, confidence: float, dof: int = ERROR_DOF) -> Tuple[float, float]:
    """Two-sided interval for the mean of `trials` chi2(dof) samples"""
    tail = 0.5 * (1.0 - confidence)
    lower, upper = chi2.ppf([tail, 1.0 - tail], trials * dof) / trials
    return float(lower), float(upper)


def consistency_trajectory(name: str, settings: ConsistencySettings) -> AnalyticTrajectory:
    if name == "rotation":
        return AnalyticTrajectory(rot_amplitude=1.0, rot_frequency=settings.rotation_peak_rate)
    return AnalyticTrajectory(rot_amplitude=0.05, rot_frequency=1.0)


def build_setup(name: str, config: RunConfig) -> TrialSetup:
    settings = config.consistency()
    nominal = config.noise(settings.imu_rate)
    scale = settings.injected_noise_scale
    injected = ImuNoise(nominal.sigma_g * scale, nominal.sigma_a * scale, nominal.sigma_bg * scale,
                        nominal.sigma_ba * scale, nominal.rate)
    base = config.scenario()
    scenario = SimScenario(
        trajectory=consistency_trajectory(name, settings),
        imu_rate=settings.imu_rate,
        duration=settings.duration,
        keyframe_interval=settings.duration,
        noise=injected,
        intrinsics=ImuIntrinsics.identity(),
        initial_bias=base.initial_bias,
        rig=mono_rig(),
        landmark_count=0,
        pixel_sigma=1.0,
        seed=config.seed,
        gravity=config.gravity,
        noise_free=base.noise_free,
    )

    # Noise-free deltas at the true initial bias are shared by every trial
    clean = replace(scenario, noise_free=True)
    stream = compensate_stream(simulate_imu(clean).raw, clean.intrinsics, clean.imu_rate)[:scenario.sample_count]
    reference = preintegrate(stream, compensated_bias(clean.initial_bias, clean.intrinsics), nominal)
    return TrialSetup(name, scenario, nominal, reference, scenario.sample_count, settings.b_inflation)


def run_trial(setup: TrialSetup, trial: int) -> Dict:
    scenario = replace(setup.scenario, seed=setup.scenario.seed + trial)
    sim = simulate_imu(scenario)
    measurements = compensate_stream(sim.raw, scenario.intrinsics, scenario.imu_rate)[:setup.samples]
    b_start = compensated_bias(sim.true_bias(0), scenario.intrinsics)
    b_end = compensated_bias(sim.true_bias(setup.samples), scenario.intrinsics)

    p = preintegrate(measurements, b_start, setup.nominal_noise, IntegrationMode.EXACT, setup.b_inflation)
    reference_R = setup.reference.delta_R.matrix
    same_rotation = np.array_equal(reference_R, p.delta_R.matrix)  # R^T R is not bit-exact I
    error = np.concatenate([
        np.zeros(3) if same_rotation else so3_log(reference_R.T @ p.delta_R.matrix),
        p.delta_p - setup.reference.delta_p,
        p.delta_v - setup.reference.delta_v,
        (b_start - b_end).as_vector(),
    ])
    W, _ = information_sqrt(p)
    whitened = W @ error
    return {
        "scenario": setup.name,
        "trial": trial,
        "seed": scenario.seed,
        "nees": float(whitened @ whitened),
        "nees_rotation": float(whitened[0:3] @ whitened[0:3]),
        "rot_err_rad": float(np.linalg.norm(error[0:3])),
        "pos_err_m": float(np.linalg.norm(error[3:6])),
        "vel_err_mps": float(np.linalg.norm(error[6:9])),
    }


def run_consistency(config: RunConfig) -> Tuple[pd.DataFrame, Dict]:
    settings = config.consistency()
    lower, upper = nees_interval(settings.trials, settings.confidence)
    rows: List[Dict] = []
    summary: Dict = {
        "trials": settings.trials,
        "dof": ERROR_DOF,
        "confidence": settings.confidence,
        "interval": [lower, upper],
        "injected_noise_scale": settings.injected_noise_scale,
        "b_inflation": settings.b_inflation,
        "scenarios": {},
    }

    for name in settings.scenarios:
        setup = build_setup(name, config)
        logger.info(f"NEES scenario {name}: {settings.trials} trials of {settings.duration:g} s, n_jobs={config.n_jobs}")
        trial_rows = Parallel(n_jobs=config.n_jobs)(delayed(run_trial)(setup, i) for i in range(settings.trials))
        mean = float(np.mean([r["nees"] for r in trial_rows]))
        if setup.scenario.noise_free:
            passed = True
        else:
            passed = lower <= mean <= upper
        summary["scenarios"][name] = {"mean_nees": mean, "passed": passed,
                                      "peak_rate": setup.scenario.trajectory.peak_rate}
        logger.info(f"{name}: mean NEES {mean:.3f} vs [{lower:.3f}, {upper:.3f}] -> {'pass' if passed else 'FAIL'}")
        rows.extend(trial_rows)

    summary["passed"] = all(s["passed"] for s in summary["scenarios"].values())
    return pd.DataFrame(rows), summary


def cmd_consistency(config: RunConfig) -> Dict:
    out = ensure_output_dir(config.output_dir)
    frame, summary = run_consistency(config)
    write_csv(out / CONSISTENCY_CSV, frame)
    write_json(out / SUMMARY_JSON, summary)
    if not summary["passed"]:
        failed = [name for name, s in summary["scenarios"].items() if not s["passed"]]
        raise StatisticalFailure(f"Mean NEES outside the {summary['confidence']:.0%} interval for: {', '.join(failed)}")
    return summary
