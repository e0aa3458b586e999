import math

import numpy as np
import pytest

from fransonsim.config import AnalysisParams, ExperimentConfig
from fransonsim.emission import EmitterConfig
from fransonsim.optics import DetectorModel, UnbalancedMZI
from fransonsim.physics import DriveParams, QuantumDotParams

QD = QuantumDotParams(e_x=1.33618, e_xx=1.33302, fss=28e-6,
                      t1_x=711.0, t1_xx=440.0)
DRIVE = DriveParams(rabi_energy=1e-4, pump_coherence_time=3.3e7,
                    power_label=4.6)


def small_experiment(duration=2e9, phases=9, efficiency=0.9, basis="horizontal",
                     seed=5, **emitter_kwargs) -> ExperimentConfig:
    """Fast, blink-free experiment for pipeline and CLI tests."""
    defaults = dict(excitation_rate=8e-5, pair_contrast_c0=0.73,
                    duration=duration, seed=3)
    defaults.update(emitter_kwargs)
    emitter = EmitterConfig.from_lifetimes(440.0, 711.0, **defaults)
    det = DetectorModel(jitter_sigma=0.0, efficiency=efficiency, dead_time=0.0)
    return ExperimentConfig(
        qd=QD, drive=DRIVE, emitter=emitter,
        mzi1=UnbalancedMZI(0.25, 0.035, label=1),
        mzi2=UnbalancedMZI(0.25, 0.035, label=2),
        det1=det, det2=det, basis=basis,
        analysis=AnalysisParams(
            phases=tuple(np.linspace(0.0, 3 * math.pi, phases)),
            window_grid=(300.0, 600.0, 900.0, 1200.0)),
        seed=seed)


@pytest.fixture
def small_config():
    return small_experiment()
