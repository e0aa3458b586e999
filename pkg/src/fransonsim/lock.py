"""Discrete-time simulation of the active phase stabilization loop.

A reference fringe is monitored at a mid-fringe (quadrature) setpoint,
where the reading is most sensitive to phase; a PID controller converts
the reading error into piezo phase corrections that cancel interferometer
drift. Drift is modeled as a phase random walk plus a slow sinusoidal
(thermal) component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, LockInstabilityError

#: Phase at which the fringe reading sits mid-slope.
QUADRATURE_PHASE = 0.5 * math.pi

_INSTABILITY_STEPS = 100


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float = 0.0
    kd: float = 0.0
    dt: float = 1e-3            # control period, s
    integral_clamp: float = 10.0

    def __post_init__(self):
        _require(self.dt > 0, f"dt: must be > 0, got {self.dt}")
        _require(self.integral_clamp > 0,
                 f"integral_clamp: must be > 0, got {self.integral_clamp}")


@dataclass(frozen=True)
class DriftModel:
    random_walk_sigma: float = 0.0     # rad per sqrt(step)
    slow_sine_amplitude: float = 0.0   # rad
    slow_sine_period: float = 600.0    # s

    def __post_init__(self):
        _require(self.random_walk_sigma >= 0,
                 f"random_walk_sigma: must be >= 0, got {self.random_walk_sigma}")
        _require(self.slow_sine_amplitude >= 0,
                 f"slow_sine_amplitude: must be >= 0, got {self.slow_sine_amplitude}")
        _require(self.slow_sine_period > 0,
                 f"slow_sine_period: must be > 0, got {self.slow_sine_period}")


@dataclass(frozen=True)
class FringeSensorParams:
    fringe_visibility: float = 0.97
    mean_power: float = 1.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        _require(0.0 <= self.fringe_visibility <= 1.0,
                 f"fringe_visibility: must be in [0, 1], got {self.fringe_visibility}")
        _require(self.mean_power > 0,
                 f"mean_power: must be > 0, got {self.mean_power}")
        _require(self.noise_sigma >= 0,
                 f"noise_sigma: must be >= 0, got {self.noise_sigma}")


@dataclass
class PidState:
    integral: float = 0.0
    previous_error: float = 0.0


@dataclass(frozen=True)
class LockTrace:
    """Per-step records of one closed- or open-loop run."""

    t: np.ndarray = field(repr=False)            # s
    phase_true: np.ndarray = field(repr=False)   # rad
    reading: np.ndarray = field(repr=False)
    control: np.ndarray = field(repr=False)
    residual: np.ndarray = field(repr=False)     # rad, relative to the lock target

    def __post_init__(self):
        arrays = (self.t, self.phase_true, self.reading, self.control, self.residual)
        if any(not np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("lock trace contains non-finite values")

    def residual_rms(self, skip: int = 0) -> float:
        return float(np.sqrt(np.mean(self.residual[skip:] ** 2)))


def fringe_sensor(phase, fringe_visibility: float, mean_power: float,
                  noise_sigma: float, rng: np.random.Generator):
    """Reference-fringe power reading mean_power*(1 + V cos(phase)) + noise."""
    if not 0.0 <= fringe_visibility <= 1.0:
        raise ValueError(f"fringe_visibility must be in [0, 1], got {fringe_visibility}")
    phase = np.asarray(phase, dtype=float)
    reading = mean_power * (1.0 + fringe_visibility * np.cos(phase))
    if noise_sigma > 0:
        reading = reading + rng.standard_normal(phase.shape) * noise_sigma
    if reading.ndim == 0:
        return float(reading)
    return reading


def pid_step(state: PidState, error: float, gains: PidGains) -> tuple[float, PidState]:
    """One PID update: u = kp*e + ki*clamped_integral + kd*(e - e_prev)/dt."""
    if not math.isfinite(error):
        raise ValueError(f"non-finite error {error}")
    integral = state.integral + error * gains.dt
    integral = max(-gains.integral_clamp, min(gains.integral_clamp, integral))
    derivative = (error - state.previous_error) / gains.dt
    u = gains.kp * error + gains.ki * integral + gains.kd * derivative
    return u, PidState(integral=integral, previous_error=error)


def run_lock(drift: DriftModel, sensor: FringeSensorParams, gains: PidGains,
             duration: float, seed, setpoint: float | None = None,
             initial_phase_offset: float = 0.3) -> LockTrace:
    """Closed-loop stabilization run of ``duration`` seconds at period dt.

    The target is the quadrature point: ``setpoint`` defaults to the
    mid-fringe reading (mean_power). Gains of zero leave the piezo frozen,
    so the residual trace equals the open-loop drift. Deterministic per
    seed. Aborts with LockInstabilityError when |residual| stays above pi
    for 100 consecutive steps.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n_steps = int(round(duration / gains.dt))
    if n_steps < 1:
        raise ConfigError(f"duration: {duration} s is shorter than one control period")
    if setpoint is None:
        setpoint = sensor.mean_power
    slope = sensor.mean_power * max(sensor.fringe_visibility, 1e-6)

    walk = rng.standard_normal(n_steps) * drift.random_walk_sigma
    t = np.arange(n_steps) * gains.dt
    sine = drift.slow_sine_amplitude * np.sin(2.0 * np.pi * t / drift.slow_sine_period)
    drift_phase = np.cumsum(walk) + sine
    noise = rng.standard_normal(n_steps) * sensor.noise_sigma

    target = QUADRATURE_PHASE
    piezo = initial_phase_offset
    state = PidState()
    phase_true = np.empty(n_steps)
    reading = np.empty(n_steps)
    control = np.empty(n_steps)
    residual = np.empty(n_steps)
    runaway = 0

    for k in range(n_steps):
        phase = target + drift_phase[k] + piezo
        raw = sensor.mean_power * (1.0 + sensor.fringe_visibility * math.cos(phase))
        meas = raw + noise[k]
        error = (setpoint - meas) / slope     # estimates phase - target near quadrature
        u, state = pid_step(state, error, gains)
        piezo -= u

        phase_true[k] = phase
        reading[k] = meas
        control[k] = u
        residual[k] = phase - target
        runaway = runaway + 1 if abs(residual[k]) > math.pi else 0
        if runaway >= _INSTABILITY_STEPS:
            raise LockInstabilityError(
                f"|residual| > pi for {runaway} consecutive steps "
                f"(residual {residual[k]:.3f} rad at t={t[k]:.3f} s)", step=k)

    return LockTrace(t=t, phase_true=phase_true, reading=reading,
                     control=control, residual=residual)
