"""Stochastic generation of cascade photon-pair events under CW two-photon
pumping.

The emitter is a renewal process gated by a two-state telegraph (blinking):
while "on", the dot waits an exponential time in the ground state, is
excited, then emits the biexciton photon and the exciton photon after
successive exponential delays. A cascade that would outlast the current
on-interval is interrupted and discarded, so no cascade event ever falls
inside an off-interval. Uncorrelated background is appended as non-cascade
events with independent uniform times per channel.

Each cascade pair records the two-photon pump phase at its excitation time
(a Wiener process matching a Lorentzian pump line) plus a Gaussian
pure-dephasing kick. Only the kick enters the interference phase
downstream: the pump phase common to both indistinguishable paths of the
same pair cancels in the coincidence phase and is carried for diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError
from .physics import DriveParams

PAIR_DTYPE = np.dtype([
    ("t_xx", "f8"),          # biexciton photon emission time, ps
    ("t_x", "f8"),           # exciton photon emission time, ps
    ("pair_phase", "f8"),    # 2 * pump phase at excitation + dephasing kick, rad
    ("phase_kick", "f8"),    # dephasing part of pair_phase, rad
    ("from_cascade", "?"),
])

INTERVAL_DTYPE = np.dtype([("start", "f8"), ("end", "f8"), ("on", "?")])

# Memory cap for one block of candidate cascade cycles (elements per draw).
_MAX_BLOCK = 4_000_000


class PairEvent(NamedTuple):
    t_xx: float
    t_x: float
    pair_phase: float
    phase_kick: float
    from_cascade: bool


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


@dataclass(frozen=True)
class EmitterConfig:
    """All knobs of the stochastic emitter.

    Rates are in 1/ps, times in ps. ``pair_contrast_c0`` is the intrinsic
    coincidence-interference contrast carried by cascade pairs;
    ``dephasing_phase_variance`` is the variance (rad^2) of the per-pair
    phase kick; ``background_rate`` is an accidental singles rate added to
    each detector channel.
    """

    excitation_rate: float
    gamma_xx: float
    gamma_x: float
    blink_off_rate: float = 0.0     # rate of leaving the "on" state
    blink_on_rate: float = 0.0      # rate of leaving the "off" state
    pair_contrast_c0: float = 1.0
    dephasing_phase_variance: float = 0.0
    background_rate: float = 0.0
    duration: float = 1e9
    seed: int = 0

    def __post_init__(self):
        _require(self.excitation_rate >= 0,
                 f"excitation_rate: must be >= 0, got {self.excitation_rate}")
        _require(self.gamma_xx > 0, f"gamma_xx: must be > 0, got {self.gamma_xx}")
        _require(self.gamma_x > 0, f"gamma_x: must be > 0, got {self.gamma_x}")
        _require(self.blink_off_rate >= 0,
                 f"blink_off_rate: must be >= 0, got {self.blink_off_rate}")
        _require(self.blink_on_rate >= 0,
                 f"blink_on_rate: must be >= 0, got {self.blink_on_rate}")
        _require(0.0 <= self.pair_contrast_c0 <= 1.0,
                 f"pair_contrast_c0: must be in [0, 1], got {self.pair_contrast_c0}")
        _require(self.dephasing_phase_variance >= 0,
                 f"dephasing_phase_variance: must be >= 0, got {self.dephasing_phase_variance}")
        _require(self.background_rate >= 0,
                 f"background_rate: must be >= 0, got {self.background_rate}")
        _require(self.duration > 0, f"duration: must be > 0, got {self.duration}")

    @classmethod
    def from_lifetimes(cls, t1_xx: float, t1_x: float, **kwargs) -> "EmitterConfig":
        return cls(gamma_xx=1.0 / t1_xx, gamma_x=1.0 / t1_x, **kwargs)

    @property
    def on_fraction(self) -> float:
        """Long-run fraction of time the telegraph spends 'on'."""
        if self.blink_off_rate == 0.0:
            return 1.0
        if self.blink_on_rate == 0.0:
            return 0.0
        tau_on = 1.0 / self.blink_off_rate
        tau_off = 1.0 / self.blink_on_rate
        return tau_on / (tau_on + tau_off)


def sample_pump_phase_increment(tau, pump_coherence_time: float, rng: np.random.Generator):
    """Single-photon pump phase increment over a delay tau (ps).

    Gaussian with mean 0 and variance 2*tau/pump_coherence_time, so that
    <exp(i * increment)> = exp(-tau/pump_coherence_time) (Lorentzian pump
    line). The two-photon pump phase uses twice this draw. Scalar or array.
    """
    if pump_coherence_time <= 0:
        raise ValueError(f"pump_coherence_time must be > 0, got {pump_coherence_time}")
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("tau must be >= 0")
    sigma = np.sqrt(2.0 * tau / pump_coherence_time)
    draw = rng.standard_normal(tau.shape) * sigma
    if draw.ndim == 0:
        return float(draw)
    return draw


def blink_telegraph(blink_on_rate: float, blink_off_rate: float, duration: float,
                    seed) -> np.ndarray:
    """Alternating on/off intervals tiling [0, duration], starting 'on'.

    On durations are Exp(blink_off_rate), off durations Exp(blink_on_rate);
    a zero rate makes the corresponding state absorbing. Returns a
    structured array with fields (start, end, on); intervals are contiguous
    and non-overlapping, the first starts at 0, the last ends at duration.
    """
    if duration <= 0:
        raise ConfigError(f"duration: must be > 0, got {duration}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def pack(starts, ends, flags):
        out = np.empty(len(starts), dtype=INTERVAL_DTYPE)
        out["start"], out["end"], out["on"] = starts, ends, flags
        return out

    if blink_off_rate == 0.0:
        return pack([0.0], [duration], [True])
    if blink_on_rate == 0.0:
        first_on = rng.exponential(scale=1.0 / blink_off_rate)
        if first_on >= duration:
            return pack([0.0], [duration], [True])
        return pack([0.0, first_on], [first_on, duration], [True, False])

    scale_on = 1.0 / blink_off_rate
    scale_off = 1.0 / blink_on_rate
    batch = max(int(duration / (scale_on + scale_off) * 0.7) + 16, 16)
    parts = []
    total = 0.0
    while total < duration:
        lengths = np.empty(2 * batch)
        lengths[0::2] = rng.exponential(scale=scale_on, size=batch)
        lengths[1::2] = rng.exponential(scale=scale_off, size=batch)
        parts.append(lengths)
        total += lengths.sum()
    lengths = np.concatenate(parts)
    ends = np.cumsum(lengths)
    last = int(np.searchsorted(ends, duration))
    ends = ends[:last + 1]
    ends[-1] = duration
    starts = np.concatenate([[0.0], ends[:-1]])
    flags = np.arange(last + 1) % 2 == 0
    return pack(starts, ends, flags)


def _cascade_cycles(on_starts: np.ndarray, on_ends: np.ndarray,
                    excitation_rate: float, t1_xx: float, t1_x: float,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Renewal cycles inside each on-interval, block-vectorized.

    Per round, every still-active interval draws a block of candidate
    cycles at once; cycles are kept up to the first one whose cascade
    would cross the interval end (that cascade is interrupted by the
    blink and discarded). Returns (t_excite, t_xx, t_x) unsorted.
    """
    pos = on_starts.astype(float).copy()
    ends = on_ends.astype(float)
    active = np.ones(pos.shape, dtype=bool)
    mean_cycle = 1.0 / excitation_rate + t1_xx + t1_x
    te_parts, txx_parts, tx_parts = [], [], []

    while active.any():
        idx = np.nonzero(active)[0]
        n = idx.size
        expect = (ends[idx] - pos[idx]).max() / mean_cycle
        depth = int(np.ceil(expect + 6.0 * np.sqrt(expect + 1.0) + 4.0))
        depth = max(1, min(depth, _MAX_BLOCK // n if n else 1))

        wait = rng.exponential(scale=1.0 / excitation_rate, size=(n, depth))
        d_xx = rng.exponential(scale=t1_xx, size=(n, depth))
        d_x = rng.exponential(scale=t1_x, size=(n, depth))
        t_x = pos[idx, None] + np.cumsum(wait + d_xx + d_x, axis=1)
        keep = np.logical_and.accumulate(t_x <= ends[idx, None], axis=1)

        t_xx = t_x - d_x
        t_e = t_xx - d_xx
        te_parts.append(t_e[keep])
        txx_parts.append(t_xx[keep])
        tx_parts.append(t_x[keep])

        still = keep[:, -1]
        pos[idx[still]] = t_x[still, -1]
        active[idx[~still]] = False

    if not te_parts:
        return np.empty(0), np.empty(0), np.empty(0)
    return (np.concatenate(te_parts), np.concatenate(txx_parts),
            np.concatenate(tx_parts))


def simulate_pair_stream(config: EmitterConfig, drive: DriveParams) -> np.ndarray:
    """Generate the pair-event stream for one run.

    Returns a structured array with PAIR_DTYPE fields, sorted by t_xx,
    fully deterministic for a given (config, seed).
    """
    if config.excitation_rate == 0.0 and config.background_rate == 0.0:
        raise ConfigError(
            "excitation_rate: excitation_rate and background_rate are both zero "
            "(the stream would be empty)")
    rng = np.random.default_rng(config.seed)

    intervals = blink_telegraph(config.blink_on_rate, config.blink_off_rate,
                                config.duration, rng)
    on = intervals[intervals["on"]]

    if config.excitation_rate > 0.0 and on.size > 0:
        t_e, t_xx, t_x = _cascade_cycles(
            on["start"], on["end"], config.excitation_rate,
            1.0 / config.gamma_xx, 1.0 / config.gamma_x, rng)
        order = np.argsort(t_e, kind="stable")
        t_e, t_xx, t_x = t_e[order], t_xx[order], t_x[order]
    else:
        t_e = t_xx = t_x = np.empty(0)

    n = t_e.size
    # Wiener pump phase sampled at the excitation times; the pair carries
    # twice the single-photon phase (two-photon process).
    gaps = np.diff(t_e, prepend=0.0)
    pump_phase = np.cumsum(
        rng.standard_normal(n) * np.sqrt(2.0 * gaps / drive.pump_coherence_time))
    kick = rng.standard_normal(n) * np.sqrt(config.dephasing_phase_variance)

    cascade = np.empty(n, dtype=PAIR_DTYPE)
    cascade["t_xx"] = t_xx
    cascade["t_x"] = t_x
    cascade["pair_phase"] = 2.0 * pump_phase + kick
    cascade["phase_kick"] = kick
    cascade["from_cascade"] = True

    n_bg = rng.poisson(config.background_rate * config.duration)
    background = np.empty(n_bg, dtype=PAIR_DTYPE)
    background["t_xx"] = rng.uniform(0.0, config.duration, size=n_bg)
    background["t_x"] = rng.uniform(0.0, config.duration, size=n_bg)
    background["pair_phase"] = 0.0
    background["phase_kick"] = 0.0
    background["from_cascade"] = False

    pairs = np.concatenate([cascade, background])
    return pairs[np.argsort(pairs["t_xx"], kind="stable")]
