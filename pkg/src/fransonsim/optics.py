"""Propagation of pair events through the two unbalanced interferometers,
plus detector effects and the Michelson coherence-scan generator.

Routing works per pair. Each photon first survives detection efficiency,
then picks the short or long arm with probability 1/2. Distinguishable arm
combinations (short/long, long/short) form the side peaks at -/+ the arm
delay difference; their photons reach the monitored output port with an
independent 1/2 each, so the side peaks do not depend on the phases.
The indistinguishable combinations (short/short, long/long) are merged
into one joint sample over the two monitored ports:

    p11 = w * (1 + C * cos(phi1 + phi2 + noise)) / 4
    p10 = p01 = 1/2 - p11
    p00 = p11

where C is the pair's interference contrast (zero for background events)
and w is the fine-structure weight applied to coincidence registration in
the diagonal/antidiagonal bases. Both marginals stay exactly 1/2, so the
singles rates never depend on the phases.

Timing is integer picoseconds end to end: channel 0 carries the biexciton
arm, channel 1 the exciton arm, and the long arm of each interferometer
adds its delay difference rounded to 1 ps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import PLANCK_EV_PS, PS_PER_S, SPEED_OF_LIGHT_M_S
from .errors import ConfigError
from .physics import BEATING_BASES, validate_basis

TAG_DTYPE = np.dtype([("channel", "u1"), ("time", "i8")])

MICHELSON_DTYPE = np.dtype([
    ("delay", "f8"),        # coarse arm delay, ps
    ("piezo_phase", "f8"),  # fine-scan phase k * dx, rad
    ("intensity", "f8"),
])

CHANNEL_XX = 0
CHANNEL_X = 1
CHANNEL_REFERENCE = 2


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


@dataclass(frozen=True)
class UnbalancedMZI:
    """One unbalanced interferometer: retroreflector arms of one-way length
    long_arm/short_arm (m), so the delay difference is 2*(L - S)/c."""

    long_arm: float      # m
    short_arm: float     # m
    phase: float = 0.0   # rad
    label: int = 1

    def __post_init__(self):
        _require(self.short_arm > 0,
                 f"short_arm: must be > 0, got {self.short_arm}")
        _require(self.long_arm > self.short_arm,
                 f"long_arm: must exceed short_arm, got {self.long_arm}")


@dataclass(frozen=True)
class DetectorModel:
    jitter_sigma: float = 0.0   # ps
    efficiency: float = 1.0
    dead_time: float = 0.0      # ps

    def __post_init__(self):
        _require(self.jitter_sigma >= 0,
                 f"jitter_sigma: must be >= 0, got {self.jitter_sigma}")
        _require(0.0 <= self.efficiency <= 1.0,
                 f"efficiency: must be in [0, 1], got {self.efficiency}")
        _require(self.dead_time >= 0,
                 f"dead_time: must be >= 0, got {self.dead_time}")


def delay_difference(mzi: UnbalancedMZI) -> float:
    """Arm delay difference 2*(L - S)/c in ps."""
    return 2.0 * (mzi.long_arm - mzi.short_arm) / SPEED_OF_LIGHT_M_S * PS_PER_S


def fss_coincidence_weight(delay_ps, fss: float, basis: str):
    """Deterministic fine-structure weight on central-peak coincidences.

    cos^2(pi * fss * delay / h) in the diagonal basis, shifted by pi/2 in
    the antidiagonal basis; rectilinear bases see weight 1.
    """
    validate_basis(basis)
    delay_ps = np.asarray(delay_ps, dtype=float)
    if basis not in BEATING_BASES:
        return np.ones_like(delay_ps)
    offset = 0.0 if basis == "diagonal" else 0.5 * np.pi
    return np.cos(np.pi * fss * delay_ps / PLANCK_EV_PS + offset) ** 2


def _jittered_int_times(times: np.ndarray, sigma: float,
                        rng: np.random.Generator) -> np.ndarray:
    if sigma > 0:
        times = times + rng.standard_normal(times.size) * sigma
    out = np.rint(times).astype(np.int64)
    out.sort()
    return out[out >= 0]


def _dead_time_filter(times: np.ndarray, dead_time: float) -> np.ndarray:
    """Greedy dead-time suppression on a sorted int64 array.

    A tag is kept iff it is at least dead_time after the previous kept tag.
    Runs of near-coincident tags are resolved by repeated passes that drop
    every other violator (exact greedy fixpoint).
    """
    if dead_time <= 0 or times.size <= 1:
        return times
    keep = np.ones(times.size, dtype=bool)
    while True:
        survivors = np.nonzero(keep)[0]
        t = times[survivors]
        if t.size <= 1:
            break
        viol = np.diff(t) < dead_time
        if not viol.any():
            break
        starts = viol & ~np.concatenate([[False], viol[:-1]])
        idx = np.arange(viol.size)
        run_start = np.maximum.accumulate(np.where(starts, idx, 0))
        drop = viol & ((idx - run_start) % 2 == 0)
        keep[survivors[1:][drop]] = False
    return times[keep]


def _assemble_tags(channel_times: dict[int, np.ndarray]) -> np.ndarray:
    parts = []
    for channel, times in sorted(channel_times.items()):
        block = np.empty(times.size, dtype=TAG_DTYPE)
        block["channel"] = channel
        block["time"] = times
        parts.append(block)
    tags = np.concatenate(parts) if parts else np.empty(0, dtype=TAG_DTYPE)
    return tags[np.argsort(tags["time"], kind="stable")]


def channel_times(tags: np.ndarray, channel: int) -> np.ndarray:
    """Sorted int64 times of one channel."""
    return np.sort(tags["time"][tags["channel"] == channel])


def apply_detector(tags: np.ndarray, model: DetectorModel,
                   rng: np.random.Generator) -> np.ndarray:
    """Efficiency thinning, Gaussian jitter (rounded to 1 ps) and dead-time
    suppression, applied per channel. Input must be time-sorted per channel."""
    out = {}
    for channel in np.unique(tags["channel"]):
        times = tags["time"][tags["channel"] == channel].astype(float)
        if model.efficiency < 1.0:
            times = times[rng.random(times.size) < model.efficiency]
        times = _jittered_int_times(times, model.jitter_sigma, rng)
        out[int(channel)] = _dead_time_filter(times, model.dead_time)
    return _assemble_tags(out)


def franson_route_and_detect(pairs: np.ndarray, mzi1: UnbalancedMZI,
                             mzi2: UnbalancedMZI, det1: DetectorModel,
                             det2: DetectorModel, basis: str, fss: float,
                             rng: np.random.Generator, *,
                             pair_contrast: float = 1.0,
                             pump_coherence_time: float | None = None) -> np.ndarray:
    """Route pair events through the two interferometers and detect.

    The biexciton photon enters interferometer 1 (channel 0), the exciton
    photon interferometer 2 (channel 1); the positive side peak at +delay
    is the short1/long2 class. ``pair_contrast`` is the interference
    contrast of cascade pairs (background pairs always get 0). When
    ``pump_coherence_time`` is given, the residual two-photon pump phase
    accumulated over the arm delay is added to the coincidence phase of
    every indistinguishable-class pair.

    The two interferometers must have equal arm delay within 1 ps.
    """
    validate_basis(basis)
    dt1 = delay_difference(mzi1)
    dt2 = delay_difference(mzi2)
    if abs(dt1 - dt2) > 1.0:
        raise ConfigError(
            f"mzi2.long_arm: arm delays differ beyond one timing bin "
            f"({dt1:.1f} ps vs {dt2:.1f} ps)")
    offs1 = np.int64(round(dt1))
    offs2 = np.int64(round(dt2))

    n = pairs.size
    surv1 = rng.random(n) < det1.efficiency
    surv2 = rng.random(n) < det2.efficiency
    seen = surv1 | surv2
    pairs = pairs[seen]
    surv1, surv2 = surv1[seen], surv2[seen]
    n = pairs.size

    long1 = rng.random(n) < 0.5
    long2 = rng.random(n) < 0.5
    central = long1 == long2

    phi = mzi1.phase + mzi2.phase + pairs["phase_kick"]
    if pump_coherence_time is not None:
        sigma = np.sqrt(2.0 * 0.5 * (dt1 + dt2) / pump_coherence_time)
        phi = phi + 2.0 * rng.standard_normal(n) * sigma
    contrast = np.where(pairs["from_cascade"], pair_contrast, 0.0)
    weight = np.where(pairs["from_cascade"],
                      fss_coincidence_weight(pairs["t_x"] - pairs["t_xx"], fss, basis),
                      1.0)

    # Outcome bands over u: [0, p11) -> (1,1); [p11, p11+p10) -> (1,0);
    # [p11+p10, p11+2*p10) -> (0,1); rest -> (0,0), with p01 = p10.
    p11 = weight * (1.0 + contrast * np.cos(phi)) / 4.0
    p10 = 0.5 - p11
    u = rng.random(n)
    joint1 = u < p11 + p10
    joint2 = (u < p11) | ((u >= p11 + p10) & (u < p11 + 2.0 * p10))

    port1 = rng.random(n) < 0.5
    port2 = rng.random(n) < 0.5
    out1 = np.where(central, joint1, port1)
    out2 = np.where(central, joint2, port2)

    reg1 = surv1 & out1
    reg2 = surv2 & out2
    t1 = pairs["t_xx"][reg1] + np.where(long1[reg1], offs1, 0)
    t2 = pairs["t_x"][reg2] + np.where(long2[reg2], offs2, 0)

    times1 = _dead_time_filter(
        _jittered_int_times(t1.astype(float), det1.jitter_sigma, rng), det1.dead_time)
    times2 = _dead_time_filter(
        _jittered_int_times(t2.astype(float), det2.jitter_sigma, rng), det2.dead_time)
    return _assemble_tags({CHANNEL_XX: times1, CHANNEL_X: times2})


def michelson_fringe_scan(t2: float, fss: float, basis: str, delays,
                          piezo_steps: int, noise_sigma: float,
                          rng: np.random.Generator,
                          mean_power: float = 1.0) -> np.ndarray:
    """Synthetic Michelson interference scan.

    For every coarse delay the piezo sweeps one fringe period; each sample
    is mean_power * (1 + |g1(delay)| * cos(piezo_phase)) plus Gaussian
    read noise. Returns a structured array of (delay, piezo_phase,
    intensity) records, deterministic for a given generator state.
    """
    from .physics import g1_magnitude

    if piezo_steps < 4:
        raise ConfigError(f"piezo_steps: need >= 4 samples per fringe, got {piezo_steps}")
    delays = np.asarray(delays, dtype=float)
    phases = np.linspace(0.0, 2.0 * np.pi, piezo_steps, endpoint=False)
    vis = np.atleast_1d(g1_magnitude(delays, t2, fss, basis))

    records = np.empty(delays.size * piezo_steps, dtype=MICHELSON_DTYPE)
    records["delay"] = np.repeat(delays, piezo_steps)
    records["piezo_phase"] = np.tile(phases, delays.size)
    clean = mean_power * (1.0 + np.repeat(vis, piezo_steps) * np.cos(records["piezo_phase"]))
    records["intensity"] = clean + rng.standard_normal(records.size) * noise_sigma
    return records
