"""Correlation analysis chain: coincidence histograms, accidental
normalization, blinking-offset fitting and subtraction, window sums with
error propagation, phase-resolved visibility fitting and the CHSH check,
plus the exponential and power-law fits used for lifetime/coherence data.

Conventions
-----------
Histogram bins are half-open [edge, edge + bin_width) in the delay
tau = t_b - t_a (ps). Rates are counts/s and integration time is seconds,
so the accidental normalization factor is N = rate_a * rate_b * T * W with
W converted to seconds; a normalized histogram is 1 at the accidental
level. Poisson errors are always taken on raw counts and propagated
through the normalization.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import S_PER_PS
from .errors import FitConvergenceError
from .fitting import (exponential_logts_model, levenberg_marquardt,
                      offset_exponential_logts_model, sinusoid_model)
from .optics import channel_times

#: Coincidence-fringe visibility above which the CHSH inequality is violated.
CHSH_VISIBILITY_THRESHOLD = 1.0 / math.sqrt(2.0)

_PAIR_CHUNK = 4_000_000


@dataclass(frozen=True)
class CoincidenceHistogram:
    """Binned correlation counts plus the metadata needed to normalize them.

    ``counts`` holds raw integer counts until :func:`normalize_histogram`
    divides by N = rate_a * rate_b * total_time * bin_width; after that,
    ``norm_factor`` records N so Poisson errors on the raw counts remain
    recoverable.
    """

    bin_width: float                  # ps
    tau_min: float                    # ps
    tau_max: float                    # ps
    counts: np.ndarray = field(repr=False)
    total_time: float                 # s
    rate_a: float                     # counts/s
    rate_b: float                     # counts/s
    normalized: bool = False
    norm_factor: float | None = None

    def __post_init__(self):
        expected = (self.tau_max - self.tau_min) / self.bin_width
        if abs(expected - round(expected)) > 1e-9 or round(expected) != self.counts.size:
            raise ValueError(
                f"counts length {self.counts.size} does not match "
                f"(tau_max - tau_min) / bin_width = {expected}")
        if not self.normalized and np.any(self.counts < 0):
            raise ValueError("raw counts must be non-negative")

    @property
    def bin_edges(self) -> np.ndarray:
        return self.tau_min + self.bin_width * np.arange(self.counts.size + 1)

    @property
    def bin_centers(self) -> np.ndarray:
        return self.tau_min + self.bin_width * (np.arange(self.counts.size) + 0.5)

    def raw_counts(self) -> np.ndarray:
        """Raw counts regardless of normalization state."""
        if not self.normalized:
            return self.counts
        return self.counts * self.norm_factor

    def bin_sigma(self) -> np.ndarray:
        """Per-bin Poisson sigma in the histogram's current units.

        Empty bins get the one-count floor so weighted fits stay defined.
        """
        sigma_raw = np.sqrt(np.maximum(self.raw_counts(), 1.0))
        if self.normalized:
            return sigma_raw / self.norm_factor
        return sigma_raw


@dataclass(frozen=True)
class BlinkingFit:
    """Exponential bunching offset: baseline + amplitude * exp(-|tau|/timescale).

    ``covariance`` is the 3x3 parameter covariance in the order
    (baseline, amplitude, timescale).
    """

    amplitude: float
    timescale: float
    baseline: float
    covariance: np.ndarray = field(repr=False)
    chi2_reduced: float = float("nan")

    def evaluate(self, tau) -> np.ndarray:
        return self.baseline + self.amplitude * np.exp(-np.abs(tau) / self.timescale)

    def gradient(self, tau) -> np.ndarray:
        """d(model)/d(baseline, amplitude, timescale), shape (len(tau), 3)."""
        tau = np.abs(np.asarray(tau, dtype=float))
        e = np.exp(-tau / self.timescale)
        return np.column_stack([
            np.ones_like(tau), e, self.amplitude * e * tau / self.timescale**2])


@dataclass(frozen=True)
class VisibilityFit:
    """Result of the weighted sinusoidal fit A * (1 + V cos(phi - phi0))."""

    mean_level: float
    modulation: float
    phase_origin: float
    visibility: float
    sigma_v: float
    chi2_reduced: float
    covariance: np.ndarray = field(repr=False)


def cross_histogram(tags: np.ndarray, channel_a: int, channel_b: int,
                    bin_width: float, tau_range: tuple[float, float],
                    total_time: float | None = None) -> CoincidenceHistogram:
    """Histogram of delays t_b - t_a over all tag pairs within tau_range.

    Uses a two-pointer sweep (searchsorted windows) so the cost is linear
    in the tag count for a bounded range. channel_a == channel_b gives the
    auto-correlation with self-pairs excluded.

    ``total_time`` is the integration time in seconds; when omitted it is
    taken from the joint time span of the two streams.
    """
    ta = channel_times(tags, channel_a).astype(np.int64)
    tb = channel_times(tags, channel_b).astype(np.int64)
    if ta.size == 0 or tb.size == 0:
        raise ValueError(
            f"empty stream: channel {channel_a} has {ta.size} tags, "
            f"channel {channel_b} has {tb.size}")

    tau_min, tau_max = (int(round(v)) for v in tau_range)
    width = int(round(bin_width))
    if width <= 0:
        raise ValueError(f"bin_width must be positive, got {bin_width}")
    if (tau_max - tau_min) % width != 0 or tau_max <= tau_min:
        raise ValueError(
            f"tau range {tau_range} is not a positive multiple of bin width {bin_width}")
    n_bins = (tau_max - tau_min) // width

    auto = channel_a == channel_b
    counts = np.zeros(n_bins, dtype=np.int64)
    lo = np.searchsorted(tb, ta + tau_min, side="left")
    hi = np.searchsorted(tb, ta + tau_max, side="left")
    per_tag = hi - lo

    start = 0
    while start < ta.size:
        stop = start
        budget = 0
        while stop < ta.size and budget < _PAIR_CHUNK:
            budget += per_tag[stop]
            stop += 1
        m = per_tag[start:stop]
        total = int(m.sum())
        if total:
            i = np.repeat(np.arange(start, stop), m)
            offsets = np.arange(total) - np.repeat(np.cumsum(m) - m, m)
            j = lo[i] + offsets
            if auto:
                valid = i != j
                i, j = i[valid], j[valid]
            tau = tb[j] - ta[i]
            counts += np.bincount((tau - tau_min) // width, minlength=n_bins)
        start = stop

    if total_time is None:
        span_ps = float(max(ta[-1], tb[-1]) - min(ta[0], tb[0]))
        total_time = max(span_ps, 1.0) * S_PER_PS
    return CoincidenceHistogram(
        bin_width=float(width), tau_min=float(tau_min), tau_max=float(tau_max),
        counts=counts, total_time=float(total_time),
        rate_a=ta.size / total_time, rate_b=tb.size / total_time)


def normalize_histogram(hist: CoincidenceHistogram) -> CoincidenceHistogram:
    """Divide every bin by N = rate_a * rate_b * total_time * bin_width."""
    if hist.normalized:
        raise ValueError("histogram is already normalized")
    norm = hist.rate_a * hist.rate_b * hist.total_time * hist.bin_width * S_PER_PS
    if norm <= 0.0:
        raise ValueError(
            f"cannot normalize: rate_a={hist.rate_a}, rate_b={hist.rate_b}, "
            f"T={hist.total_time}, W={hist.bin_width} give N={norm}")
    return replace(hist, counts=hist.counts / norm, normalized=True,
                   norm_factor=norm)


def rebin_histogram(hist: CoincidenceHistogram, factor: int) -> CoincidenceHistogram:
    """Merge groups of ``factor`` adjacent bins (raw counts add)."""
    if factor < 1 or hist.counts.size % factor != 0:
        raise ValueError(
            f"rebin factor {factor} does not divide {hist.counts.size} bins")
    raw = hist.raw_counts().reshape(-1, factor).sum(axis=1)
    out = replace(hist, bin_width=hist.bin_width * factor, counts=raw,
                  normalized=False, norm_factor=None)
    return normalize_histogram(out) if hist.normalized else out


def _select_symmetric(hist: CoincidenceHistogram,
                      fit_range: tuple[float, float]) -> np.ndarray:
    lo, hi = fit_range
    centers = hist.bin_centers
    return (np.abs(centers) >= lo) & (np.abs(centers) <= hi)


def fit_blinking_offset(hist: CoincidenceHistogram,
                        fit_range: tuple[float, float],
                        rebin: int = 1) -> BlinkingFit:
    """Weighted fit of baseline + b * exp(-|tau|/tau_b) on the long-delay
    region |tau| in fit_range (both signs used when present).

    The fit range must exclude the central cascade/side-peak region; the
    caller chooses it. ``rebin`` coarsens the histogram first, which is
    the usual move when per-bin counts are sparse at long delays.
    """
    if not hist.normalized:
        raise ValueError("blinking offset is fitted on a normalized histogram")
    if rebin > 1:
        hist = rebin_histogram(hist, rebin)
    sel = _select_symmetric(hist, fit_range)
    if sel.sum() < 8:
        raise ValueError(
            f"fit range {fit_range} selects only {int(sel.sum())} bins; need >= 8")

    tau = hist.bin_centers[sel]
    values = hist.counts[sel]
    sigma = hist.bin_sigma()[sel]

    outer = np.abs(tau) >= 0.8 * np.abs(tau).max()
    baseline0 = float(np.mean(values[outer]))
    inner = np.abs(tau) <= np.quantile(np.abs(tau), 0.1)
    amp0 = max(float(np.mean(values[inner]) - baseline0), 1e-6)
    excess = np.clip(values - baseline0, 0.0, None)
    if excess.sum() > 0:
        ts0 = float(np.sum(np.abs(tau) * excess) / excess.sum() - np.abs(tau).min())
    else:
        ts0 = 0.0
    # Start inside the band the data can actually resolve; timescales below
    # the fit-range start are pure noise-chasing of the first bins.
    ts0 = min(max(ts0, fit_range[0], 2.0 * hist.bin_width), fit_range[1])

    # Iteratively reweighted fit: observed-count Poisson weights bias the
    # fit low when bins hold only a few counts, so after the first pass the
    # weights are recomputed from the model prediction. The timescale is
    # fitted in log space to stay positive.
    model = offset_exponential_logts_model(tau)
    p0 = np.array([baseline0, amp0, math.log(ts0)])
    try:
        for _ in range(3):
            params, cov, chi2, _ = levenberg_marquardt(model, p0, values, sigma)
            predicted_raw = np.maximum(model(params)[0] * hist.norm_factor, 1.0)
            sigma_new = np.sqrt(predicted_raw) / hist.norm_factor
            if np.allclose(sigma_new, sigma, rtol=1e-3):
                break
            sigma, p0 = sigma_new, params
    except FitConvergenceError as err:
        raise FitConvergenceError(f"blinking-offset fit failed: {err}") from err
    baseline, amplitude, log_ts = params
    timescale = math.exp(log_ts)
    jac_back = np.diag([1.0, 1.0, timescale])
    cov = jac_back @ cov @ jac_back
    dof = max(tau.size - 3, 1)
    return BlinkingFit(amplitude=float(amplitude), timescale=float(timescale),
                       baseline=float(baseline), covariance=cov,
                       chi2_reduced=chi2 / dof)


def window_sum(hist: CoincidenceHistogram, window: tuple[float, float],
               offset: BlinkingFit | None = None) -> tuple[float, float]:
    """Sum of the bins fully inside [window[0], window[1]], optionally with
    the fitted offset curve subtracted bin by bin.

    The returned sigma combines the raw Poisson variance of the summed
    bins with the offset-fit covariance propagated through the (fully
    correlated) per-bin subtraction, so it is never below the pure
    Poisson error.
    """
    lo, hi = window
    if lo < hist.tau_min or hi > hist.tau_max or hi <= lo:
        raise ValueError(
            f"window {window} outside histogram range "
            f"[{hist.tau_min}, {hist.tau_max}]")
    edges = hist.bin_edges
    sel = (edges[:-1] >= lo) & (edges[1:] <= hi)
    if not sel.any():
        raise ValueError(f"window {window} contains no complete bin")
    if offset is not None and not hist.normalized:
        raise ValueError("offset subtraction requires a normalized histogram")

    values = hist.counts[sel]
    raw = hist.raw_counts()[sel]
    scale = hist.norm_factor if hist.normalized else 1.0
    variance = float(np.sum(raw)) / scale**2

    total = float(np.sum(values))
    if offset is not None:
        centers = hist.bin_centers[sel]
        total -= float(np.sum(offset.evaluate(centers)))
        jac = offset.gradient(centers).sum(axis=0)
        variance += float(jac @ offset.covariance @ jac)
    return total, math.sqrt(variance)


def fit_visibility(phase_positions, sums, sigmas) -> VisibilityFit:
    """Weighted fit of A * (1 + V cos(phi - phi0)) to window sums.

    Needs at least 4 distinct phases spanning more than pi. V is reported
    as modulation/mean with first-order error propagation from the
    parameter covariance; values above 1 are reported with a warning,
    never clipped.
    """
    phases = np.asarray(phase_positions, dtype=float)
    y = np.asarray(sums, dtype=float)
    sigma = np.asarray(sigmas, dtype=float)
    if np.unique(phases).size < 4:
        raise ValueError(f"need >= 4 distinct phases, got {np.unique(phases).size}")
    if phases.max() - phases.min() <= math.pi:
        raise ValueError(
            f"degenerate phase span {phases.max() - phases.min():.3f} rad; need > pi")
    if np.any(sigma <= 0):
        raise ValueError("sigmas must be positive")

    a0 = float(np.average(y, weights=1.0 / sigma**2))
    bc = 2.0 * np.mean((y - a0) * np.cos(phases))
    bs = 2.0 * np.mean((y - a0) * np.sin(phases))
    b0 = math.hypot(bc, bs)
    phi0 = math.atan2(bs, bc)

    params, cov, chi2, _ = levenberg_marquardt(
        sinusoid_model(phases), [a0, max(b0, 1e-12 * max(abs(a0), 1.0)), phi0],
        y, sigma)
    a, b, phi0 = params
    if b < 0:
        b = -b
        phi0 += math.pi
        flip = np.diag([1.0, -1.0, 1.0])
        cov = flip @ cov @ flip
    phi0 = math.atan2(math.sin(phi0), math.cos(phi0))
    if a <= 0:
        raise FitConvergenceError(
            f"visibility fit returned non-positive mean level A={a}")

    v = b / a
    grad = np.array([-b / a**2, 1.0 / a])
    sigma_v = math.sqrt(float(grad @ cov[:2, :2] @ grad))
    if v > 1.5:
        warnings.warn(f"visibility {v:.3f} far outside [0, 1]; fit is suspect")
    elif v > 1.0:
        warnings.warn(f"visibility {v:.3f} exceeds 1 (statistical fluctuation?)")
    dof = max(y.size - 3, 1)
    return VisibilityFit(mean_level=float(a), modulation=float(b),
                         phase_origin=float(phi0), visibility=float(v),
                         sigma_v=float(sigma_v), chi2_reduced=chi2 / dof,
                         covariance=cov)


def visibility_vs_window(histograms, phase_positions, window_ends,
                         window_start: float = 8.0,
                         offsets=None) -> np.ndarray:
    """Visibility fitted for a grid of post-selection window endpoints.

    ``offsets`` may be None (uncorrected), one BlinkingFit shared by all
    phases, or a sequence with one fit per phase. Returns a structured
    array of (window, visibility, sigma_v) rows.
    """
    histograms = list(histograms)
    phases = np.asarray(phase_positions, dtype=float)
    if len(histograms) != phases.size:
        raise ValueError(
            f"{len(histograms)} histograms vs {phases.size} phases")
    if offsets is None or isinstance(offsets, BlinkingFit):
        offsets = [offsets] * len(histograms)

    out = np.empty(len(window_ends),
                   dtype=[("window", "f8"), ("visibility", "f8"), ("sigma_v", "f8")])
    for k, end in enumerate(window_ends):
        sums, sigmas = zip(*(window_sum(h, (window_start, end), off)
                             for h, off in zip(histograms, offsets)))
        fit = fit_visibility(phases, sums, sigmas)
        out[k] = (end, fit.visibility, fit.sigma_v)
    return out


def chsh_check(v: float, sigma_v: float) -> tuple[bool, float]:
    """Compare a visibility against the CHSH threshold 1/sqrt(2).

    Returns (violates, n_sigma) with n_sigma = (v - 1/sqrt(2)) / sigma_v.
    """
    if sigma_v <= 0:
        raise ValueError(f"sigma_v must be positive, got {sigma_v}")
    n_sigma = (v - CHSH_VISIBILITY_THRESHOLD) / sigma_v
    return v > CHSH_VISIBILITY_THRESHOLD, n_sigma


def g2_zero(hist: CoincidenceHistogram, window: tuple[float, float]) -> float:
    """Mean normalized coincidences in the central window."""
    if not hist.normalized:
        raise ValueError("g2(0) is defined on a normalized histogram")
    lo, hi = window
    edges = hist.bin_edges
    sel = (edges[:-1] >= lo) & (edges[1:] <= hi)
    if not sel.any():
        raise ValueError(f"window {window} contains no complete bin")
    return float(np.mean(hist.counts[sel]))


def fit_exponential(times, values, sigmas,
                    exclusion_mask=None) -> tuple[float, float]:
    """Weighted fit of a * exp(-t/timescale); returns (timescale, sigma).

    ``exclusion_mask`` flags points to drop (True = excluded), e.g. beat
    nodes in diagonal-basis coherence scans. Raises FitConvergenceError
    for non-decaying (constant) data.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    s = np.asarray(sigmas, dtype=float)
    if exclusion_mask is not None:
        keep = ~np.asarray(exclusion_mask, dtype=bool)
        t, y, s = t[keep], y[keep], s[keep]
    if t.size < 3:
        raise ValueError(f"need >= 3 points after exclusions, got {t.size}")
    if np.any(y <= 0):
        raise ValueError("values must be positive on the fitted set")
    if np.any(s <= 0):
        raise ValueError("sigmas must be positive")

    # Log-linear weighted fit for the starting point.
    w = (y / s) ** 2
    ly = np.log(y)
    tbar = np.average(t, weights=w)
    lybar = np.average(ly, weights=w)
    denom = np.sum(w * (t - tbar) ** 2)
    if denom == 0:
        raise ValueError("degenerate time values")
    slope = np.sum(w * (t - tbar) * (ly - lybar)) / denom
    span = float(t.max() - t.min())
    if slope >= 0:
        raise FitConvergenceError(
            f"data do not decay (log-slope {slope:.3g} >= 0); timescale unbounded")
    ts0 = -1.0 / slope
    amp0 = math.exp(lybar + tbar / ts0)

    params, cov, _, _ = levenberg_marquardt(
        exponential_logts_model(t), [amp0, math.log(ts0)], y, s)
    timescale = float(math.exp(params[1]))
    if timescale > 100.0 * span:
        raise FitConvergenceError(
            f"exponential fit diverged: timescale {timescale:.3g} ps "
            f"against a {span:.3g} ps span")
    return timescale, float(timescale * math.sqrt(cov[1, 1]))


def fit_power_law(powers, intensities, sigmas) -> tuple[float, float]:
    """Weighted linear fit in log-log space; returns (exponent, sigma)."""
    p = np.asarray(powers, dtype=float)
    i = np.asarray(intensities, dtype=float)
    s = np.asarray(sigmas, dtype=float)
    if np.any(p <= 0) or np.any(i <= 0):
        raise ValueError("powers and intensities must be positive")
    if np.any(s <= 0):
        raise ValueError("sigmas must be positive")
    x = np.log(p)
    y = np.log(i)
    w = (i / s) ** 2          # sigma(log I) = sigma_I / I
    xbar = np.average(x, weights=w)
    denom = float(np.sum(w * (x - xbar) ** 2))
    if denom == 0:
        raise ValueError("need at least two distinct powers")
    slope = float(np.sum(w * (x - xbar) * (y - np.average(y, weights=w))) / denom)
    return slope, math.sqrt(1.0 / denom)
