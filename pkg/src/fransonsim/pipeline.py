"""End-to-end drivers: phase scans of the two-interferometer experiment,
the reduction chain from tag streams to visibility and CHSH numbers, the
Michelson coherence-time extraction, and the power-sweep harness.

Long runs are sharded into duration chunks with independent child seeds;
histograms accumulate bin-wise across chunks so memory stays flat while
the correlation statistics are preserved (the window of interest is
thousands of ps against chunk lengths of at least milliseconds).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .analysis import (BlinkingFit, CoincidenceHistogram, VisibilityFit,
                       chsh_check, cross_histogram, fit_blinking_offset,
                       fit_exponential, fit_visibility, g2_zero,
                       normalize_histogram, visibility_vs_window, window_sum)
from .config import ExperimentConfig, PowerSweepTable, SweepRow, sweep_emitter
from .constants import PLANCK_EV_PS, S_PER_PS
from .emission import simulate_pair_stream
from .errors import FitConvergenceError
from .optics import (CHANNEL_X, CHANNEL_XX, DetectorModel, TAG_DTYPE,
                     apply_detector, franson_route_and_detect,
                     michelson_fringe_scan)
from .physics import BEATING_BASES, CoherenceParams, pure_dephasing_rate

_TARGET_PAIRS_PER_CHUNK = 3_000_000


def _expected_pairs(config: ExperimentConfig) -> float:
    emitter = config.emitter
    if emitter.excitation_rate == 0:
        return emitter.background_rate * emitter.duration
    cycle = 1.0 / emitter.excitation_rate + 1.0 / emitter.gamma_xx + 1.0 / emitter.gamma_x
    return emitter.duration * emitter.on_fraction / cycle


def _phase_pairs(config: ExperimentConfig, phase_pairs):
    if phase_pairs is None:
        return [(float(p), 0.0) for p in config.analysis.phases]
    return [(float(a), float(b)) for a, b in phase_pairs]


@dataclass(frozen=True)
class FransonScanData:
    """Accumulated per-phase histograms of one scan.

    ``histograms`` cover the three-peak region at full binning;
    ``long_histogram`` is the phase-summed coarse histogram of long delays
    used for the blinking-offset fit (optionally from a thinned tag
    subsample, which leaves normalized levels unchanged).
    """

    phase_totals: np.ndarray
    histograms: list[CoincidenceHistogram] = field(repr=False)
    long_histogram: CoincidenceHistogram | None = field(repr=False)
    singles_rates: np.ndarray = field(repr=False)   # (n_phases, 2) counts/s
    duration: float                                  # s per phase


def run_franson_scan(config: ExperimentConfig, phase_pairs=None,
                     seed: int | None = None,
                     collect_tags: bool = False):
    """Simulate and histogram one full phase scan.

    Each (phi1, phi2) setting is an independent run of the configured
    duration. Returns FransonScanData, plus the per-phase tag arrays when
    ``collect_tags`` (memory permitting; meant for file export).
    """
    pairs_list = _phase_pairs(config, phase_pairs)
    master = np.random.SeedSequence(config.seed if seed is None else seed)
    phase_seqs = master.spawn(len(pairs_list))

    analysis = config.analysis
    width = analysis.bin_width
    central = config.central_range()
    central_range = (-central, central)
    blink_hi = config.blink_fit_range()[1]
    long_width = width * analysis.blink_rebin
    long_hi = np.ceil(blink_hi / long_width) * long_width
    long_range = (-long_hi, long_hi)

    n_chunks = max(1, int(np.ceil(_expected_pairs(config) / _TARGET_PAIRS_PER_CHUNK)))
    chunk_ps = config.emitter.duration / n_chunks
    duration_s = config.emitter.duration * S_PER_PS

    histograms = []
    singles = np.zeros((len(pairs_list), 2))
    long_counts = None
    long_norm = 0.0
    all_tags = []

    for k, ((phi1, phi2), seq) in enumerate(zip(pairs_list, phase_seqs)):
        mzi1 = dataclasses.replace(config.mzi1, phase=phi1)
        mzi2 = dataclasses.replace(config.mzi2, phase=phi2)
        central_counts = None
        thin_counts = None
        thin_singles = np.zeros(2)
        phase_tags = []

        for c, chunk_seq in enumerate(seq.spawn(n_chunks)):
            emit_seed, route_seed, thin_seed = chunk_seq.spawn(3)
            emitter = dataclasses.replace(
                config.emitter, duration=chunk_ps,
                seed=int(emit_seed.generate_state(1, np.uint64)[0]))
            pairs = simulate_pair_stream(emitter, config.drive)
            tags = franson_route_and_detect(
                pairs, mzi1, mzi2, config.det1, config.det2, config.basis,
                config.qd.fss, np.random.default_rng(route_seed),
                pair_contrast=config.emitter.pair_contrast_c0,
                pump_coherence_time=config.drive.pump_coherence_time)
            singles[k, 0] += np.count_nonzero(tags["channel"] == CHANNEL_XX)
            singles[k, 1] += np.count_nonzero(tags["channel"] == CHANNEL_X)

            if tags.size:
                has_both = (tags["channel"] == CHANNEL_XX).any() and \
                    (tags["channel"] == CHANNEL_X).any()
            else:
                has_both = False
            if has_both:
                hist = cross_histogram(tags, CHANNEL_XX, CHANNEL_X, width,
                                       central_range, total_time=duration_s)
                central_counts = hist.counts if central_counts is None \
                    else central_counts + hist.counts

                thinned = tags
                if analysis.blink_thin < 1.0:
                    thinned = apply_detector(
                        tags, DetectorModel(efficiency=analysis.blink_thin),
                        np.random.default_rng(thin_seed))
                n_a = np.count_nonzero(thinned["channel"] == CHANNEL_XX)
                n_b = np.count_nonzero(thinned["channel"] == CHANNEL_X)
                if n_a and n_b:
                    lh = cross_histogram(thinned, CHANNEL_XX, CHANNEL_X,
                                         long_width, long_range,
                                         total_time=duration_s)
                    thin_counts = lh.counts if thin_counts is None \
                        else thin_counts + lh.counts
                    thin_singles += (n_a, n_b)

            if collect_tags:
                shifted = tags.copy()
                shifted["time"] += np.int64(round(c * chunk_ps))
                phase_tags.append(shifted)

        n_bins = int(round((central_range[1] - central_range[0]) / width))
        counts = central_counts if central_counts is not None \
            else np.zeros(n_bins, dtype=np.int64)
        histograms.append(normalize_histogram(CoincidenceHistogram(
            bin_width=width, tau_min=central_range[0], tau_max=central_range[1],
            counts=counts, total_time=duration_s,
            rate_a=singles[k, 0] / duration_s, rate_b=singles[k, 1] / duration_s)))

        if thin_counts is not None:
            long_counts = thin_counts if long_counts is None \
                else long_counts + thin_counts
            long_norm += (thin_singles[0] / duration_s) * (thin_singles[1] / duration_s) \
                * duration_s * long_width * S_PER_PS
        if collect_tags:
            all_tags.append(np.concatenate(phase_tags) if phase_tags
                            else np.empty(0, dtype=TAG_DTYPE))

    long_histogram = None
    if long_counts is not None and long_norm > 0:
        long_histogram = CoincidenceHistogram(
            bin_width=long_width, tau_min=long_range[0], tau_max=long_range[1],
            counts=long_counts / long_norm, total_time=duration_s * len(pairs_list),
            rate_a=float(np.mean(singles[:, 0])) / duration_s,
            rate_b=float(np.mean(singles[:, 1])) / duration_s,
            normalized=True, norm_factor=long_norm)

    data = FransonScanData(
        phase_totals=np.array([a + b for a, b in pairs_list]),
        histograms=histograms, long_histogram=long_histogram,
        singles_rates=singles / duration_s, duration=duration_s)
    if collect_tags:
        return data, all_tags
    return data


def scan_from_tags(tag_arrays, phase_totals, config: ExperimentConfig,
                   duration_s: float, seed: int = 0) -> FransonScanData:
    """Build FransonScanData from already-detected tag streams (one array
    per phase setting), e.g. read back from FTAG1 files."""
    analysis = config.analysis
    width = analysis.bin_width
    central = config.central_range()
    central_range = (-central, central)
    blink_hi = config.blink_fit_range()[1]
    long_width = width * analysis.blink_rebin
    long_hi = np.ceil(blink_hi / long_width) * long_width
    long_range = (-long_hi, long_hi)
    thin_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF7A61]))

    histograms = []
    singles = np.zeros((len(tag_arrays), 2))
    long_counts = None
    long_norm = 0.0

    for k, tags in enumerate(tag_arrays):
        singles[k, 0] = np.count_nonzero(tags["channel"] == CHANNEL_XX)
        singles[k, 1] = np.count_nonzero(tags["channel"] == CHANNEL_X)
        n_bins = int(round((central_range[1] - central_range[0]) / width))
        if singles[k, 0] and singles[k, 1]:
            hist = cross_histogram(tags, CHANNEL_XX, CHANNEL_X, width,
                                   central_range, total_time=duration_s)
            counts = hist.counts
            thinned = tags
            if analysis.blink_thin < 1.0:
                thinned = apply_detector(
                    tags, DetectorModel(efficiency=analysis.blink_thin), thin_rng)
            n_a = np.count_nonzero(thinned["channel"] == CHANNEL_XX)
            n_b = np.count_nonzero(thinned["channel"] == CHANNEL_X)
            if n_a and n_b:
                lh = cross_histogram(thinned, CHANNEL_XX, CHANNEL_X,
                                     long_width, long_range, total_time=duration_s)
                long_counts = lh.counts if long_counts is None \
                    else long_counts + lh.counts
                long_norm += (n_a / duration_s) * (n_b / duration_s) \
                    * duration_s * long_width * S_PER_PS
        else:
            counts = np.zeros(n_bins, dtype=np.int64)
        histograms.append(normalize_histogram(CoincidenceHistogram(
            bin_width=width, tau_min=central_range[0], tau_max=central_range[1],
            counts=counts, total_time=duration_s,
            rate_a=singles[k, 0] / duration_s, rate_b=singles[k, 1] / duration_s)))

    long_histogram = None
    if long_counts is not None and long_norm > 0:
        long_histogram = CoincidenceHistogram(
            bin_width=long_width, tau_min=long_range[0], tau_max=long_range[1],
            counts=long_counts / long_norm,
            total_time=duration_s * len(tag_arrays),
            rate_a=float(np.mean(singles[:, 0])) / duration_s,
            rate_b=float(np.mean(singles[:, 1])) / duration_s,
            normalized=True, norm_factor=long_norm)

    return FransonScanData(
        phase_totals=np.asarray(phase_totals, dtype=float),
        histograms=histograms, long_histogram=long_histogram,
        singles_rates=singles / duration_s, duration=duration_s)


@dataclass(frozen=True)
class FransonReport:
    """Everything the reduction chain extracts from one phase scan."""

    blinking: BlinkingFit | None
    corrected: VisibilityFit
    uncorrected: VisibilityFit
    violates_chsh: bool
    n_sigma: float
    window: tuple[float, float]
    window_sums: np.ndarray = field(repr=False)      # (n_phases, 2): corrected, sigma
    curve_corrected: np.ndarray = field(repr=False)
    curve_uncorrected: np.ndarray = field(repr=False)
    zero_delay: float = float("nan")
    singles_spread: float = float("nan")             # max relative spread vs phase


def _merged_normalized(histograms) -> CoincidenceHistogram:
    ref = histograms[0]
    raw = sum(h.raw_counts() for h in histograms)
    norm = sum(h.norm_factor for h in histograms)
    return dataclasses.replace(ref, counts=raw / norm, normalized=True,
                               norm_factor=norm)


def _offset_usable(fit: BlinkingFit, config: ExperimentConfig) -> bool:
    """A bunching offset is only subtracted when the fit constrains it.

    A timescale below the fit-range start cannot be resolved by the fitted
    bins (the amplitude/timescale pair is degenerate there), and an
    amplitude within 2 sigma of zero means there is no offset to subtract:
    both cases fall back to the uncorrected analysis, so blink-free data
    yield identical corrected and uncorrected curves.
    """
    if fit.timescale < config.blink_fit_range()[0]:
        return False
    sigma_amp = np.sqrt(max(fit.covariance[1, 1], 0.0))
    return fit.amplitude > 2.0 * sigma_amp


def analyze_franson(data: FransonScanData, config: ExperimentConfig) -> FransonReport:
    """Reduce a phase scan: blinking fit, window sums with and without the
    offset correction, weighted visibility fits, CHSH test and the
    zero-delay summary metric."""
    analysis = config.analysis
    blinking = None
    if data.long_histogram is not None:
        try:
            blinking = fit_blinking_offset(
                data.long_histogram, config.blink_fit_range(), rebin=1)
        except (FitConvergenceError, ValueError):
            blinking = None
    if blinking is not None and not _offset_usable(blinking, config):
        blinking = None

    window = analysis.window
    sums_u, sig_u = zip(*(window_sum(h, window) for h in data.histograms))
    fit_u = fit_visibility(data.phase_totals, sums_u, sig_u)
    if blinking is not None:
        pairs = [window_sum(h, window, blinking) for h in data.histograms]
        sums_c, sig_c = zip(*pairs)
        fit_c = fit_visibility(data.phase_totals, sums_c, sig_c)
    else:
        sums_c, sig_c = sums_u, sig_u
        fit_c = fit_u

    grid = [w for w in analysis.window_grid if w <= data.histograms[0].tau_max]
    curve_c = visibility_vs_window(data.histograms, data.phase_totals, grid,
                                   window_start=window[0], offsets=blinking)
    curve_u = visibility_vs_window(data.histograms, data.phase_totals, grid,
                                   window_start=window[0], offsets=None)

    violates, n_sigma = chsh_check(fit_c.visibility, fit_c.sigma_v)
    zero_delay = g2_zero(_merged_normalized(data.histograms), analysis.zero_window)
    mean_rates = data.singles_rates.mean(axis=0)
    spread = float(np.max(np.abs(data.singles_rates - mean_rates) /
                          np.maximum(mean_rates, 1e-300)))

    return FransonReport(
        blinking=blinking, corrected=fit_c, uncorrected=fit_u,
        violates_chsh=violates, n_sigma=n_sigma, window=window,
        window_sums=np.column_stack([sums_c, sig_c]),
        curve_corrected=curve_c, curve_uncorrected=curve_u,
        zero_delay=zero_delay, singles_spread=spread)


def michelson_visibility_curve(records: np.ndarray,
                               noise_sigma: float) -> np.ndarray:
    """Per-delay fringe visibility from a Michelson scan record array."""
    delays = np.unique(records["delay"])
    floor = max(noise_sigma, 1e-6 * float(np.abs(records["intensity"]).max()))
    out = np.empty(delays.size,
                   dtype=[("delay", "f8"), ("visibility", "f8"), ("sigma_v", "f8")])
    for k, d in enumerate(delays):
        rows = records[records["delay"] == d]
        fit = fit_visibility(rows["piezo_phase"], rows["intensity"],
                             np.full(rows.size, floor))
        out[k] = (d, fit.visibility, fit.sigma_v)
    return out


def beat_node_mask(delays, fss: float, basis: str,
                   threshold: float = 0.5) -> np.ndarray:
    """Points to exclude from coherence fits: near fine-structure beat
    nodes (|cos| below threshold) in the diagonal/antidiagonal bases."""
    delays = np.asarray(delays, dtype=float)
    if basis not in BEATING_BASES or fss <= 0:
        return np.zeros(delays.shape, dtype=bool)
    return np.abs(np.cos(np.pi * fss * delays / PLANCK_EV_PS)) < threshold


def michelson_coherence_time(t2: float, fss: float, basis: str, delays,
                             piezo_steps: int, noise_sigma: float,
                             seed) -> tuple[np.ndarray, float, float]:
    """Simulate a Michelson scan and extract the coherence time.

    Returns (visibility curve, fitted timescale, sigma). Beat nodes are
    masked out of the exponential fit in the beating bases; only positive
    delays enter the fit.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    records = michelson_fringe_scan(t2, fss, basis, delays, piezo_steps,
                                    noise_sigma, rng)
    curve = michelson_visibility_curve(records, noise_sigma)
    positive = curve["delay"] > 0
    mask = beat_node_mask(curve["delay"][positive], fss, basis)
    timescale, sigma = fit_exponential(
        curve["delay"][positive], curve["visibility"][positive],
        np.maximum(curve["sigma_v"][positive], 1e-9), exclusion_mask=mask)
    return curve, timescale, sigma


_MICHELSON_DELAYS = np.arange(-100.0, 1301.0, 20.0)


def run_sweep(config: ExperimentConfig, table: PowerSweepTable,
              seed: int) -> list[dict]:
    """Simulate and reduce every row of a power-sweep table.

    Rows are independent (seeded from ``[seed, row_index]``); a row that
    fails to fit is reported with its error and skipped.
    """
    results = []
    for k, row in enumerate(table.rows):
        try:
            results.append(_run_sweep_row(config, row, k, seed))
        except (FitConvergenceError, ValueError) as err:
            results.append({"power_uw": row.power_uw, "error": str(err)})
    return results


def _run_sweep_row(config: ExperimentConfig, row: SweepRow, index: int,
                   seed: int) -> dict:
    row_seed = int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])
    emitter = sweep_emitter(config.emitter, row, seed=row_seed)
    cfg = dataclasses.replace(config, emitter=emitter)
    data = run_franson_scan(cfg, seed=row_seed)
    report = analyze_franson(data, cfg)

    _, t2_fit, t2_sigma = michelson_coherence_time(
        row.t2_ps, config.qd.fss, config.basis, _MICHELSON_DELAYS,
        piezo_steps=16, noise_sigma=0.01,
        seed=np.random.SeedSequence([seed, index, 1]))

    # pure dephasing implied by the recovered coherence time of the
    # biexciton line, when below the Fourier limit
    coherence = None
    if 0.0 < t2_fit <= 2.0 * (1.0 / config.emitter.gamma_xx):
        coherence = CoherenceParams(
            t2=t2_fit,
            pure_dephasing_rate=pure_dephasing_rate(
                1.0 / config.emitter.gamma_xx, t2_fit))

    return {
        "power_uw": row.power_uw,
        "visibility": report.corrected.visibility,
        "sigma_v": report.corrected.sigma_v,
        "visibility_uncorrected": report.uncorrected.visibility,
        "n_sigma_chsh": report.n_sigma,
        "violates_chsh": report.violates_chsh,
        "t2_fit_ps": t2_fit,
        "t2_sigma_ps": t2_sigma,
        "pure_dephasing_rate": None if coherence is None
        else coherence.pure_dephasing_rate,
        "zero_delay_normalized": report.zero_delay,
        "blink_amplitude": None if report.blinking is None else report.blinking.amplitude,
        "blink_timescale_ps": None if report.blinking is None else report.blinking.timescale,
    }
