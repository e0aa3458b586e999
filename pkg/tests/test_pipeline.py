import dataclasses

import numpy as np
import pytest

from conftest import small_experiment
from fransonsim.config import PowerSweepTable, SweepRow
from fransonsim.pipeline import (analyze_franson, michelson_coherence_time,
                                 run_franson_scan, run_sweep, scan_from_tags)


class TestFransonScan:
    def test_deterministic(self, small_config):
        a = analyze_franson(run_franson_scan(small_config), small_config)
        b = analyze_franson(run_franson_scan(small_config), small_config)
        assert a.corrected.visibility == b.corrected.visibility
        assert np.array_equal(a.window_sums, b.window_sums)

    def test_visibility_tracks_contrast(self):
        recovered = []
        for c0 in (0.3, 0.8):
            cfg = small_experiment(pair_contrast_c0=c0, duration=4e9)
            rep = analyze_franson(run_franson_scan(cfg), cfg)
            recovered.append(rep.uncorrected)
        assert recovered[1].visibility > recovered[0].visibility + 0.3
        # the incoherent dilution (distinguishable-class leak into the
        # window plus cross-cycle background) is contrast-independent, so
        # it cancels in the ratio
        ratio = recovered[1].visibility / recovered[0].visibility
        assert ratio == pytest.approx(0.8 / 0.3, rel=0.08)
        assert 0.6 < recovered[1].visibility < 0.8

    def test_scan_from_tags_round_trip(self, small_config):
        data, tag_arrays = run_franson_scan(small_config, collect_tags=True)
        rebuilt = scan_from_tags(tag_arrays, data.phase_totals, small_config,
                                 data.duration)
        for a, b in zip(data.histograms, rebuilt.histograms):
            assert np.array_equal(a.raw_counts(), b.raw_counts())
            assert a.rate_a == b.rate_a
        assert np.allclose(rebuilt.singles_rates, data.singles_rates)

    def test_singles_flat_and_zero_delay(self, small_config):
        data = run_franson_scan(small_config)
        rep = analyze_franson(data, small_config)
        assert rep.singles_spread < 0.01
        assert rep.zero_delay > 5.0   # strong cascade bunching at zero delay

    def test_nonlocal_phase_split(self):
        # V from sweeping phi1 at fixed phi2 equals V from sweeping phi2
        cfg = small_experiment(duration=6e9)
        totals = np.asarray(cfg.analysis.phases)
        rep1 = analyze_franson(run_franson_scan(
            cfg, phase_pairs=[(p, 0.45) for p in totals - 0.45]), cfg)
        rep2 = analyze_franson(run_franson_scan(
            cfg, phase_pairs=[(0.45, p) for p in totals - 0.45]), cfg)
        limit = 2 * np.hypot(rep1.corrected.sigma_v, rep2.corrected.sigma_v)
        assert abs(rep1.corrected.visibility - rep2.corrected.visibility) < limit


class TestMichelson:
    def test_t2_recovery_rectilinear(self):
        delays = np.arange(-100.0, 1301.0, 20.0)
        curve, t2, sigma = michelson_coherence_time(
            508.0, 28e-6, "horizontal", delays, 16, 0.01, seed=1)
        assert t2 == pytest.approx(508.0, rel=0.05)

    def test_t2_recovery_with_beats(self):
        delays = np.arange(-100.0, 1301.0, 10.0)
        curve, t2, sigma = michelson_coherence_time(
            508.0, 28e-6, "antidiagonal", delays, 16, 0.005, seed=2)
        assert t2 == pytest.approx(508.0, rel=0.05)
        # beat node visible near half the beat period
        node = curve[np.argmin(np.abs(curve["delay"] - 73.85))]
        assert node["visibility"] < 0.25


class TestSweep:
    def table(self):
        return PowerSweepTable(rows=(
            SweepRow(power_uw=2.0, t2_ps=600.0, pair_contrast_c0=0.8,
                     excitation_rate=8e-5),
            SweepRow(power_uw=8.0, t2_ps=300.0, pair_contrast_c0=0.45,
                     excitation_rate=8e-5),
        ))

    def test_monotone_response(self, small_config):
        results = run_sweep(small_config, self.table(), seed=11)
        assert len(results) == 2
        assert all("error" not in r for r in results)
        assert results[0]["visibility"] > results[1]["visibility"]
        assert results[0]["t2_fit_ps"] == pytest.approx(600.0, rel=0.06)
        assert results[1]["t2_fit_ps"] == pytest.approx(300.0, rel=0.06)

    def test_single_row_matches_direct_run(self, small_config):
        from fransonsim.config import sweep_emitter
        row = self.table().rows[0]
        results = run_sweep(small_config, PowerSweepTable(rows=(row,)), seed=11)
        row_seed = int(np.random.SeedSequence([11, 0]).generate_state(1, np.uint64)[0])
        emitter = sweep_emitter(small_config.emitter, row, seed=row_seed)
        cfg = dataclasses.replace(small_config, emitter=emitter)
        rep = analyze_franson(run_franson_scan(cfg, seed=row_seed), cfg)
        assert results[0]["visibility"] == rep.corrected.visibility
        assert results[0]["sigma_v"] == rep.corrected.sigma_v

    def test_failing_row_reported_not_fatal(self, small_config):
        bad = PowerSweepTable(rows=(
            SweepRow(power_uw=1.0, t2_ps=500.0, pair_contrast_c0=0.7,
                     excitation_rate=1e-9),   # ~no pairs: reduction fails
            SweepRow(power_uw=2.0, t2_ps=600.0, pair_contrast_c0=0.8,
                     excitation_rate=8e-5),
        ))
        results = run_sweep(small_config, bad, seed=4)
        assert "error" in results[0]
        assert "error" not in results[1]
