"""fransonsim: time-tag simulator and correlation-analysis toolkit for
Franson interferometry on a resonantly driven quantum-dot cascade."""

from .analysis import (CHSH_VISIBILITY_THRESHOLD, BlinkingFit,
                       CoincidenceHistogram, VisibilityFit, chsh_check,
                       cross_histogram, fit_blinking_offset, fit_exponential,
                       fit_power_law, fit_visibility, g2_zero,
                       normalize_histogram, rebin_histogram,
                       visibility_vs_window, window_sum)
from .config import (AnalysisParams, ExperimentConfig, PowerSweepTable,
                     SweepRow, load_experiment_config, load_sweep_table)
from .emission import (EmitterConfig, PairEvent, blink_telegraph,
                       sample_pump_phase_increment, simulate_pair_stream)
from .errors import (ConfigError, FitConvergenceError, LockInstabilityError,
                     TagFormatError)
from .lock import (DriftModel, FringeSensorParams, LockTrace, PidGains,
                   PidState, fringe_sensor, pid_step, run_lock)
from .optics import (DetectorModel, UnbalancedMZI, apply_detector,
                     delay_difference, franson_route_and_detect,
                     michelson_fringe_scan)
from .physics import (CoherenceParams, DressedSpectrum, DriveParams,
                      QuantumDotParams, dressed_eigenvalues,
                      dressed_eigenvectors, dressed_line_positions,
                      fss_beat_period, g1_magnitude, pure_dephasing_rate)
from .pipeline import (FransonReport, FransonScanData, analyze_franson,
                       michelson_coherence_time, run_franson_scan, run_sweep,
                       scan_from_tags)
from .tagio import read_time_tags, write_time_tags

__version__ = "0.1.0"
