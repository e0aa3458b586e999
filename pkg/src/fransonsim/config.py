"""Experiment configuration: TOML ingestion with field-path validation,
plus the CSV power-sweep table.

TOML keys mirror the dataclass field names and use the same units as the
types themselves (energies in eV, times in ps, rates in 1/ps, arm lengths
in m). Emitter decay rates are derived from the quantum-dot lifetimes, so
the file never states the same physics twice.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:                      # Python < 3.11
    import tomli as tomllib

from .emission import EmitterConfig
from .errors import ConfigError
from .optics import DetectorModel, UnbalancedMZI, delay_difference
from .physics import DriveParams, QuantumDotParams, validate_basis


@dataclass(frozen=True)
class AnalysisParams:
    """Defaults of the data-reduction chain (all times in ps)."""

    bin_width: float = 8.0
    window: tuple[float, float] = (8.0, 1200.0)
    window_grid: tuple[float, ...] = tuple(float(w) for w in range(100, 1300, 100))
    phases: tuple[float, ...] = tuple(3.0 * math.pi * k / 20 for k in range(21))
    central_range: float | None = None        # +- range of the peak histogram
    blink_fit_range: tuple[float, float] | None = None
    blink_rebin: int = 128
    blink_thin: float = 1.0                   # tag subsampling for the offset fit
    zero_window: tuple[float, float] = (-100.0, 100.0)

    def __post_init__(self):
        if self.bin_width <= 0:
            raise ConfigError(f"bin_width: must be > 0, got {self.bin_width}")
        if not self.window[0] < self.window[1]:
            raise ConfigError(f"window: must be increasing, got {self.window}")
        if len(self.phases) < 4:
            raise ConfigError(f"phases: need >= 4 points, got {len(self.phases)}")
        if not 0.0 < self.blink_thin <= 1.0:
            raise ConfigError(f"blink_thin: must be in (0, 1], got {self.blink_thin}")
        if self.blink_rebin < 1:
            raise ConfigError(f"blink_rebin: must be >= 1, got {self.blink_rebin}")


@dataclass(frozen=True)
class ExperimentConfig:
    qd: QuantumDotParams
    drive: DriveParams
    emitter: EmitterConfig
    mzi1: UnbalancedMZI
    mzi2: UnbalancedMZI
    det1: DetectorModel
    det2: DetectorModel
    basis: str = "horizontal"
    analysis: AnalysisParams = AnalysisParams()
    seed: int = 0

    def __post_init__(self):
        validate_basis(self.basis)

    @property
    def arm_delay(self) -> float:
        return delay_difference(self.mzi1)

    def central_range(self) -> float:
        width = self.analysis.bin_width
        if self.analysis.central_range is not None:
            raw = self.analysis.central_range
        else:
            raw = round(self.arm_delay) + 2000.0
        return float(math.ceil(raw / width) * width)

    def blink_fit_range(self) -> tuple[float, float]:
        if self.analysis.blink_fit_range is not None:
            return self.analysis.blink_fit_range
        lo = 3.0 * round(self.arm_delay)
        return (lo, max(50.0 * lo, lo + 2e5))


@dataclass(frozen=True)
class SweepRow:
    power_uw: float
    t2_ps: float
    pair_contrast_c0: float
    excitation_rate: float
    blink_off_rate: float = 0.0
    blink_on_rate: float = 0.0

    def __post_init__(self):
        if self.t2_ps <= 0:
            raise ConfigError(f"t2_ps: must be > 0, got {self.t2_ps}")
        if not 0.0 <= self.pair_contrast_c0 <= 1.0:
            raise ConfigError(
                f"pair_contrast_c0: must be in [0, 1], got {self.pair_contrast_c0}")
        for name in ("excitation_rate", "blink_off_rate", "blink_on_rate"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be >= 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class PowerSweepTable:
    rows: tuple[SweepRow, ...]

    def __post_init__(self):
        powers = [r.power_uw for r in self.rows]
        if not self.rows:
            raise ConfigError("rows: sweep table is empty")
        if any(b <= a for a, b in zip(powers, powers[1:])):
            raise ConfigError(
                f"power_uw: power labels must be strictly increasing, got {powers}")


def _build(cls, mapping: dict, path: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(mapping) - names
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown key")
    converted = {}
    for key, value in mapping.items():
        if isinstance(value, list):
            value = tuple(value)
        converted[key] = value
    try:
        return cls(**converted)
    except ConfigError as err:
        raise ConfigError(f"{path}.{err}") from None
    except TypeError as err:
        raise ConfigError(f"{path}: {err}") from None


def _section(doc: dict, name: str) -> dict:
    if name not in doc:
        raise ConfigError(f"{name}: missing section")
    if not isinstance(doc[name], dict):
        raise ConfigError(f"{name}: expected a table")
    return doc[name]


def experiment_config_from_dict(doc: dict) -> ExperimentConfig:
    qd = _build(QuantumDotParams, _section(doc, "quantum_dot"), "quantum_dot")
    drive = _build(DriveParams, _section(doc, "drive"), "drive")

    emitter_map = dict(_section(doc, "emitter"))
    for key in ("gamma_xx", "gamma_x"):
        if key in emitter_map:
            raise ConfigError(
                f"emitter.{key}: derived from quantum_dot lifetimes, do not set")
    emitter_map["gamma_xx"] = 1.0 / qd.t1_xx
    emitter_map["gamma_x"] = 1.0 / qd.t1_x
    emitter = _build(EmitterConfig, emitter_map, "emitter")

    mzi1 = _build(UnbalancedMZI, {"label": 1, **_section(doc, "mzi1")}, "mzi1")
    mzi2 = _build(UnbalancedMZI, {"label": 2, **_section(doc, "mzi2")}, "mzi2")
    det1 = _build(DetectorModel, _section(doc, "detector1"), "detector1")
    det2 = _build(DetectorModel, _section(doc, "detector2"), "detector2")
    analysis = _build(AnalysisParams, doc.get("analysis", {}), "analysis")

    known = {"quantum_dot", "drive", "emitter", "mzi1", "mzi2",
             "detector1", "detector2", "analysis", "basis", "seed"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown key")

    try:
        return ExperimentConfig(
            qd=qd, drive=drive, emitter=emitter, mzi1=mzi1, mzi2=mzi2,
            det1=det1, det2=det2, basis=doc.get("basis", "horizontal"),
            analysis=analysis, seed=int(doc.get("seed", 0)))
    except ConfigError:
        raise


def load_experiment_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"{path}: {err}") from None
    return experiment_config_from_dict(doc)


_SWEEP_COLUMNS = ("power_uw", "t2_ps", "pair_contrast_c0", "excitation_rate",
                  "blink_off_rate", "blink_on_rate")


def load_sweep_table(path) -> PowerSweepTable:
    """Read a power-sweep CSV. Header must name the SweepRow fields; the
    blink columns are optional and default to 0 (no blinking)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ConfigError(f"{path}: empty sweep table")
        header = [name.strip() for name in reader.fieldnames]
        unknown = set(header) - set(_SWEEP_COLUMNS)
        if unknown:
            raise ConfigError(f"{path}: unknown column {sorted(unknown)[0]!r}")
        for needed in _SWEEP_COLUMNS[:4]:
            if needed not in header:
                raise ConfigError(f"{path}: missing column {needed!r}")
        for k, record in enumerate(reader):
            try:
                values = {key.strip(): float(val) for key, val in record.items()
                          if val is not None and val.strip() != ""}
            except ValueError as err:
                raise ConfigError(f"{path}: row {k + 1}: {err}") from None
            rows.append(_build(SweepRow, values, f"row {k + 1}"))
    return PowerSweepTable(rows=tuple(rows))


def sweep_emitter(base: EmitterConfig, row: SweepRow, duration: float | None = None,
                  seed: int | None = None) -> EmitterConfig:
    """Emitter configuration for one sweep row (base values overridden)."""
    return dataclasses.replace(
        base,
        excitation_rate=row.excitation_rate,
        blink_off_rate=row.blink_off_rate,
        blink_on_rate=row.blink_on_rate,
        pair_contrast_c0=row.pair_contrast_c0,
        duration=base.duration if duration is None else duration,
        seed=base.seed if seed is None else seed)
