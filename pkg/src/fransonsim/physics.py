"""Closed-form emitter physics: dressed states of the driven three-level
system, coherence/dephasing relations and fine-structure beat models.

Energies are in eV, times in ps, rates in 1/ps throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import PLANCK_EV_PS
from .errors import ConfigError

#: Recognized polarization bases for detection.
POLARIZATION_BASES = ("horizontal", "vertical", "diagonal", "antidiagonal")

#: Bases in which the exciton fine structure produces correlation beats.
BEATING_BASES = ("diagonal", "antidiagonal")


def validate_basis(basis: str) -> str:
    if basis not in POLARIZATION_BASES:
        raise ConfigError(
            f"basis: must be one of {POLARIZATION_BASES}, got {basis!r}")
    return basis


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


@dataclass(frozen=True)
class QuantumDotParams:
    """Static emitter parameters.

    e_x / e_xx are the exciton and biexciton photon energies; their
    difference is the biexciton binding energy. fss is the fine-structure
    splitting of the exciton doublet; t1_x / t1_xx are the radiative
    lifetimes of the two transitions.
    """

    e_x: float            # eV
    e_xx: float           # eV
    fss: float            # eV
    t1_x: float           # ps
    t1_xx: float          # ps

    def __post_init__(self):
        _require(self.e_x > self.e_xx, "e_x: must exceed e_xx")
        _require(self.fss >= 0, f"fss: must be >= 0, got {self.fss}")
        _require(self.t1_x > 0, f"t1_x: must be > 0, got {self.t1_x}")
        _require(self.t1_xx > 0, f"t1_xx: must be > 0, got {self.t1_xx}")

    @property
    def binding_energy(self) -> float:
        """Biexciton binding energy e_x - e_xx (eV), always positive."""
        return self.e_x - self.e_xx


@dataclass(frozen=True)
class DriveParams:
    """Continuous-wave two-photon drive."""

    rabi_energy: float           # hbar*Omega, eV
    pump_coherence_time: float   # ps
    power_label: float = 0.0     # nominal excitation power in uW, metadata only

    def __post_init__(self):
        _require(self.rabi_energy >= 0,
                 f"rabi_energy: must be >= 0, got {self.rabi_energy}")
        _require(self.pump_coherence_time > 0,
                 f"pump_coherence_time: must be > 0, got {self.pump_coherence_time}")


@dataclass(frozen=True)
class CoherenceParams:
    """First-order coherence time and the pure-dephasing rate it implies."""

    t2: float                    # ps
    pure_dephasing_rate: float   # 1/ps

    def __post_init__(self):
        _require(self.t2 > 0, f"t2: must be > 0, got {self.t2}")
        _require(self.pure_dephasing_rate >= 0,
                 f"pure_dephasing_rate: must be >= 0, got {self.pure_dephasing_rate}")


@dataclass(frozen=True)
class DressedSpectrum:
    """Eigensystem of the laser-coupled three-level manifold.

    Vectors are expressed in the ordered basis (ground, vertical exciton,
    biexciton) and are unit-norm and mutually orthogonal.
    """

    e0: float
    e_minus: float
    e_plus: float
    v0: np.ndarray = field(repr=False)
    v_plus: np.ndarray = field(repr=False)
    v_minus: np.ndarray = field(repr=False)

    def __post_init__(self):
        vecs = np.stack([self.v0, self.v_plus, self.v_minus])
        gram = vecs @ vecs.T
        if not np.allclose(gram, np.eye(3), atol=1e-12):
            raise ConfigError("dressed eigenvectors are not orthonormal")
        if self.e0 != 0.0:
            raise ConfigError(f"e0: must be exactly 0, got {self.e0}")
        if not (self.e_plus <= self.e0 <= self.e_minus):
            raise ConfigError("eigenvalue ordering violated: expected "
                              f"e_plus <= 0 <= e_minus, got ({self.e_plus}, {self.e_minus})")


def coupling_hamiltonian(binding_energy: float, rabi_energy: float) -> np.ndarray:
    """3x3 Hamiltonian of the two-photon-resonant drive in the
    (ground, vertical exciton, biexciton) basis.

    This matrix is the label-fixing authority for the closed-form
    eigensystem below: eigenvalue/eigenvector pairing follows its
    numerical diagonalization.
    """
    half = 0.5 * rabi_energy
    return np.array([
        [0.0, half, 0.0],
        [half, -0.5 * binding_energy, half],
        [0.0, half, 0.0],
    ])


def dressed_eigenvalues(binding_energy: float, rabi_energy: float) -> tuple[float, float, float]:
    """Closed-form eigenvalues (e0, e_minus, e_plus) in eV.

    e0 is exactly zero; e_minus >= 0 >= e_plus for any drive strength.

    Raises
    ------
    ValueError
        If both inputs are zero (all-zero spectrum is ambiguous).
    """
    if binding_energy == 0.0 and rabi_energy == 0.0:
        raise ValueError("degenerate input: binding_energy and rabi_energy are both zero")
    root = math.sqrt(binding_energy**2 + 8.0 * rabi_energy**2)
    e_plus = -0.25 * (binding_energy + root)
    # Rationalized form of -(binding - root)/4: avoids cancellation for
    # binding >> rabi and keeps e_plus * e_minus = -rabi^2/2 exact, which
    # the eigenvector orthogonality relies on.
    e_minus = 2.0 * rabi_energy**2 / (binding_energy + root)
    return 0.0, e_minus, e_plus


def dressed_eigenvectors(binding_energy: float, rabi_energy: float) -> DressedSpectrum:
    """Full dressed eigensystem with unit-norm, mutually orthogonal vectors.

    v0 is (-1, 0, 1)/sqrt(2); v_plus / v_minus carry middle components
    2*E/(rabi_energy) of their own eigenvalue, normalization
    1/sqrt(2 + 4 (E/rabi_energy)^2).

    Raises
    ------
    ValueError
        If rabi_energy is zero (middle components are undefined).
    """
    if rabi_energy <= 0.0:
        raise ValueError("rabi_energy must be > 0 for dressed eigenvectors")
    e0, e_minus, e_plus = dressed_eigenvalues(binding_energy, rabi_energy)
    v0 = np.array([-1.0, 0.0, 1.0]) / math.sqrt(2.0)

    def branch(energy: float) -> np.ndarray:
        mid = 2.0 * energy / rabi_energy
        vec = np.array([1.0, mid, 1.0])
        return vec / math.sqrt(2.0 + 4.0 * (energy / rabi_energy) ** 2)

    return DressedSpectrum(e0=e0, e_minus=e_minus, e_plus=e_plus,
                           v0=v0, v_plus=branch(e_plus), v_minus=branch(e_minus))


def dressed_line_positions(qd: QuantumDotParams, drive: DriveParams) -> np.ndarray:
    """All pairwise eigenvalue differences E_i - E_j (i != j), sorted.

    These are the offsets at which the bare exciton and biexciton lines
    split under the drive. The extreme values +-(e_minus - e_plus) grow
    monotonically with drive strength; all offsets involving e0 collapse
    toward {0, +-binding_energy/2} as the drive is turned off.
    """
    e0, e_minus, e_plus = dressed_eigenvalues(qd.binding_energy, drive.rabi_energy)
    levels = (e0, e_minus, e_plus)
    offsets = [a - b for i, a in enumerate(levels)
               for j, b in enumerate(levels) if i != j]
    return np.sort(np.asarray(offsets))


def pure_dephasing_rate(t1: float, t2: float) -> float:
    """Pure-dephasing rate gamma* = 1/t2 - 1/(2 t1), in 1/ps.

    t2 must not exceed the Fourier limit 2*t1; equality means a
    transform-limited line and returns exactly 0.
    """
    if t1 <= 0 or t2 <= 0:
        raise ValueError(f"lifetimes must be positive, got t1={t1}, t2={t2}")
    if t2 > 2.0 * t1:
        raise ValueError(
            f"t2={t2} ps exceeds the Fourier limit 2*t1={2 * t1} ps")
    if t2 == 2.0 * t1:
        return 0.0
    return 1.0 / t2 - 1.0 / (2.0 * t1)


def fss_beat_period(fss: float) -> float:
    """Beat period h/fss in ps for a fine-structure splitting in eV."""
    if fss <= 0:
        raise ValueError(f"fss must be > 0, got {fss}")
    return PLANCK_EV_PS / fss


def g1_magnitude(tau, t2: float, fss: float, basis: str):
    """|g1(tau)| of the emission line in the given detection basis.

    Rectilinear bases see a plain exponential decay exp(-|tau|/t2).
    Diagonal bases see the equal-weight fine-structure doublet, i.e. the
    same envelope times |cos(pi * fss * tau / h)|.

    Accepts scalar or array tau (ps); returns the same shape in [0, 1].
    """
    validate_basis(basis)
    if t2 <= 0:
        raise ValueError(f"t2 must be > 0, got {t2}")
    tau = np.asarray(tau, dtype=float)
    envelope = np.exp(-np.abs(tau) / t2)
    if basis in BEATING_BASES:
        envelope = envelope * np.abs(np.cos(np.pi * fss * tau / PLANCK_EV_PS))
    if envelope.ndim == 0:
        return float(envelope)
    return envelope
