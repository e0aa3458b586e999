"""Physical constants pinned for reproducibility (CODATA-2018 exact values)."""

PLANCK_EV_S = 4.135667696e-15   # Planck constant, eV * s
PLANCK_EV_PS = 4.135667696e-3   # Planck constant, eV * ps
SPEED_OF_LIGHT_M_S = 2.99792458e8

PS_PER_S = 1e12
S_PER_PS = 1e-12
