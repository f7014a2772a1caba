"""Physical constants and per-element data tables.

Masses are those of the most abundant isotope (AME2020, rounded to 1e-6 amu),
which is what the parent species of a rotational spectrum actually contains;
standard atomic weights would be wrong here. Covalent radii follow Cordero
et al. 2008. All positions are in angstrom, masses in amu, rotational
constants in MHz, planar/inertia moments in amu*A^2.
"""

from __future__ import annotations

import math

# CODATA 2018 exact values.
PLANCK_H = 6.62607015e-34  # J s
AMU_KG = 1.66053907e-27  # kg
ANGSTROM_M = 1e-10  # m

# Conversion between a rotational constant in MHz and its moment in amu*A^2:
# I = ROTATIONAL_KAPPA / B.  Numerically ~505379.01 MHz amu A^2.
ROTATIONAL_KAPPA = PLANCK_H / (8.0 * math.pi**2 * AMU_KG * ANGSTROM_M**2 * 1e6)

ELEMENT_SYMBOLS = {
    1: "H", 2: "He", 3: "Li", 4: "Be", 5: "B", 6: "C", 7: "N", 8: "O",
    9: "F", 10: "Ne", 11: "Na", 12: "Mg", 13: "Al", 14: "Si", 15: "P",
    16: "S", 17: "Cl", 18: "Ar", 19: "K", 20: "Ca", 22: "Ti", 24: "Cr",
    25: "Mn", 26: "Fe", 27: "Co", 28: "Ni", 29: "Cu", 30: "Zn", 31: "Ga",
    32: "Ge", 33: "As", 34: "Se", 35: "Br", 36: "Kr", 50: "Sn", 51: "Sb",
    52: "Te", 53: "I", 54: "Xe", 80: "Hg", 82: "Pb",
}

ATOMIC_NUMBERS = {sym: z for z, sym in ELEMENT_SYMBOLS.items()}

# Most-abundant-isotope masses in amu.
ELEMENT_MASSES = {
    1: 1.007825, 2: 4.002603, 3: 7.016003, 4: 9.012183, 5: 11.009305,
    6: 12.000000, 7: 14.003074, 8: 15.994915, 9: 18.998403, 10: 19.992440,
    11: 22.989769, 12: 23.985042, 13: 26.981538, 14: 27.976927,
    15: 30.973762, 16: 31.972071, 17: 34.968853, 18: 39.962383,
    19: 38.963706, 20: 39.962591, 22: 47.947942, 24: 51.940506,
    25: 54.938043, 26: 55.934936, 27: 58.933194, 28: 57.935342,
    29: 62.929597, 30: 63.929142, 31: 68.925574, 32: 73.921178,
    33: 74.921595, 34: 79.916522, 35: 78.918338, 36: 83.911498,
    50: 119.902202, 51: 120.903810, 52: 129.906223, 53: 126.904472,
    54: 131.904155, 80: 201.970643, 82: 207.976652,
}

# Elements whose minor isotopes are abundant enough for single-substitution
# spectra to be observable; everything else never contributes a substitution
# coordinate.
SUBSTITUTABLE_Z = frozenset({5, 6, 7, 8, 14, 16, 17, 35, 80})

# Mass change of the default single substitution for each substitutable
# element (minor-isotope mass minus parent-isotope mass, amu).
ISOTOPE_MASS_DELTA = {
    5: -0.996368,   # 11B -> 10B
    6: 1.003355,    # 12C -> 13C
    7: 0.997035,    # 14N -> 15N
    8: 2.004246,    # 16O -> 18O
    14: 0.999568,   # 28Si -> 29Si
    16: 1.995796,   # 32S -> 34S
    17: 1.997050,   # 35Cl -> 37Cl
    35: 1.997954,   # 79Br -> 81Br
    80: -2.002317,  # 202Hg -> 200Hg
}

# Single-bond covalent radii in angstrom (sp3 value for carbon).
COVALENT_RADII = {
    1: 0.31, 2: 0.28, 3: 1.28, 4: 0.96, 5: 0.84, 6: 0.76, 7: 0.71,
    8: 0.66, 9: 0.57, 10: 0.58, 11: 1.66, 12: 1.41, 13: 1.21, 14: 1.11,
    15: 1.07, 16: 1.05, 17: 1.02, 18: 1.06, 19: 2.03, 20: 1.76,
    22: 1.60, 24: 1.39, 25: 1.39, 26: 1.32, 27: 1.26, 28: 1.24,
    29: 1.32, 30: 1.22, 31: 1.22, 32: 1.20, 33: 1.19, 34: 1.20,
    35: 1.20, 36: 1.16, 50: 1.39, 51: 1.39, 52: 1.38, 53: 1.39,
    54: 1.40, 80: 1.32, 82: 1.46,
}

# Slack added to the sum of covalent radii when perceiving bonds, and the
# separation below which two atoms are treated as overlapping instead.
BOND_TOLERANCE = 0.40
OVERLAP_DISTANCE = 0.40

STANDARD_VALENCES = {
    1: 1, 5: 3, 6: 4, 7: 3, 8: 2, 9: 1, 14: 4, 15: 3, 16: 2, 17: 1,
    35: 1, 53: 1,
}


def symbol_for(z: int) -> str:
    """Element symbol for atomic number ``z`` (falls back to ``Z<n>``)."""
    return ELEMENT_SYMBOLS.get(z, f"Z{z}")


def mass_for(z: int) -> float:
    """Most-abundant-isotope mass for atomic number ``z``."""
    try:
        return ELEMENT_MASSES[z]
    except KeyError:
        raise KeyError(f"no mass tabulated for atomic number {z}") from None
