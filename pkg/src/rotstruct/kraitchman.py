"""Isotopic substitution analysis.

Forward direction: perturb one atom's mass, recenter, and rediagonalize to
get the isotopologue's planar moments. Inverse direction: recover the
unsigned principal-axis coordinates of the substituted atom from the parent
and isotopologue moments. The inverse is exact for a rigid structure; a
negative radicand (numerically tiny, or genuinely imaginary for vibrating
experimental molecules near an axis) yields a null coordinate.

Also builds the masked unsigned-coordinate tables used as model conditioning,
including the training-time dropout that mimics unobserved isotopologues.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import ISOTOPE_MASS_DELTA, ROTATIONAL_KAPPA, SUBSTITUTABLE_Z
from .geom import (
    DEGENERACY_TOL,
    Molecule,
    PlanarMoments,
    clamp_psd_eigenvalues,
    sym_eig3,
)

RADICAND_TOL = 1e-9  # negative radicands above -tol are cancellation noise


class NonPhysicalMoments(ValueError):
    """Planar moments imply a nonpositive moment of inertia."""


class DegenerateParent(ValueError):
    """Parent planar moments too close together for substitution analysis."""


class NonPositiveMass(ValueError):
    """Isotopic substitution would produce a nonpositive atomic mass."""


@dataclass(frozen=True)
class RotationalConstants:
    """Rotational constants in MHz, strictly ordered a > b > c."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if not (self.a > self.b > self.c > 0.0):
            raise ValueError(
                f"constants must satisfy a > b > c > 0, got "
                f"({self.a}, {self.b}, {self.c}) MHz"
            )


@dataclass(frozen=True)
class IsotopologueObservation:
    """One singly-substituted species: which element, mass change, constants."""

    substituted_element: int
    mass_delta: float
    constants: RotationalConstants

    def __post_init__(self):
        if self.mass_delta == 0.0:
            raise ValueError("mass_delta must be nonzero")


@dataclass(frozen=True)
class SubstitutionTable:
    """Unsigned coordinates (N x 3, A) with an availability mask.

    ``values`` is zero wherever ``mask`` is zero; a masked entry means the
    coordinate is unknown (unobserved isotopologue or imaginary radicand),
    not that it is zero.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        s = np.array(self.mask, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape != s.shape:
            raise ValueError("values and mask must both be N x 3")
        if not np.all((s == 0.0) | (s == 1.0)):
            raise ValueError("mask must be binary")
        if np.any(v < 0.0):
            raise ValueError("unsigned coordinates must be nonnegative")
        if np.any(v[s == 0.0] != 0.0):
            raise ValueError("values must be zero where mask is zero")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mask", s)
        v.flags.writeable = False
        s.flags.writeable = False

    @property
    def n_atoms(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class DropoutConfig:
    """Training-time coordinate dropout.

    A rate p is drawn once per table from [p_min, p_max] and whole atom rows
    are dropped with probability p (one undetected isotopologue loses all
    three coordinates at once). ``near_axis_threshold`` additionally masks
    individual entries smaller than the given magnitude, mimicking
    zero-point losses near a principal axis; 0 disables it.
    """

    p_min: float = 0.0
    p_max: float = 0.0
    carbon_only: bool = False
    near_axis_threshold: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.p_min <= self.p_max <= 1.0):
            raise ValueError("need 0 <= p_min <= p_max <= 1")
        if self.near_axis_threshold < 0.0:
            raise ValueError("near_axis_threshold must be nonnegative")


def constants_to_planar_moments(rc: RotationalConstants) -> PlanarMoments:
    """Convert rotational constants (MHz) to planar moments (amu A^2).

    A round-off-negative p_z (exactly planar molecule) is clamped to zero;
    genuinely negative planar moments raise.
    """
    i = ROTATIONAL_KAPPA / np.array([rc.a, rc.b, rc.c])
    half_trace = 0.5 * i.sum()
    p = clamp_psd_eigenvalues(half_trace - i)
    return PlanarMoments(float(p[0]), float(p[1]), float(p[2]))


def planar_moments_to_constants(pm: PlanarMoments) -> RotationalConstants:
    """Inverse conversion; the implied moments of inertia must be positive."""
    p = pm.as_array()
    i = p.sum() - p  # I_x = p_y + p_z, cyclically
    if np.any(i <= 0.0):
        raise NonPhysicalMoments(f"implied inertia moments {i} must be positive")
    a, b, c = ROTATIONAL_KAPPA / i
    return RotationalConstants(float(a), float(b), float(c))


def simulate_isotopologue(
    mol_in_pas: Molecule, atom_index: int, mass_delta: float
) -> PlanarMoments:
    """Planar moments after substituting one atom's mass.

    The input must be aligned to its principal axis system. The substituted
    molecule is recentered on its own weighted CoM and its planar dyadic
    rediagonalized, exactly as the measured isotopologue spectrum would be.
    """
    n = mol_in_pas.n_atoms
    if not 0 <= atom_index < n:
        raise IndexError(f"atom index {atom_index} out of range for {n} atoms")
    masses = mol_in_pas.masses.copy()
    masses[atom_index] += mass_delta
    if masses[atom_index] <= 0.0:
        raise NonPositiveMass(
            f"substituted mass {masses[atom_index]} amu is not positive"
        )
    x = mol_in_pas.positions
    com = masses @ x / masses.sum()
    centered = x - com
    dyadic = (masses[:, None] * centered).T @ centered
    vals, _ = sym_eig3(dyadic)
    vals = clamp_psd_eigenvalues(vals)
    return PlanarMoments(float(vals[0]), float(vals[1]), float(vals[2]))


def substitution_coordinates_raw(
    parent: tuple[float, float, float] | np.ndarray,
    iso: tuple[float, float, float] | np.ndarray,
    total_mass: float,
    mass_delta: float,
    *,
    radicand_tol: float = RADICAND_TOL,
) -> tuple[float | None, float | None, float | None]:
    """Unsigned substitution coordinates from raw moment triples.

    No ordering is assumed beyond nonvanishing parent gaps; the coordinate
    for each axis is obtained from the others by cyclic permutation. A
    radicand below ``-radicand_tol`` gives None for that axis; small negative
    values are clamped to zero.
    """
    p = np.asarray(parent, dtype=np.float64)
    q = np.asarray(iso, dtype=np.float64)
    inv_mu = (total_mass + mass_delta) / (total_mass * mass_delta)
    out: list[float | None] = []
    for k in range(3):
        l, m = (k + 1) % 3, (k + 2) % 3
        numer = (q[k] - p[k]) * (q[l] - p[k]) * (q[m] - p[k])
        denom = (p[l] - p[k]) * (p[m] - p[k])
        radicand = inv_mu * numer / denom
        if radicand < -radicand_tol:
            out.append(None)
        else:
            out.append(float(np.sqrt(max(radicand, 0.0))))
    return out[0], out[1], out[2]


def kraitchman_coordinates(
    parent: PlanarMoments,
    iso: PlanarMoments,
    total_mass: float,
    mass_delta: float,
    *,
    radicand_tol: float = RADICAND_TOL,
    degeneracy_tol: float = DEGENERACY_TOL,
) -> tuple[float | None, float | None, float | None]:
    """Unsigned (|x|, |y|, |z|) of the substituted atom, or None where imaginary."""
    if total_mass <= 0.0:
        raise ValueError("total_mass must be positive")
    if mass_delta == 0.0:
        raise ValueError("mass_delta must be nonzero")
    p = parent.as_array()
    if min(p[0] - p[1], p[1] - p[2]) < degeneracy_tol:
        raise DegenerateParent(
            f"parent moment gaps {p[0] - p[1]:.3e}, {p[1] - p[2]:.3e} below "
            f"tolerance {degeneracy_tol:.1e}"
        )
    return substitution_coordinates_raw(
        p, iso.as_array(), total_mass, mass_delta, radicand_tol=radicand_tol
    )


def substitutable_atoms(mol: Molecule, *, carbon_only: bool = False) -> np.ndarray:
    """Boolean mask of atoms whose element has a usable natural minor isotope."""
    z = mol.atomic_numbers
    if carbon_only:
        return z == 6
    return np.isin(z, list(SUBSTITUTABLE_Z))


def default_mass_delta(z: int) -> float:
    """Mass change of the default substitution for element ``z``."""
    try:
        return ISOTOPE_MASS_DELTA[z]
    except KeyError:
        raise KeyError(f"element {z} has no naturally observable substitution") from None


def build_substitution_table(
    mol_in_pas: Molecule, cfg: DropoutConfig, rng: np.random.Generator
) -> SubstitutionTable:
    """Masked unsigned-coordinate table for a PAS-aligned molecule.

    Rows for elements outside the substitutable set are always masked. A
    dropout rate p ~ U[p_min, p_max] is drawn once, then each remaining row
    survives with probability 1 - p. Row i survival is decided by comparing
    one uniform draw against p, so for a fixed seed the surviving rows at a
    higher rate are always a subset of those at a lower rate.
    """
    n = mol_in_pas.n_atoms
    eligible = substitutable_atoms(mol_in_pas, carbon_only=cfg.carbon_only)
    p = float(rng.uniform(cfg.p_min, cfg.p_max))
    draws = rng.uniform(size=n)
    keep_row = eligible & (draws >= p)
    mask = np.repeat(keep_row[:, None], 3, axis=1).astype(np.float64)
    if cfg.near_axis_threshold > 0.0:
        mask[np.abs(mol_in_pas.positions) < cfg.near_axis_threshold] = 0.0
    values = mask * np.abs(mol_in_pas.positions)
    return SubstitutionTable(values=values, mask=mask)


def table_from_observations(
    mol_in_pas: Molecule,
    parent: PlanarMoments,
    observations: list[tuple[int, PlanarMoments, float]],
) -> SubstitutionTable:
    """Assemble a table from (atom_index, isotopologue moments, mass_delta) triples.

    Null coordinates become masked entries; atoms without an observation get
    all-zero rows.
    """
    n = mol_in_pas.n_atoms
    values = np.zeros((n, 3))
    mask = np.zeros((n, 3))
    total = mol_in_pas.total_mass
    for idx, iso, delta in observations:
        coords = kraitchman_coordinates(parent, iso, total, delta)
        for k, c in enumerate(coords):
            if c is not None:
                values[idx, k] = c
                mask[idx, k] = 1.0
    return SubstitutionTable(values=values, mask=mask)
