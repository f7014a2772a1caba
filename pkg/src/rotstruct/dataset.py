"""Synthetic desk-scale molecules for training and evaluation runs.

Generates heavy-atom frameworks as random spatial trees with bond lengths in
the single-bond range and enough clearance that covalent-radius bond
perception recovers exactly the generative tree. Every emitted molecule is
an asymmetric top, aligned to its principal axis system.
"""

from __future__ import annotations

import numpy as np

from .constants import ATOMIC_NUMBERS, mass_for
from .geom import DegenerateTop, Molecule, align_to_pas

BOND_LENGTH = 1.45  # A, typical heavy-atom single bond
BOND_JITTER = 0.08
MIN_NONBOND_DIST = 2.1  # A, beyond the ~1.9 A perception cutoff for C/N/O
DEFAULT_ELEMENTS = ("C", "N", "O")


def _grow_tree(
    n_atoms: int, rng: np.random.Generator, max_tries: int = 200
) -> np.ndarray | None:
    pos = np.zeros((n_atoms, 3))
    for i in range(1, n_atoms):
        parent = int(rng.integers(i))
        for _ in range(max_tries):
            direction = rng.standard_normal(3)
            direction /= np.linalg.norm(direction)
            length = BOND_LENGTH + BOND_JITTER * rng.uniform(-1.0, 1.0)
            candidate = pos[parent] + length * direction
            dists = np.linalg.norm(pos[:i] - candidate, axis=1)
            others = np.delete(dists, parent)
            if dists[parent] > 1.2 and (others.size == 0 or others.min() > MIN_NONBOND_DIST):
                pos[i] = candidate
                break
        else:
            return None
    return pos


def random_molecule(
    rng: np.random.Generator,
    n_atoms: int = 5,
    elements: tuple[str, ...] = DEFAULT_ELEMENTS,
    *,
    moment_gap: float = 0.5,
) -> Molecule:
    """One random asymmetric-top molecule, PAS-aligned.

    ``moment_gap`` (amu A^2) is the minimum planar-moment separation
    accepted, keeping the substitution analysis far from degeneracy.
    """
    if n_atoms < 3:
        raise ValueError("need at least 3 atoms for an asymmetric top")
    z_choices = [ATOMIC_NUMBERS[e] for e in elements]
    for _ in range(500):
        pos = _grow_tree(n_atoms, rng)
        if pos is None:
            continue
        numbers = rng.choice(z_choices, size=n_atoms)
        masses = [mass_for(int(z)) for z in numbers]
        mol = Molecule(numbers, masses, pos)
        try:
            pas = align_to_pas(mol, degeneracy_tol=moment_gap)
        except DegenerateTop:
            continue
        return pas.aligned_molecule()
    raise RuntimeError("could not generate a valid molecule; relax the constraints")


def random_dataset(
    rng: np.random.Generator,
    count: int,
    n_atoms: int = 5,
    elements: tuple[str, ...] = DEFAULT_ELEMENTS,
) -> list[Molecule]:
    return [random_molecule(rng, n_atoms, elements) for _ in range(count)]
