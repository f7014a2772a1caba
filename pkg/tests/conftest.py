import numpy as np
import pytest

from rotstruct.constants import ELEMENT_MASSES
from rotstruct.geom import DegenerateTop, Molecule, align_to_pas


@pytest.fixture
def asym3():
    """Pre-centered 3-atom asymmetric molecule with unit masses."""
    return Molecule(
        [6, 8, 7],
        [1.0, 1.0, 1.0],
        [[1.2, 0.3, 0.0], [-0.8, 0.5, 0.4], [-0.4, -0.8, -0.4]],
    )


def random_rigid_molecule(rng, n_atoms, *, spread=1.5, min_gap=1e-3):
    """Random point cloud with real element masses, PAS-aligned.

    Pure rigid-body test input: no chemistry intended. Retries until the
    planar moments are comfortably nondegenerate.
    """
    elements = np.array([1, 6, 7, 8, 16, 17])
    while True:
        z = rng.choice(elements, size=n_atoms)
        masses = np.array([ELEMENT_MASSES[int(v)] for v in z])
        pos = spread * rng.standard_normal((n_atoms, 3))
        try:
            pas = align_to_pas(Molecule(z, masses, pos), degeneracy_tol=min_gap)
        except DegenerateTop:
            continue
        return pas.aligned_molecule(), pas.planar_moments


def random_rotation(rng):
    """Haar-ish random rotation via QR with positive diagonal."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
