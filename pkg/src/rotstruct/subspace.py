"""The mass-weighted zero-CoM subspace.

Configurations whose weighted center of mass sits at the origin form a
3(N-1)-dimensional linear subspace. The diffusion process lives entirely
inside it, which requires exactly two primitives: the orthogonal projection
onto the subspace, and isotropic Gaussian sampling pushed through that
projection. For nonuniform masses the orthogonal projection is *not* the
same as subtracting the weighted CoM from every row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Below this relative CoM magnitude an input is treated as already projected
# and returned untouched, which makes the projection idempotent to the bit.
_SNAP_RTOL = 1e-13


@dataclass(frozen=True)
class MassWeights:
    """Normalized masses (summing to 1) with their cached squared norm."""

    normalized_masses: np.ndarray
    squared_norm: float

    def __post_init__(self):
        m = np.array(self.normalized_masses, dtype=np.float64)
        if m.ndim != 1 or m.size < 1:
            raise ValueError("normalized_masses must be a nonempty vector")
        if np.any(m <= 0.0):
            raise ValueError("normalized masses must be positive")
        if abs(m.sum() - 1.0) > 1e-12:
            raise ValueError("normalized masses must sum to 1")
        if abs(self.squared_norm - float(m @ m)) > 1e-12:
            raise ValueError("cached squared_norm disagrees with the masses")
        object.__setattr__(self, "normalized_masses", m)
        m.flags.writeable = False

    @classmethod
    def from_masses(cls, masses: np.ndarray) -> "MassWeights":
        m = np.asarray(masses, dtype=np.float64)
        m = m / m.sum()
        return cls(normalized_masses=m, squared_norm=float(m @ m))

    @property
    def n_atoms(self) -> int:
        return self.normalized_masses.size


def weighted_com_rows(x: np.ndarray, w: MassWeights) -> np.ndarray:
    """CoM of each (..., N, 3) configuration under the normalized masses."""
    return np.einsum("n,...nk->...k", w.normalized_masses, x)


def project_zero_com(x: np.ndarray, w: MassWeights) -> np.ndarray:
    """Orthogonal projection of (..., N, 3) configurations onto the subspace.

    Closed form: x - m (m^T x) / |m|^2 with m the normalized masses, i.e. the
    CoM is removed along the mass direction rather than uniformly. Inputs
    whose CoM is already at round-off level are returned unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-2] != w.n_atoms:
        raise ValueError(
            f"configuration has {x.shape[-2]} rows but weights expect {w.n_atoms}"
        )
    com = weighted_com_rows(x, w)
    scale = float(np.abs(x).max()) if x.size else 0.0
    if np.abs(com).max() <= _SNAP_RTOL * max(1.0, scale):
        return x
    m = w.normalized_masses
    return x - m[..., :, None] * (com[..., None, :] / w.squared_norm)


def sample_projected_gaussian(
    n: int, w: MassWeights, rng: np.random.Generator, *, shape_prefix: tuple = ()
) -> np.ndarray:
    """Standard normal draw on (..., n, 3), orthogonally projected onto the subspace.

    The result is N(0, P) with P the subspace projector: exactly the
    distribution obtained by sampling an isotropic Gaussian inside the
    subspace itself.
    """
    if n != w.n_atoms:
        raise ValueError(f"requested {n} rows but weights expect {w.n_atoms}")
    eps = rng.standard_normal(shape_prefix + (n, 3))
    return project_zero_com(eps, w)
