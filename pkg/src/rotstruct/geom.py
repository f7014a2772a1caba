"""Molecular point clouds, inertia/planar tensors, and principal-axis alignment.

Everything downstream (substitution analysis, diffusion, the GA, the metrics)
works on molecules expressed in their principal axis system: origin at the
mass-weighted center of mass, axes along the planar-dyadic eigenvectors. The
principal axes are only defined up to sign flips, so a deterministic sign
convention is applied (see :func:`sym_eig3`).

All computation is in 64-bit floats; the moment differences taken later by
the substitution analysis cancel many leading digits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COM_TOLERANCE = 1e-6  # A, for "positions are centered" preconditions
DEGENERACY_TOL = 1e-6  # amu A^2, minimum planar-moment gap for an asymmetric top
SYMMETRY_RTOL = 1e-10  # relative asymmetry accepted by sym_eig3
_JACOBI_GAP_RTOL = 1e-4  # relative eigenvalue spacing below which Jacobi is used


class ComNotZero(ValueError):
    """Positions were expected to be centered on the weighted CoM but are not."""


class NotSymmetric(ValueError):
    """Matrix handed to the symmetric eigensolver is not symmetric."""


class DegenerateTop(ValueError):
    """Planar moments too close for an asymmetric top; principal axes ill-defined."""


@dataclass(frozen=True)
class Molecule:
    """An ordered list of atoms: atomic numbers, masses (amu), positions (A)."""

    atomic_numbers: np.ndarray
    masses: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        z = np.array(self.atomic_numbers, dtype=np.int64)
        m = np.array(self.masses, dtype=np.float64)
        x = np.array(self.positions, dtype=np.float64)
        if z.ndim != 1 or z.size < 1:
            raise ValueError("need at least one atom")
        if m.shape != z.shape:
            raise ValueError("masses and atomic_numbers must have equal length")
        if x.shape != (z.size, 3):
            raise ValueError("positions must be N x 3")
        if np.any((z < 1) | (z > 118)):
            raise ValueError("atomic numbers must lie in 1..118")
        if not np.all(m > 0):
            raise ValueError("masses must be positive")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(x))):
            raise ValueError("masses and positions must be finite")
        object.__setattr__(self, "atomic_numbers", z)
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "positions", x)
        for arr in (z, m, x):
            arr.flags.writeable = False

    @property
    def n_atoms(self) -> int:
        return self.atomic_numbers.size

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def with_positions(self, positions: np.ndarray) -> "Molecule":
        return Molecule(self.atomic_numbers, self.masses, positions)


@dataclass(frozen=True)
class PlanarMoments:
    """Principal planar moments, descending: p_x >= p_y >= p_z >= 0 (amu A^2)."""

    p_x: float
    p_y: float
    p_z: float

    def __post_init__(self):
        if not (self.p_x >= self.p_y >= self.p_z >= 0.0):
            raise ValueError(
                f"planar moments must be descending and nonnegative, got "
                f"({self.p_x}, {self.p_y}, {self.p_z})"
            )

    def as_array(self) -> np.ndarray:
        return np.array([self.p_x, self.p_y, self.p_z])

    @property
    def total(self) -> float:
        return self.p_x + self.p_y + self.p_z


@dataclass(frozen=True)
class PasAlignment:
    """Result of moving a molecule into its principal axis system."""

    aligned_positions: np.ndarray
    rotation: np.ndarray  # 3x3, right-handed; applied as positions @ rotation
    planar_moments: PlanarMoments
    com_shift: np.ndarray  # the weighted CoM that was subtracted

    molecule: Molecule = field(repr=False, default=None)

    def aligned_molecule(self) -> Molecule:
        return self.molecule.with_positions(self.aligned_positions)


def weighted_com(mol: Molecule) -> np.ndarray:
    """Mass-weighted center of mass, (1/M) sum_i m_i x_i."""
    return mol.masses @ mol.positions / mol.total_mass


def _require_centered(mol: Molecule):
    com = weighted_com(mol)
    if np.linalg.norm(com) > COM_TOLERANCE:
        raise ComNotZero(
            f"weighted CoM has norm {np.linalg.norm(com):.3e} A; "
            f"center the molecule first"
        )


def planar_dyadic(mol: Molecule, *, check_com: bool = True) -> np.ndarray:
    """Second mass moment sum_i m_i x_i x_i^T about the origin.

    The caller must have centered the positions on the weighted CoM
    (checked to 1e-6 A unless ``check_com`` is disabled).
    """
    if check_com:
        _require_centered(mol)
    x = mol.positions
    return (mol.masses[:, None] * x).T @ x


def inertia_matrix(mol: Molecule, *, check_com: bool = True) -> np.ndarray:
    """Inertia tensor sum_i m_i (|x_i|^2 I - x_i x_i^T); equals tr(P) I - P."""
    p = planar_dyadic(mol, check_com=check_com)
    return np.trace(p) * np.eye(3) - p


def clamp_psd_eigenvalues(vals: np.ndarray) -> np.ndarray:
    """Zero out round-off-negative eigenvalues of a PSD matrix (planar molecules)."""
    vals = np.asarray(vals, dtype=np.float64)
    floor = -1e-8 * max(1.0, float(np.abs(vals).max()))
    if vals.min() < floor:
        raise ValueError(f"eigenvalues {vals} are negative beyond round-off")
    return np.maximum(vals, 0.0)


def _fix_eigenvector_signs(vals: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    # Flip each column so its largest-magnitude entry is positive; restore a
    # right-handed frame by flipping the third column if needed.
    vecs = vecs.copy()
    for k in range(3):
        i = int(np.argmax(np.abs(vecs[:, k])))
        if vecs[i, k] < 0:
            vecs[:, k] = -vecs[:, k]
    if np.linalg.det(vecs) < 0:
        vecs[:, 2] = -vecs[:, 2]
    return vecs


def _jacobi_eig3(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = m.copy()
    v = np.eye(3)
    for _ in range(64):
        off = np.sqrt(a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2)
        if off < 1e-15 * max(1.0, np.abs(np.diag(a)).max()):
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            if a[p, q] == 0.0:
                continue
            theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
            t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
            if theta == 0.0:
                t = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rot = np.eye(3)
            rot[p, p] = rot[q, q] = c
            rot[p, q] = s
            rot[q, p] = -s
            a = rot.T @ a @ rot
            v = v @ rot
    return np.diag(a).copy(), v


def _closed_form_eigenvalues(m: np.ndarray) -> np.ndarray:
    # Trigonometric solution of the characteristic cubic of a symmetric 3x3.
    p1 = m[0, 1] ** 2 + m[0, 2] ** 2 + m[1, 2] ** 2
    q = np.trace(m) / 3.0
    if p1 == 0.0:
        return np.sort(np.diag(m))[::-1].copy()
    p2 = ((m[0, 0] - q) ** 2 + (m[1, 1] - q) ** 2 + (m[2, 2] - q) ** 2) + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    b = (m - q * np.eye(3)) / p
    r = np.linalg.det(b) / 2.0
    r = min(1.0, max(-1.0, r))
    phi = np.arccos(r) / 3.0
    lam1 = q + 2.0 * p * np.cos(phi)
    lam3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    lam2 = 3.0 * q - lam1 - lam3
    return np.array([lam1, lam2, lam3])


def _null_direction(m: np.ndarray, lam: float) -> np.ndarray:
    # Row space of (m - lam I) is 2-dimensional for a simple eigenvalue; the
    # largest cross product of its rows spans the null space.
    a = m - lam * np.eye(3)
    crosses = [np.cross(a[i], a[j]) for i, j in ((0, 1), (0, 2), (1, 2))]
    norms = [np.linalg.norm(c) for c in crosses]
    best = int(np.argmax(norms))
    if norms[best] == 0.0:
        return np.zeros(3)
    return crosses[best] / norms[best]


def sym_eig3(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric 3x3 matrix.

    Returns (eigenvalues descending, eigenvector matrix with matching
    columns). The eigenvector matrix is orthogonal with determinant +1 and a
    deterministic sign convention (largest-magnitude component of each column
    positive). Uses the closed-form characteristic cubic, falling back to
    cyclic Jacobi rotations when eigenvalues are closely spaced.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise NotSymmetric("expected a 3x3 matrix")
    scale = max(1.0, np.abs(m).max())
    if np.abs(m - m.T).max() > SYMMETRY_RTOL * scale:
        raise NotSymmetric("matrix is not symmetric")
    m = 0.5 * (m + m.T)

    vals = _closed_form_eigenvalues(m)
    spread = max(vals[0] - vals[2], 1e-300)
    rel_gap = min(vals[0] - vals[1], vals[1] - vals[2]) / max(spread, 1e-300)
    use_jacobi = vals[0] == vals[2] or rel_gap < _JACOBI_GAP_RTOL

    if not use_jacobi:
        v1 = _null_direction(m, vals[0])
        v3 = _null_direction(m, vals[2])
        if np.linalg.norm(v1) == 0.0 or np.linalg.norm(v3) == 0.0:
            use_jacobi = True
        else:
            v3 = v3 - (v3 @ v1) * v1
            n3 = np.linalg.norm(v3)
            if n3 < 1e-8:
                use_jacobi = True
            else:
                v3 = v3 / n3
                v2 = np.cross(v3, v1)
                vecs = np.column_stack([v1, v2, v3])
                if np.abs(m @ vecs - vecs * vals).max() > 1e-11 * scale:
                    use_jacobi = True

    if use_jacobi:
        vals, vecs = _jacobi_eig3(m)
        order = np.argsort(vals)[::-1]
        vals = vals[order]
        vecs = vecs[:, order]

    vecs = _fix_eigenvector_signs(vals, vecs)
    return vals, vecs


def align_to_pas(mol: Molecule, degeneracy_tol: float = DEGENERACY_TOL) -> PasAlignment:
    """Translate to the weighted CoM and rotate onto the principal axes.

    After alignment the planar dyadic is diag(p_x, p_y, p_z) with strictly
    descending entries. Raises :class:`DegenerateTop` when the smallest
    planar-moment gap falls below ``degeneracy_tol`` (symmetric or spherical
    top: the substitution analysis is ill-posed there).

    Idempotent to the bit: an input already satisfying the alignment
    postconditions (CoM and off-diagonal residuals at round-off level) is
    passed through with the identity transform, so realigning an aligned
    molecule cannot drift.
    """
    scale = max(1.0, float(np.abs(mol.positions).max()))
    com = weighted_com(mol)
    if np.linalg.norm(com) <= 1e-12 * scale:
        com = np.zeros(3)
    centered = mol.positions - com
    p = (mol.masses[:, None] * centered).T @ centered

    diag = np.diag(p)
    off = max(abs(p[0, 1]), abs(p[0, 2]), abs(p[1, 2]))
    already_diagonal = (
        off <= 1e-12 * max(1.0, float(np.trace(p)))
        and diag[0] > diag[1] > diag[2]
    )
    if already_diagonal:
        vals, vecs = diag.copy(), np.eye(3)
        aligned = centered
    else:
        vals, vecs = sym_eig3(p)
        aligned = centered @ vecs
    vals = clamp_psd_eigenvalues(vals)
    if min(vals[0] - vals[1], vals[1] - vals[2]) < degeneracy_tol:
        raise DegenerateTop(
            f"planar moment gaps {vals[0] - vals[1]:.3e}, {vals[1] - vals[2]:.3e} "
            f"below tolerance {degeneracy_tol:.1e}"
        )
    pm = PlanarMoments(float(vals[0]), float(vals[1]), float(vals[2]))
    return PasAlignment(
        aligned_positions=aligned,
        rotation=vecs,
        planar_moments=pm,
        com_shift=com,
        molecule=mol,
    )
