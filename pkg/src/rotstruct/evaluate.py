"""Metrics for predicted structures.

Connectivity correctness asks whether prediction and truth induce isomorphic
element-labeled bond graphs under a covalent-radius bond rule; enantiomers
and diastereomers deliberately pass. Geometric agreement is the all-atom
RMSD minimized jointly over the 8 axial reflections and the atom assignment
(atom order is not preserved by a permutation-invariant generator), with the
assignment restricted to atoms of the same element.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import BOND_TOLERANCE, COVALENT_RADII, OVERLAP_DISTANCE
from .geom import Molecule
from .kraitchman import SubstitutionTable

FORBIDDEN = np.inf  # sentinel cost for disallowed assignment pairs

REFLECTIONS = tuple(
    (sx, sy, sz) for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)
)


class Infeasible(ValueError):
    """No assignment avoids the forbidden entries."""


class ElementMismatch(ValueError):
    """Structures do not share the same multiset of elements."""


@dataclass(frozen=True)
class BondGraph:
    """Symmetric adjacency with element labels; overlaps listed separately."""

    adjacency: np.ndarray
    elements: np.ndarray
    overlaps: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        a = np.asarray(self.adjacency)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("adjacency must be square")
        if np.any(a != a.T) or np.any(np.diag(a)):
            raise ValueError("adjacency must be symmetric with no self-bonds")

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]


@dataclass(frozen=True)
class MatchReport:
    rmsd: float
    reflection: tuple[int, int, int]
    assignment: np.ndarray  # prediction atom i corresponds to truth atom assignment[i]
    connectivity_correct: bool
    heavy_connectivity_correct: bool


def perceive_bonds(mol: Molecule) -> BondGraph:
    """Bond i-j iff distance < r_cov(i) + r_cov(j) + 0.40 A.

    Pairs closer than 0.40 A are physically overlapping atoms: they are not
    bonded but reported in ``overlaps``.
    """
    n = mol.n_atoms
    radii = np.array([COVALENT_RADII.get(int(z), 1.5) for z in mol.atomic_numbers])
    diff = mol.positions[:, None, :] - mol.positions[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    cutoff = radii[:, None] + radii[None, :] + BOND_TOLERANCE
    adjacency = (dist < cutoff) & (dist >= OVERLAP_DISTANCE)
    np.fill_diagonal(adjacency, False)
    iu, ju = np.triu_indices(n, k=1)
    close = dist[iu, ju] < OVERLAP_DISTANCE
    overlaps = tuple((int(i), int(j)) for i, j in zip(iu[close], ju[close]))
    return BondGraph(
        adjacency=adjacency.astype(np.int8),
        elements=mol.atomic_numbers.copy(),
        overlaps=overlaps,
    )


def _wl_colors(adjacency: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Weisfeiler-Leman color refinement to stabilization."""
    palette: dict[tuple, int] = {}
    colors = np.array([palette.setdefault((int(l),), len(palette)) for l in labels])
    neighbors = [np.flatnonzero(adjacency[i]) for i in range(len(labels))]
    n_classes = len(palette)
    for _ in range(len(labels)):
        signatures = [
            (int(colors[i]), tuple(sorted(int(colors[j]) for j in neighbors[i])))
            for i in range(len(labels))
        ]
        palette = {}
        colors = np.array([palette.setdefault(sig, len(palette)) for sig in signatures])
        if len(palette) == n_classes:
            break  # refinement only splits classes, so equal count means stable
        n_classes = len(palette)
    return colors


def _joint_wl(g1: BondGraph, g2: BondGraph) -> tuple[np.ndarray, np.ndarray]:
    """Refine both graphs with one shared palette so colors are comparable."""
    n1 = g1.n_nodes
    n = n1 + g2.n_nodes
    adjacency = np.zeros((n, n), dtype=np.int8)
    adjacency[:n1, :n1] = g1.adjacency
    adjacency[n1:, n1:] = g2.adjacency
    labels = np.concatenate([g1.elements, g2.elements])
    colors = _wl_colors(adjacency, labels)
    return colors[:n1], colors[n1:]


def _find_isomorphism(
    g1: BondGraph, g2: BondGraph, c1: np.ndarray, c2: np.ndarray
) -> bool:
    """Backtracking search seeded by WL color classes."""
    n = g1.n_nodes
    order = sorted(range(n), key=lambda i: (np.count_nonzero(c2 == c1[i]), i))
    mapping = np.full(n, -1)
    used = np.zeros(g2.n_nodes, dtype=bool)

    def extend(k: int) -> bool:
        if k == n:
            return True
        i = order[k]
        for j in np.flatnonzero((c2 == c1[i]) & ~used):
            ok = True
            for prev in order[:k]:
                if g1.adjacency[i, prev] != g2.adjacency[j, mapping[prev]]:
                    ok = False
                    break
            if ok:
                mapping[i] = j
                used[j] = True
                if extend(k + 1):
                    return True
                mapping[i] = -1
                used[j] = False
        return False

    return extend(0)


def _strip_hydrogens(mol: Molecule) -> Molecule:
    heavy = mol.atomic_numbers > 1
    if not heavy.any():
        raise ValueError("structure has no heavy atoms")
    return Molecule(
        mol.atomic_numbers[heavy], mol.masses[heavy], mol.positions[heavy]
    )


def connectivity_correct(pred: Molecule, truth: Molecule, heavy_only: bool = False) -> bool:
    """True iff the element-labeled bond graphs are isomorphic."""
    if heavy_only:
        pred, truth = _strip_hydrogens(pred), _strip_hydrogens(truth)
    if sorted(pred.atomic_numbers) != sorted(truth.atomic_numbers):
        return False
    g1, g2 = perceive_bonds(pred), perceive_bonds(truth)
    if g1.adjacency.sum() != g2.adjacency.sum():
        return False
    c1, c2 = _joint_wl(g1, g2)
    if sorted(c1) != sorted(c2):
        return False
    return _find_isomorphism(g1, g2, c1, c2)


def hungarian(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimum-cost perfect assignment of a square matrix in O(n^3).

    Shortest-augmenting-path algorithm with row/column potentials. Entries
    equal to ``FORBIDDEN`` (infinity) are never assigned; if no feasible
    perfect assignment exists, raises :class:`Infeasible`. Returns
    (assignment, total_cost) where row i is matched to column assignment[i].
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1] or cost.shape[0] < 1:
        raise ValueError("cost must be a nonempty square matrix")
    if np.any(np.isnan(cost)):
        raise ValueError("cost must not contain NaN")
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    col_to_row = np.full(n + 1, n, dtype=np.int64)  # index n = virtual/unmatched
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        col_to_row[n] = i
        j0 = n
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_to_row[j0]
            free = ~used[:n]
            reduced = cost[i0, :n] - u[i0] - v[:n]
            better = free & (reduced < minv[:n])
            minv[:n][better] = reduced[better]
            way[:n][better] = j0
            candidates = np.where(free, minv[:n], np.inf)
            j1 = int(np.argmin(candidates))
            delta = candidates[j1]
            if not np.isfinite(delta):
                raise Infeasible("no assignment avoids forbidden entries")
            u[col_to_row[used]] += delta
            v[used] -= delta
            minv[:n][free] -= delta
            j0 = j1
            if col_to_row[j0] == n:
                break
        while j0 != n:
            j1 = int(way[j0])
            col_to_row[j0] = col_to_row[j1]
            j0 = j1
    assignment = np.empty(n, dtype=np.int64)
    assignment[col_to_row[:n]] = np.arange(n)
    total = float(cost[np.arange(n), assignment].sum())
    return assignment, total


def min_rmsd_over_reflections(pred: Molecule, truth: Molecule) -> MatchReport:
    """All-atom RMSD minimized over axial reflections and same-element assignment.

    Both structures must already sit in their principal axis systems; the 8
    reflections absorb the axis-sign ambiguity and no further rotation is
    applied. Cross-element matches are forbidden.
    """
    if sorted(pred.atomic_numbers) != sorted(truth.atomic_numbers):
        raise ElementMismatch("structures must share the same element multiset")
    n = pred.n_atoms
    same = pred.atomic_numbers[:, None] == truth.atomic_numbers[None, :]
    best: MatchReport | None = None
    for refl in REFLECTIONS:
        mirrored = pred.positions * np.array(refl, dtype=np.float64)
        diff = mirrored[:, None, :] - truth.positions[None, :, :]
        cost = np.einsum("ijk,ijk->ij", diff, diff)
        cost[~same] = FORBIDDEN
        assignment, total = hungarian(cost)
        rmsd = float(np.sqrt(total / n))
        if best is None or rmsd < best.rmsd:
            best = MatchReport(
                rmsd=rmsd,
                reflection=refl,
                assignment=assignment,
                connectivity_correct=False,
                heavy_connectivity_correct=False,
            )
    return MatchReport(
        rmsd=best.rmsd,
        reflection=best.reflection,
        assignment=best.assignment,
        connectivity_correct=connectivity_correct(pred, truth),
        heavy_connectivity_correct=connectivity_correct(pred, truth, heavy_only=True),
    )


def rank_by_deviation(
    samples: list[Molecule], table: SubstitutionTable, *, norm: str = "l1"
) -> tuple[np.ndarray, np.ndarray]:
    """Order samples by agreement with the measured unsigned coordinates.

    Score is the mean absolute (or squared, ``norm="l2"``) difference between
    each sample's |positions| and the table, over unmasked entries only; an
    empty mask scores everything 0. Sorting is stable, so ties keep their
    original order. Returns (indices ascending by score, matching scores).
    """
    if norm not in ("l1", "l2"):
        raise ValueError("norm must be 'l1' or 'l2'")
    mask = table.mask
    count = mask.sum()
    scores = np.empty(len(samples))
    for idx, sample in enumerate(samples):
        if sample.n_atoms != table.n_atoms:
            raise ValueError(
                f"sample {idx} has {sample.n_atoms} atoms, table expects {table.n_atoms}"
            )
        if count == 0:
            scores[idx] = 0.0
            continue
        dev = np.abs(np.abs(sample.positions) - table.values) * mask
        scores[idx] = (dev**2).sum() / count if norm == "l2" else dev.sum() / count
    order = np.argsort(scores, kind="stable")
    return order, scores[order]
