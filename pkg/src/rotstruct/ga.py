"""Evolutionary search over heavy-atom frameworks.

Each candidate is a vector of per-axis signs for atoms with measured
unsigned coordinates plus free continuous coordinates for everything the
measurements leave open (atoms with no observation, and masked components of
partially observed atoms). Fitness is a badness score, lower is better:
disagreement with the parent planar moments, distance of the weighted CoM
from the origin, and the negative log-likelihood of the pairwise heavy-atom
distances under a histogram estimated from a training corpus.

A sign-enumeration oracle covers small fully-constrained instances exactly;
hydrogens are attached afterwards by a simple geometric scheme and scored
separately.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import ELEMENT_MASSES, STANDARD_VALENCES
from .geom import PlanarMoments
from .kraitchman import SubstitutionTable

SMOOTHING = 1e-6  # additive mass per histogram bin
FREE_INIT_SIGMA = 2.0  # A, spread of initial free coordinates
UPPER_TRI = ([0, 0, 0, 1, 1, 2], [0, 1, 2, 1, 2, 2])


class EmptyCorpus(ValueError):
    """No molecule with at least two heavy atoms to build a histogram from."""


class DimensionMismatch(ValueError):
    """Candidate does not fit the instance's constrained/free layout."""


class TooLarge(ValueError):
    """Sign enumeration would exceed the arrangement budget."""


class HasFreeAtoms(ValueError):
    """Sign enumeration requires every coordinate to be constrained."""


class NegativeHydrogenCount(ValueError):
    """Formula implies fewer atoms than the heavy framework already has."""


@dataclass(frozen=True)
class DistanceHistogram:
    """Smoothed histogram density of heavy-atom pair distances."""

    bin_width: float
    counts: np.ndarray
    log_probs: np.ndarray = field(default=None)
    floor_log_prob: float = field(default=None)

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.float64)
        if self.bin_width <= 0 or counts.ndim != 1 or counts.size == 0:
            raise ValueError("need a positive bin width and at least one bin")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        smoothed = counts + SMOOTHING
        probs = smoothed / (smoothed.sum() * self.bin_width)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "log_probs", np.log(probs))
        object.__setattr__(
            self,
            "floor_log_prob",
            float(np.log(SMOOTHING / (smoothed.sum() * self.bin_width))),
        )
        counts.flags.writeable = False
        self.log_probs.flags.writeable = False

    def log_prob(self, d: np.ndarray) -> np.ndarray:
        """Log density per distance; out-of-range gets the smoothing floor."""
        d = np.asarray(d, dtype=np.float64)
        idx = np.floor(d / self.bin_width).astype(np.int64)
        inside = (idx >= 0) & (idx < self.log_probs.size)
        out = np.full(d.shape, self.floor_log_prob)
        out[inside] = self.log_probs[idx[inside]]
        return out

    def to_dict(self) -> dict:
        return {"bin_width": self.bin_width, "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "DistanceHistogram":
        return cls(bin_width=float(data["bin_width"]), counts=data["counts"])


def build_histogram(mols, bin_width: float = 0.05) -> DistanceHistogram:
    """Histogram of all heavy-atom pair distances over a corpus of molecules."""
    dists = []
    for mol in mols:
        heavy = mol.positions[mol.atomic_numbers > 1]
        for i in range(len(heavy)):
            for j in range(i + 1, len(heavy)):
                dists.append(float(np.linalg.norm(heavy[i] - heavy[j])))
    if not dists:
        raise EmptyCorpus("corpus contains no heavy-atom pairs")
    d_max = max(dists) + bin_width
    n_bins = int(np.ceil(d_max / bin_width))
    counts, _ = np.histogram(dists, bins=n_bins, range=(0.0, n_bins * bin_width))
    return DistanceHistogram(bin_width=bin_width, counts=counts.astype(float))


@dataclass(frozen=True)
class GaInstance:
    """One search problem: heavy atoms, their constraints, target moments."""

    elements: np.ndarray  # atomic numbers of the heavy atoms
    masses: np.ndarray
    table: SubstitutionTable  # heavy-atom rows only
    moments: PlanarMoments

    def __post_init__(self):
        z = np.asarray(self.elements, dtype=np.int64)
        m = np.asarray(self.masses, dtype=np.float64)
        if not (len(z) == len(m) == self.table.n_atoms) or len(z) < 1:
            raise ValueError("elements, masses and table rows must agree")
        object.__setattr__(self, "elements", z)
        object.__setattr__(self, "masses", m)

    @property
    def constrained(self) -> np.ndarray:
        """Atoms with at least one measured coordinate."""
        return self.table.mask.any(axis=1)

    @property
    def n_signs(self) -> int:
        return int(self.constrained.sum()) * 3

    @property
    def n_free(self) -> int:
        """Free scalar coordinates: all masked entries, whole rows included."""
        return int((self.table.mask == 0.0).sum())


@dataclass(frozen=True)
class Candidate:
    """Signs for constrained atoms (k x 3) plus flat free coordinates."""

    signs: np.ndarray
    free_positions: np.ndarray


def realize_population(
    instance: GaInstance, signs: np.ndarray, free: np.ndarray
) -> np.ndarray:
    """Positions (P, N, 3) from stacked sign blocks and free coordinates.

    Measured entries get sign * |value|; every masked entry is filled from
    the free vector (an unmeasured coordinate is unknown, not zero).
    """
    pop = signs.shape[0]
    n = instance.table.n_atoms
    constrained = instance.constrained
    k = int(constrained.sum())
    if signs.shape[1:] != (k, 3) or free.shape != (pop, instance.n_free):
        raise DimensionMismatch(
            f"expected signs (P, {k}, 3) and free (P, {instance.n_free})"
        )
    x = np.zeros((pop, n, 3))
    x[:, constrained, :] = signs * instance.table.values[constrained]
    x[:, instance.table.mask == 0.0] = free
    return x


def fitness_components(
    instance: GaInstance, x: np.ndarray, hist: DistanceHistogram
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(moment_error, com_error, pairwise_nll) for positions (P, N, 3)."""
    m = instance.masses
    target = np.diag(instance.moments.as_array())[UPPER_TRI]
    dyadic = np.einsum("n,pni,pnj->pij", m, x, x)
    moment_err = np.linalg.norm(dyadic[:, UPPER_TRI[0], UPPER_TRI[1]] - target, axis=1)
    com_err = np.linalg.norm(np.einsum("n,pnk->pk", m, x) / m.sum(), axis=1)
    n = x.shape[1]
    if n >= 2:
        iu, ju = np.triu_indices(n, k=1)
        d = np.linalg.norm(x[:, iu, :] - x[:, ju, :], axis=2)
        nll = -hist.log_prob(d).sum(axis=1)
    else:
        nll = np.zeros(x.shape[0])
    return moment_err, com_err, nll


def fitness(
    c: Candidate,
    table: SubstitutionTable,
    pm: PlanarMoments,
    heavy_masses: np.ndarray,
    hist: DistanceHistogram,
    *,
    elements: np.ndarray | None = None,
) -> float:
    """Badness of one candidate; lower is better."""
    if elements is None:
        elements = np.full(table.n_atoms, 6)
    instance = GaInstance(elements=elements, masses=heavy_masses, table=table, moments=pm)
    x = realize_population(
        instance, c.signs[None, ...], np.asarray(c.free_positions, dtype=float)[None, ...]
    )
    me, ce, nll = fitness_components(instance, x, hist)
    return float(me[0] + ce[0] + nll[0])


@dataclass(frozen=True)
class GaConfig:
    generations: int = 20
    population: int = 20000
    mutation_rate: float = 0.7
    crossover_rate: float = 0.9
    tournament_size: int = 3
    position_sigma: float = 0.3
    decoration_repeats: int = 1000

    def __post_init__(self):
        if min(self.generations, self.population, self.tournament_size) < 1:
            raise ValueError("generations, population, tournament_size must be >= 1")
        if not (0 <= self.mutation_rate <= 1 and 0 <= self.crossover_rate <= 1):
            raise ValueError("rates must lie in [0, 1]")
        if self.position_sigma <= 0 or self.decoration_repeats < 1:
            raise ValueError("position_sigma and decoration_repeats must be positive")


@dataclass(frozen=True)
class Framework:
    """A realized heavy-atom arrangement with its badness breakdown."""

    signs: np.ndarray
    positions: np.ndarray
    badness: float
    moment_error: float
    com_error: float
    pairwise_nll: float


def _top_unique(
    instance, signs, free, badness, parts, k_best
) -> list[Framework]:
    order = np.argsort(badness, kind="stable")
    seen: set[bytes] = set()
    out: list[Framework] = []
    x = realize_population(instance, signs, free)
    for i in order:
        key = signs[i].astype(np.int8).tobytes()
        if key in seen:
            continue
        seen.add(key)
        out.append(
            Framework(
                signs=signs[i].copy(),
                positions=x[i].copy(),
                badness=float(badness[i]),
                moment_error=float(parts[0][i]),
                com_error=float(parts[1][i]),
                pairwise_nll=float(parts[2][i]),
            )
        )
        if len(out) == k_best:
            break
    return out


def evolve(
    instance: GaInstance,
    cfg: GaConfig,
    hist: DistanceHistogram,
    rng: np.random.Generator,
    *,
    k_best: int = 10,
) -> list[Framework]:
    """Generational GA; returns the best frameworks deduplicated by signs.

    Tournament selection, one-point crossover over the flattened sign string
    (free coordinates pass through untouched), per-bit sign flips plus
    Gaussian jitter of the free coordinates for mutation, and single-member
    elitism so the best badness never regresses.
    """
    k = int(instance.constrained.sum())
    pop = cfg.population
    signs = rng.choice([-1.0, 1.0], size=(pop, k, 3))
    free = FREE_INIT_SIGMA * rng.standard_normal((pop, instance.n_free))

    def evaluate(s, f):
        parts = fitness_components(instance, realize_population(instance, s, f), hist)
        return parts[0] + parts[1] + parts[2], parts

    badness, parts = evaluate(signs, free)
    n_bits = max(3 * k, 1)
    for _ in range(cfg.generations):
        elite = int(np.argmin(badness))
        elite_entry = (
            signs[elite].copy(),
            free[elite].copy(),
            float(badness[elite]),
            tuple(float(p[elite]) for p in parts),
        )

        picks = rng.integers(pop, size=(pop, cfg.tournament_size))
        winners = picks[np.arange(pop), np.argmin(badness[picks], axis=1)]
        signs = signs[winners].copy()
        free = free[winners].copy()

        if k > 0:
            flat = signs.reshape(pop, -1)
            for a in range(0, pop - 1, 2):
                if rng.uniform() < cfg.crossover_rate and flat.shape[1] > 1:
                    cut = int(rng.integers(1, flat.shape[1]))
                    tail = flat[a, cut:].copy()
                    flat[a, cut:] = flat[a + 1, cut:]
                    flat[a + 1, cut:] = tail
            signs = flat.reshape(pop, k, 3)

        mutate = rng.uniform(size=pop) < cfg.mutation_rate
        if k > 0 and mutate.any():
            flips = rng.uniform(size=(pop, k, 3)) < (1.0 / n_bits)
            forced = rng.integers(n_bits, size=pop)
            flips.reshape(pop, -1)[np.arange(pop), forced] = True
            flips &= mutate[:, None, None]
            signs = np.where(flips, -signs, signs)
        if instance.n_free and mutate.any():
            jitter = cfg.position_sigma * rng.standard_normal((pop, instance.n_free))
            free = free + jitter * mutate[:, None]

        badness, parts = evaluate(signs, free)
        if elite_entry[2] < badness.min():
            worst = int(np.argmax(badness))
            signs[worst], free[worst] = elite_entry[0], elite_entry[1]
            badness[worst] = elite_entry[2]
            for arr, val in zip(parts, elite_entry[3]):
                arr[worst] = val
    return _top_unique(instance, signs, free, badness, parts, k_best)


def brute_force_signs(
    instance: GaInstance,
    hist: DistanceHistogram | None = None,
    *,
    max_arrangements: int = 10**7,
) -> Framework:
    """Exact minimizer over all sign arrangements of a fully constrained instance.

    The first atom's signs are pinned to (+, +, +): a global axial reflection
    maps arrangements onto each other, so only 8^(m-1) are distinct. Ranking
    ignores the corpus likelihood; ties break on the moment error alone.
    """
    if instance.n_free:
        raise HasFreeAtoms("sign enumeration needs every coordinate measured")
    m = instance.table.n_atoms
    if 8 ** (m - 1) > max_arrangements:
        raise TooLarge(f"8^{m - 1} arrangements exceed the {max_arrangements} budget")
    n_arr = 8 ** (m - 1)
    octants = np.array(
        [[sx, sy, sz] for sx in (1.0, -1.0) for sy in (1.0, -1.0) for sz in (1.0, -1.0)]
    )
    idx = np.arange(n_arr)
    signs = np.empty((n_arr, m, 3))
    signs[:, 0, :] = 1.0
    rest = idx[:, None] // (8 ** np.arange(m - 1)[None, :]) % 8
    signs[:, 1:, :] = octants[rest]
    x = realize_population(instance, signs, np.zeros((n_arr, 0)))
    dummy = hist if hist is not None else DistanceHistogram(1.0, np.ones(1))
    me, ce, nll = fitness_components(instance, x, dummy)
    score = me + ce
    best = int(np.lexsort((me, score))[0])
    return Framework(
        signs=signs[best].copy(),
        positions=x[best].copy(),
        badness=float(score[best]),
        moment_error=float(me[best]),
        com_error=float(ce[best]),
        pairwise_nll=float(nll[best]) if hist is not None else 0.0,
    )


# -- hydrogen decoration -------------------------------------------------------

H_BOND_LENGTH = 1.09  # A
CLASH_DISTANCE = 1.09  # A, penalty onset
_SPHERE_POINTS = 48


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + np.sqrt(5.0)) * i
    return np.column_stack(
        [np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)]
    )


def _hydrogen_quota(elements: np.ndarray, positions: np.ndarray, n_h: int) -> np.ndarray:
    """Greedy split of the hydrogen budget by leftover valence."""
    from .evaluate import perceive_bonds
    from .geom import Molecule

    mol = Molecule(elements, np.ones(len(elements)), positions)
    degree = perceive_bonds(mol).adjacency.sum(axis=1)
    capacity = np.array(
        [max(0, STANDARD_VALENCES.get(int(z), 4) - int(d)) for z, d in zip(elements, degree)]
    )
    quota = np.zeros(len(elements), dtype=np.int64)
    remaining = n_h
    while remaining > 0:
        open_slots = capacity - quota
        if open_slots.max() > 0:
            target = int(np.argmax(open_slots))
        else:
            target = int(np.argmin(quota))
        quota[target] += 1
        remaining -= 1
    return quota


def _place_on_atom(
    center: np.ndarray,
    neighbor_dirs: list[np.ndarray],
    count: int,
    rng: np.random.Generator,
    jitter: float,
) -> list[np.ndarray]:
    sphere = _fibonacci_sphere(_SPHERE_POINTS)
    placed: list[np.ndarray] = []
    dirs = [d.copy() for d in neighbor_dirs]
    for _ in range(count):
        if dirs:
            existing = np.stack(dirs)
            scores = (sphere @ existing.T).max(axis=1)  # max cosine = min angle
            base = sphere[int(np.argmin(scores))]
        else:
            base = sphere[int(rng.integers(_SPHERE_POINTS))]
        direction = base + jitter * rng.standard_normal(3)
        direction = direction / np.linalg.norm(direction)
        placed.append(center + H_BOND_LENGTH * direction)
        dirs.append(direction)
    return placed


def decoration_score(
    elements: np.ndarray,
    positions: np.ndarray,
    *,
    literal_clash: bool = False,
) -> float:
    """CoM distance plus the short-contact penalty of a decorated structure.

    The penalty activates when the minimum pairwise distance drops below
    1.09 A. ``literal_clash`` swaps in min(0, 1.09 - d_min)^2, which fires on
    well-separated structures instead; kept only for comparison.
    """
    masses = np.array([ELEMENT_MASSES[int(z)] for z in elements])
    com = np.linalg.norm(masses @ positions / masses.sum())
    n = len(elements)
    if n >= 2:
        iu, ju = np.triu_indices(n, k=1)
        d_min = float(np.linalg.norm(positions[iu] - positions[ju], axis=1).min())
    else:
        d_min = np.inf
    gap = CLASH_DISTANCE - d_min
    clash = min(0.0, gap) ** 2 if literal_clash else max(0.0, gap) ** 2
    return float(com + 1000.0 * clash)


def decorate_hydrogens(
    elements: np.ndarray,
    positions: np.ndarray,
    n_hydrogens: int,
    cfg: GaConfig,
    rng: np.random.Generator,
    *,
    literal_clash: bool = False,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Attach hydrogens to a heavy framework; returns (elements, positions, score).

    Each heavy atom receives hydrogens up to its leftover valence, placed at
    1.09 A along the direction farthest in angle from its existing bonds,
    with per-repeat angular jitter. The best of ``decoration_repeats``
    attempts by :func:`decoration_score` wins.
    """
    elements = np.asarray(elements, dtype=np.int64)
    positions = np.asarray(positions, dtype=np.float64)
    if n_hydrogens < 0:
        raise NegativeHydrogenCount(f"cannot place {n_hydrogens} hydrogens")
    if n_hydrogens == 0:
        score = decoration_score(elements, positions, literal_clash=literal_clash)
        return elements, positions, score

    quota = _hydrogen_quota(elements, positions, n_hydrogens)
    from .evaluate import perceive_bonds
    from .geom import Molecule

    adjacency = perceive_bonds(
        Molecule(elements, np.ones(len(elements)), positions)
    ).adjacency
    neighbor_dirs: list[list[np.ndarray]] = []
    for i in range(len(elements)):
        dirs = []
        for j in np.flatnonzero(adjacency[i]):
            d = positions[j] - positions[i]
            norm = np.linalg.norm(d)
            if norm > 0:
                dirs.append(d / norm)
        neighbor_dirs.append(dirs)

    best = None
    for _ in range(cfg.decoration_repeats):
        h_positions = []
        for i in np.flatnonzero(quota):
            h_positions.extend(
                _place_on_atom(positions[i], neighbor_dirs[i], int(quota[i]), rng, 0.15)
            )
        full_elements = np.concatenate([elements, np.ones(n_hydrogens, dtype=np.int64)])
        full_positions = np.vstack([positions, np.array(h_positions)])
        score = decoration_score(full_elements, full_positions, literal_clash=literal_clash)
        if best is None or score < best[2]:
            best = (full_elements, full_positions, score)
    return best
