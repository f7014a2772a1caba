"""File formats: XYZ geometry, observation JSON, and model checkpoints.

Observation files carry explicit units in their field names (MHz, amu,
angstrom); unit mix-ups are the classic failure mode of spectroscopy
tooling. Checkpoints store every tensor as base64 little-endian float64
inside a versioned JSON envelope, so a save/load round trip is bit exact and
the metadata stays human-diffable.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constants import ATOMIC_NUMBERS, mass_for, symbol_for
from .geom import Molecule, PlanarMoments, align_to_pas
from .kraitchman import (
    IsotopologueObservation,
    RotationalConstants,
    SubstitutionTable,
    constants_to_planar_moments,
    default_mass_delta,
    planar_moments_to_constants,
    substitutable_atoms,
    substitution_coordinates_raw,
)

OBSERVATION_FORMAT = "rotstruct-observation-v1"
CHECKPOINT_FORMAT = 1
XYZ_DECIMALS = 8


class ParseError(ValueError):
    """Malformed XYZ text; carries the 1-based offending line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnknownElement(ValueError):
    """Element symbol not present in the element table."""


class SchemaError(ValueError):
    """Observation or checkpoint JSON violates the documented schema."""


# -- XYZ -----------------------------------------------------------------------


def parse_xyz(text: str) -> Molecule:
    """Parse standard XYZ: count line, comment line, then 'El x y z' rows."""
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError(1, "missing atom count")
    try:
        count = int(lines[0].strip())
    except ValueError:
        raise ParseError(1, f"bad atom count {lines[0].strip()!r}") from None
    rows = [
        (i + 1, line) for i, line in enumerate(lines[2:], start=2) if line.strip()
    ]
    if len(rows) < count:
        raise ParseError(1, f"count says {count} atoms but found {len(rows)}")
    if len(rows) > count:
        raise ParseError(rows[count][0], "more atom rows than the count line says")
    numbers, masses, positions = [], [], []
    for lineno, line in rows:
        parts = line.split()
        if len(parts) < 4:
            raise ParseError(lineno, f"expected 'El x y z', got {line.strip()!r}")
        symbol = parts[0].capitalize()
        if symbol not in ATOMIC_NUMBERS:
            raise UnknownElement(f"line {lineno}: unknown element {parts[0]!r}")
        z = ATOMIC_NUMBERS[symbol]
        try:
            xyz = [float(p) for p in parts[1:4]]
        except ValueError:
            raise ParseError(lineno, f"bad coordinate in {line.strip()!r}") from None
        numbers.append(z)
        masses.append(mass_for(z))
        positions.append(xyz)
    return Molecule(numbers, masses, positions)


def format_xyz(mol: Molecule, comment: str = "") -> str:
    lines = [str(mol.n_atoms), comment]
    for z, pos in zip(mol.atomic_numbers, mol.positions):
        lines.append(
            f"{symbol_for(int(z)):<2} "
            + " ".join(f"{c:.{XYZ_DECIMALS}f}" for c in pos)
        )
    return "\n".join(lines) + "\n"


def read_xyz(path) -> Molecule:
    return parse_xyz(Path(path).read_text())


def write_xyz(path, mol: Molecule, comment: str = ""):
    Path(path).write_text(format_xyz(mol, comment))


# -- observation files -----------------------------------------------------------


@dataclass(frozen=True)
class Observation:
    """Parsed observation: atoms in canonical order plus the constraint set.

    Canonical atom order is heavy elements in formula order (each element's
    atoms consecutive), hydrogens last. Isotopologue records claim atoms of
    their element in file order. This fixes the row order of the table and of
    any conditioning built from it.
    """

    formula: dict[str, int]
    atomic_numbers: np.ndarray
    masses: np.ndarray
    planar_moments: PlanarMoments
    table: SubstitutionTable
    parent_constants: RotationalConstants
    isotopologues: tuple[IsotopologueObservation, ...]

    @property
    def n_atoms(self) -> int:
        return self.atomic_numbers.size

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())


def canonical_permutation(atomic_numbers: np.ndarray, formula: dict[str, int]) -> np.ndarray:
    """Indices reordering an atom list into the canonical observation order.

    ``atoms[perm]`` groups atoms by element following the formula's key order
    (hydrogens last), preserving relative order inside each element, which is
    exactly how observation rows are laid out.
    """
    z = np.asarray(atomic_numbers)
    perm: list[int] = []
    for symbol in formula:
        if symbol == "H":
            continue
        perm.extend(np.flatnonzero(z == ATOMIC_NUMBERS[symbol]).tolist())
    perm.extend(np.flatnonzero(z == 1).tolist())
    if len(perm) != z.size:
        raise SchemaError("formula does not cover every atom")
    return np.array(perm, dtype=np.int64)


def canonical_atoms(formula: dict[str, int]) -> tuple[np.ndarray, np.ndarray]:
    """(atomic_numbers, masses) in canonical order for a formula."""
    numbers: list[int] = []
    for symbol, count in formula.items():
        if symbol == "H":
            continue
        if symbol not in ATOMIC_NUMBERS:
            raise UnknownElement(f"unknown element {symbol!r} in formula")
        if int(count) < 1:
            raise SchemaError(f"formula count for {symbol} must be >= 1")
        numbers.extend([ATOMIC_NUMBERS[symbol]] * int(count))
    numbers.extend([1] * int(formula.get("H", 0)))
    if not numbers:
        raise SchemaError("formula is empty")
    z = np.array(numbers, dtype=np.int64)
    masses = np.array([mass_for(int(n)) for n in z])
    return z, masses


def _constants_from_dict(d: dict, where: str) -> RotationalConstants:
    try:
        return RotationalConstants(float(d["a"]), float(d["b"]), float(d["c"]))
    except KeyError as exc:
        raise SchemaError(f"{where}: missing constant {exc}") from None
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from None


def observation_to_dict(
    formula: dict[str, int],
    parent: RotationalConstants,
    isotopologues: list[IsotopologueObservation],
) -> dict:
    return {
        "format": OBSERVATION_FORMAT,
        "formula": {k: int(v) for k, v in formula.items()},
        "parent_constants_mhz": {"a": parent.a, "b": parent.b, "c": parent.c},
        "isotopologues": [
            {
                "element": symbol_for(iso.substituted_element),
                "mass_delta_amu": iso.mass_delta,
                "constants_mhz": {
                    "a": iso.constants.a,
                    "b": iso.constants.b,
                    "c": iso.constants.c,
                },
            }
            for iso in isotopologues
        ],
    }


def parse_observation(data: dict) -> Observation:
    """Validate an observation dict and derive moments plus the coordinate table."""
    if data.get("format") != OBSERVATION_FORMAT:
        raise SchemaError(f"expected format {OBSERVATION_FORMAT!r}")
    formula = data.get("formula")
    if not isinstance(formula, dict) or not formula:
        raise SchemaError("formula must be a nonempty element->count map")
    z, masses = canonical_atoms(formula)
    parent = _constants_from_dict(data.get("parent_constants_mhz", {}), "parent")
    parent_pm = constants_to_planar_moments(parent)
    total_mass = float(masses.sum())

    isotopologues: list[IsotopologueObservation] = []
    n = z.size
    values = np.zeros((n, 3))
    mask = np.zeros((n, 3))
    next_slot: dict[int, int] = {}
    for k, record in enumerate(data.get("isotopologues", [])):
        where = f"isotopologue {k}"
        symbol = record.get("element")
        if symbol not in ATOMIC_NUMBERS:
            raise SchemaError(f"{where}: unknown element {symbol!r}")
        elem = ATOMIC_NUMBERS[symbol]
        try:
            delta = float(record["mass_delta_amu"])
        except KeyError:
            raise SchemaError(f"{where}: missing mass_delta_amu") from None
        constants = _constants_from_dict(record.get("constants_mhz", {}), where)
        iso = IsotopologueObservation(
            substituted_element=elem, mass_delta=delta, constants=constants
        )
        isotopologues.append(iso)

        slots = np.flatnonzero(z == elem)
        used = next_slot.get(elem, 0)
        if used >= slots.size:
            raise SchemaError(
                f"{where}: more {symbol} isotopologues than formula atoms"
            )
        row = int(slots[used])
        next_slot[elem] = used + 1
        iso_pm = constants_to_planar_moments(constants)
        coords = substitution_coordinates_raw(
            parent_pm.as_array(), iso_pm.as_array(), total_mass, delta
        )
        for axis, value in enumerate(coords):
            if value is not None:
                values[row, axis] = value
                mask[row, axis] = 1.0

    return Observation(
        formula={k: int(v) for k, v in formula.items()},
        atomic_numbers=z,
        masses=masses,
        planar_moments=parent_pm,
        table=SubstitutionTable(values=values, mask=mask),
        parent_constants=parent,
        isotopologues=tuple(isotopologues),
    )


def load_observation(path) -> Observation:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from None
    return parse_observation(data)


def save_observation(path, data: dict):
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


def simulate_observation(
    mol_in_pas: Molecule,
    *,
    noise: float = 0.0,
    rng: np.random.Generator | None = None,
) -> dict:
    """Observation dict for a PAS-aligned molecule.

    Emits the parent constants and one default-isotope substitution per
    naturally substitutable atom, in atom order. ``noise`` perturbs every
    constant multiplicatively by (1 + noise * N(0,1)); experimental fits are
    good to ~1e-7 relative, so realistic values are tiny.
    """
    from .kraitchman import simulate_isotopologue

    if noise and rng is None:
        raise ValueError("noise requires an rng")

    def perturb(rc: RotationalConstants) -> RotationalConstants:
        if not noise:
            return rc
        factors = 1.0 + noise * rng.standard_normal(3)
        return RotationalConstants(rc.a * factors[0], rc.b * factors[1], rc.c * factors[2])

    parent = perturb(
        planar_moments_to_constants(align_to_pas(mol_in_pas).planar_moments)
    )
    formula: dict[str, int] = {}
    for z in mol_in_pas.atomic_numbers:
        sym = symbol_for(int(z))
        formula[sym] = formula.get(sym, 0) + 1
    isotopologues = []
    for idx in np.flatnonzero(substitutable_atoms(mol_in_pas)):
        delta = default_mass_delta(int(mol_in_pas.atomic_numbers[idx]))
        pm = simulate_isotopologue(mol_in_pas, int(idx), delta)
        isotopologues.append(
            IsotopologueObservation(
                substituted_element=int(mol_in_pas.atomic_numbers[idx]),
                mass_delta=delta,
                constants=perturb(planar_moments_to_constants(pm)),
            )
        )
    return observation_to_dict(formula, parent, isotopologues)


# -- checkpoints -----------------------------------------------------------------


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    return {
        "shape": list(arr.shape),
        "data_b64": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
    }


def _decode_array(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data_b64"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(entry["shape"])


def save_checkpoint(path, checkpoint: dict):
    """Serialize a checkpoint dict; ndarray-valued maps are base64-encoded."""
    doc = {"format_version": CHECKPOINT_FORMAT}
    for key, value in checkpoint.items():
        if isinstance(value, dict) and value and all(
            isinstance(v, np.ndarray) for v in value.values()
        ):
            doc[key] = {name: _encode_array(arr) for name, arr in value.items()}
            doc.setdefault("_tensor_maps", []).append(key)
        else:
            doc[key] = value
    Path(path).write_text(json.dumps(doc) + "\n")


def load_checkpoint(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != CHECKPOINT_FORMAT:
        raise SchemaError(
            f"checkpoint format {doc.get('format_version')} not supported"
        )
    for key in doc.pop("_tensor_maps", []):
        doc[key] = {name: _decode_array(entry) for name, entry in doc[key].items()}
    doc.pop("format_version")
    return doc
