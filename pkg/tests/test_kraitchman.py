import numpy as np
import pytest

from rotstruct.constants import ROTATIONAL_KAPPA
from rotstruct.geom import Molecule, PlanarMoments, align_to_pas, planar_dyadic, sym_eig3
from rotstruct.kraitchman import (
    DegenerateParent,
    DropoutConfig,
    NonPhysicalMoments,
    NonPositiveMass,
    RotationalConstants,
    SubstitutionTable,
    build_substitution_table,
    constants_to_planar_moments,
    kraitchman_coordinates,
    planar_moments_to_constants,
    simulate_isotopologue,
    substitution_coordinates_raw,
)

from conftest import random_rigid_molecule


def test_conversion_constant_six_figures():
    assert abs(ROTATIONAL_KAPPA - 505379.0) / 505379.0 < 5e-7


def test_moments_from_inertia_triple():
    # I = (2, 3, 4) amu A^2 fed through the MHz layer and back
    rc = RotationalConstants(
        ROTATIONAL_KAPPA / 2.0, ROTATIONAL_KAPPA / 3.0, ROTATIONAL_KAPPA / 4.0
    )
    pm = constants_to_planar_moments(rc)
    assert np.allclose(pm.as_array(), [2.5, 1.5, 0.5], atol=1e-12)


def test_planarity_identity():
    # I_z = I_x + I_y forces p_z = 0
    rc = RotationalConstants(
        ROTATIONAL_KAPPA / 2.0, ROTATIONAL_KAPPA / 3.0, ROTATIONAL_KAPPA / 5.0
    )
    pm = constants_to_planar_moments(rc)
    assert abs(pm.p_z) < 1e-12


def test_constants_round_trip():
    pm = PlanarMoments(2.5, 1.5, 0.5)
    back = constants_to_planar_moments(planar_moments_to_constants(pm))
    assert np.allclose(back.as_array(), pm.as_array(), rtol=1e-10)


def test_planar_moments_give_finite_constants():
    pm = PlanarMoments(3.0, 2.0, 0.0)
    rc = planar_moments_to_constants(pm)
    i = ROTATIONAL_KAPPA / np.array([rc.a, rc.b, rc.c])
    assert np.isclose(i[2], i[0] + i[1], rtol=1e-12)


def test_nonphysical_moments_rejected():
    with pytest.raises(NonPhysicalMoments):
        planar_moments_to_constants(PlanarMoments(5.0, 0.0, 0.0))


def test_forward_oracle_on_simulated_molecule():
    rng = np.random.default_rng(0)
    mol, pm = random_rigid_molecule(rng, 5)
    rc = planar_moments_to_constants(pm)
    i = pm.total - pm.as_array()
    assert np.allclose([rc.a, rc.b, rc.c], ROTATIONAL_KAPPA / i, rtol=1e-12)


def test_eq1_half_trace_consistency():
    rng = np.random.default_rng(1)
    for _ in range(25):
        p = np.sort(rng.uniform(0.5, 200.0, size=3))[::-1]
        rc = planar_moments_to_constants(PlanarMoments(*p))
        pm = constants_to_planar_moments(rc)
        inertia = ROTATIONAL_KAPPA / np.array([rc.a, rc.b, rc.c])
        assert np.isclose(pm.total, 0.5 * inertia.sum(), rtol=1e-12)


class TestSimulateIsotopologue:
    def _origin_mol(self):
        # PAS-aligned by construction, one atom exactly at the origin
        return Molecule(
            [6, 1, 1, 1, 1],
            [2.0, 1.0, 1.0, 1.0, 1.0],
            [[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 0.5, 0], [0, -0.5, 0]],
        )

    def test_substitution_at_origin_is_invisible(self):
        mol = self._origin_mol()
        parent = align_to_pas(mol, degeneracy_tol=1e-9).planar_moments
        iso = simulate_isotopologue(mol, 0, 1.0)
        assert np.allclose(iso.as_array(), parent.as_array(), atol=1e-12)

    def test_zero_mass_delta(self, asym3):
        mol = align_to_pas(asym3).aligned_molecule()
        parent = align_to_pas(mol).planar_moments
        iso = simulate_isotopologue(mol, 1, 0.0)
        assert np.allclose(iso.as_array(), parent.as_array(), atol=1e-12)

    def test_recenter_rebuild_oracle(self, asym3):
        mol = align_to_pas(asym3).aligned_molecule()
        iso = simulate_isotopologue(mol, 0, 1.0)
        masses = mol.masses.copy()
        masses[0] += 1.0
        shifted = Molecule(mol.atomic_numbers, masses, mol.positions)
        com = (masses @ mol.positions) / masses.sum()
        rebuilt = shifted.with_positions(mol.positions - com)
        vals, _ = sym_eig3(planar_dyadic(rebuilt))
        assert np.allclose(iso.as_array(), vals, rtol=1e-12, atol=1e-12)

    def test_rank_one_update_identity(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            mol, pm = random_rigid_molecule(rng, int(rng.integers(3, 10)))
            i = int(rng.integers(mol.n_atoms))
            delta = float(rng.uniform(0.5, 2.0))
            total = mol.total_mass
            reduced = total * delta / (total + delta)
            update = np.diag(pm.as_array()) + reduced * np.outer(
                mol.positions[i], mol.positions[i]
            )
            vals, _ = sym_eig3(update)
            iso = simulate_isotopologue(mol, i, delta)
            assert np.allclose(iso.as_array(), np.maximum(vals, 0.0),
                               rtol=1e-10, atol=1e-10)

    def test_errors(self, asym3):
        mol = align_to_pas(asym3).aligned_molecule()
        with pytest.raises(IndexError):
            simulate_isotopologue(mol, 7, 1.0)
        with pytest.raises(NonPositiveMass):
            simulate_isotopologue(mol, 0, -5.0)


class TestKraitchmanCoordinates:
    def test_identical_moments_give_zero(self):
        pm = PlanarMoments(5.0, 3.0, 1.0)
        coords = kraitchman_coordinates(pm, pm, 50.0, 1.0)
        assert coords == (0.0, 0.0, 0.0)

    def test_round_trip_exact(self, asym3):
        mol = align_to_pas(asym3).aligned_molecule()
        parent = align_to_pas(mol).planar_moments
        for i in range(mol.n_atoms):
            iso = simulate_isotopologue(mol, i, 1.0)
            coords = kraitchman_coordinates(parent, iso, mol.total_mass, 1.0)
            got = np.array([c if c is not None else np.nan for c in coords])
            assert np.abs(got - np.abs(mol.positions[i])).max() < 1e-8

    def test_negative_radicand_goes_null(self):
        parent = PlanarMoments(5.0, 3.0, 1.0)
        iso = PlanarMoments(4.9, 3.05, 1.05)  # p_x* < p_x: x imaginary
        x, y, z = kraitchman_coordinates(parent, iso, 60.0, 1.0)
        assert x is None
        assert y is not None and y > 0
        assert z is not None and z > 0

    def test_degenerate_parent_rejected(self):
        parent = PlanarMoments(5.0, 3.0, 3.0 - 1e-9)
        iso = PlanarMoments(5.1, 3.05, 3.0)
        with pytest.raises(DegenerateParent):
            kraitchman_coordinates(parent, iso, 60.0, 1.0)

    def test_cyclic_permutation_symmetry(self):
        parent = np.array([5.0, 3.0, 1.0])
        iso = np.array([5.2, 3.1, 1.05])
        base = substitution_coordinates_raw(parent, iso, 60.0, 1.0)
        rolled = substitution_coordinates_raw(
            np.roll(parent, -1), np.roll(iso, -1), 60.0, 1.0
        )
        assert rolled == (base[1], base[2], base[0])

    def test_negative_mass_delta_round_trip(self, asym3):
        # boron-style substitution: lighter isotope, negative delta
        mol = align_to_pas(asym3).aligned_molecule()
        parent = align_to_pas(mol).planar_moments
        iso = simulate_isotopologue(mol, 2, -0.3)
        coords = kraitchman_coordinates(parent, iso, mol.total_mass, -0.3)
        got = np.array([c if c is not None else np.nan for c in coords])
        assert np.abs(got - np.abs(mol.positions[2])).max() < 1e-8


class TestSubstitutionTable:
    def test_invariants(self):
        with pytest.raises(ValueError):
            SubstitutionTable(values=np.ones((2, 3)), mask=np.zeros((2, 3)))
        with pytest.raises(ValueError):
            SubstitutionTable(values=-np.ones((2, 3)), mask=np.ones((2, 3)))
        with pytest.raises(ValueError):
            SubstitutionTable(values=np.zeros((2, 3)), mask=2 * np.ones((2, 3)))


class TestBuildSubstitutionTable:
    def _methane_like(self):
        return Molecule(
            [6, 1, 1, 1, 1],
            [2.0, 1.0, 1.0, 1.0, 1.0],
            [[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 0.5, 0], [0, -0.5, 0]],
        )

    def test_hydrogen_always_masked(self):
        mol = self._methane_like()
        table = build_substitution_table(
            mol, DropoutConfig(), np.random.default_rng(0)
        )
        assert np.all(table.mask[0] == 1.0)
        assert np.all(table.mask[1:] == 0.0)
        assert np.array_equal(table.values, table.mask * np.abs(mol.positions))

    def test_full_dropout(self):
        mol = self._methane_like()
        table = build_substitution_table(
            mol, DropoutConfig(p_min=1.0, p_max=1.0), np.random.default_rng(0)
        )
        assert table.mask.sum() == 0.0

    def test_dropout_monotonicity(self):
        rng = np.random.default_rng(3)
        mol, _ = random_rigid_molecule(rng, 12)
        for seed in range(50):
            full = build_substitution_table(
                mol, DropoutConfig(), np.random.default_rng(seed)
            )
            dropped = build_substitution_table(
                mol, DropoutConfig(p_min=0.6, p_max=0.6), np.random.default_rng(seed)
            )
            assert np.all(full.mask >= dropped.mask)

    def test_carbon_only_retention_rate(self):
        mol = Molecule([6] * 10, [12.0] * 10, np.random.default_rng(4).standard_normal((10, 3)))
        cfg = DropoutConfig(p_min=0.1, p_max=0.1, carbon_only=True)
        kept = 0
        trials = 10_000
        for seed in range(trials):
            table = build_substitution_table(mol, cfg, np.random.default_rng(seed))
            kept += int(table.mask[:, 0].sum())
        fraction = kept / (10 * trials)
        assert abs(fraction - 0.9) < 0.01

    def test_near_axis_threshold(self):
        mol = Molecule(
            [6, 6], [12.0, 12.0], [[0.005, 1.0, 0.0], [-0.005, -1.0, 0.0]]
        )
        table = build_substitution_table(
            mol, DropoutConfig(near_axis_threshold=0.01), np.random.default_rng(0)
        )
        assert np.all(table.mask[:, 0] == 0.0)  # |x| below threshold
        assert np.all(table.mask[:, 1] == 1.0)
        assert np.all(table.mask[:, 2] == 0.0)  # exactly-zero coordinates masked too


def test_full_round_trip_property():
    rng = np.random.default_rng(5)
    for _ in range(30):
        mol, parent = random_rigid_molecule(rng, int(rng.integers(3, 31)))
        i = int(rng.integers(mol.n_atoms))
        iso = simulate_isotopologue(mol, i, 1.003355)
        coords = kraitchman_coordinates(parent, iso, mol.total_mass, 1.003355)
        got = np.array([c if c is not None else 0.0 for c in coords])
        assert np.abs(got - np.abs(mol.positions[i])).max() < 1e-8
