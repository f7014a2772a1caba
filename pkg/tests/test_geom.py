import numpy as np
import pytest

from rotstruct.geom import (
    ComNotZero,
    DegenerateTop,
    Molecule,
    NotSymmetric,
    align_to_pas,
    inertia_matrix,
    planar_dyadic,
    sym_eig3,
    weighted_com,
)

from conftest import random_rigid_molecule, random_rotation


class TestMolecule:
    def test_validation(self):
        with pytest.raises(ValueError):
            Molecule([], [], np.zeros((0, 3)))
        with pytest.raises(ValueError):
            Molecule([6], [-1.0], [[0, 0, 0]])
        with pytest.raises(ValueError):
            Molecule([0], [1.0], [[0, 0, 0]])
        with pytest.raises(ValueError):
            Molecule([6, 6], [1.0], [[0, 0, 0], [1, 0, 0]])

    def test_immutable(self):
        mol = Molecule([6], [12.0], [[1, 2, 3]])
        with pytest.raises(ValueError):
            mol.positions[0, 0] = 5.0


class TestWeightedCom:
    def test_single_atom(self):
        mol = Molecule([6], [12.0], [[1.0, 2.0, 3.0]])
        assert np.allclose(weighted_com(mol), [1.0, 2.0, 3.0])

    def test_symmetric_pair(self):
        mol = Molecule([1, 1], [1.0, 1.0], [[-1, 0, 0], [1, 0, 0]])
        assert np.allclose(weighted_com(mol), 0.0)

    def test_hand_arithmetic(self):
        mol = Molecule([1, 1], [1.0, 2.0], [[3, 0, 0], [0, 0, 0]])
        assert np.allclose(weighted_com(mol), [1.0, 0.0, 0.0])


class TestPlanarDyadic:
    def test_unit_masses_on_x(self):
        mol = Molecule([1, 1], [1.0, 1.0], [[1, 0, 0], [-1, 0, 0]])
        assert np.allclose(planar_dyadic(mol), np.diag([2.0, 0.0, 0.0]))

    def test_single_atom_origin(self):
        mol = Molecule([6], [12.0], [[0, 0, 0]])
        assert np.allclose(planar_dyadic(mol), 0.0)

    def test_hand_expansion(self):
        mol = Molecule([1, 1], [1.0, 1.0], [[1, 1, 0], [-1, -1, 0]])
        expected = np.array([[2, 2, 0], [2, 2, 0], [0, 0, 0]], dtype=float)
        assert np.allclose(planar_dyadic(mol), expected)

    def test_rejects_uncentered(self):
        mol = Molecule([1, 1], [1.0, 2.0], [[3, 0, 0], [0, 0, 0]])
        with pytest.raises(ComNotZero):
            planar_dyadic(mol)


class TestInertiaMatrix:
    def test_linear_rotor(self):
        mol = Molecule([1, 1], [1.0, 1.0], [[1, 0, 0], [-1, 0, 0]])
        assert np.allclose(inertia_matrix(mol), np.diag([0.0, 2.0, 2.0]))

    def test_single_atom(self):
        mol = Molecule([6], [12.0], [[0, 0, 0]])
        assert np.allclose(inertia_matrix(mol), 0.0)

    def test_trace_identity_random(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            mol, _ = random_rigid_molecule(rng, int(rng.integers(3, 12)))
            p = planar_dyadic(mol)
            i = inertia_matrix(mol)
            assert np.allclose(i, np.trace(p) * np.eye(3) - p, atol=1e-12)


class TestSymEig3:
    def test_diagonal(self):
        vals, vecs = sym_eig3(np.diag([3.0, 2.0, 1.0]))
        assert np.allclose(vals, [3, 2, 1])
        assert np.allclose(vecs, np.eye(3))

    def test_rank_one(self):
        m = np.array([[2, 2, 0], [2, 2, 0], [0, 0, 0]], dtype=float)
        vals, _ = sym_eig3(m)
        # characteristic polynomial by hand: eigenvalues 4, 0, 0
        assert np.allclose(vals, [4.0, 0.0, 0.0], atol=1e-12)

    def test_construct_then_decompose(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            r = random_rotation(rng)
            m = r @ np.diag([5.0, 2.0, 1.0]) @ r.T
            vals, vecs = sym_eig3(m)
            assert np.allclose(vals, [5, 2, 1], atol=1e-9)
            # columns span the same axes as r's columns (signs free)
            overlap = np.abs(vecs.T @ r)
            assert np.allclose(np.diag(overlap), 1.0, atol=1e-9)

    def test_residual_and_determinant(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            a = rng.standard_normal((3, 3))
            m = a + a.T
            vals, vecs = sym_eig3(m)
            scale = max(1.0, np.abs(m).max())
            assert np.abs(m @ vecs - vecs * vals).max() < 1e-9 * scale
            assert np.linalg.det(vecs) > 0.999999
            assert vals[0] >= vals[1] >= vals[2]

    def test_near_degenerate_jacobi_path(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            r = random_rotation(rng)
            m = r @ np.diag([2.0, 2.0 + 1e-7, 1.0]) @ r.T
            vals, vecs = sym_eig3(m)
            assert np.abs(m @ vecs - vecs * vals).max() < 1e-9 * 2.0
            assert abs(np.linalg.det(vecs) - 1.0) < 1e-9

    def test_sign_convention_deterministic(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((3, 3))
        m = a + a.T
        _, v1 = sym_eig3(m)
        _, v2 = sym_eig3(m.copy())
        assert np.array_equal(v1, v2)
        for k in range(3):
            i = np.argmax(np.abs(v1[:, k]))
            if k < 2:  # third column may be flipped for right-handedness
                assert v1[i, k] > 0

    def test_not_symmetric(self):
        with pytest.raises(NotSymmetric):
            sym_eig3(np.array([[1, 2, 0], [0, 1, 0], [0, 0, 1.0]]))


class TestAlignToPas:
    def test_fixed_point(self, asym3):
        pas = align_to_pas(asym3)
        aligned = pas.aligned_molecule()
        again = align_to_pas(aligned)
        assert np.array_equal(again.aligned_positions, aligned.positions)
        assert np.array_equal(again.rotation, np.eye(3))

    def test_rotation_invariance_of_moments(self, asym3):
        rng = np.random.default_rng(5)
        base = align_to_pas(asym3).planar_moments.as_array()
        for _ in range(20):
            r = random_rotation(rng)
            rotated = asym3.with_positions(asym3.positions @ r.T)
            pm = align_to_pas(rotated).planar_moments.as_array()
            assert np.allclose(pm, base, rtol=1e-9)

    def test_eigen_oracle(self, asym3):
        pas = align_to_pas(asym3)
        vals, _ = sym_eig3(planar_dyadic(asym3, check_com=False))
        assert np.allclose(pas.planar_moments.as_array(), np.maximum(vals, 0.0),
                           atol=1e-12)

    def test_postconditions(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            mol, pm = random_rigid_molecule(rng, int(rng.integers(3, 20)))
            scale = np.abs(mol.positions).max()
            com = weighted_com(mol)
            assert np.linalg.norm(com) <= 1e-9 * max(1.0, scale)
            p = planar_dyadic(mol)
            off = np.abs(p - np.diag(np.diag(p))).max()
            assert off <= 1e-8 * np.trace(p)
            assert np.allclose(np.diag(p), pm.as_array(), rtol=1e-8, atol=1e-10)
            assert pm.p_z >= 0.0
            # trace identity between inertia and planar moments
            inertia = inertia_matrix(mol)
            assert np.isclose(
                np.trace(inertia), 2.0 * pm.total, rtol=1e-10
            )

    def test_degenerate_top_rejected(self):
        # square planar arrangement: two equal planar moments
        mol = Molecule(
            [6, 6, 6, 6],
            [12.0] * 4,
            [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]],
        )
        with pytest.raises(DegenerateTop):
            align_to_pas(mol)

    def test_com_shift_recorded(self):
        mol = Molecule([6, 8, 7], [1.0, 1.0, 1.0],
                       np.array([[1.2, 0.3, 0.0], [-0.8, 0.5, 0.4],
                                 [-0.4, -0.8, -0.4]]) + [10.0, -5.0, 2.0])
        pas = align_to_pas(mol)
        assert np.allclose(pas.com_shift, [10.0, -5.0, 2.0], atol=1e-12)
