import numpy as np
import pytest

from adaptreg.internal_model import (
    assemble_controller,
    build_internal_model,
    controller_operators,
    design_L,
    im_pair_controllable,
    im_spectrum_imaginary,
    internal_model_dimension,
)
from adaptreg.linalg import DesignError, abscissa, spectrum
from adaptreg.plants import PlantRealization, random_stable_plant


def tiny_plant(n=2, m=1, p=1, seed=1):
    return random_stable_plant(n, m, p, seed=seed)


class TestBuild:
    def test_single_frequency_block(self):
        block = build_internal_model([2.0], p=1)
        expected = np.zeros((3, 3))
        expected[1, 2] = 2.0
        expected[2, 1] = -2.0
        np.testing.assert_array_equal(block.G1, expected)
        eig = np.sort_complex(spectrum(block.G1).eigenvalues)
        np.testing.assert_allclose(eig, [-2j, 0, 2j], atol=1e-12)

    def test_g2_pattern_two_frequencies(self):
        block = build_internal_model([1.0, 2.0], p=1)
        np.testing.assert_array_equal(block.G2.ravel(), [1.0, 1.0, 0.0, 1.0, 0.0])

    def test_multiplicity_with_vector_outputs(self):
        block = build_internal_model([1.0], p=2)
        assert internal_model_dimension(block, 1.0) == 2

    def test_degeneracy_flags(self):
        assert build_internal_model([1.0, 1.0 + 1e-12], p=1).degenerate
        assert build_internal_model([0.0], p=1).degenerate
        assert not build_internal_model([1.0, 2.0], p=1).degenerate

    def test_spectrum_purely_imaginary(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            freqs = np.sort(rng.uniform(0.1, 60.0, size=rng.integers(1, 4)))
            block = build_internal_model(freqs, p=int(rng.integers(1, 4)))
            assert im_spectrum_imaginary(block)


class TestKernelDimension:
    def test_matching_frequency(self):
        block = build_internal_model([2.0], p=1)
        assert internal_model_dimension(block, 2.0) == 1

    def test_non_matching_frequency(self):
        block = build_internal_model([2.0], p=1)
        assert internal_model_dimension(block, 3.0) == 0

    def test_multiplicity_p(self):
        block = build_internal_model([5.0], p=3)
        assert internal_model_dimension(block, 5.0) == 3

    def test_zero_frequency_always_included(self):
        block = build_internal_model([3.0], p=2)
        assert internal_model_dimension(block, 0.0) == 2

    def test_internal_model_property_at_all_frequencies(self):
        block = build_internal_model([4.0, 9.0], p=2)
        for w in (0.0, 4.0, 9.0):
            assert internal_model_dimension(block, w) >= 2


class TestControllability:
    def test_distinct_nonzero_controllable(self):
        for p in (1, 2):
            block = build_internal_model([1.0, 3.5], p=p)
            assert im_pair_controllable(block)

    def test_duplicate_frequencies_uncontrollable(self):
        block = build_internal_model([2.0, 2.0], p=1)
        assert not im_pair_controllable(block)


class TestDesignL:
    def test_scalar_dual_riccati(self):
        plant = PlantRealization(A=[[-1.0]], B=[[1.0]], Bd=np.zeros((1, 0)),
                                 C=[[1.0]], D=[[0.0]])
        L = design_L(plant)
        assert L[0, 0] == pytest.approx(-(np.sqrt(2.0) - 1.0), abs=1e-9)
        assert abscissa(plant.A + L @ plant.C) < 0.0

    def test_zero_injection_admissible_for_stable_plant(self):
        plant = tiny_plant(n=3, m=1, p=1, seed=4)
        block = build_internal_model([1.0], p=1)
        ctrl = assemble_controller(block, plant, np.zeros((3, 1)),
                                   np.zeros((1, 3)), np.zeros((1, 3)))
        assert ctrl.dim == 3 + 3

    def test_random_detectable_instances(self):
        for seed in range(50):
            plant = random_stable_plant(4, 2, 2, seed=seed)
            # shift to make some instances unstable but still detectable
            shifted = PlantRealization(
                A=plant.A + 0.6 * np.eye(4), B=plant.B, Bd=plant.Bd,
                C=plant.C, D=plant.D,
            )
            L = design_L(shifted)
            assert abscissa(shifted.A + L @ shifted.C) < 0.0

    def test_undetectable_rejected(self):
        A = np.diag([1.0, -1.0])
        C = np.array([[0.0, 1.0]])  # unstable mode invisible
        plant = PlantRealization(A=A, B=np.eye(2), Bd=np.zeros((2, 0)),
                                 C=C, D=np.zeros((1, 2)))
        with pytest.raises(DesignError):
            design_L(plant)


class TestAssembly:
    def test_zero_gains_block_triangular(self):
        plant = tiny_plant(n=3, m=2, p=2, seed=9)
        block = build_internal_model([1.0], p=2)
        L = design_L(plant)
        cG1, cG2, K = controller_operators(block, plant, L,
                                           np.zeros((2, block.dim)),
                                           np.zeros((2, 3)))
        dz = block.dim
        np.testing.assert_array_equal(cG1[:dz, dz:], 0.0)
        np.testing.assert_array_equal(cG1[dz:, :dz], 0.0)
        np.testing.assert_allclose(cG1[dz:, dz:], plant.A + L @ plant.C)
        np.testing.assert_allclose(cG2[:dz], block.G2)
        np.testing.assert_allclose(cG2[dz:], -L)
        assert K.shape == (2, dz + 3)

    def test_dimension_formula(self):
        plant = tiny_plant(n=4, m=2, p=2, seed=3)
        block = build_internal_model([1.0, 2.0], p=2)
        ctrl = assemble_controller(block, plant, design_L(plant),
                                   np.zeros((2, block.dim)), np.zeros((2, 4)))
        assert ctrl.dim == 2 * (2 * 2 + 1) + 4

    def test_blocks_round_trip(self):
        rng = np.random.default_rng(11)
        plant = tiny_plant(n=3, m=2, p=1, seed=5)
        block = build_internal_model([1.5], p=1)
        L = design_L(plant)
        K1 = rng.standard_normal((2, block.dim))
        K2 = rng.standard_normal((2, 3))
        cG1, cG2, K = controller_operators(block, plant, L, K1, K2)
        dz = block.dim
        BLD = plant.B + L @ plant.D
        np.testing.assert_array_equal(cG1[:dz, :dz], block.G1)
        np.testing.assert_allclose(cG1[dz:, :dz], BLD @ K1)
        np.testing.assert_allclose(
            cG1[dz:, dz:], plant.A + BLD @ K2 + L @ plant.C
        )
        np.testing.assert_array_equal(K[:, :dz], K1)
        np.testing.assert_array_equal(K[:, dz:], K2)

    def test_unstable_injection_rejected(self):
        plant = tiny_plant(n=3, m=1, p=1, seed=6)
        unstable = PlantRealization(A=plant.A + 5.0 * np.eye(3), B=plant.B,
                                    Bd=plant.Bd, C=plant.C, D=plant.D)
        block = build_internal_model([1.0], p=1)
        with pytest.raises(DesignError, match="Hurwitz"):
            assemble_controller(block, unstable, np.zeros((3, 1)),
                                np.zeros((1, block.dim)), np.zeros((1, 3)))
