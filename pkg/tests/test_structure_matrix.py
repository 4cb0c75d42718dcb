import numpy as np
import pytest

from mirk_hnn.errors import InvalidArgumentError
from mirk_hnn.hamiltonians import StructureMatrix


class TestStructureMatrix:
    """Unit tests for the canonical structure matrix J."""

    def test_dense_matrix_for_two_degrees_of_freedom(self):
        """Test the dense J has identity blocks with the right signs."""
        J = StructureMatrix(2).matrix

        expected = np.array([
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [-1.0, 0.0, 0.0, 0.0],
            [0.0, -1.0, 0.0, 0.0],
        ])
        np.testing.assert_array_equal(J, expected)

    @pytest.mark.parametrize("dim_half", [1, 2, 3])
    def test_skew_symmetric_and_squares_to_minus_identity(self, dim_half):
        """Test J^T = -J and J^2 = -I."""
        J = StructureMatrix(dim_half).matrix

        np.testing.assert_array_equal(J.T, -J)
        np.testing.assert_array_equal(J @ J, -np.eye(2 * dim_half))

    def test_apply_matches_dense_product(self):
        """Test apply and apply_transpose agree with the dense matrix on a batch."""
        structure = StructureMatrix(2)
        v = np.random.default_rng(0).normal(size=(5, 4))

        np.testing.assert_allclose(structure.apply(v), v @ structure.matrix.T)
        np.testing.assert_allclose(structure.apply_transpose(v), v @ structure.matrix)

    def test_apply_to_single_vector(self):
        """Test J (1, 2, 3, 4) = (3, 4, -1, -2)."""
        np.testing.assert_array_equal(StructureMatrix(2).apply([1.0, 2.0, 3.0, 4.0]), [3.0, 4.0, -1.0, -2.0])

    def test_dimension(self):
        """Test dim is twice the number of positions."""
        assert StructureMatrix(2).dim == 4

    @pytest.mark.parametrize("dim_half", [0, -1, 1.5])
    def test_invalid_size(self, dim_half):
        """Test non-positive or fractional sizes are rejected."""
        with pytest.raises(InvalidArgumentError):
            StructureMatrix(dim_half)
