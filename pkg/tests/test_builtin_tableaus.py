import numpy as np
import pytest

from mirk_hnn.errors import InvalidArgumentError
from mirk_hnn.integrators import (
    ExplicitTableau,
    MirkTableau,
    builtin_explicit_tableaus,
    builtin_tableaus,
    get_explicit_tableau,
    get_tableau,
    tableau_names,
)


def _quadrature_conditions_hold(tab, order):
    """Check sum_i b_i c_i^(k-1) = 1 / k for k = 1..order."""
    return all(abs(np.dot(tab.b, tab.c ** (k - 1)) - 1.0 / k) < 1e-13 for k in range(1, order + 1))


class TestBuiltinTableaus:
    """Unit tests for the MIRK tableau library."""

    def test_names_and_orders(self):
        """Test the library holds MIRK2 through MIRK6 with s = 1, 2, 3, 4, 5 stages."""
        tableaus = builtin_tableaus()

        assert [t.name for t in tableaus] == ["mirk2", "mirk3", "mirk4", "mirk5", "mirk6"]
        assert [t.p for t in tableaus] == [2, 3, 4, 5, 6]
        assert [t.s for t in tableaus] == [1, 2, 3, 4, 5]

    @pytest.mark.parametrize("tab", builtin_tableaus(), ids=lambda t: t.name)
    def test_structure(self, tab):
        """Test A = D + v b^T with D strictly lower triangular and weights summing to one."""
        assert np.allclose(np.triu(tab.D), 0.0)
        np.testing.assert_allclose(tab.A, tab.D + np.outer(tab.v, tab.b))
        assert tab.b.sum() == pytest.approx(1.0, abs=1e-14)

    @pytest.mark.parametrize("tab", builtin_tableaus(), ids=lambda t: t.name)
    def test_quadrature_order(self, tab):
        """Test the weights integrate polynomials up to degree p - 1 exactly at the abscissae."""
        assert _quadrature_conditions_hold(tab, tab.p)

    @pytest.mark.parametrize("tab", builtin_tableaus(), ids=lambda t: t.name)
    def test_third_order_tree_conditions(self, tab):
        """Test b^T A c = 1/6 for methods of order three and above."""
        if tab.p < 3:
            pytest.skip("second-order method")
        assert tab.b @ tab.A @ tab.c == pytest.approx(1.0 / 6.0, abs=1e-13)

    @pytest.mark.parametrize("tab", builtin_tableaus(), ids=lambda t: t.name)
    def test_abscissae_are_row_sums(self, tab):
        """Test c = A 1."""
        np.testing.assert_allclose(tab.c, tab.A.sum(axis=1), atol=1e-15)

    def test_mirk4_coefficients(self):
        """Test MIRK4 against its published coefficients."""
        tab = get_tableau("mirk4")

        np.testing.assert_allclose(tab.b, [1 / 6, 1 / 6, 2 / 3])
        np.testing.assert_allclose(tab.v, [0.0, 1.0, 0.5])
        assert tab.D[2, 0] == pytest.approx(1 / 8)
        assert tab.D[2, 1] == pytest.approx(-1 / 8)

    def test_arrays_are_read_only(self):
        """Test tableau coefficients cannot be modified in place."""
        tab = get_tableau("mirk2")
        with pytest.raises(ValueError):
            tab.b[0] = 2.0

    # =============================================================================
    # EXPLICIT METHODS
    # =============================================================================

    def test_rk4_as_mirk(self):
        """Test RK4 enters the MIRK pipeline with v = 0 and D = A."""
        rk4 = get_tableau("rk4")
        explicit = [t for t in builtin_explicit_tableaus() if t.name == "rk4"][0]

        assert isinstance(rk4, MirkTableau)
        np.testing.assert_array_equal(rk4.v, np.zeros(4))
        np.testing.assert_array_equal(rk4.D, explicit.A)
        assert rk4.p == 4
        assert _quadrature_conditions_hold(rk4, 4)

    def test_tableau_names(self):
        """Test every builtin name is listed."""
        assert tableau_names() == ["mirk2", "mirk3", "mirk4", "mirk5", "mirk6", "euler", "rk4"]

    def test_lookup_is_case_insensitive(self):
        """Test get_tableau accepts mixed case."""
        assert get_tableau("MIRK6").name == "mirk6"

    @pytest.mark.parametrize("name", [" RK4 ", "rk4\t", "Euler"])
    def test_lookups_normalize_names_alike(self, name):
        """Test both lookups ignore case and surrounding whitespace."""
        key = name.strip().lower()

        assert get_tableau(name).name == key
        assert get_explicit_tableau(name).name == key

    def test_explicit_lookup_rejects_mirk_methods(self):
        """Test get_explicit_tableau only knows explicit methods."""
        with pytest.raises(InvalidArgumentError):
            get_explicit_tableau("mirk4")

    def test_unknown_name(self):
        """Test an unknown tableau is rejected."""
        with pytest.raises(InvalidArgumentError) as excinfo:
            get_tableau("mirk7")

        assert "mirk7" in str(excinfo.value)

    # =============================================================================
    # VALIDATION
    # =============================================================================

    def test_rejects_non_strict_lower_triangle(self):
        """Test D with a diagonal entry is rejected."""
        with pytest.raises(InvalidArgumentError):
            MirkTableau("bad", b=[1.0], v=[0.5], D=[[0.1]], p=2)

    def test_rejects_weights_not_summing_to_one(self):
        """Test inconsistent weights are rejected."""
        with pytest.raises(InvalidArgumentError):
            MirkTableau("bad", b=[0.5, 0.4], v=[0.0, 1.0], D=[[0.0, 0.0], [0.0, 0.0]], p=2)

    def test_rejects_mismatched_shapes(self):
        """Test v and b of different lengths are rejected."""
        with pytest.raises(InvalidArgumentError):
            MirkTableau("bad", b=[1.0], v=[0.0, 1.0], D=[[0.0]], p=2)

    def test_explicit_rejects_implicit_matrix(self):
        """Test an explicit tableau must be strictly lower triangular."""
        with pytest.raises(InvalidArgumentError):
            ExplicitTableau("bad", A=[[0.5]], b=[1.0], c=[0.5], p=1)
