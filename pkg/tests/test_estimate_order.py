import numpy as np
import pytest

from mirk_hnn.cli import OrderSettings, default_local_h
from mirk_hnn.errors import InvalidArgumentError, UnreliableFitError
from mirk_hnn.integrators import (
    OrderTarget,
    builtin_tableaus,
    estimate_order,
    explicit_map,
    forward_map,
    get_explicit_tableau,
    get_tableau,
    injected_map,
    step_errors,
)

from conftest import DP_Y0, FPUT_Y0, RotationSystem, ZeroFieldSystem

FORWARD_H = [0.4, 0.2, 0.1, 0.05]
FORWARD_HORIZON = 1.6
LOCAL_CENTERS = OrderSettings().local_centers


class TestEstimateOrder:
    """Unit tests for estimate_order and step_errors."""

    # =============================================================================
    # FORWARD (GLOBAL) ORDER
    # =============================================================================

    @pytest.mark.parametrize("tab", builtin_tableaus(), ids=lambda t: t.name)
    def test_forward_order_of_mirk_methods(self, tab, dp_system):
        """Test the forward-solved method converges with its nominal order on the double pendulum."""
        slope = estimate_order(forward_map(tab), dp_system, DP_Y0, FORWARD_H, horizon=FORWARD_HORIZON)

        assert tab.p - 0.3 <= slope <= tab.p + 0.5

    def test_forward_order_of_rk4(self, dp_system):
        """Test classic RK4 is fourth order."""
        slope = estimate_order(
            explicit_map(get_explicit_tableau("rk4")), dp_system, DP_Y0, FORWARD_H, horizon=FORWARD_HORIZON
        )

        assert 3.7 <= slope <= 4.5

    # =============================================================================
    # INJECTED (LOCAL) ORDERS
    # =============================================================================

    @pytest.mark.parametrize("system_name,y0", [("double_pendulum", DP_Y0), ("fput", FPUT_Y0)])
    @pytest.mark.parametrize("tab", builtin_tableaus(), ids=lambda t: t.name)
    def test_injected_step_against_exact_flow(self, tab, system_name, y0, request):
        """Test the injected step matches the flow to O(h^(p+1))."""
        system = request.getfixturevalue("dp_system" if system_name == "double_pendulum" else "fput_system")

        slope = estimate_order(
            injected_map(tab), system, y0, default_local_h(system.name.value, tab.p), centers=LOCAL_CENTERS
        )

        assert tab.p + 0.7 <= slope <= tab.p + 1.5

    @pytest.mark.parametrize("system_name,y0", [("double_pendulum", DP_Y0), ("fput", FPUT_Y0)])
    @pytest.mark.parametrize("tab", builtin_tableaus(), ids=lambda t: t.name)
    def test_injected_step_against_forward_step(self, tab, system_name, y0, request):
        """Test the injected step matches the forward-solved step to higher order than the flow."""
        system = request.getfixturevalue("dp_system" if system_name == "double_pendulum" else "fput_system")

        slope = estimate_order(
            injected_map(tab), system, y0, default_local_h(system.name.value, tab.p),
            error_target=OrderTarget.FORWARD_STEP, reference_fn=forward_map(tab),
            centers=LOCAL_CENTERS,
        )

        assert slope >= tab.p + 1.5

    # =============================================================================
    # DEGENERATE AND INVALID INPUT
    # =============================================================================

    def test_zero_field_is_unreliable(self):
        """Test exact steps (all errors zero) raise instead of fitting noise."""
        with pytest.raises(UnreliableFitError) as excinfo:
            estimate_order(injected_map(get_tableau("mirk4")), ZeroFieldSystem(), np.ones(4), FORWARD_H)

        assert excinfo.value.error == 0.0
        assert excinfo.value.h == 0.4

    def test_exact_power_law_slope(self, dp_system):
        """Test the fit recovers the exponent of a synthetic error model."""

        def step(f, y_n, y_np1, h):
            return y_np1 + h**3

        slope = estimate_order(step, dp_system, DP_Y0, FORWARD_H)

        assert slope == pytest.approx(3.0, abs=1e-6)

    def test_step_errors_are_norms(self, dp_system):
        """Test step_errors returns one Euclidean norm per step size."""

        def step(f, y_n, y_np1, h):
            return y_np1 + np.array([h, 0.0, 0.0, 0.0])

        errors = step_errors(step, dp_system, DP_Y0, FORWARD_H)

        np.testing.assert_allclose(errors, FORWARD_H, rtol=1e-12)

    @pytest.mark.parametrize("h_list", [
        [0.4, 0.2, 0.1],
        [0.4, 0.2, 0.2, 0.1],
        [0.1, 0.2, 0.3, 0.4],
        [0.4, 0.2, 0.1, -0.05],
    ])
    def test_invalid_step_lists(self, h_list, dp_system):
        """Test short, non-decreasing or non-positive step lists are rejected."""
        with pytest.raises(InvalidArgumentError):
            estimate_order(injected_map(get_tableau("mirk2")), dp_system, DP_Y0, h_list)

    def test_forward_target_needs_reference(self, dp_system):
        """Test vs_forward_step without a reference map is rejected."""
        with pytest.raises(InvalidArgumentError):
            estimate_order(
                injected_map(get_tableau("mirk2")), dp_system, DP_Y0, FORWARD_H,
                error_target=OrderTarget.FORWARD_STEP,
            )

    def test_centers_need_room_for_half_a_step(self, dp_system):
        """Test a center closer to t = 0 than h/2 is rejected."""
        with pytest.raises(InvalidArgumentError):
            estimate_order(injected_map(get_tableau("mirk2")), dp_system, DP_Y0, FORWARD_H, centers=[0.1, 1.0])

    def test_centers_apply_to_single_steps_only(self, dp_system):
        """Test centers cannot be combined with a global-error horizon."""
        with pytest.raises(InvalidArgumentError):
            step_errors(
                forward_map(get_tableau("mirk2")), dp_system, DP_Y0, FORWARD_H,
                horizon=FORWARD_HORIZON, centers=[1.0],
            )

    # =============================================================================
    # CENTERED SINGLE STEPS
    # =============================================================================

    def test_centered_steps_straddle_each_center(self):
        """Test steps end at center + h/2 on the true trajectory and the worst center counts."""
        y0 = np.array([1.0, 0.0])

        def stay_at_start(f, y_n, y_np1, h):
            return y0

        errors = step_errors(stay_at_start, RotationSystem(), y0, FORWARD_H, centers=[0.5, 1.0])

        # chord of the unit circle from angle 0 to 1 + h/2
        expected = [2.0 * np.sin((1.0 + h / 2) / 2) for h in FORWARD_H]
        np.testing.assert_allclose(errors, expected, rtol=1e-9)

    def test_centered_step_starts_half_a_step_before_center(self):
        """Test the step start and end are exactly h apart along the flow."""

        def stay_put(f, y_n, y_np1, h):
            return y_n

        errors = step_errors(stay_put, RotationSystem(), np.array([0.0, 2.0]), FORWARD_H, centers=[0.75])

        np.testing.assert_allclose(errors, [4.0 * np.sin(h / 2) for h in FORWARD_H], rtol=1e-9)

    def test_centered_mirk4_slope_on_double_pendulum(self, dp_system):
        """Test the centered MIRK4 local error keeps its nominal slope on the double pendulum."""
        tab = get_tableau("mirk4")

        slope = estimate_order(injected_map(tab), dp_system, DP_Y0, [0.25, 0.2, 0.15, 0.1], centers=LOCAL_CENTERS)

        assert 4.7 <= slope <= 5.5
