"""Tests for vehicle models, the reference model and model matching."""

import numpy as np
import pytest

from agent_dynamics import (AgentModel, ReferenceModel, ReferenceSignal, SinusoidalUncertainty,
                            ZeroUncertainty, eval_agent, eval_reference, make_vehicle_model,
                            pad_initial_state, reference_from_vehicle, sinusoidal_uncertainty,
                            solve_coupling_matching, solve_feedback_matching)
from sync_errors import DimensionMismatch, ModelError, NotHurwitz, ZeroTau

from conftest import A_M, B_M

TOL = 1e-12


class TestVehicleModel:
    def test_matrices(self):
        model = make_vehicle_model(0.4)
        np.testing.assert_allclose(model.A[2], [0.0, 0.0, -2.5])
        np.testing.assert_allclose(model.b, [0.0, 0.0, 2.5])
        assert model.tau == 0.4

    def test_zero_tau(self):
        with pytest.raises(ZeroTau):
            make_vehicle_model(0.0)

    def test_negative_tau_is_allowed(self):
        model = make_vehicle_model(-4.0)
        assert model.A[2, 2] == pytest.approx(0.25)

    def test_uncertainty_scales_input_direction(self):
        model = make_vehicle_model(1.0, sinusoidal_uncertainty(0.1))
        x = np.array([0.0, 0.0, np.pi / 2])
        derivative = eval_agent(model, x, 1.0)
        assert derivative[2] == pytest.approx(-np.pi / 2 + 1.0 + 0.1, abs=TOL)

    def test_zero_amplitude_is_bitwise_linear(self):
        rng = np.random.default_rng(1)
        plain = make_vehicle_model(0.45)
        zero = make_vehicle_model(0.45, sinusoidal_uncertainty(0.0))
        for x, u in zip(rng.normal(size=(10, 3)), rng.normal(size=10)):
            expected = plain.A @ x + plain.b * u
            np.testing.assert_array_equal(eval_agent(zero, x, u), expected)

    def test_state_dimension_checked(self):
        with pytest.raises(DimensionMismatch):
            eval_agent(make_vehicle_model(1.0), np.zeros(2), 0.0)

    def test_zero_input_vector_rejected(self):
        with pytest.raises(ModelError):
            AgentModel(A=np.eye(2), b=np.zeros(2))

    def test_arrays_are_read_only(self):
        model = make_vehicle_model(1.0)
        with pytest.raises(ValueError):
            model.A[0, 0] = 5.0


class TestSignalsAndUncertainty:
    def test_sine_reference(self):
        signal = ReferenceSignal(kind='sine', amplitude=2.0)
        assert signal(np.pi / 2) == pytest.approx(2.0)
        assert signal(0.0) == pytest.approx(0.0)

    def test_constant_reference(self):
        assert ReferenceSignal(amplitude=2.0)(12.3) == 2.0

    def test_unknown_signal_kind(self):
        with pytest.raises(ModelError):
            ReferenceSignal(kind='square')

    def test_uncertainty_bound(self):
        assert SinusoidalUncertainty(-0.3).bound == pytest.approx(0.3)
        assert isinstance(sinusoidal_uncertainty(0.0), ZeroUncertainty)


class TestReferenceModel:
    def test_eval_reference(self):
        reference = ReferenceModel(A_m=A_M, b_m=B_M, signal=ReferenceSignal(amplitude=2.0))
        x_m = np.array([1.0, -1.0, 0.0])
        np.testing.assert_allclose(eval_reference(reference, x_m, 0.0), A_M @ x_m + 2.0 * B_M)

    def test_not_hurwitz(self):
        with pytest.raises(NotHurwitz):
            ReferenceModel(A_m=make_vehicle_model(-4.0).A, b_m=B_M)

    def test_pole_placement_on_unstable_vehicle(self):
        reference = reference_from_vehicle(-4.0)
        eigenvalues = np.sort(np.linalg.eigvals(reference.A_m).real)
        np.testing.assert_allclose(eigenvalues, [-3.0, -2.0, -1.0], atol=1e-8)
        np.testing.assert_allclose(reference.A_m, A_M, atol=1e-8)
        np.testing.assert_array_equal(reference.b_m, B_M)

    def test_pad_initial_state(self):
        np.testing.assert_array_equal(pad_initial_state([1.0, -1.0], 3), [1.0, -1.0, 0.0])
        with pytest.raises(DimensionMismatch):
            pad_initial_state([1.0, 2.0, 3.0, 4.0], 3)


class TestMatching:
    def test_feedback_matching_unit_tau(self, reference):
        gains = solve_feedback_matching(reference, make_vehicle_model(1.0))
        np.testing.assert_allclose(gains.k, [-6.0, -11.0, -5.0], atol=TOL)
        assert gains.k_r == pytest.approx(1.0)
        assert gains.exact

    def test_feedback_matching_scales_with_input_gain(self, reference):
        gains = solve_feedback_matching(reference, make_vehicle_model(0.4))
        np.testing.assert_allclose(gains.k, np.array([-6.0, -11.0, -3.5]) / 2.5, atol=TOL)
        assert gains.k_r == pytest.approx(0.4)
        assert gains.residual <= 1e-9

    def test_coupling_matching(self):
        gains = solve_coupling_matching(make_vehicle_model(1.0), make_vehicle_model(0.4))
        np.testing.assert_allclose(gains.k, [0.0, 0.0, 0.6], atol=TOL)
        assert gains.k_r == pytest.approx(0.4)
        assert gains.exact

    def test_inexact_matching_reports_residual(self, reference):
        # input enters the second state, which cannot reach the third row of A_m
        agent = AgentModel(A=np.zeros((3, 3)), b=np.array([0.0, 1.0, 0.0]))
        gains = solve_feedback_matching(reference, agent)
        assert not gains.exact
        assert gains.residual > 1.0
