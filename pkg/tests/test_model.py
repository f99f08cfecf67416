import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dswtrack.errors import InvalidInputError
from dswtrack.model import (
    CvParams,
    ObservationStream,
    SystemModel,
    TransitionModel,
    cv_process_noise,
    cv_rvm_model,
    cv_transition,
    model_from_config,
    model_to_config,
    numerical_jacobian,
    rvm_jacobian,
    rvm_observe,
    validate_model,
)

angles = st.floats(-10.0, 10.0, allow_nan=False)


class TestCvRvm:
    def test_transition_example(self):
        np.testing.assert_allclose(cv_transition([0.0, 1.0], CvParams(T=0.1)), [0.1, 1.0])

    def test_process_noise_closed_form(self):
        Q = cv_process_noise(CvParams(T=0.1, sigma_v2=0.3))
        np.testing.assert_allclose(Q, 0.3 * np.array([[1e-3 / 3, 5e-3], [5e-3, 0.1]]))
        assert np.all(np.linalg.eigvalsh(Q) > 0)

    def test_zero_process_noise_allowed(self):
        assert not np.any(cv_process_noise(CvParams(sigma_v2=0.0)))

    @given(angles, angles)
    def test_observation_on_unit_circle(self, phi, v):
        y = rvm_observe([phi, v])
        assert np.hypot(*y) == pytest.approx(1.0, abs=1e-12)

    @given(angles, angles)
    @settings(max_examples=50)
    def test_jacobian_matches_finite_differences(self, phi, v):
        x = np.array([phi, v])
        np.testing.assert_allclose(rvm_jacobian(x), numerical_jacobian(rvm_observe, x), atol=1e-8)

    def test_two_pi_periodicity(self):
        np.testing.assert_allclose(rvm_observe([0.3, 0]), rvm_observe([0.3 + 2 * np.pi, 0]), atol=1e-15)

    @pytest.mark.parametrize("bad", [[np.nan, 0.0], [0.0, np.inf], [1.0, 2.0, 3.0]])
    def test_rejects_bad_states(self, bad):
        with pytest.raises(InvalidInputError):
            rvm_observe(bad)
        with pytest.raises(InvalidInputError):
            cv_transition(bad, CvParams())

    @pytest.mark.parametrize("kw", [{"T": 0.0}, {"T": -1.0}, {"sigma_v2": -0.1}, {"T": np.nan}])
    def test_rejects_bad_params(self, kw):
        with pytest.raises(InvalidInputError):
            CvParams(**kw)


class TestConfig:
    def test_roundtrip(self):
        m = cv_rvm_model()
        m2 = model_from_config(model_to_config(m))
        assert m2.labels == ["audio", "video"]
        np.testing.assert_array_equal(m2.transition.Q, m.transition.Q)

    def test_unknown_model(self):
        with pytest.raises(InvalidInputError, match="unknown model"):
            model_from_config({"model": "ca"})

    def test_duplicate_labels(self):
        with pytest.raises(InvalidInputError, match="unique"):
            model_from_config({"streams": [{"label": "a"}, {"label": "a"}]})

    def test_custom_model_not_serializable(self):
        tm = TransitionModel(lambda x: x, lambda x: np.eye(1), np.eye(1))
        m = SystemModel(tm, (ObservationStream(lambda x: x, lambda x: np.eye(1), np.eye(1)),))
        with pytest.raises(InvalidInputError):
            model_to_config(m)

    def test_arrays_read_only(self):
        m = cv_rvm_model()
        with pytest.raises(ValueError):
            m.transition.Q[0, 0] = 1.0


class TestValidateModel:
    def test_reference_model_is_clean(self):
        assert validate_model(cv_rvm_model()) == []

    def test_zero_noise_reported(self):
        m = cv_rvm_model()
        s = m.streams[0]
        bad = SystemModel(m.transition, (ObservationStream(s.h, s.jacobian, np.zeros((2, 2)), "a"), m.streams[1]))
        assert "R_1 not positive definite" in validate_model(bad)

    def test_asymmetric_noise_reported(self):
        m = cv_rvm_model()
        s = m.streams[1]
        R = np.array([[0.01, 0.005], [0.0, 0.01]])
        bad = SystemModel(m.transition, (m.streams[0], ObservationStream(s.h, s.jacobian, R, "v")))
        assert "R_2 not symmetric" in validate_model(bad)

    def test_wrong_jacobian_reported(self):
        m = cv_rvm_model()
        s = m.streams[0]
        wrong = ObservationStream(s.h, lambda x: -rvm_jacobian(x), s.R, "a")
        problems = validate_model(SystemModel(m.transition, (wrong,)))
        assert any("h_1 Jacobian disagrees" in p for p in problems)

    def test_never_raises(self):
        def boom(x):
            raise RuntimeError("boom")

        tm = TransitionModel(boom, boom, -np.eye(2))
        problems = validate_model(SystemModel(tm, (ObservationStream(boom, boom, np.eye(2)),)))
        assert any("Q not positive semidefinite" in p for p in problems)
        assert any("could not be evaluated" in p for p in problems)

    def test_lazy_inverse_raises_on_use(self):
        s = ObservationStream(rvm_observe, rvm_jacobian, np.zeros((2, 2)))
        with pytest.raises(InvalidInputError, match="positive definite"):
            s.R_inv
