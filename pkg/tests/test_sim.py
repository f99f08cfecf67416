import numpy as np
import pytest

from dswtrack.errors import InvalidInputError
from dswtrack.model import ObservationStream, SystemModel, TransitionModel, cv_rvm_model, rvm_jacobian, rvm_observe
from dswtrack.odsw import stream_loglik
from dswtrack.sim import (
    Disturbance,
    ScenarioSpec,
    SequenceRecord,
    inject_disturbance,
    scenario_seed,
    simulate_sequence,
    synth_reliability,
)


def noiseless_model():
    F = np.array([[1.0, 0.1], [0.0, 1.0]])
    tm = TransitionModel(lambda x: F @ x, lambda x: F, np.zeros((2, 2)), 2)
    s = [ObservationStream(rvm_observe, rvm_jacobian, np.zeros((2, 2)), lab, 2) for lab in ("audio", "video")]
    return SystemModel(tm, tuple(s))


def records_equal(a: SequenceRecord, b: SequenceRecord) -> bool:
    return (np.array_equal(a.states, b.states) and np.array_equal(a.z, b.z) and np.array_equal(a.present, b.present)
            and all(np.array_equal(x, y, equal_nan=True) for x, y in zip(a.observations, b.observations)))


class TestSimulate:
    def test_noiseless_observations_exact(self):
        rec = simulate_sequence(ScenarioSpec(K=50, seed=1), noiseless_model())
        for obs in rec.observations:
            np.testing.assert_array_equal(obs, np.array([rvm_observe(x) for x in rec.states]))

    def test_seeded_determinism(self):
        spec = ScenarioSpec(K=100, seed=7, disturbances=(Disturbance(0, 20, 40, "noise-inflation", 0.0),))
        assert records_equal(simulate_sequence(spec), simulate_sequence(spec))
        assert not records_equal(simulate_sequence(spec), simulate_sequence(ScenarioSpec(K=100, seed=8)))

    def test_residual_covariance_matches_noise(self):
        model = cv_rvm_model()
        rec = simulate_sequence(ScenarioSpec(K=100_000, seed=42), model)
        for obs, s in zip(rec.observations, model.streams):
            res = obs - np.array([rvm_observe(x) for x in rec.states])
            C = np.cov(res.T)
            assert np.linalg.norm(C - s.R) <= 0.03 * np.linalg.norm(s.R)

    def test_field_of_view(self):
        rec = simulate_sequence(ScenarioSpec(K=3000, seed=3))
        assert np.abs(rec.azimuth).max() <= np.deg2rad(150.0) + 1e-12

    def test_true_states_more_likely_than_perturbed(self):
        model = cv_rvm_model()
        rec = simulate_sequence(ScenarioSpec(K=1000, seed=42), model)
        off = rec.states + [3 * np.sqrt(0.01), 0.0]
        for m, s in enumerate(model.streams):
            true = np.mean([stream_loglik(y, x, s) for y, x in zip(rec.observations[m], rec.states)])
            pert = np.mean([stream_loglik(y, x, s) for y, x in zip(rec.observations[m], off)])
            assert true > pert

    def test_disturbance_locality(self):
        d = (Disturbance(0, 101, 150, "noise-inflation", 0.0), Disturbance(1, 60, 80, "bias", 15.0),
             Disturbance(1, 120, 130, "dropout"))
        clean = simulate_sequence(ScenarioSpec(K=200, seed=9))
        dist = simulate_sequence(ScenarioSpec(K=200, seed=9, disturbances=d))
        np.testing.assert_array_equal(clean.states, dist.states)
        inside = np.zeros((200, 2), dtype=bool)
        for x in d:
            inside[x.start - 1:x.end, x.stream] = True
        for m in range(2):
            np.testing.assert_array_equal(clean.observations[m][~inside[:, m]], dist.observations[m][~inside[:, m]])
            assert not np.array_equal(clean.observations[m][inside[:, m]], dist.observations[m][inside[:, m]])
        outside_all = ~inside.any(axis=1)
        np.testing.assert_array_equal(clean.z[outside_all], dist.z[outside_all])

    def test_scenario_seed_rule(self):
        assert scenario_seed(100, 3) == 103


class TestInject:
    def setup_method(self):
        self.model = cv_rvm_model()
        self.rec = simulate_sequence(ScenarioSpec(K=100, seed=5), self.model)

    def test_vanishing_inflation(self):
        out = inject_disturbance(self.rec, [Disturbance(0, 1, 100, "noise-inflation", 300.0)], self.model, 0)
        np.testing.assert_allclose(out.observations[0], self.rec.observations[0], atol=1e-12)

    def test_zero_db_doubles_variance(self):
        model = cv_rvm_model()
        rec = simulate_sequence(ScenarioSpec(K=100_000, seed=11), model)
        out = inject_disturbance(rec, [Disturbance(0, 1, 100_000, "noise-inflation", 0.0)], model, 1)
        added = out.observations[0] - rec.observations[0]
        np.testing.assert_allclose(added.var(axis=0), 0.01, rtol=0.03)
        res = out.observations[0] - np.array([rvm_observe(x) for x in rec.states])
        np.testing.assert_allclose(res.var(axis=0), 0.02, rtol=0.03)

    def test_bias_rotates_exactly(self):
        out = inject_disturbance(self.rec, [Disturbance(1, 10, 20, "bias", 12.5)], self.model)
        a = self.rec.observations[1][9:20]
        b = out.observations[1][9:20]
        dphi = np.arctan2(b[:, 1], b[:, 0]) - np.arctan2(a[:, 1], a[:, 0])
        np.testing.assert_allclose(np.rad2deg(np.angle(np.exp(1j * dphi))), 12.5, atol=1e-10)
        np.testing.assert_allclose(np.linalg.norm(b, axis=1), np.linalg.norm(a, axis=1), rtol=1e-14)

    def test_dropout(self):
        out = inject_disturbance(self.rec, [Disturbance(0, 5, 9, "dropout")], self.model)
        assert not out.present[4:9, 0].any() and out.present[:4, 0].all()
        frames = out.frames()
        assert frames[4].observations[0] is None and frames[3].observations[0] is not None

    def test_input_untouched(self):
        before = self.rec.observations[0].copy()
        inject_disturbance(self.rec, [Disturbance(0, 1, 100, "noise-inflation", 0.0)], self.model, 0)
        np.testing.assert_array_equal(self.rec.observations[0], before)

    @pytest.mark.parametrize(
        "sched",
        [
            [Disturbance(0, 1, 50, "bias", 5.0), Disturbance(0, 50, 60, "dropout")],
            [Disturbance(0, 0, 10, "bias", 5.0)],
            [Disturbance(0, 90, 101, "bias", 5.0)],
            [Disturbance(0, 1, 10, "blur", 5.0)],
            [Disturbance(0, 1, 10, "bias", np.inf)],
            [Disturbance(2, 1, 10, "bias", 1.0)],
        ],
    )
    def test_invalid_schedules(self, sched):
        with pytest.raises(InvalidInputError):
            inject_disturbance(self.rec, sched, self.model)

    def test_overlap_on_different_streams_allowed(self):
        inject_disturbance(self.rec, [Disturbance(0, 1, 50, "bias", 5.0), Disturbance(1, 1, 50, "dropout")],
                           self.model)


class TestReliability:
    def test_clean_levels(self):
        np.testing.assert_array_equal(synth_reliability([], 1), [40.0, 1.0])

    def test_disturbed_levels(self):
        sched = [Disturbance(0, 1, 10, "noise-inflation", 0.0), Disturbance(1, 1, 10, "bias", 20.0)]
        np.testing.assert_array_equal(synth_reliability(sched, 5), [0.0, 0.0])
        np.testing.assert_array_equal(synth_reliability(sched, 11), [40.0, 1.0])

    def test_clipping(self):
        assert synth_reliability([Disturbance(1, 1, 1, "bias", -60.0)], 1)[1] == -1.0

    def test_jitter_variance(self):
        rng = np.random.default_rng(42)
        z = np.array([synth_reliability([], 1, rng) for _ in range(20_000)])
        np.testing.assert_allclose(z.mean(axis=0), [40.0, 1.0], atol=0.005)
        np.testing.assert_allclose(z.var(axis=0), 0.01, rtol=0.05)


class TestSerialization:
    def test_record_rows_roundtrip(self):
        spec = ScenarioSpec(K=20, seed=2, disturbances=(Disturbance(1, 3, 5, "dropout"),), seq_id="a", group="g")
        rec = simulate_sequence(spec)
        rows = rec.to_rows()
        assert rows[3]["y"]["video"] is None
        assert set(rows[0]) == {"k", "x", "y", "z", "seq_id", "group"}
        back = SequenceRecord.from_rows(rows)
        assert records_equal(rec, back)
        assert back.seq_id == "a" and back.group == "g"

    def test_record_without_truth(self):
        rows = [{"k": 1, "y": {"a": [1.0, 0.0]}, "z": []}]
        assert not SequenceRecord.from_rows(rows).has_truth

    def test_inconsistent_dimension(self):
        rows = [{"k": 1, "y": {"a": [1.0, 0.0]}}, {"k": 2, "y": {"a": [1.0]}}]
        with pytest.raises(InvalidInputError, match="dimension"):
            SequenceRecord.from_rows(rows)

    def test_spec_roundtrip(self):
        spec = ScenarioSpec(K=30, seed=4, disturbances=(Disturbance(0, 2, 9, "bias", 10.0),))
        again = ScenarioSpec.from_dict(spec.to_dict())
        assert again == spec

    def test_spec_stream_labels(self):
        spec = ScenarioSpec.from_dict({"K": 10, "disturbances": [
            {"stream": "video", "start": 1, "end": 2, "kind": "dropout"}]})
        assert spec.disturbances[0].stream == 1
        with pytest.raises(InvalidInputError, match="unknown stream"):
            ScenarioSpec.from_dict({"disturbances": [{"stream": "lidar", "start": 1, "end": 2, "kind": "dropout"}]})

    def test_spec_invalid_length(self):
        with pytest.raises(InvalidInputError):
            simulate_sequence(ScenarioSpec(K=0))
