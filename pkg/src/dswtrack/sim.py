"""Synthetic ground truth, observations, disturbances and reliability features.

Sequences follow the constant-velocity / unit-circle model.  Physical
degradations are replaced by observation-space surrogates:

* ``noise-inflation`` at ``s`` dB adds zero-mean Gaussian noise with
  covariance ``R_m * 10**(-s/10)`` (0 dB doubles the noise variance);
* ``bias`` rotates the observed unit vector by ``magnitude`` degrees;
* ``dropout`` marks the stream absent.

Random numbers come from independent child streams of the scenario seed
(states, observation noise, disturbances, feature jitter), so steps outside
every disturbance interval are identical to the undisturbed sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .filtering import ObservationFrame
from .model import SystemModel, model_from_config

__all__ = [
    "KINDS",
    "CLEAN_SNR_DB",
    "Disturbance",
    "ScenarioSpec",
    "SequenceRecord",
    "simulate_sequence",
    "inject_disturbance",
    "synth_reliability",
    "scenario_seed",
    "DEFAULT_MODEL",
]

KINDS = ("noise-inflation", "bias", "dropout")
CLEAN_SNR_DB = 40.0
BIAS_SCALE_DEG = 20.0
FEATURE_JITTER_VAR = 0.01
FIELD_OF_VIEW = np.deg2rad(150.0)

DEFAULT_MODEL = {
    "model": "cv-rvm",
    "T": 0.1,
    "sigma_v2": 0.3,
    "streams": [{"label": "audio", "sigma_w2": 0.01}, {"label": "video", "sigma_w2": 0.01}],
}


def scenario_seed(master_seed: int, index: int) -> int:
    """Seed of the ``index``-th scenario derived from a master seed."""
    return int(master_seed) + int(index)


@dataclass(frozen=True)
class Disturbance:
    """``kind`` applied to ``stream`` (0-based) over steps ``start..end`` (1-based, inclusive)."""

    stream: int
    start: int
    end: int
    kind: str
    magnitude: float = 0.0

    def covers(self, k: int) -> bool:
        return self.start <= k <= self.end


@dataclass(frozen=True)
class ScenarioSpec:
    K: int = 300
    model: dict = field(default_factory=lambda: dict(DEFAULT_MODEL))
    seed: int = 0
    disturbances: tuple = ()
    init_state: tuple | None = None
    seq_id: str = ""
    group: str = ""

    def __post_init__(self):
        object.__setattr__(self, "disturbances", tuple(self.disturbances))

    def validate(self, M: int | None = None) -> None:
        if not (isinstance(self.K, (int, np.integer)) and self.K >= 1):
            raise InvalidInputError(f"sequence length K must be a positive integer, got {self.K!r}")
        _validate_schedule(self.disturbances, self.K, M)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        if not isinstance(d, dict):
            raise InvalidInputError("scenario must be a JSON object")
        model = d.get("model", DEFAULT_MODEL)
        if isinstance(model, str):
            model = dict(DEFAULT_MODEL, model=model)
        labels = [s.get("label") for s in model.get("streams", DEFAULT_MODEL["streams"])]
        dist = []
        for item in d.get("disturbances", []):
            try:
                stream = item["stream"]
                if isinstance(stream, str):
                    if stream not in labels:
                        raise InvalidInputError(f"unknown stream label {stream!r}")
                    stream = labels.index(stream)
                else:
                    stream = int(stream) - 1
                dist.append(Disturbance(stream, int(item["start"]), int(item["end"]), str(item["kind"]),
                                        float(item.get("magnitude", 0.0))))
            except (KeyError, TypeError, ValueError) as exc:
                if isinstance(exc, InvalidInputError):
                    raise
                raise InvalidInputError(f"malformed disturbance {item!r}: {exc}") from None
        init = d.get("init_state")
        try:
            return cls(
                K=int(d.get("K", 300)),
                model=model,
                seed=int(d.get("seed", 0)),
                disturbances=tuple(dist),
                init_state=None if init is None else tuple(float(v) for v in init),
                seq_id=str(d.get("seq_id", "")),
                group=str(d.get("group", "")),
            )
        except (TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed scenario: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "model": self.model,
            "seed": self.seed,
            "disturbances": [
                {"stream": d.stream + 1, "start": d.start, "end": d.end, "kind": d.kind, "magnitude": d.magnitude}
                for d in self.disturbances
            ],
            "init_state": None if self.init_state is None else list(self.init_state),
            "seq_id": self.seq_id,
            "group": self.group,
        }


def _validate_schedule(schedule: Sequence[Disturbance], K: int, M: int | None) -> None:
    for d in schedule:
        if d.kind not in KINDS:
            raise InvalidInputError(f"unknown disturbance kind {d.kind!r}; expected one of {KINDS}")
        if not (1 <= d.start <= d.end <= K):
            raise InvalidInputError(f"disturbance interval [{d.start}, {d.end}] outside [1, {K}]")
        if not np.isfinite(d.magnitude):
            raise InvalidInputError(f"disturbance magnitude must be finite, got {d.magnitude}")
        if M is not None and not (0 <= d.stream < M):
            raise InvalidInputError(f"disturbance refers to stream {d.stream + 1}, model has {M}")
    by_stream: dict[int, list] = {}
    for d in schedule:
        by_stream.setdefault(d.stream, []).append(d)
    for stream, items in by_stream.items():
        items = sorted(items, key=lambda d: d.start)
        for a, b in zip(items, items[1:]):
            if b.start <= a.end:
                raise InvalidInputError(f"overlapping disturbances on stream {stream + 1}")


@dataclass
class SequenceRecord:
    """A full trajectory: truth, per-stream observations, features, optional weights and estimates.

    ``observations[m]`` has shape ``(K, D_y_m)`` with ``nan`` rows where
    ``present[:, m]`` is false.
    """

    states: np.ndarray
    observations: list
    present: np.ndarray
    z: np.ndarray
    labels: list
    weights: np.ndarray | None = None
    estimates: np.ndarray | None = None
    seq_id: str = ""
    group: str = ""

    @property
    def K(self) -> int:
        return len(self.states)

    @property
    def M(self) -> int:
        return len(self.observations)

    @property
    def azimuth(self) -> np.ndarray:
        return self.states[:, 0]

    def frames(self) -> list[ObservationFrame]:
        return [
            ObservationFrame(
                tuple(obs[k] if self.present[k, m] else None for m, obs in enumerate(self.observations)),
                self.z[k],
            )
            for k in range(self.K)
        ]

    def copy(self) -> "SequenceRecord":
        return replace(
            self,
            states=self.states.copy(),
            observations=[o.copy() for o in self.observations],
            present=self.present.copy(),
            z=self.z.copy(),
            labels=list(self.labels),
            weights=None if self.weights is None else self.weights.copy(),
            estimates=None if self.estimates is None else self.estimates.copy(),
        )

    def to_rows(self) -> list[dict]:
        rows = []
        for k in range(self.K):
            row = {
                "k": k + 1,
                "x": self.states[k].tolist(),
                "y": {
                    label: (obs[k].tolist() if self.present[k, m] else None)
                    for m, (label, obs) in enumerate(zip(self.labels, self.observations))
                },
                "z": self.z[k].tolist(),
            }
            if self.weights is not None:
                row["weights"] = self.weights[k].tolist()
            if self.estimates is not None:
                row["est"] = self.estimates[k].tolist()
            if self.seq_id:
                row["seq_id"] = self.seq_id
            if self.group:
                row["group"] = self.group
            rows.append(row)
        return rows

    @classmethod
    def from_rows(cls, rows: Sequence[dict], labels: Sequence[str] | None = None) -> "SequenceRecord":
        rows = list(rows)
        if not rows:
            raise InvalidInputError("sequence file is empty")
        try:
            if labels is None:
                labels = list(rows[0]["y"].keys())
            K = len(rows)
            states = None
            if all("x" in r and r["x"] is not None for r in rows):
                states = np.array([r["x"] for r in rows], dtype=float)
            dims = {}
            for r in rows:
                for label in labels:
                    y = r["y"].get(label)
                    if y is not None:
                        dims.setdefault(label, len(y))
            obs = [np.full((K, dims.get(label, 2)), np.nan) for label in labels]
            present = np.zeros((K, len(labels)), dtype=bool)
            for k, r in enumerate(rows):
                for m, label in enumerate(labels):
                    y = r["y"].get(label)
                    if y is not None:
                        if len(y) != obs[m].shape[1]:
                            raise InvalidInputError(f"line {k + 1}: stream {label!r} changes dimension")
                        obs[m][k] = y
                        present[k, m] = True
            z = np.array([r.get("z", []) for r in rows], dtype=float).reshape(K, -1)
            weights = np.array([r["weights"] for r in rows], dtype=float) if all("weights" in r for r in rows) else None
            est = np.array([r["est"] for r in rows], dtype=float) if all("est" in r for r in rows) else None
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            if isinstance(exc, InvalidInputError):
                raise
            raise InvalidInputError(f"malformed sequence record: {exc}") from None
        if states is None:
            states = np.full((K, 2), np.nan)
        return cls(states, obs, present, z, list(labels), weights, est,
                   str(rows[0].get("seq_id", "")), str(rows[0].get("group", "")))

    @property
    def has_truth(self) -> bool:
        return bool(np.all(np.isfinite(self.states)))


def _psd_sqrt(a) -> np.ndarray:
    """Matrix ``S`` with ``S @ S.T == a`` for symmetric PSD ``a`` (zero allowed)."""
    vals, vecs = np.linalg.eigh(np.asarray(a, dtype=float))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _reflect(x, limit):
    phi, v = x
    while phi > limit or phi < -limit:
        if phi > limit:
            phi, v = 2 * limit - phi, -v
        else:
            phi, v = -2 * limit - phi, -v
    return np.array([phi, v])


def synth_reliability(schedule: Sequence[Disturbance], k: int, rng=None) -> np.ndarray:
    """Reliability features ``[snr_level_db, rotation_score]`` at step ``k`` (1-based).

    The first feature is the active noise-inflation level of the first
    stream (40 dB when clean), the second ``1 - |bias| / 20 deg`` of the
    second stream clipped to ``[-1, 1]`` (1 when clean).  ``rng`` adds
    ``N(0, 0.01)`` jitter to both.
    """
    snr = CLEAN_SNR_DB
    rot = 1.0
    for d in schedule:
        if not d.covers(k):
            continue
        if d.stream == 0 and d.kind == "noise-inflation":
            snr = d.magnitude
        elif d.stream == 1 and d.kind == "bias":
            rot = float(np.clip(1.0 - abs(d.magnitude) / BIAS_SCALE_DEG, -1.0, 1.0))
    z = np.array([snr, rot])
    if rng is not None:
        z = z + rng.normal(0.0, np.sqrt(FEATURE_JITTER_VAR), size=2)
    return z


def _rotation(deg):
    a = np.deg2rad(deg)
    return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])


def inject_disturbance(record: SequenceRecord, schedule: Sequence[Disturbance], model: SystemModel,
                       rng=None) -> SequenceRecord:
    """Return a disturbed copy of ``record``; the input is left untouched."""
    _validate_schedule(schedule, record.K, record.M)
    rng = np.random.default_rng(rng)
    out = record.copy()
    for d in sorted(schedule, key=lambda d: (d.stream, d.start)):
        sl = slice(d.start - 1, d.end)
        n = d.end - d.start + 1
        obs = out.observations[d.stream]
        if d.kind == "noise-inflation":
            cov = np.asarray(model.streams[d.stream].R) * 10.0 ** (-d.magnitude / 10.0)
            noise = rng.standard_normal((n, obs.shape[1])) @ _psd_sqrt(cov).T
            obs[sl] = obs[sl] + noise
        elif d.kind == "bias":
            if obs.shape[1] != 2:
                raise InvalidInputError("bias disturbances need a two-dimensional unit-circle stream")
            obs[sl] = obs[sl] @ _rotation(d.magnitude).T
        else:
            obs[sl] = np.nan
            out.present[sl, d.stream] = False
    return out


def simulate_sequence(spec: ScenarioSpec, model: SystemModel | None = None) -> SequenceRecord:
    """Sample a sequence from the generative model and apply the disturbance schedule."""
    if model is None:
        model = model_from_config(spec.model)
    spec.validate(model.M)
    ss = np.random.SeedSequence(spec.seed)
    rng_state, rng_obs, rng_dist, rng_feat = (np.random.default_rng(s) for s in ss.spawn(4))

    tm = model.transition
    q_sqrt = _psd_sqrt(tm.Q)
    if spec.init_state is None:
        x = np.array([rng_state.uniform(-np.pi / 3, np.pi / 3), 0.0])
    else:
        x = np.asarray(spec.init_state, dtype=float)
    states = np.empty((spec.K, tm.dim))
    for k in range(spec.K):
        x = np.asarray(tm.f(x), dtype=float) + q_sqrt @ rng_state.standard_normal(tm.dim)
        if tm.dim == 2:
            x = _reflect(x, FIELD_OF_VIEW)
        states[k] = x

    observations = []
    for s in model.streams:
        mean = np.array([s.h(x) for x in states], dtype=float).reshape(spec.K, s.dim)
        noise = rng_obs.standard_normal((spec.K, s.dim)) @ _psd_sqrt(s.R).T
        observations.append(mean + noise)
    present = np.ones((spec.K, model.M), dtype=bool)
    z = np.array([synth_reliability(spec.disturbances, k, rng_feat) for k in range(1, spec.K + 1)])
    record = SequenceRecord(states, observations, present, z, model.labels, seq_id=spec.seq_id, group=spec.group)
    if spec.disturbances:
        record = inject_disturbance(record, spec.disturbances, model, rng_dist)
    return record
