"""Circular RMSE, run summaries, grouped cross-validation and the runtime benchmark."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, clone

from .dswlearn import DSWLogisticRegression
from .errors import InvalidInputError
from .filtering import GaussianBelief, ObservationFrame, _symmetrize, default_initial_belief, iter_filter, predict, step
from .model import ObservationStream, SystemModel, TransitionModel, model_from_config
from .odsw import DirichletPrior, GaussianPriorParams, odsw_sequence
from .sim import DEFAULT_MODEL, Disturbance, ScenarioSpec, SequenceRecord, scenario_seed, simulate_sequence

__all__ = [
    "EvalConfig",
    "RunSummary",
    "TimingResult",
    "wrap_angle",
    "circular_rmse",
    "summarize",
    "track_record",
    "FixedWeights",
    "OracleWeights",
    "LearnedWeights",
    "CVResult",
    "cross_validate",
    "CONDITIONS",
    "condition_schedule",
    "make_suite",
    "default_methods",
    "run_suite",
    "format_table",
    "stacked_ekf_step",
    "identity_system",
    "timing_benchmark",
]


@dataclass(frozen=True)
class EvalConfig:
    grace: float = 0.1
    unit: str = "deg"

    def __post_init__(self):
        if not (0.0 <= self.grace < 0.5):
            raise InvalidInputError(f"grace fraction must lie in [0, 0.5), got {self.grace}")
        if self.unit not in ("deg", "rad"):
            raise InvalidInputError(f"unit must be 'deg' or 'rad', got {self.unit!r}")

    def first_step(self, K: int) -> int:
        """1-based index of the first scored step."""
        return int(np.floor(self.grace * K)) + 1


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    return a - 2.0 * np.pi * np.ceil((a - np.pi) / (2.0 * np.pi))


def circular_rmse(est, truth, cfg: EvalConfig = EvalConfig()) -> float:
    """RMSE of the wrapped azimuth error after the grace period.

    Inputs are radians; the result is in ``cfg.unit``.

    >>> round(circular_rmse([np.deg2rad(359.0)], [np.deg2rad(1.0)]), 10)
    2.0
    """
    est = np.asarray(est, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if est.size != truth.size:
        raise InvalidInputError(f"estimate has {est.size} steps, truth has {truth.size}")
    if est.size == 0:
        raise InvalidInputError("need at least one step")
    if not (np.all(np.isfinite(est)) and np.all(np.isfinite(truth))):
        raise InvalidInputError("azimuths must be finite")
    k0 = cfg.first_step(est.size)
    err = wrap_angle(est[k0 - 1:] - truth[k0 - 1:])
    rmse = float(np.sqrt(np.mean(err**2)))
    return float(np.rad2deg(rmse)) if cfg.unit == "deg" else rmse


@dataclass(frozen=True)
class RunSummary:
    label: str
    values: np.ndarray
    mean: float
    std: float
    single: bool = False

    def __str__(self):
        s = f"{self.mean:.2f} ± {self.std:.2f}"
        return s + " (n=1)" if self.single else s


def summarize(runs: Sequence[float], label: str = "") -> RunSummary:
    """Mean and sample standard deviation; a single run reports 0 and sets ``single``."""
    v = np.asarray(runs, dtype=float).reshape(-1)
    if v.size == 0:
        raise InvalidInputError("cannot summarise an empty list of runs")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise InvalidInputError("cRMSE values must be finite and non-negative")
    single = v.size == 1
    std = 0.0 if single else float(np.std(v, ddof=1))
    return RunSummary(label, v, float(v.mean()), std, single)


def track_record(record: SequenceRecord, model: SystemModel, weights, init: GaussianBelief | None = None,
                 **kw) -> np.ndarray:
    """Run the filter over a record and return the posterior means ``(K, D_x)``."""
    frames = record.frames()
    if init is None:
        init = default_initial_belief(frames)
    return np.array([b.mean for _, b, _ in iter_filter(init, frames, weights, model, **kw)])


# --------------------------------------------------------------------------
# weight pipelines: fit on training records, predict (K, M) weights


class FixedWeights(BaseEstimator):
    def __init__(self, weights=(0.5, 0.5)):
        self.weights = weights

    def fit(self, records, model=None):
        return self

    def predict(self, record: SequenceRecord, model=None) -> np.ndarray:
        return np.tile(np.asarray(self.weights, dtype=float), (record.K, 1))


class OracleWeights(BaseEstimator):
    """ODSW from the record's ground truth; fitting does nothing."""

    def __init__(self, prior="dirichlet", alpha=1.1, mu=0.5, sigma2=0.1):
        self.prior = prior
        self.alpha = alpha
        self.mu = mu
        self.sigma2 = sigma2

    def _prior(self):
        if self.prior == "dirichlet":
            return DirichletPrior(self.alpha)
        if self.prior == "gaussian":
            return GaussianPriorParams(self.mu, self.sigma2)
        raise InvalidInputError(f"unknown prior {self.prior!r}")

    def fit(self, records, model=None):
        return self

    def predict(self, record: SequenceRecord, model: SystemModel) -> np.ndarray:
        if not record.has_truth:
            raise InvalidInputError("oracle weights need ground-truth states")
        return odsw_sequence(record.states, record.frames(), model, self._prior())


class LearnedWeights(BaseEstimator):
    """Logistic predictor trained on Dirichlet ODSW targets of the training records.

    ``train_ids_`` lists the sequence ids seen during ``fit``; the
    cross-validation harness checks it against the held-out fold.
    """

    def __init__(self, alpha=1.1, learning_rate=0.05, epochs=200, batch_size=32, random_state=0):
        self.alpha = alpha
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, records, model: SystemModel):
        records = list(records)
        if not records:
            raise InvalidInputError("no training records")
        if model.M != 2:
            raise InvalidInputError(f"the logistic predictor handles two streams, model has {model.M}")
        prior = DirichletPrior(self.alpha)
        Z = np.vstack([r.z for r in records])
        T = np.vstack([odsw_sequence(r.states, r.frames(), model, prior) for r in records])
        self.estimator_ = DSWLogisticRegression(self.learning_rate, self.epochs, self.batch_size,
                                                self.random_state).fit(Z, T)
        self.train_ids_ = [r.seq_id for r in records]
        return self

    def predict(self, record: SequenceRecord, model=None) -> np.ndarray:
        return self.estimator_.predict(record.z)


# --------------------------------------------------------------------------
# cross-validation


@dataclass
class CVResult:
    folds: dict
    pooled: RunSummary
    rows: list = field(default_factory=list)  # (group, seq_id, crmse)


def _evaluate(record, model, weights, cfg):
    est = track_record(record, model, weights)
    return circular_rmse(est[:, 0], record.azimuth, cfg)


def cross_validate(groups: Mapping[str, Sequence[SequenceRecord]], pipeline, model: SystemModel,
                   cfg: EvalConfig = EvalConfig(), label: str = "") -> CVResult:
    """Leave-one-group-out evaluation of a weight pipeline.

    For every group a fresh clone of ``pipeline`` is fitted on the records
    of all other groups and used to track each held-out record.
    """
    if len(groups) < 2:
        raise InvalidInputError(f"cross-validation needs at least 2 groups, got {len(groups)}")
    for g, recs in groups.items():
        if len(recs) == 0:
            raise InvalidInputError(f"group {g!r} has no sequences")
    ids = [r.seq_id for recs in groups.values() for r in recs]
    if any(not i for i in ids) or len(set(ids)) != len(ids):
        raise InvalidInputError("every sequence needs a unique non-empty seq_id")

    folds, rows = {}, []
    for g, held_out in groups.items():
        train = [r for h, recs in groups.items() if h != g for r in recs]
        fitted = clone(pipeline).fit(train, model)
        seen = set(getattr(fitted, "train_ids_", ()))
        leaked = seen & {r.seq_id for r in held_out}
        if leaked:
            raise InvalidInputError(f"fold {g!r}: held-out sequences used for training: {sorted(leaked)}")
        values = []
        for r in held_out:
            c = _evaluate(r, model, fitted.predict(r, model), cfg)
            values.append(c)
            rows.append((g, r.seq_id, c))
        folds[g] = summarize(values, f"{label}{'/' if label else ''}{g}")
    return CVResult(folds, summarize([c for _, _, c in rows], label), rows)


# --------------------------------------------------------------------------
# synthetic condition suite


CONDITIONS = {
    "clean": None,
    "snr30": ("noise-inflation", 0, 30.0),
    "snr15": ("noise-inflation", 0, 15.0),
    "snr0": ("noise-inflation", 0, 0.0),
    "rot10": ("bias", 1, 10.0),
    "rot15": ("bias", 1, 15.0),
    "rot20": ("bias", 1, 20.0),
}


def condition_schedule(name: str, K: int, fraction: float = 0.5) -> tuple:
    """Disturbance applied over the last ``fraction`` of the sequence."""
    if name not in CONDITIONS:
        raise InvalidInputError(f"unknown condition {name!r}; choose from {sorted(CONDITIONS)}")
    entry = CONDITIONS[name]
    if entry is None:
        return ()
    kind, stream, magnitude = entry
    start = K - int(round(fraction * K)) + 1
    return (Disturbance(stream, start, K, kind, magnitude),)


def make_suite(condition: str, n_sequences: int = 20, K: int = 300, seed: int = 0, n_groups: int = 4,
               model_cfg: dict | None = None, fraction: float = 0.5) -> dict:
    """Seeded sequences split round-robin into groups.

    Sequence ``i`` uses seed ``seed + i`` in every condition, so conditions
    share ground truth and differ only inside the disturbance interval.
    """
    if n_groups < 1 or n_sequences < n_groups:
        raise InvalidInputError("need at least one sequence per group")
    cfg = model_cfg or DEFAULT_MODEL
    model = model_from_config(cfg)
    groups: dict = {f"g{j + 1}": [] for j in range(n_groups)}
    sched = condition_schedule(condition, K, fraction)
    for i in range(n_sequences):
        g = f"g{i % n_groups + 1}"
        spec = ScenarioSpec(K=K, model=cfg, seed=scenario_seed(seed, i), disturbances=sched,
                            seq_id=f"{condition}/s{i + 1:03d}", group=g)
        groups[g].append(simulate_sequence(spec, model))
    return groups


def default_methods(alpha=1.1, mu=0.5, sigma2=0.1, seed=0) -> dict:
    return {
        "ekf-audio": FixedWeights((1.0, 0.0)),
        "ekf-video": FixedWeights((0.0, 1.0)),
        "ekf-av": FixedWeights((0.5, 0.5)),
        "odsw-gauss": OracleWeights("gaussian", mu=mu, sigma2=sigma2),
        "odsw-dir": OracleWeights("dirichlet", alpha=alpha),
        "dsw-learned": LearnedWeights(alpha=alpha, random_state=seed),
    }


def run_suite(conditions: Sequence[str], methods: Mapping[str, BaseEstimator], n_sequences=20, K=300, seed=0,
              n_groups=4, cfg: EvalConfig = EvalConfig(), model_cfg: dict | None = None):
    """Cross-validate every method on the pooled conditions.

    Training folds mix all conditions of the other groups.

    Returns
    -------
    rows : list of (condition, method, seq_id, crmse_deg)
    summaries : dict mapping (method, condition) to RunSummary
    """
    model = model_from_config(model_cfg or DEFAULT_MODEL)
    pooled: dict = {}
    cond_of = {}
    for c in conditions:
        for g, recs in make_suite(c, n_sequences, K, seed, n_groups, model_cfg).items():
            pooled.setdefault(g, []).extend(recs)
            cond_of.update({r.seq_id: c for r in recs})
    rows, per = [], {}
    for name, pipe in methods.items():
        res = cross_validate(pooled, pipe, model, cfg, label=name)
        for _, sid, crmse in res.rows:
            rows.append((cond_of[sid], name, sid, crmse))
            per.setdefault((name, cond_of[sid]), []).append(crmse)
    summaries = {key: summarize(v, f"{key[0]}/{key[1]}") for key, v in per.items()}
    return rows, summaries


def format_table(summaries: Mapping, methods: Sequence[str], conditions: Sequence[str]) -> str:
    """Aligned text table, one row per method and one column per condition."""
    head = ["method"] + list(conditions)
    body = [[m] + [str(summaries[(m, c)]) if (m, c) in summaries else "-" for c in conditions] for m in methods]
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in [head] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


# --------------------------------------------------------------------------
# runtime benchmark


@dataclass(frozen=True)
class TimingResult:
    dx: int
    dym: int
    m: int
    ratio_mean: float
    ratio_std: float
    ratio_median: float
    ratios: tuple = ()


def stacked_ekf_step(belief: GaussianBelief, y, tm: TransitionModel, H, R) -> GaussianBelief:
    """Textbook linear EKF step on one stacked observation vector."""
    p = predict(belief, tm)
    x, P = p.mean, p.cov
    S = H @ P @ H.T + R
    K = np.linalg.solve(S, H @ P).T
    return GaussianBelief(x + K @ (y - H @ x), _symmetrize((np.eye(x.size) - K @ H) @ P))


def identity_system(dx: int, dym: int, m: int):
    """Linear model with identity transition, noise and (rectangular) observation matrices.

    Returns the M-stream model plus the stacked ``(H, R)`` of the equivalent
    single-stream EKF.
    """
    if min(dx, dym, m) < 1:
        raise InvalidInputError("dimensions and stream count must be positive")
    I = np.eye(dx)
    I.setflags(write=False)
    Hm = np.eye(dym, dx)
    Hm.setflags(write=False)
    tm = TransitionModel(lambda x: x, lambda x: I, I, dx)
    streams = tuple(
        ObservationStream(lambda x: Hm @ x, lambda x: Hm, np.eye(dym), f"s{j + 1}", dym) for j in range(m)
    )
    return SystemModel(tm, streams), np.vstack([Hm] * m), np.eye(m * dym)


def timing_benchmark(grid: Sequence[tuple], runs: int = 25, steps: int = 100, seed: int = 0,
                     clock: Callable[[], float] = time.perf_counter) -> list[TimingResult]:
    """Wall-clock ratio of the weighted filter (uniform weights) to a stacked EKF.

    Each condition runs ``runs + 1`` Monte-Carlo repetitions on random
    observation sequences; the first is a discarded warm-up.  Both filters
    share the prediction step and the belief type.
    """
    grid = [tuple(int(v) for v in g) for g in grid]
    if not grid:
        raise InvalidInputError("benchmark grid is empty")
    if runs < 1 or steps < 1:
        raise InvalidInputError("runs and steps must be positive")
    rng = np.random.default_rng(seed)
    out = []
    for dx, dym, m in grid:
        model, Hs, Rs = identity_system(dx, dym, m)
        lam = np.full(m, 1.0 / m)
        ratios = []
        for r in range(runs + 1):
            ys = rng.standard_normal((steps, m * dym))
            frames = [ObservationFrame(tuple(y.reshape(m, dym))) for y in ys]
            b = GaussianBelief(np.zeros(dx), np.eye(dx))
            t0 = clock()
            for f in frames:
                b = step(b, f, lam, model)
            t1 = clock()
            b = GaussianBelief(np.zeros(dx), np.eye(dx))
            for y in ys:
                b = stacked_ekf_step(b, y, model.transition, Hs, Rs)
            t2 = clock()
            if r > 0:
                ratios.append((t1 - t0) / (t2 - t1))
        ratios = np.array(ratios)
        out.append(TimingResult(dx, dym, m, float(ratios.mean()), float(ratios.std(ddof=1)) if runs > 1 else 0.0,
                                float(np.median(ratios)), tuple(ratios.tolist())))
    return out
