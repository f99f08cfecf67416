"""Stream-weight prediction from reliability features.

Two-stream logistic model trained on oracle weights with cross-entropy and
mini-batch SGD.  The logistic uses the convention

    lambda_1 = 1 / (1 + exp(z^T w + b)),    lambda_2 = 1 - lambda_1,

so a large positive logit sends the first stream's weight towards zero.

The functional API (``predict_weights``, ``loss_gradient``, ``train_sgd``)
operates on the model inputs as given.  :class:`LogisticPredictor` and the
scikit-learn style :class:`DSWLogisticRegression` additionally carry the
per-feature standardisation learned on the training set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import InvalidInputError, TrainingFailureError

__all__ = [
    "EPS",
    "FeatureStats",
    "LogisticPredictor",
    "TrainingSet",
    "SgdConfig",
    "predict_weights",
    "cross_entropy_loss",
    "loss_gradient",
    "standardize_features",
    "train_sgd",
    "FeatureStandardizer",
    "DSWLogisticRegression",
]

EPS = 1e-12


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(-1))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=float).reshape(-1))
        if self.constant is None:
            object.__setattr__(self, "constant", np.zeros(self.mean.size, dtype=bool))

    @classmethod
    def identity(cls, d):
        return cls(np.zeros(d), np.ones(d))

    def apply(self, Z) -> np.ndarray:
        return (np.asarray(Z, dtype=float) - self.mean) / self.std


@dataclass
class LogisticPredictor:
    w: np.ndarray
    b: float = 0.0
    feature_stats: FeatureStats | None = None

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float).reshape(-1)
        self.b = float(self.b)
        if not (np.all(np.isfinite(self.w)) and np.isfinite(self.b)):
            raise InvalidInputError("predictor parameters must be finite")

    def __call__(self, z) -> np.ndarray:
        """Weights for raw (unstandardised) features."""
        if self.feature_stats is not None:
            z = self.feature_stats.apply(z)
        return predict_weights(z, self)

    def to_dict(self) -> dict:
        stats = self.feature_stats or FeatureStats.identity(self.w.size)
        return {
            "w": self.w.tolist(),
            "b": self.b,
            "feature_stats": {"mean": stats.mean.tolist(), "std": stats.std.tolist()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticPredictor":
        try:
            w = np.asarray(d["w"], dtype=float)
            stats = d.get("feature_stats")
            fs = None if stats is None else FeatureStats(stats["mean"], stats["std"])
            p = cls(w, float(d["b"]), fs)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidInputError):
                raise
            raise InvalidInputError(f"malformed predictor document: {exc}") from None
        if fs is not None and (fs.mean.size != w.size or fs.std.size != w.size):
            raise InvalidInputError("feature statistics do not match the weight vector")
        return p

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "LogisticPredictor":
        return cls.from_dict(json.loads(s))


@dataclass
class TrainingSet:
    """Rows of reliability features ``Z`` with oracle weight targets ``(n, 2)``."""

    Z: np.ndarray
    targets: np.ndarray
    stats: FeatureStats | None = None
    groups: np.ndarray | None = None

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim == 1:
            Z = Z.reshape(-1, 1) if Z.size else Z.reshape(0, 0)
        T = np.asarray(self.targets, dtype=float)
        if T.ndim == 1:
            T = np.column_stack([T, 1.0 - T])
        if Z.shape[0] != T.shape[0]:
            raise InvalidInputError(f"{Z.shape[0]} feature rows but {T.shape[0]} targets")
        if T.shape[1] != 2:
            raise InvalidInputError("the logistic predictor handles exactly two streams")
        if np.any(T < 0) or np.any(T > 1) or np.any(np.abs(T.sum(axis=1) - 1) > 1e-9):
            raise InvalidInputError("targets must lie on the simplex")
        self.Z, self.targets = Z, T

    def __len__(self):
        return self.Z.shape[0]


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.05
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.epochs > 0 and self.batch_size > 0 and self.seed >= 0):
            raise InvalidInputError(f"SGD settings must be positive, got {self}")


def _logit(z, p: LogisticPredictor):
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != p.w.size:
        raise InvalidInputError(f"feature dimension {z.shape[-1]} does not match predictor ({p.w.size})")
    return z @ p.w + p.b


def _lambda1(s):
    # 1 / (1 + exp(s)) == expit(-s), clipped away from the simplex corners
    with np.errstate(over="ignore"):
        lam = 1.0 / (1.0 + np.exp(s))
    return np.clip(lam, EPS, 1.0 - EPS)


def predict_weights(z, p: LogisticPredictor) -> np.ndarray:
    """``[lambda_1, 1 - lambda_1]`` for one feature vector or a batch of rows."""
    lam1 = _lambda1(_logit(z, p))
    return np.stack([lam1, 1.0 - lam1], axis=-1)


def cross_entropy_loss(pred, target) -> float:
    """Mean over rows of ``-sum_m target_m log pred_m``."""
    pred = np.clip(np.asarray(pred, dtype=float), EPS, 1.0)
    target = np.asarray(target, dtype=float)
    return float(np.mean(-np.sum(target * np.log(pred), axis=-1)))


def loss_gradient(z, p: LogisticPredictor, target):
    """Gradient of the mean cross-entropy with respect to ``(w, b)``.

    With ``lambda_1 = 1 / (1 + exp(s))`` the derivative with respect to the
    logit ``s`` is ``target_1 - lambda_1``.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    t1 = np.atleast_2d(np.asarray(target, dtype=float))[:, 0]
    g = t1 - _lambda1(_logit(z, p))
    return z.T @ g / len(g), float(g.mean())


def standardize_features(data) -> TrainingSet:
    """Z-score each feature column; zero-variance columns pass through unchanged and are flagged."""
    if not isinstance(data, TrainingSet):
        Z, T = data
        data = TrainingSet(Z, T)
    if len(data) == 0:
        raise InvalidInputError("cannot standardise an empty training set")
    Z = data.Z
    mean = Z.mean(axis=0)
    std = Z.std(axis=0)
    constant = ~(std > 0)
    mean = np.where(constant, 0.0, mean)
    std = np.where(constant, 1.0, std)
    stats = FeatureStats(mean, std, constant)
    return TrainingSet(stats.apply(Z), data.targets.copy(), stats, data.groups)


def _canonical_order(Z, T) -> np.ndarray:
    keys = [T[:, 0]] + [Z[:, j] for j in range(Z.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def train_sgd(data: TrainingSet, cfg: SgdConfig = SgdConfig(), init: LogisticPredictor | None = None):
    """Mini-batch SGD on the standardised features.

    Rows are put into a canonical order before standardisation and the
    seeded shuffle, so the result does not depend on the input row order.

    Returns
    -------
    predictor : LogisticPredictor
        Includes the standardisation statistics.
    losses : ndarray of shape (epochs,)
        Mean mini-batch loss of every epoch.
    """
    if len(data) == 0:
        raise InvalidInputError("training set is empty")
    order = _canonical_order(data.Z, data.targets)
    std = standardize_features(TrainingSet(data.Z[order], data.targets[order]))
    Z, T = std.Z, std.targets
    n, d = Z.shape
    w = np.zeros(d) if init is None else np.array(init.w, dtype=float)
    b = 0.0 if init is None else float(init.b)
    rng = np.random.default_rng(cfg.seed)
    losses = np.empty(cfg.epochs)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            zb, tb = Z[idx], T[idx]
            with np.errstate(over="ignore", invalid="ignore"):  # divergence is checked below
                lam1 = _lambda1(zb @ w + b)
                total += len(idx) * cross_entropy_loss(np.column_stack([lam1, 1 - lam1]), tb)
                g = tb[:, 0] - lam1
                w -= cfg.learning_rate * (zb.T @ g) / len(idx)
                b -= cfg.learning_rate * g.mean()
        losses[epoch] = total / n
        if not (np.isfinite(losses[epoch]) and np.all(np.isfinite(w)) and np.isfinite(b)):
            raise TrainingFailureError(
                f"SGD diverged in epoch {epoch + 1}; try a smaller learning rate than {cfg.learning_rate}",
                quantity="loss",
            )
    return LogisticPredictor(w, b, std.stats), losses


class FeatureStandardizer(TransformerMixin, BaseEstimator):
    """Per-feature z-scoring that leaves constant columns untouched."""

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=0)
        stats = standardize_features(TrainingSet(X, np.full(len(X), 0.5))).stats
        self.mean_, self.scale_, self.constant_ = stats.mean, stats.std, stats.constant
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, ensure_min_features=0)
        if X.shape[1] != self.n_features_in_:
            raise InvalidInputError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return (X - self.mean_) / self.scale_


class DSWLogisticRegression(BaseEstimator):
    """Two-stream logistic stream-weight predictor.

    Parameters
    ----------
    learning_rate : float, default=0.05
    epochs : int, default=200
    batch_size : int, default=32
    random_state : int, default=0
        Seed of the mini-batch shuffle.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
    intercept_ : float
    feature_stats_ : FeatureStats
    loss_curve_ : ndarray of shape (epochs,)
    """

    def __init__(self, learning_rate=0.05, epochs=200, batch_size=32, random_state=0):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        """``y`` holds the first stream's target weight ``(n,)`` or full weights ``(n, 2)``."""
        X = check_array(X, ensure_min_features=0)
        y = np.asarray(y, dtype=float)
        cfg = SgdConfig(self.learning_rate, self.epochs, self.batch_size, self.random_state)
        self.predictor_, self.loss_curve_ = train_sgd(TrainingSet(X, y), cfg)
        self.coef_ = self.predictor_.w
        self.intercept_ = self.predictor_.b
        self.feature_stats_ = self.predictor_.feature_stats
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        """Stream weights, shape ``(n, 2)``."""
        check_is_fitted(self, "predictor_")
        X = check_array(X, ensure_min_features=0)
        return self.predictor_(X)

    def score(self, X, y):
        """Negative mean cross-entropy (higher is better)."""
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = np.column_stack([y, 1 - y])
        return -cross_entropy_loss(self.predict(X), y)
