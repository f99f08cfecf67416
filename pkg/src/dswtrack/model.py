"""Dynamical-system abstraction and the constant-velocity / unit-circle tracking model.

A :class:`SystemModel` couples one :class:`TransitionModel` with ``M``
independent :class:`ObservationStream` objects.  Observation functions return
noiseless means; noise is sampled only by :mod:`dswtrack.sim`.  Angles are in
radians throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import block_diag

from .errors import InvalidInputError

__all__ = [
    "TransitionModel",
    "ObservationStream",
    "SystemModel",
    "CvParams",
    "RvmParams",
    "cv_transition",
    "cv_transition_matrix",
    "cv_process_noise",
    "rvm_observe",
    "rvm_jacobian",
    "cv_rvm_model",
    "model_from_config",
    "model_to_config",
    "validate_model",
    "numerical_jacobian",
]


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TransitionModel:
    """State transition ``x_k = f(x_{k-1}) + v_k`` with ``v_k ~ N(0, Q)``."""

    f: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    Q: np.ndarray
    dim: int = field(default=0)

    def __post_init__(self):
        Q = _frozen(self.Q)
        object.__setattr__(self, "Q", Q)
        if self.dim == 0:
            object.__setattr__(self, "dim", Q.shape[0])


@dataclass(frozen=True)
class ObservationStream:
    """One sensor: ``y_m = h_m(x) + w_m`` with ``w_m ~ N(0, R_m)``.

    ``R_inv`` is computed once on first access and cached.
    """

    h: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    R: np.ndarray
    label: str = "stream"
    dim: int = field(default=0)

    def __post_init__(self):
        R = _frozen(np.atleast_2d(self.R))
        object.__setattr__(self, "R", R)
        if self.dim == 0:
            object.__setattr__(self, "dim", R.shape[0])

    @cached_property
    def R_inv(self) -> np.ndarray:
        try:
            c = np.linalg.cholesky(self.R)
        except np.linalg.LinAlgError:
            raise InvalidInputError(
                f"noise covariance of stream {self.label!r} is not positive definite"
            ) from None
        ci = np.linalg.inv(c)
        return _frozen(ci.T @ ci)

    @cached_property
    def R_logdet(self) -> float:
        c = np.linalg.cholesky(self.R)
        return float(2.0 * np.sum(np.log(np.diag(c))))


@dataclass(frozen=True)
class SystemModel:
    transition: TransitionModel
    streams: tuple
    config: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        streams = tuple(self.streams)
        if len(streams) < 1:
            raise InvalidInputError("a system model needs at least one observation stream")
        object.__setattr__(self, "streams", streams)

    @property
    def M(self) -> int:
        return len(self.streams)

    @property
    def dim_x(self) -> int:
        return self.transition.dim

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.streams]

    @cached_property
    def R_inv_blocks(self) -> tuple:
        return tuple(s.R_inv for s in self.streams)

    @cached_property
    def R_inv(self) -> np.ndarray:
        """Block-diagonal inverse of the stacked observation noise."""
        return _frozen(block_diag(*self.R_inv_blocks))


# --------------------------------------------------------------------------
# constant velocity + range-valued measurement model


@dataclass(frozen=True)
class CvParams:
    T: float = 0.1
    sigma_v2: float = 0.3

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise InvalidInputError(f"time step T must be > 0, got {self.T}")
        if not (np.isfinite(self.sigma_v2) and self.sigma_v2 >= 0):
            raise InvalidInputError(f"sigma_v2 must be >= 0, got {self.sigma_v2}")


@dataclass(frozen=True)
class RvmParams:
    sigma_w2: float = 0.01
    label: str = "stream"

    def __post_init__(self):
        if not (np.isfinite(self.sigma_w2) and self.sigma_w2 > 0):
            raise InvalidInputError(f"sigma_w2 must be > 0, got {self.sigma_w2}")


def _check_state(state) -> np.ndarray:
    x = np.asarray(state, dtype=float)
    if x.shape != (2,):
        raise InvalidInputError(f"expected a 2-vector [phi, phi_dot], got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"state must be finite, got {x}")
    return x


def cv_transition_matrix(p: CvParams) -> np.ndarray:
    return np.array([[1.0, p.T], [0.0, 1.0]])


def cv_transition(state, p: CvParams) -> np.ndarray:
    """Advance ``[phi, phi_dot]`` by one constant-velocity step."""
    x = _check_state(state)
    return np.array([x[0] + p.T * x[1], x[1]])


def cv_process_noise(p: CvParams) -> np.ndarray:
    T = p.T
    return p.sigma_v2 * np.array([[T**3 / 3.0, T**2 / 2.0], [T**2 / 2.0, T]])


def rvm_observe(state, p: RvmParams | None = None) -> np.ndarray:
    """Noiseless unit-circle embedding ``[cos phi, sin phi]`` of the azimuth."""
    x = _check_state(state)
    return np.array([np.cos(x[0]), np.sin(x[0])])


def rvm_jacobian(state) -> np.ndarray:
    x = _check_state(state)
    return np.array([[-np.sin(x[0]), 0.0], [np.cos(x[0]), 0.0]])


def cv_rvm_model(cv: CvParams | None = None, streams: Sequence[RvmParams] | None = None) -> SystemModel:
    """Reference tracking model: CV dynamics on azimuth with unit-circle observations.

    Defaults to two streams labelled ``audio`` and ``video`` with
    ``sigma_w2 = 0.01`` each.
    """
    cv = cv or CvParams()
    if streams is None:
        streams = [RvmParams(label="audio"), RvmParams(label="video")]
    F = cv_transition_matrix(cv)
    F.setflags(write=False)
    transition = TransitionModel(
        f=lambda x, _cv=cv: cv_transition(x, _cv),
        jacobian=lambda x, _F=F: _F,
        Q=cv_process_noise(cv),
        dim=2,
    )
    obs = [
        ObservationStream(
            h=rvm_observe,
            jacobian=rvm_jacobian,
            R=p.sigma_w2 * np.eye(2),
            label=p.label,
            dim=2,
        )
        for p in streams
    ]
    config = {
        "model": "cv-rvm",
        "T": cv.T,
        "sigma_v2": cv.sigma_v2,
        "streams": [{"label": p.label, "sigma_w2": p.sigma_w2} for p in streams],
    }
    return SystemModel(transition, tuple(obs), config)


def model_from_config(cfg: dict) -> SystemModel:
    """Build a model from its JSON document form.

    >>> m = model_from_config({"model": "cv-rvm", "T": 0.1, "sigma_v2": 0.3,
    ...     "streams": [{"label": "audio", "sigma_w2": 0.01}]})
    >>> m.M
    1
    """
    if not isinstance(cfg, dict):
        raise InvalidInputError("model configuration must be a JSON object")
    kind = cfg.get("model", "cv-rvm")
    if kind != "cv-rvm":
        raise InvalidInputError(f"unknown model {kind!r}; only 'cv-rvm' is available")
    try:
        cv = CvParams(T=float(cfg.get("T", 0.1)), sigma_v2=float(cfg.get("sigma_v2", 0.3)))
        raw = cfg.get("streams")
        if raw is None:
            raw = [{"label": "audio"}, {"label": "video"}]
        streams = [
            RvmParams(sigma_w2=float(s.get("sigma_w2", 0.01)), label=str(s.get("label", f"stream{i + 1}")))
            for i, s in enumerate(raw)
        ]
    except (TypeError, AttributeError, ValueError) as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise InvalidInputError(f"malformed model configuration: {exc}") from None
    labels = [s.label for s in streams]
    if len(set(labels)) != len(labels):
        raise InvalidInputError(f"stream labels must be unique, got {labels}")
    return cv_rvm_model(cv, streams)


def model_to_config(model: SystemModel) -> dict:
    cfg = model.config
    if cfg is None:
        raise InvalidInputError("only models built by cv_rvm_model can be serialized")
    return dict(cfg)


# --------------------------------------------------------------------------
# validation


def numerical_jacobian(fun, x, step=1e-6) -> np.ndarray:
    """Central finite-difference Jacobian of ``fun`` at ``x``."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fun(x))
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        J[:, i] = (np.atleast_1d(fun(x + e)) - np.atleast_1d(fun(x - e))) / (2 * step)
    return J


def _is_symmetric(a, tol=1e-10) -> bool:
    return a.ndim == 2 and a.shape[0] == a.shape[1] and np.allclose(a, a.T, rtol=0, atol=tol * max(1.0, np.abs(a).max()))


def validate_model(model: SystemModel, probe=None, rtol=1e-4) -> list[str]:
    """Return a list of human-readable violations; empty when the model is well formed.

    Checks symmetry and definiteness of ``Q`` (semidefinite) and every ``R_m``
    (definite, via a Cholesky attempt), dimension consistency, and agreement
    of the supplied Jacobians with central finite differences at ``probe``.
    Never raises.
    """
    problems: list[str] = []
    tm = model.transition
    dx = tm.dim
    Q = np.asarray(tm.Q)
    if Q.shape != (dx, dx):
        problems.append(f"Q has shape {Q.shape}, expected {(dx, dx)}")
    elif not _is_symmetric(Q):
        problems.append("Q not symmetric")
    else:
        try:
            np.linalg.cholesky(Q + 1e-12 * max(1.0, np.abs(Q).max()) * np.eye(dx))
        except np.linalg.LinAlgError:
            problems.append("Q not positive semidefinite")

    if probe is None:
        probe = np.linspace(0.3, 0.7, dx)
    probe = np.asarray(probe, dtype=float)

    def check_jac(name, fun, jac, out_dim):
        try:
            J = np.atleast_2d(np.asarray(jac(probe), dtype=float))
            y = np.atleast_1d(np.asarray(fun(probe), dtype=float))
        except Exception as exc:  # report, never raise
            problems.append(f"{name} could not be evaluated at the probe state: {exc}")
            return
        if y.shape != (out_dim,):
            problems.append(f"{name} output has shape {y.shape}, expected {(out_dim,)}")
            return
        if J.shape != (out_dim, dx):
            problems.append(f"{name} Jacobian has shape {J.shape}, expected {(out_dim, dx)}")
            return
        J_fd = numerical_jacobian(fun, probe)
        err = np.abs(J - J_fd).max()
        if err > rtol * max(1.0, np.abs(J_fd).max()):
            problems.append(f"{name} Jacobian disagrees with finite differences (max abs error {err:.3g})")

    check_jac("f", tm.f, tm.jacobian, dx)

    for i, s in enumerate(model.streams, start=1):
        R = np.asarray(s.R)
        if R.shape != (s.dim, s.dim):
            problems.append(f"R_{i} has shape {R.shape}, expected {(s.dim, s.dim)}")
            continue
        if not _is_symmetric(R):
            problems.append(f"R_{i} not symmetric")
        else:
            try:
                np.linalg.cholesky(R)
            except np.linalg.LinAlgError:
                problems.append(f"R_{i} not positive definite")
        check_jac(f"h_{i}", s.h, s.jacobian, s.dim)
    return problems
