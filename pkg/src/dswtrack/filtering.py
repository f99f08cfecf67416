"""Gaussian filter with dynamic stream weights (DSW-EKF).

The update step fuses ``M`` observation streams, each contributing its
likelihood raised to a weight ``lambda_m`` with ``sum(lambda) == 1``.  Per
stream Kalman gains solve the coupled linear system

    (R + U W U^T) K = B Sigma,     W = L kron Sigma,

via the binomial inverse theorem.  For ``M == 1`` and ``lambda == 1`` the
recursion is the ordinary extended Kalman filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.linalg import block_diag

from .errors import InvalidInputError, NumericalFailureError
from .model import SystemModel, TransitionModel

__all__ = [
    "GaussianBelief",
    "ObservationFrame",
    "GainSet",
    "as_stream_weights",
    "effective_weights",
    "predict",
    "compute_gains",
    "update",
    "step",
    "iter_filter",
    "run_filter",
    "default_initial_belief",
    "belief_record",
]

SIMPLEX_TOL = 1e-12


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise InvalidInputError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class ObservationFrame:
    """Observations of one time step.

    ``observations[m]`` is ``None`` when stream ``m`` produced nothing.
    ``z`` holds the reliability features (possibly empty).
    """

    observations: tuple
    z: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        obs = tuple(None if y is None else np.asarray(y, dtype=float).reshape(-1) for y in self.observations)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float).reshape(-1))

    @property
    def present(self) -> np.ndarray:
        return np.array([y is not None for y in self.observations], dtype=bool)


@dataclass
class GainSet:
    gains: list

    def stacked_transpose(self) -> np.ndarray:
        """``[K_1^T; ...; K_M^T]``, the unknown of the coupled gain system."""
        return np.vstack([K.T for K in self.gains])


def as_stream_weights(w, M: int | None = None) -> np.ndarray:
    """Validate ``w`` as a point of the probability simplex and return it as an array."""
    lam = np.asarray(w, dtype=float).reshape(-1)
    if M is not None and lam.size != M:
        raise InvalidInputError(f"expected {M} stream weights, got {lam.size}")
    if not np.all(np.isfinite(lam)):
        raise InvalidInputError(f"stream weights must be finite, got {lam}")
    if np.any(lam < 0) or np.any(lam > 1):
        raise InvalidInputError(f"stream weights must lie in [0, 1], got {lam}")
    if abs(lam.sum() - 1.0) > SIMPLEX_TOL:
        raise InvalidInputError(f"stream weights must sum to 1, got sum {lam.sum():.15g}")
    return lam


def effective_weights(w, present) -> np.ndarray:
    """Zero the weights of absent streams and renormalise the rest.

    Returns all zeros when no present stream carries weight; the caller
    then skips the update.
    """
    lam = np.where(present, w, 0.0)
    total = lam.sum()
    if total <= 0:
        return np.zeros_like(lam)
    return lam / total


def _symmetrize(a):
    return 0.5 * (a + a.T)


def _check_finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalFailureError(f"non-finite {name}", quantity=name)


def predict(belief: GaussianBelief, tm: TransitionModel) -> GaussianBelief:
    x = belief.mean
    F = np.asarray(tm.jacobian(x), dtype=float)
    mean = np.asarray(tm.f(x), dtype=float)
    cov = _symmetrize(F @ belief.cov @ F.T + tm.Q)
    _check_finite("predicted mean", mean)
    _check_finite("predicted covariance", cov)
    return GaussianBelief(mean, cov)


def compute_gains(pred_cov, jacobians, noise, w, *, noise_inv=None, method="woodbury") -> GainSet:
    """Per-stream Kalman gains for weighted fusion.

    Parameters
    ----------
    pred_cov : (D_x, D_x) array
        Predicted state covariance.
    jacobians : sequence of (D_y_m, D_x) arrays
        Observation Jacobians at the predicted mean.
    noise : sequence of (D_y_m, D_y_m) arrays
        Observation noise covariances.
    w : (M,) array
        Stream weights on the simplex (boundary values allowed).
    noise_inv : sequence of arrays, optional
        Precomputed inverses of ``noise``.
    method : {"woodbury", "kron"}
        Both evaluate ``K = (R^-1 - R^-1 U Gamma U^T R^-1) B Sigma`` with
        ``Gamma = W (I + U^T R^-1 U W)^-1``.  ``"kron"`` forms
        ``W = L kron Sigma`` explicitly and inverts the ``M D_x`` square
        capacitance matrix.  ``"woodbury"`` uses the rank-``D_x``
        factorisation ``W = (1 kron I) Sigma (lambda kron I)^T``, which turns
        the capacitance matrix into ``I + S Sigma`` with
        ``S = sum_m lambda_m H_m^T R_m^-1 H_m``; that matrix is inverted
        directly or, when ``sum_m D_y_m < D_x``, through a second
        application of the binomial inverse theorem on the rank of ``S``.

    Returns
    -------
    GainSet
    """
    sigma = np.asarray(pred_cov, dtype=float)
    H = [np.atleast_2d(np.asarray(h, dtype=float)) for h in jacobians]
    lam = np.asarray(w, dtype=float).reshape(-1)
    if noise_inv is None:
        noise_inv = [np.linalg.inv(np.atleast_2d(R)) for R in noise]
    M = len(H)
    dx = sigma.shape[0]
    if len(noise_inv) != M or lam.size != M:
        raise InvalidInputError("jacobians, noise and weights must all have M entries")

    if method == "kron":
        Rinv = block_diag(*noise_inv)
        U = block_diag(*H)
        B = np.vstack(H)
        W = np.kron(np.outer(np.ones(M), lam), sigma)
        A = np.eye(M * dx) + U.T @ Rinv @ U @ W
        try:
            gamma = np.linalg.solve(A.T, W.T).T
        except np.linalg.LinAlgError:
            raise NumericalFailureError("singular capacitance matrix I + U^T R^-1 U W", quantity="capacitance") from None
        RinvU = Rinv @ U
        Kt = (Rinv - RinvU @ gamma @ RinvU.T) @ B @ sigma
        _check_finite("Kalman gain", Kt)
        rows = np.cumsum([0] + [h.shape[0] for h in H])
        return GainSet([Kt[rows[m]:rows[m + 1]].T for m in range(M)])
    if method != "woodbury":
        raise InvalidInputError(f"unknown gain method {method!r}")

    # a_m = H_m^T R_m^-1; S = sum_m lambda_m a_m H_m
    HtRinv = [h.T @ ri for h, ri in zip(H, noise_inv)]
    H_sigma = [h @ sigma for h in H]
    r = sum(h.shape[0] for h in H)
    try:
        if r < dx:
            # I + S Sigma = I + P Q with P = [lambda_m a_m], Q = B Sigma
            P = np.hstack([lm * a for lm, a in zip(lam, HtRinv)])
            Q = np.vstack(H_sigma)
            C = np.eye(r) + Q @ P
            post = sigma - (sigma @ P) @ np.linalg.solve(C, Q)
        else:
            A = np.eye(dx)
            for lm, a, hs in zip(lam, HtRinv, H_sigma):
                if lm != 0.0:
                    A = A + lm * (a @ hs)
            # Sigma - Sigma A^-1 S Sigma == Sigma A^-1
            post = np.linalg.solve(A.T, sigma.T).T
    except np.linalg.LinAlgError:
        raise NumericalFailureError("singular capacitance matrix I + S Sigma", quantity="capacitance") from None
    gains = [post.T @ a for a in HtRinv]
    _check_finite("Kalman gain", *gains)
    return GainSet(gains)


def update(pred: GaussianBelief, frame: ObservationFrame, w, model: SystemModel, *, method="woodbury") -> GaussianBelief:
    """Weighted measurement update.

    Absent streams get weight zero and the remaining weights are
    renormalised; with nothing left to fuse ``pred`` is returned unchanged.
    """
    lam = as_stream_weights(w, model.M)
    present = frame.present
    if present.size != model.M:
        raise InvalidInputError(f"frame has {present.size} streams, model has {model.M}")
    lam = effective_weights(lam, present)
    active = [m for m in range(model.M) if lam[m] > 0]
    if not active:
        return pred

    x = pred.mean
    streams = [model.streams[m] for m in active]
    H = [np.atleast_2d(np.asarray(s.jacobian(x), dtype=float)) for s in streams]
    innovations = []
    for m, s in zip(active, streams):
        y = frame.observations[m]
        if y.shape != (s.dim,):
            raise InvalidInputError(f"observation of stream {s.label!r} has shape {y.shape}, expected {(s.dim,)}")
        innovations.append(y - np.asarray(s.h(x), dtype=float))
    lam_a = lam[active]
    gains = compute_gains(
        pred.cov, H, [s.R for s in streams], lam_a,
        noise_inv=[s.R_inv for s in streams], method=method,
    ).gains

    dx = x.size
    mean = x.copy()
    KH = np.zeros((dx, dx))
    for lm, K, h, r in zip(lam_a, gains, H, innovations):
        mean += lm * (K @ r)
        KH += lm * (K @ h)
    cov = _symmetrize((np.eye(dx) - KH) @ pred.cov)
    _check_finite("posterior mean", mean)
    _check_finite("posterior covariance", cov)
    return GaussianBelief(mean, cov)


def step(belief: GaussianBelief, frame: ObservationFrame, w, model: SystemModel, **kw) -> GaussianBelief:
    return update(predict(belief, model.transition), frame, w, model, **kw)



def _weights_at(source, k: int, frame: ObservationFrame, M: int) -> np.ndarray:
    if callable(source):
        return np.asarray(source(frame.z), dtype=float).reshape(-1)
    arr = np.asarray(source, dtype=float)
    if arr.ndim == 1:
        return arr
    return arr[k]


def iter_filter(init: GaussianBelief, frames: Sequence[ObservationFrame], weights_source, model: SystemModel,
                **kw) -> Iterator[tuple]:
    """Yield ``(k, belief, weights)`` for every frame, ``k`` starting at 0.

    ``weights_source`` is a fixed ``(M,)`` vector, a per-frame ``(K, M)``
    array, or a callable mapping the frame's reliability features to
    weights.  ``weights`` is the vector requested for the frame, before
    missing-stream renormalisation.
    """
    if len(frames) == 0:
        raise InvalidInputError("need at least one frame")
    if not callable(weights_source):
        arr = np.asarray(weights_source, dtype=float)
        if arr.ndim == 2 and arr.shape[0] != len(frames):
            raise InvalidInputError(f"{arr.shape[0]} weight rows for {len(frames)} frames")
    belief = init
    for k, frame in enumerate(frames):
        w = _weights_at(weights_source, k, frame, model.M)
        try:
            belief = step(belief, frame, w, model, **kw)
        except NumericalFailureError as exc:
            exc.frame = k
            raise
        except InvalidInputError as exc:
            raise type(exc)(f"frame {k}: {exc}") from None
        yield k, belief, w


def run_filter(init: GaussianBelief, frames, weights_source, model: SystemModel, **kw) -> list[GaussianBelief]:
    return [b for _, b, _ in iter_filter(init, frames, weights_source, model, **kw)]


def default_initial_belief(frames: Sequence[ObservationFrame], var=(1.0, 1.0)) -> GaussianBelief:
    """Azimuth of the first present observation, zero velocity, diagonal covariance (rad^2)."""
    for frame in frames:
        for y in frame.observations:
            if y is not None:
                return GaussianBelief(np.array([np.arctan2(y[1], y[0]), 0.0]), np.diag(var))
    return GaussianBelief(np.zeros(2), np.diag(var))


def belief_record(k: int, belief: GaussianBelief, weights=None) -> dict:
    """JSON Lines row for one step (``k`` is 1-based on disk)."""
    row = {"k": int(k), "mean": belief.mean.tolist(), "cov": belief.cov.reshape(-1).tolist()}
    if weights is not None:
        row["weights"] = np.asarray(weights, dtype=float).tolist()
    return row
