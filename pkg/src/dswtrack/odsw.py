"""Oracle dynamic stream weights for fully observed systems.

With the true state known, each time step yields per-stream log-likelihoods
``l_m = log p(y_m | x)``.  Under a symmetric Dirichlet prior with
concentration ``alpha > 1`` the oracle weights maximise

    J(lambda) = sum_m lambda_m l_m + (alpha - 1) sum_m log lambda_m

over the open simplex.  The objective is strictly concave, and its
stationarity condition ``l_m + (alpha - 1) / lambda_m = nu`` reduces the
problem to a monotone scalar root in ``nu`` that is found by bisection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, NumericalFailureError, UnsupportedConfigurationError
from .filtering import ObservationFrame
from .model import ObservationStream, SystemModel

__all__ = [
    "DirichletPrior",
    "GaussianPriorParams",
    "stream_loglik",
    "frame_loglik",
    "dirichlet_objective",
    "odsw_dirichlet",
    "stationarity_residual",
    "odsw_gaussian_two_stream",
    "odsw_sequence",
]

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class DirichletPrior:
    alpha: float = 1.1

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 1.0):
            raise InvalidInputError(f"Dirichlet concentration must be > 1, got {self.alpha}")


@dataclass(frozen=True)
class GaussianPriorParams:
    mu: float = 0.5
    sigma2: float = 0.1

    def __post_init__(self):
        if not (0.0 <= self.mu <= 1.0):
            raise InvalidInputError(f"prior mean must lie in [0, 1], got {self.mu}")
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise InvalidInputError(f"prior variance must be > 0, got {self.sigma2}")


def stream_loglik(y, x, s: ObservationStream) -> float:
    """``log N(y | h(x), R)`` evaluated at the true state ``x``."""
    y = np.asarray(y, dtype=float).reshape(-1)
    mu = np.asarray(s.h(np.asarray(x, dtype=float)), dtype=float).reshape(-1)
    if y.shape != mu.shape:
        raise InvalidInputError(f"observation has shape {y.shape}, stream {s.label!r} expects {mu.shape}")
    r = y - mu
    maha = float(r @ s.R_inv @ r)
    return -0.5 * (y.size * LOG_2PI + s.R_logdet + maha)


def frame_loglik(x, frame: ObservationFrame, model: SystemModel) -> np.ndarray:
    """Per-stream log-likelihoods of one frame; absent streams give ``nan``."""
    out = np.full(model.M, np.nan)
    for m, (y, s) in enumerate(zip(frame.observations, model.streams)):
        if y is not None:
            out[m] = stream_loglik(y, x, s)
    return out


def _as_loglik(loglik) -> np.ndarray:
    l = np.asarray(loglik, dtype=float).reshape(-1)
    if not np.all(np.isfinite(l)):
        raise InvalidInputError(f"log-likelihoods must be finite, got {l}")
    return l


def _alpha(prior) -> float:
    return prior.alpha if isinstance(prior, DirichletPrior) else float(prior)


def dirichlet_objective(w, loglik, prior: DirichletPrior | float) -> float:
    """Log-posterior of the weights up to an additive constant.

    Raises ``InvalidInputError`` unless every weight is strictly positive.
    """
    lam = np.asarray(w, dtype=float).reshape(-1)
    l = _as_loglik(loglik)
    if lam.shape != l.shape:
        raise InvalidInputError("weights and log-likelihoods differ in length")
    if np.any(lam <= 0):
        raise InvalidInputError("Dirichlet objective is undefined on the simplex boundary")
    return float(lam @ l + (_alpha(prior) - 1.0) * np.sum(np.log(lam)))


def _weights_from_offset(t, gaps, a1):
    # nu = max(l) + t; gaps = max(l) - l >= 0
    return a1 / (t + gaps)


def odsw_dirichlet(loglik, prior: DirichletPrior | float = DirichletPrior(), *, tol=1e-12, max_iter=200) -> np.ndarray:
    """Maximiser of the Dirichlet-prior objective on the open simplex.

    The multiplier is written as ``nu = max(l) + t``.  ``g(t) = sum_m
    (alpha - 1) / (t + max(l) - l_m) - 1`` is strictly decreasing with
    ``g(alpha - 1) >= 0`` and ``g(M (alpha - 1)) <= 0``, which brackets the
    root; the bracket is still widened geometrically if rounding ever
    puts the sign the wrong way.
    """
    l = _as_loglik(loglik)
    M = l.size
    if M < 1:
        raise InvalidInputError("need at least one stream")
    if M == 1:
        return np.ones(1)
    a1 = _alpha(prior) - 1.0
    if a1 <= 0:
        raise InvalidInputError("Dirichlet concentration must be > 1")
    gaps = l.max() - l

    def g(t):
        return _weights_from_offset(t, gaps, a1).sum() - 1.0

    lo, hi = a1, M * a1
    while g(lo) < 0:
        lo *= 0.5
    while g(hi) > 0:
        hi *= 2.0
    t = 0.5 * (lo + hi)
    for _ in range(max_iter):
        t = 0.5 * (lo + hi)
        gt = g(t)
        if abs(gt) <= tol:
            break
        if gt > 0:
            lo = t
        else:
            hi = t
        if hi - lo <= 2 * np.spacing(t):
            break
    lam = _weights_from_offset(t, gaps, a1)
    resid = abs(lam.sum() - 1.0)
    if resid > 1e-10:
        raise NumericalFailureError(
            f"bisection did not converge (|sum - 1| = {resid:.3g})", quantity="odsw", residual=resid
        )
    return lam / lam.sum()


def stationarity_residual(w, loglik, prior: DirichletPrior | float) -> float:
    """``max_m |l_m + (alpha - 1) / lambda_m - nu|`` with ``nu`` their mean."""
    lam = np.asarray(w, dtype=float)
    g = _as_loglik(loglik) + (_alpha(prior) - 1.0) / lam
    return float(np.abs(g - g.mean()).max())


def odsw_gaussian_two_stream(loglik1: float, loglik2: float, p: GaussianPriorParams = GaussianPriorParams()) -> float:
    """Clipped closed-form weight of stream 1 under a Gaussian prior (M = 2)."""
    lam = p.mu + p.sigma2 * (float(loglik1) - float(loglik2))
    return float(np.clip(lam, 0.0, 1.0))


def odsw_sequence(states, frames: Sequence[ObservationFrame], model: SystemModel,
                  prior: DirichletPrior | GaussianPriorParams = DirichletPrior()) -> np.ndarray:
    """Per-step oracle weights for a fully observed sequence, shape ``(K, M)``.

    Streams absent at a step get weight 0 and the problem is solved on the
    remaining sub-simplex; a single present stream gets weight 1.  Steps
    with no observation at all get uniform weights (the filter skips them).
    """
    states = np.asarray(states, dtype=float)
    if len(states) != len(frames):
        raise InvalidInputError(f"{len(states)} states but {len(frames)} frames")
    gaussian = isinstance(prior, GaussianPriorParams)
    if gaussian and model.M != 2:
        raise UnsupportedConfigurationError(f"the Gaussian prior needs exactly 2 streams, model has {model.M}")
    if not gaussian and not isinstance(prior, DirichletPrior):
        raise InvalidInputError(f"unknown prior {prior!r}")
    M = model.M
    out = np.empty((len(frames), M))
    for k, (x, frame) in enumerate(zip(states, frames)):
        l = frame_loglik(x, frame, model)
        present = np.isfinite(l)
        n = int(present.sum())
        if n == 0:
            out[k] = 1.0 / M
        elif n == 1:
            out[k] = present.astype(float)
        elif gaussian:
            lam1 = odsw_gaussian_two_stream(l[0], l[1], prior)
            out[k] = (lam1, 1.0 - lam1)
        else:
            row = np.zeros(M)
            row[present] = odsw_dirichlet(l[present], prior)
            out[k] = row
    return out
