"""Linear-Gaussian state-space models with reparameterised proposals.

Two concrete models are provided:

* :class:`DiagonalLGModel` -- ``x' ~ N(diag(theta) x, q I)``, ``y ~ N(x, r I)``,
  the two-dimensional benchmark with ``theta = (theta_1, theta_2)``.
* :class:`ProposalLGModel` -- ``x' ~ N(A x, I)``, ``y ~ N(H x, I)`` with
  ``A_ij = 0.42^{|i-j|+1}`` and ``H = I_{d_y, d_x}``, used to learn proposal
  parameters ``phi``.

All density and sampling functions broadcast over leading axes, so the same
code evaluates a single particle or a ``(batch, N, d_x)`` particle cloud, and
accepts :class:`~detpf.autodiff.Var` inputs for differentiation.

The initial distribution is ``N(0, I)`` for both models. At ``t = 1`` the
proposal is evaluated with ``x_prev = 0``, which makes the learned proposal
the exact posterior ``p(x_1 | y_1)`` at ``phi = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .rng import stream

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class LinearGaussian:
    """Matrices of ``x_1 ~ N(m0, P0)``, ``x' = A x + N(0, Q)``, ``y = H x + N(0, R)``."""

    A: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray
    m0: np.ndarray
    P0: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray  # (T, d_x)
    observations: np.ndarray  # (T, d_y)
    seed: int

    @property
    def T(self) -> int:
        return self.observations.shape[0]


@dataclass(frozen=True)
class DiagonalLGModel:
    """Diagonal linear-Gaussian SSM parameterised by the transition multipliers."""

    dim: int = 2
    transition_var: float = 0.5
    observation_var: float = 0.1
    proposal: str = "bootstrap"

    def __post_init__(self):
        if self.proposal != "bootstrap":
            raise ValueError("DiagonalLGModel only supports the bootstrap proposal")

    @property
    def d_x(self) -> int:
        return self.dim

    @property
    def d_y(self) -> int:
        return self.dim

    @property
    def d_theta(self) -> int:
        return self.dim

    @property
    def d_phi(self) -> int:
        return 0

    def transition_mean(self, theta, x_prev):
        return theta * x_prev

    def observation_mean(self, theta, x):
        return x

    def linear_gaussian(self, theta) -> LinearGaussian:
        theta = np.asarray(theta, dtype=np.float64).reshape(self.dim)
        eye = np.eye(self.dim)
        return LinearGaussian(
            A=np.diag(theta),
            Q=self.transition_var * eye,
            H=eye,
            R=self.observation_var * eye,
            m0=np.zeros(self.dim),
            P0=eye,
        )


@dataclass(frozen=True)
class ProposalLGModel:
    """Linear-Gaussian SSM with a learnable Gaussian proposal.

    The proposal is ``N(Lambda^{-1}(A x_prev + Gamma y), Lambda^{-1})`` with a
    diagonal precision ``Lambda = diag(phi[:d_x]) + H^T H`` and
    ``Gamma = H^T diag(phi[d_x:])``. At ``phi = 1`` this is exactly the locally
    optimal proposal ``p(x_t | x_{t-1}, y_t)``.
    """

    d_x: int = 5
    d_y: int = 1
    proposal: str = "learned"
    A: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 1 <= self.d_y <= self.d_x:
            raise ValueError("need 1 <= d_y <= d_x")
        if self.proposal not in ("learned", "bootstrap"):
            raise ValueError("proposal must be 'learned' or 'bootstrap'")
        idx = np.arange(self.d_x)
        A = 0.42 ** (np.abs(idx[:, None] - idx[None, :]) + 1.0)
        object.__setattr__(self, "A", A)

    transition_var = 1.0
    observation_var = 1.0

    @property
    def d_theta(self) -> int:
        return 0

    @property
    def d_phi(self) -> int:
        return self.d_x + self.d_y

    @property
    def selector(self) -> np.ndarray:
        """``I_{d_y, d_x}``."""
        return np.eye(self.d_y, self.d_x)

    def transition_mean(self, theta, x_prev):
        return x_prev @ self.A.T

    def observation_mean(self, theta, x):
        return x[..., : self.d_y]

    def observed_mask(self) -> np.ndarray:
        return (np.arange(self.d_x) < self.d_y).astype(np.float64)

    def linear_gaussian(self, theta=None) -> LinearGaussian:
        return LinearGaussian(
            A=self.A.copy(),
            Q=np.eye(self.d_x),
            H=self.selector,
            R=np.eye(self.d_y),
            m0=np.zeros(self.d_x),
            P0=np.eye(self.d_x),
        )


Model = DiagonalLGModel | ProposalLGModel


def _iso_logpdf(resid, var: float, dim: int):
    return -0.5 * dim * (LOG_2PI + np.log(var)) - 0.5 * ad.sum(ad.square(resid), axis=-1) / var


def _check_last(x, d: int, name: str) -> None:
    if ad.value_of(x).shape[-1] != d:
        raise ValueError("%s has trailing dimension %d, expected %d" % (name, ad.value_of(x).shape[-1], d))


def simulate(model: Model, theta, T: int, seed: int, transition_noise: bool = True) -> Trajectory:
    """Draw ``(x_{1:T}, y_{1:T})`` from the model; a pure function of its inputs.

    ``transition_noise=False`` drops the state noise after ``t = 1`` (a test
    hook for degenerate dynamics); the random stream is consumed identically.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    gen = stream(seed, "simulate")
    theta = np.asarray(theta if theta is not None else np.zeros(0), dtype=np.float64)
    qs, rs = np.sqrt(model.transition_var), np.sqrt(model.observation_var)
    xs = np.empty((T, model.d_x))
    ys = np.empty((T, model.d_y))
    x = gen.standard_normal(model.d_x)
    for t in range(T):
        if t > 0:
            x = model.transition_mean(theta, x) + (qs if transition_noise else 0.0) * gen.standard_normal(model.d_x)
        xs[t] = x
        ys[t] = model.observation_mean(theta, x) + rs * gen.standard_normal(model.d_y)
    return Trajectory(xs, ys, int(seed))


def transition_logpdf(model: Model, theta, x_prev, x):
    """``log f_theta(x | x_prev)``; ``x_prev=None`` gives the initial density."""
    _check_last(x, model.d_x, "x")
    if x_prev is None:
        return _iso_logpdf(x, 1.0, model.d_x)
    _check_last(x_prev, model.d_x, "x_prev")
    return _iso_logpdf(x - model.transition_mean(theta, x_prev), model.transition_var, model.d_x)


def observation_logpdf(model: Model, theta, x, y):
    """``log g_theta(y | x)``."""
    _check_last(x, model.d_x, "x")
    _check_last(y, model.d_y, "y")
    return _iso_logpdf(y - model.observation_mean(theta, x), model.observation_var, model.d_y)


def _check_phi(phi) -> None:
    if np.any(ad.value_of(phi) <= 0):
        raise ValueError("proposal parameters must be strictly positive")


def _learned_moments(model: ProposalLGModel, phi, x_prev, y):
    """Precision diagonal and mean of the learned proposal."""
    d_x = model.d_x
    _check_phi(phi)
    precision = phi[..., :d_x] + model.observed_mask()
    drift = 0.0 if x_prev is None else x_prev @ model.A.T
    mean = (drift + (phi[..., d_x:] * y) @ model.selector) / precision
    return precision, mean


def proposal_sample(model: Model, theta, phi, x_prev, y, noise, proposal_theta=None):
    """Reparameterised proposal draw ``x = mean + scale * noise``.

    ``proposal_theta`` overrides the parameter used by a bootstrap proposal;
    passing a detached copy of ``theta`` makes the particles constant with
    respect to ``theta``.
    """
    _check_last(noise, model.d_x, "noise")
    if model.proposal == "bootstrap":
        th = theta if proposal_theta is None else proposal_theta
        if x_prev is None:
            return noise * 1.0
        return model.transition_mean(th, x_prev) + np.sqrt(model.transition_var) * noise
    precision, mean = _learned_moments(model, phi, x_prev, y)
    return mean + noise / ad.sqrt(precision)


def proposal_logpdf(model: Model, theta, phi, x_prev, y, x, proposal_theta=None):
    """``log q(x | x_prev, y)``."""
    if model.proposal == "bootstrap":
        th = theta if proposal_theta is None else proposal_theta
        return transition_logpdf(model, th, x_prev, x)
    precision, mean = _learned_moments(model, phi, x_prev, y)
    return 0.5 * ad.sum(ad.log(precision), axis=-1) - 0.5 * model.d_x * LOG_2PI - 0.5 * ad.sum(
        precision * ad.square(x - mean), axis=-1
    )


def importance_log_weight(model: Model, theta, phi, x_prev, x, y, proposal_theta=None):
    """``log f(x|x_prev) + log g(y|x) - log q(x|x_prev, y)``.

    For the bootstrap proposal with ``proposal_theta=None`` the transition
    terms cancel exactly and only ``log g(y|x)`` is computed.
    """
    if model.proposal == "bootstrap" and proposal_theta is None:
        _check_last(x, model.d_x, "x")
        return observation_logpdf(model, theta, x, y)
    if model.proposal == "learned":
        _check_phi(phi)
    return (
        transition_logpdf(model, theta, x_prev, x)
        + observation_logpdf(model, theta, x, y)
        - proposal_logpdf(model, theta, phi, x_prev, y, x, proposal_theta)
    )


def optimal_proposal_moments(model: ProposalLGModel, x_prev, y):
    """Mean and covariance of ``p(x_t | x_{t-1}, y_t)`` by direct Gaussian algebra."""
    lg = model.linear_gaussian()
    prior_mean = np.zeros(model.d_x) if x_prev is None else lg.A @ np.asarray(x_prev)
    prior_cov = lg.P0 if x_prev is None else lg.Q
    S = lg.H @ prior_cov @ lg.H.T + lg.R
    K = prior_cov @ lg.H.T @ np.linalg.inv(S)
    mean = prior_mean + K @ (np.asarray(y) - lg.H @ prior_mean)
    cov = prior_cov - K @ lg.H @ prior_cov
    return mean, cov
