"""Exact Kalman recursions for linear-Gaussian models.

These are the ground-truth references used throughout: the log-likelihood,
filtered and predicted moments, a finite-difference score, and the pairwise
moments of ``(x_{t-1}, x_t)`` under either the filtering law ``| y_{1:t}``
or the smoothing law ``| y_{1:T}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ssm import LinearGaussian

PSD_TOL = 1e-10


@dataclass(frozen=True)
class KalmanOutput:
    loglik: float
    increments: np.ndarray  # (T,) log p(y_t | y_{1:t-1})
    predicted_means: np.ndarray  # (T, d_x)
    predicted_covs: np.ndarray  # (T, d_x, d_x)
    filtered_means: np.ndarray
    filtered_covs: np.ndarray


def _gauss_logpdf(resid: np.ndarray, cov: np.ndarray) -> float:
    L = np.linalg.cholesky(cov)
    z = np.linalg.solve(L, resid)
    return float(-0.5 * z @ z - np.log(np.diag(L)).sum() - 0.5 * len(resid) * np.log(2 * np.pi))


def _symmetrize(P: np.ndarray) -> np.ndarray:
    P = 0.5 * (P + P.T)
    if np.linalg.eigvalsh(P)[0] < -PSD_TOL:
        raise FloatingPointError("covariance lost positive semi-definiteness")
    return P


def kalman_filter(lg: LinearGaussian, observations) -> KalmanOutput:
    """Predict/update recursion with a Joseph-form covariance update."""
    ys = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    T = ys.shape[0]
    if T < 1:
        raise ValueError("need at least one observation")
    d = lg.A.shape[0]
    eye = np.eye(d)
    pm, pc = np.empty((T, d)), np.empty((T, d, d))
    fm, fc = np.empty((T, d)), np.empty((T, d, d))
    inc = np.empty(T)
    m, P = lg.m0.astype(np.float64), lg.P0.astype(np.float64)
    for t in range(T):
        if t > 0:
            m = lg.A @ m
            P = _symmetrize(lg.A @ P @ lg.A.T + lg.Q)
        pm[t], pc[t] = m, P
        S = lg.H @ P @ lg.H.T + lg.R
        resid = ys[t] - lg.H @ m
        inc[t] = _gauss_logpdf(resid, S)
        K = np.linalg.solve(S, lg.H @ P).T
        m = m + K @ resid
        IKH = eye - K @ lg.H
        P = _symmetrize(IKH @ P @ IKH.T + K @ lg.R @ K.T)
        fm[t], fc[t] = m, P
    return KalmanOutput(float(inc.sum()), inc, pm, pc, fm, fc)


def kalman_loglik(model, theta, observations) -> KalmanOutput:
    """Exact filter for ``model`` at parameter ``theta``."""
    return kalman_filter(model.linear_gaussian(theta), observations)


def kalman_score_fd(model, theta, observations, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the exact log-likelihood in ``theta``."""
    if h <= 0:
        raise ValueError("h must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    out = np.empty_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        lp = kalman_loglik(model, tp, observations).loglik
        lm = kalman_loglik(model, tm, observations).loglik
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise FloatingPointError("non-finite log-likelihood")
        out[i] = (lp - lm) / (2 * h)
    return out


def kalman_mle(model, observations, theta0, lr: float = 1e-3, steps: int = 2000, tol: float = 1e-9):
    """Maximise the exact log-likelihood by gradient ascent, then Newton-polish.

    Gradients and Hessians are finite differences of :func:`kalman_loglik`;
    the search is cheap since the parameter is low-dimensional.
    """
    theta = np.asarray(theta0, dtype=np.float64).copy()
    for _ in range(steps):
        g = kalman_score_fd(model, theta, observations)
        theta = theta + lr * g
        if np.max(np.abs(lr * g)) < tol:
            break
    for _ in range(20):
        g = kalman_score_fd(model, theta, observations)
        if np.max(np.abs(g)) < 1e-8:
            break
        h = 1e-4
        H = np.empty((theta.size, theta.size))
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = h
            H[:, i] = (kalman_score_fd(model, theta + e, observations) - kalman_score_fd(model, theta - e, observations)) / (2 * h)
        H = 0.5 * (H + H.T)
        step = np.linalg.solve(H, g)
        theta = theta - step
        if np.max(np.abs(step)) < 1e-12:
            break
    return theta


@dataclass(frozen=True)
class PairMoments:
    """Means ``(T-1, 2d)`` and covariances ``(T-1, 2d, 2d)`` of ``(x_{t-1}, x_t)``."""

    means: np.ndarray
    covs: np.ndarray


def filtered_pair_moments(lg: LinearGaussian, observations) -> PairMoments:
    """Moments of ``(x_{t-1}, x_t) | y_{1:t}`` for ``t = 2..T``."""
    ys = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    kf = kalman_filter(lg, ys)
    d = lg.A.shape[0]
    Ht = np.hstack([np.zeros_like(lg.H), lg.H])
    means, covs = [], []
    for t in range(1, ys.shape[0]):
        m, P = kf.filtered_means[t - 1], kf.filtered_covs[t - 1]
        mu = np.concatenate([m, lg.A @ m])
        S0 = np.block([[P, P @ lg.A.T], [lg.A @ P, lg.A @ P @ lg.A.T + lg.Q]])
        S = Ht @ S0 @ Ht.T + lg.R
        K = np.linalg.solve(S, Ht @ S0).T
        mu = mu + K @ (ys[t] - Ht @ mu)
        cov = S0 - K @ S @ K.T
        means.append(mu)
        covs.append(0.5 * (cov + cov.T))
    shape = (0, 2 * d)
    return PairMoments(
        np.array(means).reshape(-1, 2 * d) if means else np.zeros(shape),
        np.array(covs).reshape(-1, 2 * d, 2 * d) if covs else np.zeros(shape + (2 * d,)),
    )


def smoothed_pair_moments(lg: LinearGaussian, observations) -> PairMoments:
    """Moments of ``(x_{t-1}, x_t) | y_{1:T}`` via the RTS smoother."""
    ys = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    kf = kalman_filter(lg, ys)
    T, d = ys.shape[0], lg.A.shape[0]
    sm, sc = kf.filtered_means.copy(), kf.filtered_covs.copy()
    gains = np.zeros((T, d, d))
    for t in range(T - 2, -1, -1):
        Pp = kf.predicted_covs[t + 1]
        J = np.linalg.solve(Pp, lg.A @ kf.filtered_covs[t]).T
        gains[t] = J
        sm[t] = kf.filtered_means[t] + J @ (sm[t + 1] - kf.predicted_means[t + 1])
        sc[t] = kf.filtered_covs[t] + J @ (sc[t + 1] - Pp) @ J.T
    means, covs = [], []
    for t in range(1, T):
        cross = sc[t] @ gains[t - 1].T  # Cov(x_t, x_{t-1})
        means.append(np.concatenate([sm[t - 1], sm[t]]))
        covs.append(np.block([[sc[t - 1], cross.T], [cross, sc[t]]]))
    return PairMoments(np.array(means).reshape(-1, 2 * d), np.array(covs).reshape(-1, 2 * d, 2 * d))


def diagonal_transition_score(pairs: PairMoments, theta, transition_var: float) -> np.ndarray:
    """Expected ``sum_t grad_theta log f_theta(x_t | x_{t-1})`` for ``diag(theta)`` dynamics.

    With ``f = N(theta * x_{t-1}, q I)`` the gradient in coordinate ``k`` is
    ``(x_{t,k} - theta_k x_{t-1,k}) x_{t-1,k} / q``, whose expectation only
    needs second moments of the pair.
    """
    theta = np.asarray(theta, dtype=np.float64)
    d = theta.size
    m, C = pairs.means, pairs.covs
    prev, cur = m[:, :d], m[:, d:]
    idx = np.arange(d)
    e_cross = C[:, d + idx, idx] + cur * prev
    e_prev2 = C[:, idx, idx] + prev * prev
    return ((e_cross - theta * e_prev2) / transition_var).sum(axis=0)
