"""Particle filtering, log-likelihood estimates and their gradients.

:func:`run_filter` propagates ``N`` weighted particles per batch element.
Batch elements are independent filters that may differ in seed, parameter
row, or dataset; they share only the vectorised arithmetic. Parameters may be
given as a vector shared across the batch or as one row per element, so a
single backward pass yields per-element gradients.

The likelihood estimate is

    l_hat = sum_t log sum_i W_{t-1}^i exp(lw_t^i),

where ``W_{t-1}`` are the carried normalised weights (``1/N`` after
resampling) and ``lw_t`` the incremental importance log-weights.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import ssm
from .kalman import kalman_loglik
from .resampling import ParticleEnsemble, Resampler, get_resampler
from .rng import FilterNoise


class FilterError(FloatingPointError):
    """Raised when every particle has zero weight at some step."""


@dataclass
class FilterTrace:
    """Per-step record of one (possibly batched) filter run.

    Batched runs keep the batch as the leading axis of every field;
    ``increments`` is ``(B, T)`` and ``loglik`` is ``(B,)``. Both may be
    :class:`~detpf.autodiff.Var` nodes.
    """

    increments: object
    loglik: object
    ess: np.ndarray
    resampled: np.ndarray
    sinkhorn_iterations: np.ndarray
    filtered_means: np.ndarray
    particles: list | None = None

    @property
    def T(self) -> int:
        return ad.value_of(self.increments).shape[-1]

    def to_csv(self, path=None, batch_index: int | None = None) -> str:
        """CSV with columns step, loglik_increment, ess, resampled, sinkhorn_iters."""
        inc = ad.value_of(self.increments)
        ess, res, its = self.ess, self.resampled, self.sinkhorn_iterations
        if inc.ndim == 2:
            k = 0 if batch_index is None else batch_index
            inc, ess, res, its = inc[k], ess[k], res[k], its[k]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loglik_increment", "ess", "resampled", "sinkhorn_iters"])
        for t in range(inc.shape[0]):
            w.writerow([t + 1, "%.17g" % inc[t], "%.17g" % ess[t], int(res[t]), int(its[t])])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def ess(weights) -> np.ndarray:
    """``1 / sum_i w_i^2`` along the last axis of normalised weights."""
    w = np.asarray(weights, dtype=np.float64)
    return 1.0 / np.sum(w * w, axis=-1)


def _rows(param, batch: int):
    """Shape a parameter for broadcasting against ``(B, N, d)`` particles."""
    if param is None:
        return None
    v = ad.value_of(param)
    if v.ndim == 0:
        v = v.reshape(1)
        param = ad.reshape(param, (1,))
    if v.ndim == 1:
        return ad.reshape(param, (1, 1, v.shape[0]))
    if v.ndim == 2 and v.shape[0] == batch:
        return ad.reshape(param, (batch, 1, v.shape[1]))
    raise ValueError("parameter must be a vector or have one row per batch element")


def _normalise(lw, shape):
    return lw - ad.reshape(ad.logsumexp(lw, axis=-1), shape[:-1] + (1,))


def _select(mask: np.ndarray, new, old):
    """Batch-wise ``where(mask, new, old)`` that keeps both branches on the tape."""
    if mask.all():
        return new
    if not mask.any():
        return old
    shape = (mask.shape[0],) + (1,) * (ad.value_of(old).ndim - 1)
    m = mask.astype(np.float64).reshape(shape)
    return new * m + old * (1.0 - m)


def run_filter(
    model,
    theta,
    phi,
    observations,
    N: int,
    resampler: Resampler | str = "multinomial",
    seed: int | Sequence[int] = 0,
    ess_threshold: float = 1.0,
    noise: FilterNoise | None = None,
    proposal_theta=None,
    keep_particles: bool = False,
) -> FilterTrace:
    """Run the particle filter.

    Parameters
    ----------
    model : DiagonalLGModel or ProposalLGModel
    theta, phi : array or Var
        Model and proposal parameters, either vectors or one row per batch
        element. ``phi`` is ignored by bootstrap proposals.
    observations : array, shape (T, d_y) or (B, T, d_y)
    N : int
        Number of particles.
    resampler : Resampler or str
        A resampler or its name, e.g. ``"multinomial"`` or ``"det(0.5)"``.
    seed : int or sequence of int
        A sequence runs one filter per seed along a batch axis; an int gives
        an unbatched trace.
    ess_threshold : float
        Resample before step ``t`` when ``ESS < ess_threshold * N``; ``1.0``
        resamples at every step.
    noise : FilterNoise, optional
        Pre-drawn noise with a leading batch axis, overriding ``seed``.
    proposal_theta : array, optional
        Parameter used by a bootstrap proposal instead of ``theta``; pass a
        detached copy to keep particles constant in ``theta``.
    keep_particles : bool
        Store ``(positions, normalised log-weights)`` values at every step.
    """
    if N < 2:
        raise ValueError("need at least two particles")
    if not 0.0 <= ess_threshold <= 1.0:
        raise ValueError("ess_threshold must lie in [0, 1]")
    if isinstance(resampler, str):
        resampler = get_resampler(resampler)
    ys = np.asarray(observations, dtype=np.float64)
    if ys.ndim == 1:
        ys = ys[:, None]
    single = np.isscalar(seed) and noise is None
    if noise is None:
        seeds = [int(seed)] if single else [int(s) for s in seed]
        T = ys.shape[-2]
        noise = FilterNoise.stack(FilterNoise.draw(s, T, N, model.d_x) for s in seeds)
    B, T = noise.gaussian.shape[0], noise.gaussian.shape[1]
    if noise.gaussian.shape[2:] != (N, model.d_x):
        raise ValueError("noise does not match N and the state dimension")
    if ys.shape[-2] != T:
        raise ValueError("observations have %d steps, noise has %d" % (ys.shape[-2], T))
    if ys.ndim == 3 and ys.shape[0] != B:
        raise ValueError("per-element observations need one dataset per batch element")
    th = _rows(theta, B)
    ph = _rows(phi, B) if model.proposal == "learned" else None
    pth = _rows(proposal_theta, B)

    def y_at(t):
        return ys[t][None, None, :] if ys.ndim == 2 else ys[:, t][:, None, :]

    incs = []
    ess_t = np.zeros((B, T))
    resampled = np.zeros((B, T), dtype=bool)
    iters = np.zeros((B, T), dtype=np.int64)
    means = np.zeros((B, T, model.d_x))
    snaps = [] if keep_particles else None
    log_n = np.log(N)
    x_prev, carry = None, np.full((B, N), -log_n)
    lw_norm = None
    for t in range(T):
        y = y_at(t)
        if t > 0:
            w = np.exp(ad.value_of(lw_norm))
            e = ess(w)
            do = np.ones(B, dtype=bool) if ess_threshold >= 1.0 else e < ess_threshold * N
            resampled[:, t] = do
            if do.any():
                out, info = resampler(ParticleEnsemble(x_prev, lw_norm), noise.uniform[:, t])
                if info.sinkhorn_iterations is not None:
                    iters[:, t] = np.where(do, info.sinkhorn_iterations, 0)
                x_prev = _select(do, out.positions, x_prev)
                carry = _select(do, out.log_weights, lw_norm)
            else:
                carry = lw_norm
        x = ssm.proposal_sample(model, th, ph, x_prev, y, noise.gaussian[:, t], proposal_theta=pth)
        lw_inc = ssm.importance_log_weight(model, th, ph, x_prev, x, y, proposal_theta=pth)
        lw = carry + lw_inc
        lwv = ad.value_of(lw)
        dead = np.all(lwv == -np.inf, axis=-1)
        if dead.any() or not np.all(np.isfinite(lwv[~dead])):
            raise FilterError("all particle weights vanished at step %d" % (t + 1))
        inc = ad.logsumexp(lw, axis=-1)
        incs.append(inc)
        lw_norm = _normalise(lw, (B, N))
        wn = np.exp(ad.value_of(lw_norm))
        ess_t[:, t] = ess(wn)
        means[:, t] = np.einsum("bn,bnd->bd", wn, ad.value_of(x))
        if keep_particles:
            snaps.append((ad.value_of(x).copy(), ad.value_of(lw_norm).copy()))
        x_prev = x
    increments = ad.stack(incs, axis=-1)
    loglik = ad.sum(increments, axis=-1)
    trace = FilterTrace(increments, loglik, ess_t, resampled, iters, means, snaps)
    if single:
        trace = FilterTrace(
            increments[0],
            loglik[0],
            ess_t[0],
            resampled[0],
            iters[0],
            means[0],
            None if snaps is None else [(p[0], w[0]) for p, w in snaps],
        )
    return trace


# -- summaries ------------------------------------------------------------------


@dataclass(frozen=True)
class ElboSummary:
    """Mean and sample std of ``(l_hat - l) / T`` over seeds."""

    mean: float
    std: float
    n_seeds: int
    values: np.ndarray
    degenerate: bool = False  # True when a single seed makes std undefined


def summarize(values) -> ElboSummary:
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ValueError("no values to summarise")
    if values.size == 1:
        return ElboSummary(float(values[0]), 0.0, 1, values, degenerate=True)
    return ElboSummary(float(values.mean()), float(values.std(ddof=1)), values.size, values)


def elbo_estimate(
    model,
    theta,
    phi,
    observations,
    N: int,
    resampler: Resampler | str,
    seeds: Sequence[int],
    loglik: float | None = None,
    ess_threshold: float = 1.0,
    chunk: int = 100,
) -> ElboSummary:
    """Per-seed ``(l_hat - l) / T`` with ``l`` from the Kalman filter unless given."""
    ys = np.asarray(observations, dtype=np.float64)
    if ys.ndim == 1:
        ys = ys[:, None]
    if loglik is None:
        loglik = kalman_loglik(model, theta, ys).loglik
    seeds = [int(s) for s in seeds]
    vals = []
    for k in range(0, len(seeds), chunk):
        tr = run_filter(model, theta, phi, ys, N, resampler, seeds[k : k + chunk], ess_threshold)
        vals.append(ad.value_of(tr.loglik))
    T = ys.shape[0]
    return summarize((np.concatenate(vals) - loglik) / T)


# -- gradients ------------------------------------------------------------------


@dataclass(frozen=True)
class GradientResult:
    """Per-seed gradients; ``theta`` is ``(B, d_theta)``, ``phi`` ``(B, d_phi)``."""

    theta: np.ndarray
    phi: np.ndarray
    loglik: np.ndarray
    trace: FilterTrace


def _tiled(value, B: int, d: int) -> np.ndarray:
    v = np.zeros(d) if value is None else np.asarray(value, dtype=np.float64)
    v = np.broadcast_to(v.reshape(-1, d) if v.size else np.zeros((1, d)), (B, d))
    return np.array(v)


def _gradient(model, theta, phi, observations, N, resampler, seeds, ess_threshold, detach_proposal):
    seeds = [int(seeds)] if np.isscalar(seeds) else [int(s) for s in seeds]
    B = len(seeds)
    th0 = _tiled(theta, B, model.d_theta)
    ph0 = _tiled(phi, B, model.d_phi)
    with ad.Tape() as tape:
        th = tape.parameter(th0) if model.d_theta else th0
        ph = tape.parameter(ph0) if model.d_phi else ph0
        pth = th0 if (detach_proposal and model.proposal == "bootstrap") else None
        tr = run_filter(
            model,
            th if model.d_theta else None,
            ph if model.d_phi else None,
            observations,
            N,
            resampler,
            seeds,
            ess_threshold,
            proposal_theta=pth,
        )
        grads = tape.grad_list(ad.sum(tr.loglik))
    k = 0
    gth = np.zeros((B, model.d_theta))
    gph = np.zeros((B, model.d_phi))
    if model.d_theta:
        gth = grads[k]
        k += 1
    if model.d_phi:
        gph = grads[k]
    return GradientResult(gth, gph, ad.value_of(tr.loglik), tr)


def dpf_gradient(
    model,
    theta,
    phi,
    observations,
    N: int,
    seeds,
    resampler: Resampler | str = "det(0.5)",
    ess_threshold: float = 1.0,
) -> GradientResult:
    """Gradient of the DET filter's ``l_hat`` in ``(theta, phi)`` for fixed noise."""
    if isinstance(resampler, str):
        resampler = get_resampler(resampler)
    if not resampler.differentiable:
        raise ValueError("dpf_gradient needs the DET resampler")
    return _gradient(model, theta, phi, observations, N, resampler, seeds, ess_threshold, False)


def biased_elbo_gradient(
    model,
    theta,
    phi,
    observations,
    N: int,
    seeds,
    resampler: Resampler | str = "multinomial",
    ess_threshold: float = 1.0,
) -> GradientResult:
    """Gradient estimate that ignores the dependence of resampling on parameters.

    Ancestor draws are detached. For a bootstrap proposal the particles are
    also held fixed in ``theta`` (the proposal uses a detached copy and the
    weight carries ``log f_theta - log f_detached``), which gives
    ``sum_t sum_i w_t^i grad log [f_theta(x_t^i | x_{t-1}^{a_i}) g_theta(y_t | x_t^i)]``.
    A learned proposal is differentiated pathwise in ``phi``.
    """
    if isinstance(resampler, str):
        resampler = get_resampler(resampler)
    if resampler.differentiable:
        raise ValueError("biased_elbo_gradient expects a non-differentiable resampler")
    return _gradient(model, theta, phi, observations, N, resampler, seeds, ess_threshold, True)


def smle_objective(
    model,
    theta,
    phi,
    observations,
    N: int,
    seeds: Sequence[int],
    resampler: Resampler | str = "det(0.5)",
    ess_threshold: float = 1.0,
):
    """Average of fixed-seed DET log-likelihood estimates, ``(1/B) sum_b l_hat(theta; u_b)``.

    The seeds are sorted before running, so the value does not depend on their
    order. Returns a Var when ``theta`` or ``phi`` is recorded.
    """
    seeds = sorted(int(s) for s in seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    if isinstance(resampler, str):
        resampler = get_resampler(resampler)
    if not resampler.differentiable:
        raise ValueError("the SMLE objective uses the DET resampler")
    tr = run_filter(model, theta, phi, observations, N, resampler, seeds, ess_threshold)
    return ad.mean(tr.loglik)
