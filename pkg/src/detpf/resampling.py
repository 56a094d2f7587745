"""Resampling schemes for weighted particle ensembles.

Every scheme maps a weighted ensemble to a new one and works on a leading
batch axis. Randomness is passed in explicitly, either as a
:class:`numpy.random.Generator` or as a pre-drawn array of uniforms of shape
``(..., N)``; the latter keeps a filter replayable under parameter changes.

=============  ===================================  ======================
name           output positions                     differentiable through
=============  ===================================  ======================
multinomial    i.i.d. ancestors from ``w``           gathered positions
systematic     one stratified offset                 gathered positions
soft(alpha)    ancestors from ``alpha w + (1-a)/N``  positions, weights
exact_et       ``N P X`` with the exact OT plan      positions (plan fixed)
det(eps)       ``N P X`` with the entropic plan      everything
=============  ===================================  ======================
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import ot


@dataclass(frozen=True)
class ParticleEnsemble:
    """Positions ``(..., N, d)`` and log-weights ``(..., N)``; either may be a Var."""

    positions: object
    log_weights: object

    def __post_init__(self):
        x, lw = ad.value_of(self.positions), ad.value_of(self.log_weights)
        if x.ndim < 2 or x.shape[-2] < 1:
            raise ValueError("positions must have shape (..., N, d) with N >= 1")
        if lw.shape != x.shape[:-1]:
            raise ValueError("log_weights shape %s does not match positions %s" % (lw.shape, x.shape))
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite particle positions")
        if np.any(np.isnan(lw)) or np.any(np.all(lw == -np.inf, axis=-1)):
            raise ValueError("log-weights must contain a finite entry")

    @property
    def N(self) -> int:
        return ad.value_of(self.log_weights).shape[-1]

    def normalized_log_weights(self):
        lw = self.log_weights
        return lw - ad.reshape(ad.logsumexp(lw, axis=-1), ad.value_of(lw).shape[:-1] + (1,))

    @property
    def weights(self) -> np.ndarray:
        """Normalised weights (plain array)."""
        return np.exp(ad.value_of(self.normalized_log_weights()))

    @classmethod
    def uniform(cls, positions) -> "ParticleEnsemble":
        shape = ad.value_of(positions).shape[:-1]
        return cls(positions, np.full(shape, -np.log(shape[-1])))


@dataclass(frozen=True)
class ResampleInfo:
    ancestors: np.ndarray | None = None
    sinkhorn_iterations: np.ndarray | None = None


def _uniforms(rng, shape) -> np.ndarray:
    if isinstance(rng, np.random.Generator):
        return rng.random(shape)
    u = np.asarray(rng, dtype=np.float64)
    if u.shape != shape:
        raise ValueError("expected uniforms of shape %s, got %s" % (shape, u.shape))
    return u


def _inverse_cdf(weights: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Index ``i`` with ``cdf[i-1] <= p < cdf[i]`` for each point, batched."""
    cdf = np.cumsum(weights, axis=-1)
    cdf[..., -1] = np.inf  # guard against round-off below 1
    flat_cdf = cdf.reshape(-1, cdf.shape[-1])
    flat_pts = points.reshape(-1, points.shape[-1])
    out = np.empty(flat_pts.shape, dtype=np.int64)
    for k in range(flat_cdf.shape[0]):
        out[k] = np.searchsorted(flat_cdf[k], flat_pts[k], side="right")
    return out.reshape(points.shape)


def gather(positions, ancestors: np.ndarray):
    """``positions[..., ancestors[..., i], :]``, recorded on the tape."""
    xv = ad.value_of(positions)
    batch = np.indices(ancestors.shape[:-1])
    idx = tuple(b[..., None] for b in batch) + (ancestors,)
    if not ad.is_var(positions):
        return xv[idx]
    return ad.getitem(positions, idx)


def _uniform_log_weights(shape) -> np.ndarray:
    return np.full(shape, -np.log(shape[-1]))


def multinomial_resample(ensemble: ParticleEnsemble, rng):
    """i.i.d. ancestors by inverse CDF; ancestor indices carry no gradient."""
    w = ensemble.weights
    anc = _inverse_cdf(w, _uniforms(rng, w.shape))
    out = ParticleEnsemble(gather(ensemble.positions, anc), _uniform_log_weights(w.shape))
    return out, ResampleInfo(ancestors=anc)


def systematic_resample(ensemble: ParticleEnsemble, rng):
    """Points ``(u + i) / N`` with a single ``u ~ U[0, 1)`` per batch element.

    With an array of uniforms only the first entry of each row is used.
    """
    w = ensemble.weights
    N = w.shape[-1]
    u = _uniforms(rng, w.shape)[..., :1]
    anc = _inverse_cdf(w, (u + np.arange(N)) / N)
    out = ParticleEnsemble(gather(ensemble.positions, anc), _uniform_log_weights(w.shape))
    return out, ResampleInfo(ancestors=anc)


def soft_resample(ensemble: ParticleEnsemble, alpha: float, rng):
    """Ancestors from ``q = alpha w + (1 - alpha)/N`` with weights ``w_A / q_A``.

    The draw is detached; the corrective weights stay on the tape.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    lw = ensemble.normalized_log_weights()
    w = np.exp(ad.value_of(lw))
    N = w.shape[-1]
    q = alpha * w + (1.0 - alpha) / N
    anc = _inverse_cdf(q, _uniforms(rng, w.shape))
    log_q = ad.log(alpha * ad.exp(lw) + (1.0 - alpha) / N)
    new_lw = gather(ad.reshape(lw - log_q, w.shape + (1,)), anc)
    new_lw = ad.reshape(new_lw, w.shape)
    new_lw = new_lw - ad.reshape(ad.logsumexp(new_lw, axis=-1), w.shape[:-1] + (1,))
    out = ParticleEnsemble(gather(ensemble.positions, anc), new_lw)
    return out, ResampleInfo(ancestors=anc)


def exact_et_resample(ensemble: ParticleEnsemble):
    """Barycentric map ``N P X`` with the exact optimal plan from uniform to ``w``."""
    x = ad.value_of(ensemble.positions)
    w = ensemble.weights
    N = w.shape[-1]
    if N > ot.LP_MAX_N:
        raise ValueError("exact ET is an oracle limited to N <= %d" % ot.LP_MAX_N)
    C = ad.value_of(ot.cost_matrix(x, x, normalize=False).C)
    flat_w, flat_C = w.reshape(-1, N), C.reshape(-1, N, N)
    plans = np.stack([ot.exact_ot_lp(np.full(N, 1.0 / N), flat_w[k] / flat_w[k].sum(), flat_C[k])[0] for k in range(flat_w.shape[0])])
    P = plans.reshape(C.shape)
    out = ParticleEnsemble(ad.matmul(N * P, ensemble.positions), _uniform_log_weights(w.shape))
    return out, ResampleInfo()


def det_resample(
    ensemble: ParticleEnsemble,
    epsilon: float = 0.5,
    grad: str = "implicit",
    tol: float = 1e-8,
    max_iter: int = 10000,
    scheme: str = "symmetric",
):
    """Differentiable ensemble transform ``X~ = N P X``.

    ``P`` couples the uniform measure on the current particles (rows) to the
    weighted measure ``w`` (columns) under the scale-normalised squared
    distance cost, so each output is a convex combination of the inputs and
    ``mean(X~) = sum_i w_i X_i``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    x = ensemble.positions
    lw = ensemble.normalized_log_weights()
    shape = ad.value_of(lw).shape
    N = shape[-1]
    cm = ot.cost_matrix(x, x, normalize=True)
    log_a = np.full(shape, -np.log(N))
    P, res = ot.entropic_plan(log_a, lw, cm.C, epsilon, grad=grad, tol=tol, max_iter=max_iter, scheme=scheme)
    out = ParticleEnsemble(float(N) * ad.matmul(P, x), _uniform_log_weights(shape))
    return out, ResampleInfo(sinkhorn_iterations=res.iterations)


@dataclass(frozen=True)
class Resampler:
    """A named resampling scheme with bound parameters."""

    kind: str
    epsilon: float = 0.5
    alpha: float = 0.5
    options: dict = field(default_factory=dict, compare=False)

    @property
    def differentiable(self) -> bool:
        return self.kind == "det"

    @property
    def name(self) -> str:
        if self.kind == "det":
            return "det(%g)" % self.epsilon
        if self.kind == "soft":
            return "soft(%g)" % self.alpha
        return self.kind

    def __call__(self, ensemble: ParticleEnsemble, uniforms):
        if self.kind == "multinomial":
            return multinomial_resample(ensemble, uniforms)
        if self.kind == "systematic":
            return systematic_resample(ensemble, uniforms)
        if self.kind == "soft":
            return soft_resample(ensemble, self.alpha, uniforms)
        if self.kind == "exact_et":
            return exact_et_resample(ensemble)
        return det_resample(ensemble, self.epsilon, **self.options)


_NAME = re.compile(r"^\s*(multinomial|systematic|exact_et|soft|det)\s*(?:\(\s*([^)]*)\s*\))?\s*$")


def get_resampler(name: str, **options) -> Resampler:
    """Parse ``multinomial | systematic | soft(alpha) | det(eps) | exact_et``.

    ``det`` without an argument uses ``eps = 0.5``. Extra keyword options are
    forwarded to :func:`det_resample` (``grad``, ``tol``, ``max_iter``,
    ``scheme``).
    """
    m = _NAME.match(name)
    if m is None:
        raise ValueError("unknown resampler %r" % name)
    kind, arg = m.group(1), m.group(2)
    if kind in ("multinomial", "systematic", "exact_et"):
        if arg:
            raise ValueError("%s takes no argument" % kind)
        return Resampler(kind)
    if kind == "soft":
        if not arg:
            raise ValueError("soft resampling needs alpha, e.g. soft(0.5)")
        alpha = float(arg)
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        return Resampler("soft", alpha=alpha)
    eps = float(arg) if arg else 0.5
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    return Resampler("det", epsilon=eps, options=dict(options))
