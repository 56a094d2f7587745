"""Entropy-regularised optimal transport between discrete measures.

All solvers accept a leading batch axis: ``a``, ``b`` of shape ``(..., N)`` and
``C`` of shape ``(..., N, M)``. The dual potentials satisfy, at the fixed point,

    f_i = T_eps(b, g, C_i.)  and  g_j = T_eps(a, f, C_.j),
    T_eps(b, g, c) = -eps * log sum_j b_j exp((g_j - c_j) / eps),

and the coupling is ``P_ij = a_i b_j exp((f_i + g_j - C_ij) / eps)``.

:func:`entropic_plan` records the coupling on the autodiff tape. Its default
``grad="implicit"`` differentiates the fixed point exactly through the
implicit function theorem; ``"stitch"`` records one extra pair of potential
updates at the converged (detached) potentials, and ``"unroll"`` records every
iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from . import autodiff as ad

WEIGHT_FLOOR = 1e-12
KERNEL_LIMIT = 200.0  # max C/eps for which exp(-C/eps) is evaluated directly
LP_MAX_N = 8


class SinkhornError(RuntimeError):
    """Raised when a solve is unusable; carries the solver diagnostics."""

    def __init__(self, message: str, result: "SinkhornResult | None" = None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class CostMatrix:
    C: np.ndarray  # (..., N, M); a Var when built from recorded points
    scale: np.ndarray  # (...,) delta used for normalisation (1 when skipped)


@dataclass(frozen=True)
class SinkhornResult:
    f: np.ndarray
    g: np.ndarray
    iterations: np.ndarray  # per batch element
    update: np.ndarray  # last max |potential change| per batch element
    converged: np.ndarray
    epsilon: float

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))


@dataclass(frozen=True)
class TransportPlan:
    P: np.ndarray
    a: np.ndarray
    b: np.ndarray
    row_residual: float
    col_residual: float


# -- costs -----------------------------------------------------------------


def _max_variance(points):
    centred = points - ad.mean(points, axis=-2, keepdims=True)
    return ad.amax(ad.mean(ad.square(centred), axis=-2), axis=-1)


def scale_factor(points):
    """``delta(X) = sqrt(d) * max_k std_i X_ik`` (population std) per batch element."""
    d = ad.value_of(points).shape[-1]
    return np.sqrt(d * ad.value_of(_max_variance(ad.value_of(points))))


def squared_distances(source, target):
    """``C_ij = sum_k (u_ik - v_jk)^2`` as a single tape node.

    The backward pass needs only the point sets, never the ``(N, M, d)``
    difference tensor.
    """
    sv, tv = ad.value_of(source), ad.value_of(target)
    diff = sv[..., :, None, :] - tv[..., None, :, :]
    C = np.einsum("...ijk,...ijk->...ij", diff, diff)
    del diff

    def vjp(G):
        gs = 2.0 * (G.sum(-1)[..., None] * sv - G @ tv)
        gt = 2.0 * (np.swapaxes(G, -1, -2).sum(-1)[..., None] * tv - np.swapaxes(G, -1, -2) @ sv)
        return ad._unbroadcast(gs, sv.shape), ad._unbroadcast(gt, tv.shape)

    return ad.record(C, (source, target), vjp)


def cost_matrix(source, target, normalize: bool = True) -> CostMatrix:
    """Squared Euclidean costs ``||u_i - v_j||^2``, optionally divided by ``delta(source)^2``.

    Costs are formed from coordinate differences, so they are nonnegative,
    exactly symmetric with a zero diagonal when ``source is target``.
    ``delta^2 = d * max_k var_k`` is recorded on the tape together with the
    costs. When every source point coincides (``delta = 0``) normalisation is
    skipped for that batch element.
    """
    sv, tv = ad.value_of(source), ad.value_of(target)
    if sv.shape[-2] == 0 or tv.shape[-2] == 0:
        raise ValueError("empty point set")
    if sv.shape[-1] != tv.shape[-1]:
        raise ValueError("point sets differ in dimension")
    d = sv.shape[-1]
    C = squared_distances(source, target)
    if not normalize:
        return CostMatrix(C, np.ones(sv.shape[:-2]))
    delta2 = d * _max_variance(source)
    degenerate = ad.value_of(delta2) <= 0
    if np.any(degenerate):
        keep = (~degenerate).astype(np.float64)
        delta2 = delta2 * keep + (1.0 - keep)
    C = C / ad.reshape(delta2, sv.shape[:-2] + (1, 1))
    return CostMatrix(C, np.sqrt(ad.value_of(delta2)))


# -- Sinkhorn ----------------------------------------------------------------


def _floor_log(p: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(p, WEIGHT_FLOOR))


def soft_min(log_w: np.ndarray, h: np.ndarray, C: np.ndarray, eps: float, axis: int) -> np.ndarray:
    """``T_eps``: ``-eps * logsumexp(log_w + (h - C) / eps)`` along ``axis`` of ``C``.

    ``axis=-1`` gives the update of ``f`` (sum over columns) and ``axis=-2``
    the update of ``g``.
    """
    if axis in (-1, C.ndim - 1):
        z = log_w[..., None, :] + (h[..., None, :] - C) / eps
    else:
        z = log_w[..., :, None] + (h[..., :, None] - C) / eps
    m = np.max(z, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    # scipy's logsumexp carries a large per-call overhead in this hot loop
    return -eps * (np.log(np.sum(np.exp(z - m), axis=axis)) + np.squeeze(m, axis=axis))


def _rowdot(K: np.ndarray, v: np.ndarray) -> np.ndarray:
    return (K @ v[..., None])[..., 0]


def _coldot(K: np.ndarray, u: np.ndarray) -> np.ndarray:
    return (u[..., None, :] @ K)[..., 0, :]


def _check_inputs(a, b, C, eps):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    if C.shape[-2:] != (a.shape[-1], b.shape[-1]) or a.shape[:-1] != b.shape[:-1]:
        raise ValueError("shapes of a %s, b %s and C %s disagree" % (a.shape, b.shape, C.shape))
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("marginals must be nonnegative")
    return a, b, C


def sinkhorn_potentials(
    a,
    b,
    C,
    epsilon: float,
    tol: float = 1e-8,
    max_iter: int = 10000,
    scheme: str = "symmetric",
    domain: str = "auto",
) -> SinkhornResult:
    """Fixed-point iteration for the entropic dual potentials.

    ``scheme="symmetric"`` uses the averaged simultaneous updates
    ``f <- (f + T(b, g, C)) / 2``, ``g <- (g + T(a, f, C)) / 2`` from
    ``f = g = 0``; ``"alternating"`` uses plain Sinkhorn
    ``f <- T(b, g, C)``, ``g <- T(a, f, C)``. Both have the same fixed point.

    The iteration stops for a batch element once the largest potential change
    is below ``tol / 2`` (symmetric, so the fixed-point residual is below
    ``tol``) or ``tol`` (alternating); that element is then frozen.
    ``domain="kernel"`` iterates on ``exp(f / eps)`` with ``K = exp(-C / eps)``,
    which is the same map in exact arithmetic; ``"auto"`` uses it when
    ``max C / eps <= 200`` and falls back to log-sum-exp updates otherwise.
    """
    a, b, C = _check_inputs(a, b, C, epsilon)
    if scheme not in ("symmetric", "alternating"):
        raise ValueError("unknown scheme %r" % scheme)
    if domain not in ("auto", "log", "kernel"):
        raise ValueError("unknown domain %r" % domain)
    batch = a.shape[:-1]
    N, M = a.shape[-1], b.shape[-1]
    a2, b2, C2 = a.reshape(-1, N), b.reshape(-1, M), C.reshape(-1, N, M)
    la, lb = _floor_log(a2), _floor_log(b2)
    if domain == "auto":
        domain = "kernel" if C2.size == 0 or C2.max() / epsilon <= KERNEL_LIMIT else "log"
    stop = tol / 2 if scheme == "symmetric" else tol
    nb = C2.shape[0]
    f, g = np.zeros((nb, N)), np.zeros((nb, M))
    iters = np.zeros(nb, dtype=np.int64)
    update = np.full(nb, np.inf)
    active = np.arange(nb)
    # working copies restricted to the unconverged batch elements
    fa, ga = f.copy(), g.copy()
    if domain == "kernel":
        Ka, wa, wb = np.exp(-C2 / epsilon), np.exp(la), np.exp(lb)
    else:
        Ca, laa, lba = C2, la, lb
    for it in range(1, max_iter + 1):
        if active.size == 0:
            break
        if domain == "kernel":
            if scheme == "symmetric":
                fn = 0.5 * (fa - epsilon * np.log(_rowdot(Ka, wb * np.exp(ga / epsilon))))
                gn = 0.5 * (ga - epsilon * np.log(_coldot(Ka, wa * np.exp(fa / epsilon))))
            else:
                fn = -epsilon * np.log(_rowdot(Ka, wb * np.exp(ga / epsilon)))
                gn = -epsilon * np.log(_coldot(Ka, wa * np.exp(fn / epsilon)))
        else:
            if scheme == "symmetric":
                fn = 0.5 * (fa + soft_min(lba, ga, Ca, epsilon, axis=-1))
                gn = 0.5 * (ga + soft_min(laa, fa, Ca, epsilon, axis=-2))
            else:
                fn = soft_min(lba, ga, Ca, epsilon, axis=-1)
                gn = soft_min(laa, fn, Ca, epsilon, axis=-2)
        if not (np.isfinite(fn).all() and np.isfinite(gn).all()):
            raise SinkhornError("non-finite potentials after %d iterations" % it)
        step = np.maximum(np.abs(fn - fa).max(axis=-1), np.abs(gn - ga).max(axis=-1))
        fa, ga = fn, gn
        done = step < stop
        if done.any() or it == max_iter:
            f[active], g[active] = fa, ga
            iters[active] = it
            update[active] = step
            keep = ~done
            active, fa, ga = active[keep], fa[keep], ga[keep]
            if domain == "kernel":
                Ka, wa, wb = Ka[keep], wa[keep], wb[keep]
            else:
                Ca, laa, lba = Ca[keep], laa[keep], lba[keep]
    converged = np.ones(nb, dtype=bool)
    converged[active] = False
    return SinkhornResult(
        f.reshape(batch + (N,)),
        g.reshape(batch + (M,)),
        iters.reshape(batch),
        update.reshape(batch),
        converged.reshape(batch),
        float(epsilon),
    )


def log_plan(a, b, C, f, g, epsilon: float) -> np.ndarray:
    """``log P_ij = log a_i + log b_j + (f_i + g_j - C_ij) / eps``."""
    la, lb = _floor_log(np.asarray(a, dtype=np.float64)), _floor_log(np.asarray(b, dtype=np.float64))
    return la[..., :, None] + lb[..., None, :] + (f[..., :, None] + g[..., None, :] - np.asarray(C)) / epsilon


def marginal_residuals(P, a, b) -> tuple[float, float]:
    P = np.asarray(P)
    return (
        float(np.abs(P.sum(axis=-1) - a).max()),
        float(np.abs(P.sum(axis=-2) - b).max()),
    )


def transport_plan(a, b, C, result: SinkhornResult, tol_marginal: float = 1e-6, allow_nonconverged: bool = False):
    """Recover the coupling from converged potentials.

    Raises :class:`SinkhornError` if the solve did not converge (unless
    ``allow_nonconverged``) or if a marginal is off by more than
    ``10 * tol_marginal``.
    """
    a, b, C = _check_inputs(a, b, C, result.epsilon)
    if not allow_nonconverged and not result.all_converged:
        raise SinkhornError("Sinkhorn did not converge", result)
    P = np.exp(log_plan(a, b, C, result.f, result.g, result.epsilon))
    rr, cr = marginal_residuals(P, a, b)
    if max(rr, cr) > 10 * tol_marginal:
        raise SinkhornError("plan marginals off by %.3g (rows) and %.3g (columns)" % (rr, cr), result)
    return TransportPlan(P, a, b, rr, cr)


def dual_objective(a, b, C, f, g, epsilon: float):
    """``a^T f + b^T g - eps * a^T M b`` with ``M_ij = exp((f_i + g_j - C_ij)/eps) - 1``.

    ``a^T M b`` is evaluated as ``expm1(logsumexp(log P))`` to avoid overflow.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    f, g = np.asarray(f, dtype=np.float64), np.asarray(g, dtype=np.float64)
    lp = log_plan(a, b, C, f, g, epsilon)
    mass = np.expm1(logsumexp(lp, axis=(-2, -1)))
    return (a * f).sum(-1) + (b * g).sum(-1) - epsilon * mass


def reg_primal_cost(P, C, a, b, epsilon: float):
    """``sum_ij P_ij (C_ij + eps * log(P_ij / (a_i b_j)))`` with ``0 log 0 = 0``."""
    P, C = np.asarray(P, dtype=np.float64), np.asarray(C, dtype=np.float64)
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    ab = a[..., :, None] * b[..., None, :]
    pos = P > 0
    ratio = np.where(pos, P, 1.0) / np.where(pos, np.maximum(ab, 1e-300), 1.0)
    ent = np.where(pos, P * np.log(ratio), 0.0)
    return (P * C).sum(axis=(-2, -1)) + epsilon * ent.sum(axis=(-2, -1))


def entropic_cost(a, b, C, epsilon: float, **kw) -> float:
    """``W^2_{2,eps}``: the dual objective at converged potentials."""
    res = sinkhorn_potentials(a, b, C, epsilon, **kw)
    return dual_objective(a, b, C, res.f, res.g, epsilon)


# -- exact transport (transportation simplex) ---------------------------------


def _northwest_corner(a: np.ndarray, b: np.ndarray):
    m, n = a.size, b.size
    s, d = a.copy(), b.copy()
    X = np.zeros((m, n))
    basis = []
    i = j = 0
    while True:
        x = min(s[i], d[j])
        X[i, j] = x
        basis.append((i, j))
        s[i] -= x
        d[j] -= x
        if i == m - 1 and j == n - 1:
            break
        if (s[i] <= d[j] and i < m - 1) or j == n - 1:
            i += 1
        else:
            j += 1
    return X, basis


def _tree_potentials(C: np.ndarray, basis, m: int, n: int):
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    pending = list(basis)
    while pending:
        rest = []
        for i, j in pending:
            if not np.isnan(u[i]) and np.isnan(v[j]):
                v[j] = C[i, j] - u[i]
            elif np.isnan(u[i]) and not np.isnan(v[j]):
                u[i] = C[i, j] - v[j]
            elif np.isnan(u[i]) and np.isnan(v[j]):
                rest.append((i, j))
        if len(rest) == len(pending):
            raise RuntimeError("basis is not a spanning tree")
        pending = rest
    return u, v


def _cycle(basis, enter, m: int):
    """Path in the basis tree from row node ``enter[0]`` to column node ``enter[1]``."""
    adj: dict = {}
    for cell in basis:
        i, j = cell
        adj.setdefault(("r", i), []).append((("c", j), cell))
        adj.setdefault(("c", j), []).append((("r", i), cell))
    start, goal = ("r", enter[0]), ("c", enter[1])
    prev = {start: None}
    queue = [start]
    while queue:
        node = queue.pop(0)
        if node == goal:
            break
        for nxt, cell in adj.get(node, []):
            if nxt not in prev:
                prev[nxt] = (node, cell)
                queue.append(nxt)
    path = []
    node = goal
    while prev[node] is not None:
        node, cell = prev[node]
        path.append(cell)
    return path[::-1]


def exact_ot_lp(a, b, C, max_n: int = LP_MAX_N):
    """Unregularised optimal transport by the transportation simplex.

    Starts from the north-west-corner vertex and pivots on the most negative
    reduced cost (MODI method) until no improving cell remains. Returns the
    optimal vertex plan and its cost ``sum P_ij C_ij``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    m, n = a.size, b.size
    if max(m, n) > max_n:
        raise ValueError("exact LP oracle limited to N <= %d" % max_n)
    if C.shape != (m, n):
        raise ValueError("cost shape mismatch")
    if np.any(a < 0) or np.any(b < 0) or abs(a.sum() - b.sum()) > 1e-9:
        raise ValueError("marginals must be nonnegative with equal mass")
    X, basis = _northwest_corner(a, b)
    for _ in range(10_000):
        u, v = _tree_potentials(C, basis, m, n)
        reduced = C - u[:, None] - v[None, :]
        for cell in basis:
            reduced[cell] = 0.0
        enter = np.unravel_index(np.argmin(reduced), reduced.shape)
        if reduced[enter] >= -1e-12:
            break
        enter = (int(enter[0]), int(enter[1]))
        path = _cycle(basis, enter, m)
        minus = path[0::2]
        theta = min(X[c] for c in minus)
        leave = next(c for c in minus if X[c] == theta)
        for k, cell in enumerate(path):
            X[cell] += -theta if k % 2 == 0 else theta
        X[enter] += theta
        basis.remove(leave)
        basis.append(enter)
    else:  # pragma: no cover - safeguard
        raise RuntimeError("transportation simplex did not terminate")
    X = np.maximum(X, 0.0)
    return X, float((X * C).sum())


# -- recorded coupling ---------------------------------------------------------


def _plan_from(la, lb, f, g, C, eps):
    return ad.exp(
        ad.reshape(la, ad.value_of(la).shape + (1,))
        + ad.reshape(lb, ad.value_of(lb).shape[:-1] + (1, ad.value_of(lb).shape[-1]))
        + (ad.reshape(f, ad.value_of(f).shape + (1,)) + ad.reshape(g, ad.value_of(g).shape[:-1] + (1, ad.value_of(g).shape[-1])) - C)
        / eps
    )


def _recorded_soft_min(log_w, h, C, eps, axis):
    if axis == -1:
        z = ad.reshape(log_w, ad.value_of(log_w).shape[:-1] + (1, ad.value_of(log_w).shape[-1])) + (
            ad.reshape(h, ad.value_of(h).shape[:-1] + (1, ad.value_of(h).shape[-1])) - C
        ) / eps
    else:
        z = ad.reshape(log_w, ad.value_of(log_w).shape + (1,)) + (ad.reshape(h, ad.value_of(h).shape + (1,)) - C) / eps
    return -eps * ad.logsumexp(z, axis=axis)


def _implicit_plan(la, lb, C, res: SinkhornResult, eps: float):
    lav, lbv, Cv = ad.value_of(la), ad.value_of(lb), ad.value_of(C)
    P = np.exp(lav[..., :, None] + lbv[..., None, :] + (res.f[..., :, None] + res.g[..., None, :] - Cv) / eps)

    def vjp(Pbar):
        # floored so that an underflowed row or column contributes zero, not 0/0
        rows = np.maximum(P.sum(-1, keepdims=True), 1e-300)
        cols = np.maximum(P.sum(-2, keepdims=True), 1e-300)
        Pr = P / rows
        Pc = P / cols
        Q = Pbar * P
        la_bar = Q.sum(-1)
        lb_bar = Q.sum(-2)
        C_bar = -Q / eps
        fbar = la_bar / eps
        gbar = lb_bar / eps
        n = P.shape[-2]
        A = np.eye(n) - Pc @ np.swapaxes(Pr, -1, -2) + 1.0
        rhs = -fbar + np.einsum("...ij,...j->...i", Pc, gbar)
        u = np.linalg.solve(A, rhs[..., None])[..., 0]
        v = -gbar - np.einsum("...ij,...i->...j", Pr, u)
        la_bar = la_bar + eps * np.einsum("...ij,...j->...i", Pc, v)
        lb_bar = lb_bar + eps * np.einsum("...ij,...i->...j", Pr, u)
        C_bar = C_bar - u[..., :, None] * Pr - v[..., None, :] * Pc
        return (
            ad._unbroadcast(la_bar, lav.shape),
            ad._unbroadcast(lb_bar, lbv.shape),
            ad._unbroadcast(C_bar, Cv.shape),
        )

    return ad.record(P, (la, lb, C), vjp)


def entropic_plan(
    log_a,
    log_b,
    C,
    epsilon: float,
    grad: str = "implicit",
    tol: float = 1e-8,
    max_iter: int = 10000,
    scheme: str = "symmetric",
    tol_marginal: float = 1e-6,
):
    """Entropic coupling recorded on the tape, plus the solver diagnostics.

    ``log_a``, ``log_b`` (``(..., N)``, ``(..., M)``) and ``C`` may be
    :class:`~detpf.autodiff.Var` nodes. Raises :class:`SinkhornError` when the
    recovered plan misses a marginal by more than ``10 * tol_marginal``.
    """
    if grad not in ("implicit", "stitch", "unroll"):
        raise ValueError("grad must be 'implicit', 'stitch' or 'unroll'")
    lav, lbv, Cv = ad.value_of(log_a), ad.value_of(log_b), ad.value_of(C)
    a, b = np.exp(lav), np.exp(lbv)
    res = sinkhorn_potentials(a, b, Cv, epsilon, tol=tol, max_iter=max_iter, scheme=scheme)
    la = np.maximum(lav, np.log(WEIGHT_FLOOR)) if not ad.is_var(log_a) else log_a
    lb = np.maximum(lbv, np.log(WEIGHT_FLOOR)) if not ad.is_var(log_b) else log_b
    if grad == "implicit":
        # close with an exact g-update so the column marginal holds to roundoff
        g = soft_min(ad.value_of(la), res.f, Cv, epsilon, axis=-2)
        P = _implicit_plan(la, lb, C, replace(res, g=g), epsilon)
    elif grad == "stitch":
        f = _recorded_soft_min(lb, res.g, C, epsilon, axis=-1)
        g = _recorded_soft_min(la, res.f, C, epsilon, axis=-2)
        P = _plan_from(la, lb, f, g, C, epsilon)
    else:
        f, g = np.zeros_like(res.f), np.zeros_like(res.g)
        for _ in range(int(np.max(res.iterations))):
            if scheme == "symmetric":
                f, g = (
                    0.5 * (f + _recorded_soft_min(lb, g, C, epsilon, axis=-1)),
                    0.5 * (g + _recorded_soft_min(la, f, C, epsilon, axis=-2)),
                )
            else:
                f = _recorded_soft_min(lb, g, C, epsilon, axis=-1)
                g = _recorded_soft_min(la, f, C, epsilon, axis=-2)
        P = _plan_from(la, lb, f, g, C, epsilon)
    rr, cr = marginal_residuals(ad.value_of(P), a, b)
    if max(rr, cr) > 10 * tol_marginal:
        raise SinkhornError(
            "plan marginals off by %.3g (rows) and %.3g (columns) after %d iterations"
            % (rr, cr, int(np.max(res.iterations))),
            res,
        )
    return P, res
