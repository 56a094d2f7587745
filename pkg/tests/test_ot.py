import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from detpf import autodiff as ad
from detpf import ot

C2 = np.array([[0.0, 1.0], [1.0, 0.0]])
HALF = np.array([0.5, 0.5])
P_DIAG = 0.5 / (1 + np.exp(-1.0))


def _instance(seed, N, d=2):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((N, d)), rng.standard_normal((N, d))
    a, b = rng.dirichlet(np.ones(N)), rng.dirichlet(np.ones(N))
    return a, b, ad.value_of(ot.cost_matrix(x, y, normalize=False).C)


# -- costs --------------------------------------------------------------------


def test_cost_identical_points():
    x = np.random.default_rng(0).standard_normal((6, 3))
    C = ot.cost_matrix(x, x, normalize=False).C
    np.testing.assert_array_equal(np.diag(C), 0.0)
    np.testing.assert_array_equal(C, C.T)
    assert C.min() >= 0


def test_cost_scalar_hand_value():
    C = ot.cost_matrix(np.array([[0.0]]), np.array([[3.0]]), normalize=False).C
    np.testing.assert_array_equal(C, [[9.0]])


def test_cost_normalisation_is_scale_invariant():
    x = np.random.default_rng(1).standard_normal((7, 2))
    a = ot.cost_matrix(x, x).C
    b = ot.cost_matrix(3.7 * x, 3.7 * x).C
    assert np.max(np.abs(a - b)) <= 1e-12


def test_cost_normalisation_scale():
    x = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
    cm = ot.cost_matrix(x, x)
    delta2 = 2 * np.max(np.var(x, axis=0))
    np.testing.assert_allclose(cm.C, ot.cost_matrix(x, x, normalize=False).C / delta2)
    assert cm.scale == pytest.approx(np.sqrt(delta2))


def test_cost_degenerate_cloud_not_normalised():
    x = np.ones((4, 2))
    cm = ot.cost_matrix(x, x)
    np.testing.assert_array_equal(cm.C, 0.0)


def test_cost_gradient_matches_fd():
    rng = np.random.default_rng(2)
    y = rng.standard_normal((4, 2))
    w = rng.standard_normal((4, 4))

    def f(flat):
        x = ad.reshape(flat, (4, 2))
        return ad.sum(ot.cost_matrix(x, y).C * w) + ad.sum(ot.cost_matrix(x, x).C * w)

    assert ad.finite_diff_check(f, rng.standard_normal(8)) <= 1e-7


# -- Sinkhorn -----------------------------------------------------------------


def test_single_atom():
    res = ot.sinkhorn_potentials(np.ones(1), np.ones(1), np.zeros((1, 1)), 0.5)
    np.testing.assert_array_equal(res.f, [0.0])
    np.testing.assert_array_equal(res.g, [0.0])
    plan = ot.transport_plan(np.ones(1), np.ones(1), np.zeros((1, 1)), res)
    np.testing.assert_array_equal(plan.P, [[1.0]])


@pytest.mark.parametrize("scheme", ["symmetric", "alternating"])
@pytest.mark.parametrize("domain", ["log", "kernel"])
def test_two_atom_closed_form(scheme, domain):
    res = ot.sinkhorn_potentials(HALF, HALF, C2, 1.0, tol=1e-12, scheme=scheme, domain=domain)
    P = ot.transport_plan(HALF, HALF, C2, res).P
    np.testing.assert_allclose(P, [[P_DIAG, 0.5 - P_DIAG], [0.5 - P_DIAG, P_DIAG]], atol=1e-10)
    assert P_DIAG == pytest.approx(0.36552929, abs=1e-8)
    np.testing.assert_allclose(P.sum(0), HALF, atol=1e-8)
    np.testing.assert_allclose(P.sum(1), HALF, atol=1e-8)


def test_two_atom_symmetric_potentials():
    res = ot.sinkhorn_potentials(HALF, HALF, C2, 1.0, tol=1e-12)
    np.testing.assert_allclose(res.f, res.g, atol=1e-12)
    # e^{2c} = 2 / (1 + e^{-1}) at the fixed point f = g = c
    assert np.exp(2 * res.f[0]) == pytest.approx(2 / (1 + np.exp(-1.0)), abs=1e-10)


def test_large_epsilon_gives_product_plan():
    a, b, C = _instance(3, 6)
    res = ot.sinkhorn_potentials(a, b, C, 1e3)
    P = ot.transport_plan(a, b, C, res).P
    assert np.max(np.abs(P - np.outer(a, b))) <= 1e-3


def test_fixed_point_residual_below_tol():
    a, b, C = _instance(4, 8)
    eps, tol = 0.3, 1e-9
    res = ot.sinkhorn_potentials(a, b, C, eps, tol=tol)
    rf = np.abs(res.f - ot.soft_min(np.log(b), res.g, C, eps, axis=-1)).max()
    rg = np.abs(res.g - ot.soft_min(np.log(a), res.f, C, eps, axis=-2)).max()
    assert max(rf, rg) <= tol


def test_random_plan_marginals_and_positivity():
    a, b, C = _instance(5, 8)
    plan = ot.transport_plan(a, b, C, ot.sinkhorn_potentials(a, b, C, 0.5))
    assert plan.row_residual <= 1e-6 and plan.col_residual <= 1e-6
    assert np.all(plan.P > 0)


def test_nonconverged_solve_raises():
    a, b, C = _instance(6, 8)
    res = ot.sinkhorn_potentials(a, b, C, 0.01, max_iter=3)
    assert not res.all_converged
    with pytest.raises(ot.SinkhornError):
        ot.transport_plan(a, b, C, res)


def test_bad_inputs():
    with pytest.raises(ValueError):
        ot.sinkhorn_potentials(HALF, HALF, C2, 0.0)
    with pytest.raises(ValueError):
        ot.sinkhorn_potentials(HALF, np.ones(3) / 3, C2, 1.0)
    with pytest.raises(ValueError):
        ot.sinkhorn_potentials(np.array([1.5, -0.5]), HALF, C2, 1.0)


def test_batched_solve_matches_individual():
    insts = [_instance(s, 5) for s in range(4)]
    a = np.stack([i[0] for i in insts])
    b = np.stack([i[1] for i in insts])
    C = np.stack([i[2] for i in insts])
    res = ot.sinkhorn_potentials(a, b, C, 0.2, tol=1e-10)
    for k, (ak, bk, Ck) in enumerate(insts):
        single = ot.sinkhorn_potentials(ak, bk, Ck, 0.2, tol=1e-10)
        np.testing.assert_array_equal(res.f[k], single.f)
        assert res.iterations[k] == single.iterations


# -- objectives ---------------------------------------------------------------


def test_dual_objective_zero():
    assert ot.dual_objective(HALF, HALF, np.zeros((2, 2)), np.zeros(2), np.zeros(2), 1.0) == 0.0


def test_strong_duality_two_atoms():
    res = ot.sinkhorn_potentials(HALF, HALF, C2, 1.0, tol=1e-12)
    P = ot.transport_plan(HALF, HALF, C2, res).P
    dual = ot.dual_objective(HALF, HALF, C2, res.f, res.g, 1.0)
    primal = ot.reg_primal_cost(P, C2, HALF, HALF, 1.0)
    assert abs(dual - primal) <= 1e-8


def test_dual_stationarity():
    a, b, C = _instance(7, 5)
    eps = 0.5
    res = ot.sinkhorn_potentials(a, b, C, eps, tol=1e-12)
    base = ot.dual_objective(a, b, C, res.f, res.g, eps)
    for delta in (1e-3, 1e-4):
        for i in range(5):
            f = res.f.copy()
            f[i] += delta
            change = ot.dual_objective(a, b, C, f, res.g, eps) - base
            assert change <= 1e-14
            assert abs(change) <= 10 * delta**2


def test_primal_of_product_plan():
    a, b, C = _instance(8, 4)
    P = np.outer(a, b)
    assert ot.reg_primal_cost(P, C, a, b, 0.7) == pytest.approx((P * C).sum(), abs=1e-14)


def test_sinkhorn_plan_minimises_primal():
    a, b, C = _instance(9, 6)
    eps = 0.4
    P = ot.transport_plan(a, b, C, ot.sinkhorn_potentials(a, b, C, eps, tol=1e-12)).P
    best = ot.reg_primal_cost(P, C, a, b, eps)
    rng = np.random.default_rng(10)
    for _ in range(20):
        K = rng.uniform(0.01, 1.0, (6, 6))
        # Sinkhorn scaling of a random kernel yields a random feasible coupling
        res = ot.sinkhorn_potentials(a, b, -np.log(K), 1.0, tol=1e-12)
        Q = ot.transport_plan(a, b, -np.log(K), res).P
        assert best <= ot.reg_primal_cost(Q, C, a, b, eps) + 1e-10


def test_entropic_cost_is_dual_at_solution():
    a, b, C = _instance(11, 5)
    res = ot.sinkhorn_potentials(a, b, C, 0.3)
    assert ot.entropic_cost(a, b, C, 0.3) == pytest.approx(ot.dual_objective(a, b, C, res.f, res.g, 0.3))


# -- exact LP -----------------------------------------------------------------


def test_lp_identical_supports():
    P, cost = ot.exact_ot_lp(HALF, HALF, C2)
    np.testing.assert_array_equal(P, np.diag(HALF))
    assert cost == 0.0


def test_lp_degenerate_marginal():
    a = np.array([1.0, 0.0, 0.0])
    b = np.array([0.2, 0.3, 0.5])
    P, cost = ot.exact_ot_lp(a, b, np.random.default_rng(0).uniform(size=(3, 3)))
    np.testing.assert_allclose(P[0], b)
    np.testing.assert_array_equal(P[1:], 0.0)


def test_lp_size_limit():
    with pytest.raises(ValueError):
        ot.exact_ot_lp(np.ones(9) / 9, np.ones(9) / 9, np.zeros((9, 9)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_lp_matches_linprog(N, seed):
    a, b, C = _instance(seed, N)
    P, cost = ot.exact_ot_lp(a, b, C)
    A_eq = np.vstack([np.kron(np.eye(N), np.ones(N)), np.kron(np.ones(N), np.eye(N))])
    ref = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    assert cost == pytest.approx(ref.fun, abs=1e-9)
    np.testing.assert_allclose(P.sum(1), a, atol=1e-12)
    np.testing.assert_allclose(P.sum(0), b, atol=1e-12)


@pytest.mark.parametrize("eps", [1.0, 0.5, 0.1])
def test_entropic_gap_bounds(eps):
    a, b, C = _instance(12, 4)
    _, w2 = ot.exact_ot_lp(a, b, C)
    P = ot.transport_plan(a, b, C, ot.sinkhorn_potentials(a, b, C, eps, tol=1e-11)).P
    gap = (P * C).sum() - w2
    assert -1e-9 <= gap <= 2 * eps * np.log(4)


# -- recorded plans -----------------------------------------------------------


def _plan_loss(mode, scheme="symmetric"):
    rng = np.random.default_rng(13)
    y = rng.standard_normal((5, 2))
    lb = np.log(rng.dirichlet(np.ones(5)))
    wts = rng.standard_normal((5, 5))

    def f(flat):
        x = ad.reshape(flat[:10], (5, 2))
        la = flat[10:] - ad.logsumexp(flat[10:])
        P, _ = ot.entropic_plan(la, lb, ot.cost_matrix(x, y).C, 0.5, grad=mode, tol=1e-11, scheme=scheme)
        return ad.sum(P * wts)

    return f, rng.standard_normal(15)


@pytest.mark.parametrize("mode", ["implicit", "unroll"])
@pytest.mark.parametrize("scheme", ["symmetric", "alternating"])
def test_plan_gradient_matches_fd(mode, scheme):
    f, x0 = _plan_loss(mode, scheme)
    assert ad.finite_diff_check(f, x0, h=1e-6) <= 1e-5


def test_stitched_gradient_differs_from_fd():
    f, x0 = _plan_loss("stitch")
    assert ad.finite_diff_check(f, x0, h=1e-6) > 1e-3


def test_entropic_plan_marginal_guard():
    a, b, C = _instance(14, 8)
    with pytest.raises(ot.SinkhornError):
        ot.entropic_plan(np.log(a), np.log(b), C, 0.01, max_iter=2)
