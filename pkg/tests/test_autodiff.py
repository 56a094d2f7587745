import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detpf import autodiff as ad
from detpf import ot, ssm
from detpf import filter as pf


def test_declare_single_leaf():
    with ad.Tape() as tape:
        (x,) = tape.declare_parameters([2.0])
        assert float(x) == 2.0
        assert tape.num_parameters == 1


def test_declare_two_leaves():
    with ad.Tape() as tape:
        leaves = tape.declare_parameters([0.5, 0.5])
    assert len(leaves) == 2
    assert [float(v) for v in leaves] == [0.5, 0.5]


def test_declare_empty_gives_empty_gradient():
    with ad.Tape() as tape:
        assert tape.declare_parameters([]) == []
        g = tape.grad(ad.sum(np.ones(3)))
    assert g.shape == (0,)


def test_square_gradient():
    with ad.Tape() as tape:
        (x,) = tape.declare_parameters([3.0])
        g = tape.grad(x * x)
    np.testing.assert_array_equal(g, [6.0])


def test_logsumexp_gradient_symmetric():
    with ad.Tape() as tape:
        a, b = tape.declare_parameters([0.0, 0.0])
        g = tape.grad(ad.log(ad.exp(a) + ad.exp(b)))
    np.testing.assert_allclose(g, [0.5, 0.5], rtol=0, atol=1e-15)


def test_unused_parameter_gets_zero():
    with ad.Tape() as tape:
        a, b = tape.declare_parameters([1.0, 2.0])
        g = tape.grad(a * 3.0)
    np.testing.assert_array_equal(g, [3.0, 0.0])


def test_nonfinite_recording_is_error():
    with ad.Tape() as tape:
        (x,) = tape.declare_parameters([0.0])
        with pytest.raises(ad.NonFiniteError), np.errstate(divide="ignore"):
            ad.log(x)


def test_closed_tape_is_stale():
    with ad.Tape() as tape:
        (x,) = tape.declare_parameters([1.0])
    with pytest.raises(ad.StaleRecordingError):
        x * 2.0


def test_mixing_tapes_is_error():
    with ad.Tape() as t1:
        (x,) = t1.declare_parameters([1.0])
        with ad.Tape() as t2:
            (y,) = t2.declare_parameters([1.0])
            with pytest.raises(ad.StaleRecordingError):
                x + y


def test_nodes_are_topologically_ordered():
    with ad.Tape() as tape:
        x = tape.parameter([1.0, 2.0])
        y = ad.sum(ad.exp(x) * x)
        for node in tape._nodes:
            assert all(p.index < node.index for p in node.parents)
        assert y.index == len(tape) - 1


def test_plain_arrays_bypass_tape():
    with ad.Tape() as tape:
        out = ad.exp(np.zeros(3))
        assert not ad.is_var(out)
        assert len(tape) == 0


def test_finite_diff_check_quadratic():
    err = ad.finite_diff_check(lambda x: ad.sum(ad.square(x)), [1.0, 2.0], h=1e-6)
    assert err <= 1e-6


def test_finite_diff_check_sinkhorn_cost():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 2))
    a = rng.dirichlet(np.ones(5))
    b = np.full(5, 0.2)

    def f(flat):
        y = ad.reshape(flat, (5, 2))
        C = ot.cost_matrix(x, y, normalize=False).C
        P, _ = ot.entropic_plan(np.log(a), np.log(b), C, 0.5)
        return ad.sum(P * C)

    assert ad.finite_diff_check(f, rng.standard_normal(10), h=1e-5) <= 1e-4


def test_dpf_loglik_gradient_matches_fd():
    model = ssm.DiagonalLGModel(dim=1)
    data = ssm.simulate(model, [0.5], 3, seed=4)

    def f(theta):
        return pf.run_filter(model, theta, None, data.observations, 4, "det(0.5)", seed=11).loglik

    assert ad.finite_diff_check(f, [0.4], h=1e-5) <= 1e-5


def test_matmul_and_broadcast_gradients():
    rng = np.random.default_rng(1)
    A0 = rng.standard_normal((3, 4))
    b0 = rng.standard_normal(4)

    def f(flat):
        A = ad.reshape(flat[:12], (3, 4))
        b = flat[12:]
        return ad.sum(ad.square(A @ ad.reshape(b, (4, 1))) + A * b)

    assert ad.finite_diff_check(f, np.concatenate([A0.ravel(), b0])) <= 1e-7


def test_getitem_stack_concatenate_gradients():
    def f(x):
        parts = [x[0] * x[1], x[2:4].sum(), ad.logsumexp(x)]
        return ad.sum(ad.stack(parts) * np.array([1.0, 2.0, 3.0])) + ad.sum(ad.concatenate([x, x[:2]]) ** 2)

    assert ad.finite_diff_check(f, [0.3, -1.2, 0.7, 2.0]) <= 1e-7


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6))
def test_gradient_of_logsumexp_is_softmax(values):
    x0 = np.array(values)
    with ad.Tape() as tape:
        x = tape.parameter(x0)
        g = tape.grad(ad.logsumexp(x))
    p = np.exp(x0 - x0.max())
    np.testing.assert_allclose(g, p / p.sum(), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(-2.0, 2.0))
def test_elementwise_chain_rule(a, b):
    def f(x):
        return ad.sum(ad.sqrt(x[0]) * ad.exp(x[1]) + ad.log(x[0]) / (1.0 + x[1] ** 2))

    assert ad.finite_diff_check(f, [a, b], h=1e-6) <= 1e-6
