import threading

import mpmath
import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from vsam import tensor as T
from vsam.exceptions import ContractError, DegenerateInputError, DimensionError, DomainError, NumericalError
from vsam.tensor import Tape, Tensor


def grad_of(f, *values):
    leaves = [Tensor(np.asarray(v, dtype=float), requires_grad=True) for v in values]
    with Tape() as tape:
        out = f(*leaves)
    T.backward(tape, out)
    return [leaf.grad for leaf in leaves]


# -- matmul ----------------------------------------------------------------


def test_matmul_identity():
    M = np.arange(9.0).reshape(3, 3) - 4
    np.testing.assert_array_equal(T.matmul(np.eye(3), M).data, M)


def test_matmul_hand_values():
    out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_gradient_is_b_transpose():
    rng = np.random.default_rng(0)
    A, B = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    (gA, gB) = grad_of(lambda a, b: T.sum(T.matmul(a, b)), A, B)
    np.testing.assert_allclose(gA, np.ones((3, 2)) @ B.T, rtol=1e-12)
    np.testing.assert_allclose(gB, A.T @ np.ones((3, 2)), rtol=1e-12)
    Bt = Tensor(B)
    err = T.finite_difference_check(lambda a: T.sum(T.matmul(a, Bt)), A)
    assert err < 1e-6


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_matmul_batched_matches_numpy():
    rng = np.random.default_rng(1)
    A, B = rng.normal(size=(5, 3, 4)), rng.normal(size=(5, 4, 2))
    np.testing.assert_allclose(T.matmul(A, B).data, A @ B)
    err = T.finite_difference_check(lambda a: T.sum(T.tanh(T.matmul(a, Tensor(B)))), A)
    assert err < 1e-6


# -- masked softmax -------------------------------------------------------


def test_masked_softmax_uniform():
    out = T.masked_softmax(np.zeros(3), np.ones(3, bool))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, rtol=1e-15)


def test_masked_softmax_matches_high_precision_oracle():
    mpmath.mp.dps = 40
    ex = [mpmath.exp(v) for v in (1, 2, 3)]
    oracle = [float(e / sum(ex)) for e in ex]
    out = T.masked_softmax(Tensor([1.0, 2.0, 3.0]), np.ones(3, bool)).data
    np.testing.assert_allclose(out, oracle, rtol=1e-14)
    np.testing.assert_allclose(out, [0.09003057, 0.24472847, 0.66524096], atol=5e-9)


def test_masked_softmax_single_valid_position():
    out = T.masked_softmax(Tensor([5.0, 100.0]), np.array([True, False]))
    np.testing.assert_array_equal(out.data, [1.0, 0.0])


def test_masked_softmax_all_masked_row():
    with pytest.raises(DegenerateInputError):
        T.masked_softmax(np.zeros((2, 3)), np.array([[True, False, False], [False, False, False]]))


def test_masked_softmax_survives_huge_logits():
    out = T.masked_softmax(Tensor([1000.0, 1001.0, -1000.0]), np.ones(3, bool)).data
    assert np.isfinite(out).all()
    assert out.sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 64).flatmap(lambda n: st.tuples(
    st.lists(st.floats(-500, 500), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n),
)))
def test_masked_softmax_sums_to_one(case):
    logits, mask = np.array(case[0]), np.array(case[1])
    if not mask.any():
        mask[0] = True
    out = T.masked_softmax(logits, mask).data
    assert abs(out[mask].sum() - 1.0) < 1e-12
    assert np.all(out[~mask] == 0.0)
    assert np.all(out >= 0.0)


# -- elementwise ----------------------------------------------------------


def test_tanh_zero():
    assert T.tanh(Tensor(0.0)).item() == 0.0


def test_exp_log_inverse():
    assert T.exp(T.log(Tensor(2.5))).item() == pytest.approx(2.5, rel=1e-15)


def test_tanh_derivative_against_central_difference():
    h, x = 1e-5, 0.7
    fd = (np.tanh(x + h) - np.tanh(x - h)) / (2 * h)
    (g,) = grad_of(lambda t: T.tanh(t), x)
    assert abs(g - fd) / abs(fd) < 1e-8


def test_log_of_non_positive_is_domain_error():
    with pytest.raises(DomainError):
        T.log(Tensor([1.0, 0.0]))
    with pytest.raises(DomainError):
        T.elementwise("log", Tensor(-1.0))


def test_elementwise_dispatch():
    a, b = Tensor([1.0, 2.0]), Tensor([3.0, 5.0])
    np.testing.assert_array_equal(T.elementwise("add", a, b).data, [4.0, 7.0])
    np.testing.assert_array_equal(T.elementwise("sub", a, b).data, [-2.0, -3.0])
    np.testing.assert_array_equal(T.elementwise("mul", a, b).data, [3.0, 10.0])
    with pytest.raises(ContractError):
        T.elementwise("pow", a, b)


def test_only_scalar_broadcast_is_supported():
    T.add(Tensor(np.ones((2, 3))), 1.5)
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(3,\)"):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))


def test_scalar_operand_gradient_sums():
    (ga, gs) = grad_of(lambda a, s: T.sum(T.mul(a, s)), np.arange(4.0), 2.0)
    np.testing.assert_array_equal(ga, [2.0] * 4)
    assert gs == pytest.approx(6.0)


# -- mean pooling ---------------------------------------------------------


def test_mean_pool_single_column():
    m = np.array([[1.0, 9.0], [2.0, 9.0]])
    np.testing.assert_array_equal(T.mean_pool_columns(m, np.array([True, False])).data, [1.0, 2.0])


def test_mean_pool_midpoint():
    assert T.mean_pool_columns(np.array([[1.0, 3.0]]), np.array([True, True])).data[0] == 2.0


def test_mean_pool_hand_values():
    m = np.array([[1.0, 3.0, 5.0], [2.0, 4.0, 6.0]])
    out = T.mean_pool_columns(m, np.array([True, True, False]))
    np.testing.assert_array_equal(out.data, [2.0, 3.0])


def test_mean_pool_all_masked():
    with pytest.raises(DegenerateInputError):
        T.mean_pool_columns(np.ones((2, 3)), np.zeros(3, bool))


# -- backward -------------------------------------------------------------


def test_backward_sum():
    (g,) = grad_of(lambda x: T.sum(x), np.arange(4.0))
    np.testing.assert_array_equal(g, np.ones(4))


def test_backward_square():
    (g,) = grad_of(lambda x: T.sum(x * x), [1.0, 2.0])
    np.testing.assert_array_equal(g, [2.0, 4.0])


def test_backward_accumulates_until_zeroed():
    x = Tensor([1.0, 2.0], requires_grad=True)
    for _ in range(2):
        with Tape() as tape:
            loss = T.sum(x * x)
        T.backward(tape, loss)
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])
    T.zero_grad([x])
    assert x.grad is None or not np.any(x.grad)


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ContractError):
        T.backward(tape, y)


def test_backward_rejects_foreign_loss():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape():
        loss = T.sum(x)
    with Tape() as other:
        pass
    with pytest.raises(ContractError):
        T.backward(other, loss)


def test_tapes_are_independent_across_threads():
    results = {}

    def work(k):
        x = Tensor(np.full(3, float(k)), requires_grad=True)
        with Tape() as tape:
            loss = T.sum(T.tanh(x) * x)
        T.backward(tape, loss)
        results[k] = x.grad.copy()

    threads = [threading.Thread(target=work, args=(k,)) for k in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for k, g in results.items():
        x = float(k)
        np.testing.assert_allclose(g, np.tanh(x) + x * (1 - np.tanh(x) ** 2))


# -- verification harness --------------------------------------------------


def test_finite_difference_constant_function():
    assert T.finite_difference_check(lambda x: Tensor(3.0), [1.0, 2.0]) == 0.0


def test_finite_difference_square():
    assert T.finite_difference_check(lambda x: T.sum(x * x), [1.0, 2.0, 3.0], h=1e-5) < 1e-8


def test_finite_difference_non_finite_raises():
    with pytest.raises(NumericalError):
        T.finite_difference_check(lambda x: T.sum(x) * np.inf, [1.0])


def test_numerical_gradient_restores_point():
    x = Tensor([0.3, -0.2], requires_grad=True)
    before = x.data.copy()
    T.numerical_gradient(lambda: T.sum(T.exp(x)).item(), x)
    np.testing.assert_array_equal(x.data, before)


def test_relative_error_definition():
    assert T.relative_error([1.0, 0.0], [1.1, 0.0]) == pytest.approx(0.1 / 1.1)


# -- random graphs ----------------------------------------------------------
#
# Each graph is evaluated twice: with the tape (float64) and with an
# independent 40-digit mpmath interpreter of the same program, which gives a
# central difference free of float64 round-off.

_UNARY = ("tanh", "exp_tanh", "log_sq1", "scale")
_BINARY = ("add", "sub", "mul", "matmul", "softmax_mix")
_SCALE = 0.7


def _apply(op, a, b, W, mask):
    if op == "tanh":
        return T.tanh(a)
    if op == "exp_tanh":
        return T.exp(T.tanh(a))
    if op == "log_sq1":
        return T.log(a * a + 1.0)
    if op == "scale":
        return a * _SCALE
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "matmul":
        return T.tanh(T.matmul(a, W)) + b
    return T.masked_softmax(a, mask) * b + T.log_softmax(b)


_mp_tanh = np.vectorize(mpmath.tanh, otypes=[object])
_mp_exp = np.vectorize(mpmath.exp, otypes=[object])
_mp_log = np.vectorize(mpmath.log, otypes=[object])


def _mp_softmax(a, mask):
    out = np.empty_like(a)
    for i in range(a.shape[0]):
        e = [mpmath.exp(v) if m else mpmath.mpf(0) for v, m in zip(a[i], mask[i])]
        total = sum(e)
        out[i] = [v / total for v in e]
    return out


def _mp_log_softmax(b):
    out = np.empty_like(b)
    for i in range(b.shape[0]):
        lse = mpmath.log(sum(mpmath.exp(v) for v in b[i]))
        out[i] = [v - lse for v in b[i]]
    return out


def _mp_apply(op, a, b, W, mask):
    if op == "tanh":
        return _mp_tanh(a)
    if op == "exp_tanh":
        return _mp_exp(_mp_tanh(a))
    if op == "log_sq1":
        return _mp_log(a * a + 1)
    if op == "scale":
        return a * mpmath.mpf(_SCALE)
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "matmul":
        return _mp_tanh(a.dot(W)) + b
    return _mp_softmax(a, mask) * b + _mp_log_softmax(b)


def _run_graph(apply, x, ops, picks, W, mask, weights, pool):
    stack = [x]
    for op, pick in zip(ops, picks):
        stack.append(apply(op, stack[-1], stack[pick % len(stack)], W, mask))
    return stack[-1], pool(stack[-1])


@st.composite
def graphs(draw):
    n_ops = draw(st.integers(1, 6))
    ops = [draw(st.sampled_from(_UNARY + _BINARY)) for _ in range(n_ops)]
    picks = [draw(st.integers(0, 10)) for _ in range(n_ops)]
    seed = draw(st.integers(0, 2**32 - 1))
    return ops, picks, seed


@settings(max_examples=120, deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow])
@given(graphs())
def test_random_graphs_match_high_precision_differences(graph):
    ops, picks, seed = graph
    rng = np.random.default_rng(seed)
    point = rng.uniform(-2, 2, size=(3, 4))
    W = rng.uniform(-1, 1, size=(4, 4))
    mask = rng.random((3, 4)) < 0.7
    mask[:, 0] = True
    weights = rng.normal(size=(3, 4))

    x = Tensor(point, requires_grad=True)
    with Tape() as tape:
        out, pooled = _run_graph(_apply, x, ops, picks, Tensor(W), mask, weights,
                                 lambda t: T.mean_pool_columns(t, mask[0]))
        loss = T.sum(out * weights) + T.sum(pooled)
    T.backward(tape, loss)
    analytic = x.grad if x.grad is not None else np.zeros_like(point)

    mpmath.mp.dps = 40
    to_mp = np.vectorize(mpmath.mpf, otypes=[object])
    W_mp, w_mp = to_mp(W), to_mp(weights)
    n_valid = int(mask[0].sum())

    def f_mp(xm):
        out_m, _ = _run_graph(_mp_apply, xm, ops, picks, W_mp, mask, w_mp, lambda t: None)
        pooled_m = sum(out_m[:, j] for j in range(4) if mask[0, j]) / n_valid
        return (out_m * w_mp).sum() + pooled_m.sum()

    h = mpmath.mpf("1e-15")
    numeric = np.zeros_like(point)
    base = to_mp(point)
    for idx in np.ndindex(point.shape):
        up, dn = base.copy(), base.copy()
        up[idx] += h
        dn[idx] -= h
        numeric[idx] = float((f_mp(up) - f_mp(dn)) / (2 * h))
    assert T.relative_error(analytic, numeric) < 1e-4


def test_library_harness_on_well_conditioned_graph():
    rng = np.random.default_rng(8)
    W = Tensor(rng.uniform(-1, 1, size=(4, 4)))
    mask = np.ones((3, 4), bool)

    def f(x):
        a = _apply("matmul", x, x, W, mask)
        return T.sum(_apply("softmax_mix", a, T.tanh(x), W, mask))

    assert T.finite_difference_check(f, rng.uniform(-2, 2, size=(3, 4))) < 1e-6


def test_five_point_stencil_is_exact_on_quartics():
    x = Tensor([0.3, -1.2])
    g = T.numerical_gradient(lambda: float(np.sum(x.data ** 4)), x, h=0.1, points=5)
    np.testing.assert_allclose(g, 4 * x.data ** 3, rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32 - 1))
def test_backward_is_linear(alpha, beta, seed):
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=5)

    def f(x):
        return T.sum(T.tanh(x) * x)

    def g(x):
        return T.sum(T.exp(T.tanh(x)))

    (gf,) = grad_of(f, x0)
    (gg,) = grad_of(g, x0)
    (gc,) = grad_of(lambda x: f(x) * alpha + g(x) * beta, x0)
    np.testing.assert_allclose(gc, alpha * gf + beta * gg, atol=1e-10, rtol=0)


def test_identical_runs_are_bit_identical():
    rng = np.random.default_rng(3)
    A, B = rng.normal(size=(4, 4)), rng.normal(size=(4, 2))

    def run():
        return grad_of(lambda a, b: T.sum(T.log_softmax(T.matmul(T.tanh(a), b))), A, B)

    first, second = run(), run()
    for u, v in zip(first, second):
        assert u.tobytes() == v.tobytes()


# -- misc ops ---------------------------------------------------------------


def test_concat_and_reshape_gradients():
    rng = np.random.default_rng(4)
    a, b = Tensor(rng.normal(size=(2, 3))), rng.normal(size=(2, 2))
    err = T.finite_difference_check(lambda x: T.sum(T.tanh(T.reshape(T.concat([x, Tensor(b)]), (10,)))), a.data)
    assert err < 1e-8


def test_linear_and_gather_gradients():
    rng = np.random.default_rng(5)
    W, bias = rng.normal(size=(3, 4)), rng.normal(size=3)
    x = rng.normal(size=(2, 4))
    assert T.finite_difference_check(lambda w: T.sum(T.tanh(T.linear(Tensor(x), w, Tensor(bias)))), W) < 1e-8
    emb = rng.normal(size=(3, 6))
    idx = np.array([[0, 2, 2], [5, 1, 0]])
    out = T.gather_columns(emb, idx)
    assert out.shape == (2, 3, 3)
    np.testing.assert_array_equal(out.data[1, :, 0], emb[:, 5])
    assert T.finite_difference_check(lambda m: T.sum(T.tanh(T.gather_columns(m, idx))), emb) < 1e-8


def test_pick_and_log_softmax():
    logits = np.array([[1.0, 2.0, 0.5], [0.0, -1.0, 3.0]])
    expected = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    out = T.pick(T.log_softmax(logits), np.array([1, 2]))
    np.testing.assert_allclose(out.data, [expected[0, 1], expected[1, 2]], rtol=1e-14)
    assert T.finite_difference_check(lambda l: T.sum(T.pick(T.log_softmax(l), np.array([1, 2]))), logits) < 1e-8
