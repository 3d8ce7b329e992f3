import math

import numpy as np
import pytest

from amii.diffcore import Param, ParamSet, Tape, Tensor, grad_check
from amii.errors import (DimensionError, NumericError, ParameterError,
                         StateError)


def test_matmul_identity_exact():
    t = Tape()
    a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    out = t.matmul(Tensor(np.eye(2)), a)
    assert np.array_equal(out.data, a.data)
    out2 = t.matmul(a, Tensor(np.eye(2)))
    assert np.array_equal(out2.data, a.data)


def test_matmul_dot_product():
    t = Tape()
    out = t.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.shape == (1, 1)
    assert out.data[0, 0] == 11.0


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    out = Tape().matmul(Tensor(a), Tensor(b)).data
    # independent oracle: explicit triple loop
    ref = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                ref[i, j] += a[i, k] * b[k, j]
    assert np.abs(out - ref).max() < 1e-12


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError) as exc:
        Tape().matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    assert "(2, 3)" in str(exc.value)


def test_elementwise_values():
    t = Tape()
    assert t.sigmoid(Tensor(0.0)).data == 0.5
    assert t.tanh(Tensor(0.0)).data == 0.0
    assert t.relu(Tensor(-3.2)).data == 0.0
    assert t.relu(Tensor(3.2)).data == 3.2


def test_elementwise_shape_error():
    with pytest.raises(DimensionError):
        Tape().add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))
    with pytest.raises(DimensionError):
        Tape().mul(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3))))


def test_softmax_uniform_and_stability():
    t = Tape()
    out = t.softmax_rows(Tensor([[0.0, 0.0]]))
    assert np.allclose(out.data, [[0.5, 0.5]])
    big = t.softmax_rows(Tensor([[1000.0, 1000.0]]))
    assert np.all(np.isfinite(big.data))
    assert np.allclose(big.data, [[0.5, 0.5]])


def test_softmax_closed_form():
    # softmax([0, ln 3]) = [1, 3] / 4
    out = Tape().softmax_rows(Tensor([[0.0, math.log(3.0)]]))
    assert np.abs(out.data - [[0.25, 0.75]]).max() < 1e-15


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(5)
    x = rng.normal(scale=10.0, size=(7, 9))
    out = Tape().softmax_rows(Tensor(x))
    assert np.abs(out.data.sum(axis=-1) - 1.0).max() <= 1e-12
    assert (out.data >= 0).all()


def test_concat_empty_operand():
    t = Tape()
    a = Tensor(np.zeros((3, 0)))
    b = Tensor(np.arange(6.0).reshape(3, 2))
    out = t.concat_feature(a, b)
    assert np.array_equal(out.data, b.data)


def test_concat_values_and_split_roundtrip():
    t = Tape()
    a = Tensor([[1.0], [2.0]])
    b = Tensor([[3.0], [4.0]])
    cat = t.concat_feature(a, b)
    assert np.array_equal(cat.data, [[1.0, 3.0], [2.0, 4.0]])
    left, right = t.split_feature(cat, 1)
    assert np.array_equal(left.data, a.data)
    assert np.array_equal(right.data, b.data)


def test_concat_leading_dim_mismatch():
    with pytest.raises(DimensionError):
        Tape().concat_feature(Tensor(np.zeros((2, 1))), Tensor(np.zeros((3, 1))))


def test_mse_examples():
    t = Tape()
    x = Tensor([1.0, 2.0, 3.0])
    assert t.mse_loss(x, Tensor([1.0, 2.0, 3.0])).data == 0.0
    # ((1-0)^2 + (3-0)^2) / 2 = 5
    assert t.mse_loss(Tensor([0.0, 0.0]), Tensor([1.0, 3.0])).data == 5.0


def test_mse_permutation_invariance():
    rng = np.random.default_rng(9)
    p = rng.normal(size=12)
    q = rng.normal(size=12)
    perm = rng.permutation(12)
    t = Tape()
    assert (t.mse_loss(Tensor(p), Tensor(q)).data
            == pytest.approx(float(t.mse_loss(Tensor(p[perm]), Tensor(q[perm])).data),
                             rel=1e-15))


def test_mse_shape_error():
    with pytest.raises(DimensionError):
        Tape().mse_loss(Tensor(np.zeros(2)), Tensor(np.zeros(3)))


def test_backward_quadratic():
    # loss = mse(w, 0) for scalar w=3 has d/dw = 2*w = 6
    params = ParamSet()
    w = params.add("w", 3.0)
    tape = Tape()
    loss = tape.mse_loss(w, np.asarray(0.0))
    tape.backward(loss)
    assert w.grad == pytest.approx(6.0)


def test_backward_unreachable_param_zero_grad():
    params = ParamSet()
    w = params.add("w", 2.0)
    unused = params.add("unused", np.ones(3))
    tape = Tape()
    loss = tape.mse_loss(w, np.asarray(1.0))
    tape.backward(loss)
    assert np.array_equal(unused.grad, np.zeros(3))


def test_backward_twice_raises_state_error():
    w = Param("w", 1.0)
    tape = Tape()
    loss = tape.mse_loss(w, np.asarray(0.0))
    tape.backward(loss)
    with pytest.raises(StateError):
        tape.backward(loss)
    tape.reset()  # after reset a fresh pass is allowed
    loss2 = tape.mse_loss(w, np.asarray(0.0))
    tape.backward(loss2)


def test_backward_accumulates_across_tapes():
    params = ParamSet()
    w = params.add("w", 2.0)
    for _ in range(2):
        tape = Tape()
        tape.backward(tape.mse_loss(w, np.asarray(0.0)))
    assert w.grad == pytest.approx(8.0)  # 2 * (2w)
    params.zero_grads()
    assert w.grad == 0.0


def test_grad_seed_scales_contributions():
    params = ParamSet()
    w = params.add("w", 3.0)
    tape = Tape()
    tape.backward(tape.mse_loss(w, np.asarray(0.0)), seed=0.25)
    assert w.grad == pytest.approx(1.5)


def test_gradcheck_quadratic_sharp():
    params = ParamSet()
    params.add("w", np.array([1.5, -2.0, 0.5]))

    def f(tape):
        return tape.mse_loss(params["w"], np.zeros(3))

    assert grad_check(f, params, eps=1e-5) < 1e-8


def test_gradcheck_zero_function():
    params = ParamSet()
    params.add("w", np.array([1.0, 2.0]))

    def f(tape):
        return tape.mse_loss(Tensor(np.zeros(2)), np.zeros(2))

    assert grad_check(f, params, eps=1e-5) == 0.0


def test_gradcheck_eps_domain():
    params = ParamSet()
    params.add("w", 1.0)
    with pytest.raises(ParameterError):
        grad_check(lambda t: t.mse_loss(params["w"], np.asarray(0.0)),
                   params, eps=1e-2)


def test_gradcheck_nonfinite_raises():
    params = ParamSet()
    params.add("w", 1.0)

    def f(tape):
        return Tensor(np.asarray(np.inf))

    with pytest.raises(NumericError):
        grad_check(f, params)


def test_all_primitives_against_finite_differences():
    """Composite graph touching every primitive op; >= 100 coordinates."""
    rng = np.random.default_rng(21)
    params = ParamSet()
    params.add("w1", rng.normal(size=(5, 6)))
    params.add("b1", rng.normal(size=6))
    params.add("w2", rng.normal(size=(6, 6)))
    params.add("m", rng.normal(size=(4, 5)))
    params.add("rows0", rng.normal(size=(2, 6)))
    params.add("rows1", rng.normal(size=(2, 6)))
    target = rng.normal(size=(2, 4))

    def f(tape: Tape):
        x = tape.matmul(params["m"], params["w1"])          # 4x6
        x = tape.add_rowvec(x, params["b1"])
        x = tape.tanh(x)
        y = tape.matmul(x, params["w2"])                    # 4x6
        y = tape.sigmoid(y)
        z = tape.mul(x, y)
        z = tape.add(z, x)
        z = tape.relu(z)
        z = tape.scale(z, 0.7)
        att = tape.softmax_rows(tape.matmul(z, tape.transpose(z)))   # 4x4
        left = tape.slice_cols(z, 0, 3)
        right = tape.slice_cols(z, 3, 6)
        both = tape.concat_feature(right, left)
        stacked = tape.stack_time([params["rows0"], params["rows1"]])  # 2x2x6
        pooled = tape.add(tape.mean_time(stacked), tape.take_time(stacked, 0))
        proj = tape.matmul(both, tape.transpose(pooled))    # 4x2 ... shapes: 4x6 @ 6x2
        out = tape.matmul(att, proj)                        # 4x2
        return tape.mse_loss(tape.transpose(out), target)

    err = grad_check(f, params, eps=1e-5, samples=150,
                     rng=np.random.default_rng(4))
    assert err < 1e-4


def test_forward_determinism_bit_identical():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 4))

    def run():
        t = Tape()
        out = t.softmax_rows(t.matmul(t.tanh(Tensor(x)), Tensor(w)))
        return out.data

    a, b = run(), run()
    assert np.array_equal(a, b)


def test_batched_matmul_matches_per_sample():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(3, 4, 5))
    w = rng.normal(size=(5, 2))
    batched = Tape().matmul(Tensor(a), Tensor(w)).data
    for i in range(3):
        single = Tape().matmul(Tensor(a[i]), Tensor(w)).data
        assert np.array_equal(batched[i], single)


def test_batched_matmul_weight_gradient_sums_over_batch():
    rng = np.random.default_rng(12)
    params = ParamSet()
    params.add("w", rng.normal(size=(5, 2)))
    a = rng.normal(size=(3, 4, 5))
    target = rng.normal(size=(3, 4, 2))

    def f(tape):
        return tape.mse_loss(tape.matmul(Tensor(a), params["w"]), target)

    assert grad_check(f, params, eps=1e-5, samples=10) < 1e-6


def test_duplicate_param_name_rejected():
    params = ParamSet()
    params.add("w", 1.0)
    with pytest.raises(StateError):
        params.add("w", 2.0)


def test_nograd_tape_refuses_backward():
    tape = Tape(grad=False)
    loss = tape.mse_loss(Tensor(1.0), np.asarray(0.0))
    assert len(tape) == 0
    with pytest.raises(StateError):
        tape.backward(loss)
