"""Unit tests for the dense linear-algebra kernel."""

import numpy as np
import pytest

from traj.numkit import (
    concat,
    finite_diff_check,
    hadamard,
    l2_distance,
    mat,
    matvec,
    sigmoid,
    vec,
)


def test_vec_rejects_non_finite():
    with pytest.raises(ValueError):
        vec([1.0, np.inf])
    with pytest.raises(ValueError):
        vec([np.nan])


def test_vec_rejects_wrong_rank():
    with pytest.raises(ValueError):
        vec([[1.0, 2.0]])


def test_mat_rejects_non_finite():
    with pytest.raises(ValueError):
        mat([[1.0, np.nan]])


def test_matvec_identity():
    assert np.array_equal(matvec(np.eye(2), vec([3.0, 4.0])), [3.0, 4.0])


def test_matvec_zero_matrix():
    assert np.array_equal(matvec(np.zeros((2, 2)), vec([3.0, 4.0])), [0.0, 0.0])


def test_matvec_small_example():
    m = mat([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matvec(m, vec([1.0, 1.0])), [3.0, 7.0])


def test_matvec_dimension_mismatch_names_shapes():
    with pytest.raises(ValueError, match=r"\(2, 2\).*\(3,\)"):
        matvec(np.eye(2), np.ones(3))


def test_matvec_is_linear():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = rng.normal(size=(4, 6))
        a = rng.normal(size=6)
        b = rng.normal(size=6)
        alpha, beta = rng.normal(size=2)
        lhs = matvec(m, alpha * a + beta * b)
        rhs = alpha * matvec(m, a) + beta * matvec(m, b)
        assert np.abs(lhs - rhs).max() < 1e-10


def test_sigmoid_at_zero():
    assert np.array_equal(sigmoid(np.zeros(2)), [0.5, 0.5])


def test_sigmoid_saturates_without_overflow():
    assert abs(sigmoid(np.asarray([1000.0]))[0] - 1.0) < 1e-12
    assert sigmoid(np.asarray([-1000.0]))[0] < 1e-12


def test_sigmoid_closed_form_point():
    # 1 / (1 + 1/3) = 0.75
    assert sigmoid(np.asarray([np.log(3.0)]))[0] == pytest.approx(0.75, abs=1e-15)


def test_sigmoid_symmetry():
    rng = np.random.default_rng(1)
    x = rng.normal(scale=5.0, size=100)
    assert np.abs(sigmoid(-x) - (1.0 - sigmoid(x))).max() < 1e-12


def test_sigmoid_range_open_interval():
    rng = np.random.default_rng(2)
    s = sigmoid(rng.normal(scale=10.0, size=1000))
    assert np.all(s > 0.0) and np.all(s < 1.0)


def test_hadamard_identity_and_zero():
    a = vec([1.5, -2.0, 3.0])
    assert np.array_equal(hadamard(a, np.ones(3)), a)
    assert np.array_equal(hadamard(a, np.zeros(3)), np.zeros(3))


def test_hadamard_small_example():
    assert np.array_equal(hadamard(vec([1.0, 2.0]), vec([3.0, -4.0])), [3.0, -8.0])


def test_hadamard_length_mismatch():
    with pytest.raises(ValueError):
        hadamard(np.ones(2), np.ones(3))


def test_l2_distance_examples():
    a = vec([1.0, 2.0])
    assert l2_distance(a, a) == 0.0
    assert l2_distance(vec([0.0, 0.0]), vec([3.0, 4.0])) == pytest.approx(5.0)
    assert l2_distance(vec([1.0, 1.0]), vec([2.0, 3.0])) == pytest.approx(np.sqrt(5.0))


def test_l2_distance_length_mismatch():
    with pytest.raises(ValueError):
        l2_distance(np.ones(2), np.ones(3))


def test_l2_distance_triangle_inequality():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a, b, c = rng.normal(size=(3, 8))
        assert l2_distance(a, c) <= l2_distance(a, b) + l2_distance(b, c) + 1e-12


def test_concat_empty_sides():
    assert np.array_equal(concat(vec([]), vec([1.0])), [1.0])
    assert np.array_equal(concat(vec([1.0]), vec([])), [1.0])


def test_concat_order_and_roundtrip():
    a = vec([1.0, 2.0])
    b = vec([3.0])
    c = concat(a, b)
    assert np.array_equal(c, [1.0, 2.0, 3.0])
    assert len(c) == len(a) + len(b)
    assert np.array_equal(c[: len(a)], a)
    assert np.array_equal(c[len(a):], b)


def test_finite_diff_check_quadratic_passes():
    theta = np.asarray([1.0, 2.0])

    def loss(arrays):
        return float((arrays[0] ** 2).sum())

    report = finite_diff_check(loss, [theta], [2.0 * theta], eps=1e-5, tol=1e-4)
    assert report.passed
    assert report.max_rel_error < 1e-8


def test_finite_diff_check_catches_wrong_gradient():
    theta = np.asarray([1.0, 2.0])

    def loss(arrays):
        return float((arrays[0] ** 2).sum())

    report = finite_diff_check(loss, [theta], [np.zeros(2)], eps=1e-5, tol=1e-4)
    assert not report.passed
    assert report.worst_param_index >= 0


def test_finite_diff_check_multi_tensor_nonlinear():
    # two tensors through a sigmoid chain; analytic gradients by hand
    rng = np.random.default_rng(4)
    w = rng.normal(size=(3, 2))
    x = rng.normal(size=2)

    def loss(arrays):
        return float(sigmoid(arrays[0] @ arrays[1]).sum())

    s = sigmoid(w @ x)
    dz = s * (1.0 - s)
    grads = [np.outer(dz, x), w.T @ dz]
    report = finite_diff_check(loss, [w, x], grads, eps=1e-6, tol=1e-6)
    assert report.passed, str(report)


def test_finite_diff_check_rejects_bad_eps():
    with pytest.raises(ValueError):
        finite_diff_check(lambda a: 0.0, [np.ones(1)], [np.zeros(1)], eps=0.0)


def test_finite_diff_check_rejects_non_finite_loss():
    def loss(arrays):
        return float("nan")

    with pytest.raises(ValueError):
        finite_diff_check(loss, [np.ones(1)], [np.zeros(1)])
