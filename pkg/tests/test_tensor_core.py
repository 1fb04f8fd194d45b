import numpy as np
import pytest

from src.errors import ContractError, DimensionError, NumericError
from src.tensor.functional import concat, matmul, population_variance, softmax_rows
from src.tensor.tensor import Tensor, backward, default_dtype, precision
from src.training.loss import mse_loss


@pytest.fixture
def f64():
    with precision(np.float64):
        yield


def test_default_precision_is_float32():
    assert default_dtype() == np.float32
    assert Tensor([1.0, 2.0]).dtype == np.float32


def test_precision_context_is_scoped():
    with precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_matmul_hand_example(f64):
    out = matmul(Tensor([[1, 2], [3, 4]]), Tensor([[5, 6], [7, 8]]))
    np.testing.assert_array_equal(out.data, [[19, 22], [43, 50]])


def test_matmul_identity_and_zero(f64):
    a = Tensor(np.random.default_rng(0).standard_normal((3, 3)))
    np.testing.assert_array_equal(matmul(a, Tensor(np.eye(3))).data, a.data)
    np.testing.assert_array_equal(matmul(a, Tensor(np.zeros((3, 3)))).data, np.zeros((3, 3)))


def test_matmul_shape_mismatch_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_softmax_rows_examples(f64):
    np.testing.assert_allclose(softmax_rows(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(softmax_rows(Tensor([0.0, np.log(3.0)])).data, [0.25, 0.75])
    np.testing.assert_allclose(softmax_rows(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])


def test_softmax_rows_sum_to_one():
    x = Tensor(np.random.default_rng(1).standard_normal((4, 7)) * 10)
    np.testing.assert_allclose(softmax_rows(x).data.sum(axis=-1), 1.0, atol=1e-6)


def test_population_variance_examples(f64):
    assert population_variance(Tensor([1.0, 1.0, 1.0])).item() == 0.0
    assert population_variance(Tensor([0.0, 2.0])).item() == 1.0
    x = np.random.default_rng(2).standard_normal(10)
    v = population_variance(Tensor(x)).item()
    assert population_variance(Tensor(3.0 * x)).item() == pytest.approx(9.0 * v, rel=1e-12)


def test_backward_linear_and_quadratic(f64):
    p = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    grads = backward(p.sum(), wrt={"p": p})
    np.testing.assert_array_equal(grads["p"], np.ones((2, 3)))

    q = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    grads = backward((q * q).sum(), wrt={"q": q})
    np.testing.assert_array_equal(grads["q"], 2 * q.data)


def test_backward_mse_example(f64):
    pred = Tensor([[1.0], [2.0]], requires_grad=True)
    loss = mse_loss(pred, np.array([0.0, 0.0]))
    assert loss.item() == 2.5
    grads = backward(loss, wrt={"pred": pred})
    np.testing.assert_array_equal(grads["pred"], [[1.0], [2.0]])


def test_backward_unused_leaf_gets_zeros(f64):
    used = Tensor([1.0, 2.0], requires_grad=True)
    unused = Tensor([[3.0]], requires_grad=True)
    grads = backward((used * 2.0).sum(), wrt={"used": used, "unused": unused})
    np.testing.assert_array_equal(grads["unused"], np.zeros((1, 1)))
    assert list(grads) == ["unused", "used"]


def test_indexing_gradient_counts_repeated_indices(f64):
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    grads = backward(x[np.array([0, 0, 2])].sum(), wrt={"x": x})
    np.testing.assert_array_equal(grads["x"], [2.0, 0.0, 1.0])

    y = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    grads = backward((y[:, 1:] * 3.0).sum(), wrt={"y": y})
    np.testing.assert_array_equal(grads["y"], [[0.0, 3.0, 3.0], [0.0, 3.0, 3.0]])


def test_backward_needs_scalar_root():
    with pytest.raises(ContractError):
        backward(Tensor([1.0, 2.0], requires_grad=True) * 2.0)


def test_backward_accumulates_shared_parents(f64):
    x = Tensor([3.0], requires_grad=True)
    y = x * x + x * 4.0 - x / 2.0
    grads = backward(y.sum(), wrt={"x": x})
    np.testing.assert_allclose(grads["x"], [2 * 3.0 + 4.0 - 0.5])


def test_visit_order_does_not_change_gradients(f64):
    rng = np.random.default_rng(3)
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)

    def loss():
        h = matmul(a, b)
        return (softmax_rows(h) * h).sum() + population_variance(concat([h, a[:, :2]], axis=1))

    reference = backward(loss(), wrt={"a": a, "b": b})
    for seed in range(5):
        permuted = backward(loss(), wrt={"a": a, "b": b}, rng=np.random.default_rng(seed))
        for name in reference:
            np.testing.assert_allclose(permuted[name], reference[name], rtol=0, atol=1e-12)


def test_broadcast_gradients_reduce_to_operand_shape(f64):
    x = Tensor(np.ones((2, 3, 4, 4)), requires_grad=True)
    per_channel = Tensor(np.arange(3.0).reshape(1, 3, 1, 1), requires_grad=True)
    grads = backward((x * per_channel).sum(), wrt={"x": x, "c": per_channel})
    assert grads["c"].shape == (1, 3, 1, 1)
    np.testing.assert_array_equal(grads["c"].reshape(-1), [32.0, 32.0, 32.0])


def test_non_finite_results_are_errors():
    with pytest.raises(NumericError):
        Tensor([1.0]) / Tensor([0.0])


def test_deterministic_evaluation():
    rng = np.random.default_rng(4)
    a, b = rng.standard_normal((5, 6)), rng.standard_normal((6, 3))
    first = softmax_rows(matmul(Tensor(a), Tensor(b))).data
    second = softmax_rows(matmul(Tensor(a), Tensor(b))).data
    assert np.array_equal(first, second)
