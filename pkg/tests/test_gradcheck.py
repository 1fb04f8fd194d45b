import numpy as np
import pytest

from src.errors import UnknownOpError
from src.gradcheck.harness import (
    finite_diff_check,
    pban_loss_check,
    relative_error,
    report_table,
    run_checks,
)
from src.gradcheck.registry import (
    CHECKABLE_OPS,
    E2E_OP,
    LATTICE_MARGIN,
    MAX_EXTENT,
    get_op,
    registered_ops,
)
from src.tensor.tensor import Tensor, precision

OPS = sorted(CHECKABLE_OPS)


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-12, 0.0) == pytest.approx(1e-4)
    assert relative_error(2.0, 1.0) == 0.5


def test_registry_lists_every_op():
    names = registered_ops()
    assert names[-1] == E2E_OP
    for required in ("matmul", "softmax_rows", "population_variance", "mse_loss", "deform_conv2d"):
        assert required in names


def test_unknown_op():
    with pytest.raises(UnknownOpError, match="nosuchop"):
        get_op("nosuchop")
    with pytest.raises(LookupError):
        finite_diff_check("nosuchop")


@pytest.mark.parametrize("op", OPS)
@pytest.mark.parametrize("seed", [0, 1])
def test_op_gradients(op, seed):
    report = finite_diff_check(op, seed=seed)
    assert report.passed, report.to_dict()
    assert report.checked > 0


@pytest.mark.parametrize("op", OPS)
def test_op_gradients_on_random_shapes(op):
    report = finite_diff_check(op, seed=0, random_shapes=True)
    assert report.passed, report.to_dict()


@pytest.mark.slow
@pytest.mark.parametrize("op", OPS)
def test_op_gradients_over_twenty_seeds(op):
    for seed in range(20):
        report = finite_diff_check(op, seed=seed, random_shapes=True)
        assert report.passed, report.to_dict()


@pytest.mark.parametrize("op", OPS)
def test_random_shapes_stay_in_range_and_are_valid(op):
    checkable = get_op(op)
    seen = set()
    for seed in range(20):
        rng = np.random.default_rng(seed)
        shapes = checkable.random_shapes(rng)
        dims = [d for shape in shapes.values() for d in shape]
        assert all(1 <= d <= MAX_EXTENT for d in dims), shapes
        seen.update(dims)
        with precision(np.float64):
            inputs = checkable.inputs(rng, shapes)
            checkable.fn({name: Tensor(a) for name, a in inputs.items()})
    assert len(seen) > 1


def test_random_shapes_reach_single_extents():
    rng = np.random.default_rng(0)
    for op in ("conv2d", "deform_conv2d", "softmax_rows", "batch_norm"):
        dims = [get_op(op).random_shapes(rng)["x"] for _ in range(40)]
        assert any(1 in shape for shape in dims), op


def test_linear_is_exact_to_rounding():
    assert finite_diff_check("linear", seed=3).max_rel_error < 1e-6


def test_softmax_on_custom_shape():
    report = finite_diff_check("softmax_rows", input_shapes={"x": (3, 4)}, seed=5)
    assert report.passed
    assert report.shapes == {"x": [3, 4]}


def test_deform_offsets_stay_off_the_lattice():
    inputs = get_op("deform_conv2d").inputs(np.random.default_rng(0))
    frac = np.abs(inputs["offsets"] - np.rint(inputs["offsets"]))
    assert frac.min() >= LATTICE_MARGIN - 1e-12
    assert inputs["x"].shape == (1, 4, 6, 6)


def test_failure_is_reported_with_coordinate():
    report = finite_diff_check("sigmoid", seed=0, tol=0.0)
    assert not report.passed
    assert report.failing.startswith("x[")


def test_end_to_end_loss_gradient():
    report = pban_loss_check(seed=0)
    assert report.passed, report.to_dict()
    assert report.checked == 50


def test_report_table_and_json():
    reports = run_checks(["relu", "avg_pool"], seed=1)
    table = report_table(reports)
    assert table["op"].tolist() == ["relu", "avg_pool"]
    assert table["passed"].all()
    assert reports[0].to_dict()["passed"] is True
