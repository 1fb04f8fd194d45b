from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from src.data.synthetic import make_synthetic_pairs
from src.errors import ParameterError
from src.gradcheck.registry import E2E_OP, CheckableOp, Shapes, get_op, off_lattice, registered_ops
from src.models.base import ForwardContext
from src.models.pban_config import PBANConfig
from src.models.pban_model import build_model
from src.models.weights import NamedWeights, init_weights
from src.tensor.tensor import Tensor, backward, precision
from src.training.loss import mse_loss
from src.utils.logger import setup_logger

logger = setup_logger(__name__)

DENOMINATOR_FLOOR = 1e-8
E2E_PARAMETERS = 50


@dataclass
class GradCheckReport:
    op: str
    seed: int
    shapes: dict[str, list[int]]
    max_rel_error: float
    tol: float
    checked: int
    failing: str | None = None  # "input[index]" of the worst coordinate when failing
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.failing is None

    def to_dict(self) -> dict:
        return {**asdict(self), "passed": self.passed}


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), DENOMINATOR_FLOOR)


def _objective(op: CheckableOp, arrays: dict[str, np.ndarray], projection: np.ndarray, grad: bool):
    tensors = {name: Tensor(a, requires_grad=grad) for name, a in arrays.items()}
    out = op.fn(tensors)
    loss = (out * Tensor(projection)).sum()
    return loss, tensors


def finite_diff_check(
    op: str | CheckableOp,
    input_shapes: Shapes | None = None,
    seed: int = 0,
    eps: float = 1e-5,
    tol: float = 1e-4,
    random_shapes: bool = False,
) -> GradCheckReport:
    """
    Compares the analytic gradient of sum(op(inputs) * R), for a fixed random R, with central
    differences at every input coordinate, in 64-bit precision. The step at coordinate x is
    eps * max(1, |x|).

    With `random_shapes` the input shapes are drawn from the seeded generator first, each
    extent in [1, MAX_EXTENT]; explicit `input_shapes` still win.
    """
    if isinstance(op, str):
        if op == E2E_OP:
            return pban_loss_check(seed, tol=tol)
        op = get_op(op)
    rng = np.random.default_rng(seed)
    if random_shapes and input_shapes is None:
        input_shapes = op.random_shapes(rng)
    with precision(np.float64):
        arrays = {k: np.asarray(v, dtype=np.float64) for k, v in op.inputs(rng, input_shapes).items()}
        shape = op.fn({k: Tensor(v) for k, v in arrays.items()}).shape
        projection = rng.standard_normal(shape)
        loss, tensors = _objective(op, arrays, projection, grad=True)
        analytic = backward(loss, wrt=tensors)

        worst, worst_at, checked = 0.0, None, 0
        for name, base in arrays.items():
            for index in np.ndindex(base.shape):
                h = eps * max(1.0, abs(float(base[index])))
                values = []
                for sign in (1.0, -1.0):
                    shifted = dict(arrays)
                    shifted[name] = base.copy()
                    shifted[name][index] += sign * h
                    values.append(_objective(op, shifted, projection, grad=False)[0].item())
                numeric = (values[0] - values[1]) / (2.0 * h)
                err = relative_error(float(analytic[name][index]), numeric)
                checked += 1
                if err > worst:
                    worst, worst_at = err, f"{name}[{', '.join(map(str, index))}]"
    report = GradCheckReport(
        op=op.name,
        seed=seed,
        shapes={k: list(v.shape) for k, v in arrays.items()},
        max_rel_error=worst,
        tol=tol,
        checked=checked,
        failing=worst_at if worst > tol else None,
    )
    _log(report)
    return report


def e2e_weights(pban_config: PBANConfig, seed: int) -> NamedWeights:
    """
    Float64 initial weights with the deformable offsets moved off the sampling lattice and the
    modulation logits out of saturation, so every coordinate has a well-defined gradient.
    """
    rng = np.random.default_rng([seed, 1])
    weights = init_weights(pban_config, seed).astype(np.float64)
    for name in weights.names():
        if name.endswith(".offset.weight"):
            weights.assign(name, rng.normal(0.0, 1e-3, size=weights[name].shape))
        elif name.endswith(".offset.bias"):
            bias = rng.uniform(-1.0, 1.0, size=weights[name].shape)
            offsets = 2 * bias.size // 3
            bias[:offsets] = off_lattice((offsets,), rng, spread=0)
            weights.assign(name, bias)
    return weights


def pban_loss_check(
    seed: int = 0,
    parameters: int = E2E_PARAMETERS,
    eps: float = 1e-6,
    tol: float = 1e-4,
    pban_config: PBANConfig | None = None,
) -> GradCheckReport:
    """
    Gradient of the micro-config training loss on two synthetic pairs, checked at randomly
    sampled parameter coordinates. A coordinate whose central difference straddles a ReLU
    kink passes when the analytic value matches one of the one-sided differences.
    """
    if parameters < 1:
        raise ParameterError(f"parameters must be >= 1, got {parameters}")
    pban_config = pban_config or PBANConfig.micro(patch_size=8)
    model = build_model(pban_config)
    rng = np.random.default_rng(seed)
    pairs = make_synthetic_pairs(2, size=pban_config.patch_size, seed=seed)

    with precision(np.float64):
        weights = e2e_weights(pban_config, seed)
        hr = np.stack([p.hr.pixels for p in pairs]).astype(np.float64)
        sr = np.stack([p.sr.pixels for p in pairs]).astype(np.float64)
        mos = np.array([p.mos for p in pairs], dtype=np.float64)

        def loss_of(w: NamedWeights) -> Tensor:
            patches = {"hr": Tensor(hr), "sr": Tensor(sr)}
            ctx = ForwardContext(mode="train", rng=np.random.default_rng(seed))
            return mse_loss(model.score({b: patches[b] for b in pban_config.branches}, w, ctx), mos)

        analytic = backward(loss_of(weights), wrt=weights.trainable())
        names = list(analytic)
        sizes = np.array([analytic[n].size for n in names])
        flat = rng.choice(sizes.sum(), size=min(parameters, int(sizes.sum())), replace=False)
        owners = np.searchsorted(np.cumsum(sizes), flat, side="right")

        worst, worst_at = 0.0, None
        for position, owner in zip(flat, owners):
            name = names[owner]
            index = np.unravel_index(position - (sizes[:owner].sum()), analytic[name].shape)
            base = weights.array(name).copy()
            h = eps * max(1.0, abs(float(base[index])))
            values = {}
            for sign in (1.0, 0.0, -1.0):
                shifted = base.copy()
                shifted[index] += sign * h
                weights.assign(name, shifted)
                values[sign] = loss_of(weights).item()
            weights.assign(name, base)
            a = float(analytic[name][index])
            err = min(
                relative_error(a, (values[1.0] - values[-1.0]) / (2 * h)),
                relative_error(a, (values[1.0] - values[0.0]) / h),
                relative_error(a, (values[0.0] - values[-1.0]) / h),
            )
            if err > worst:
                worst, worst_at = err, f"{name}[{', '.join(map(str, index))}]"

    report = GradCheckReport(
        op=E2E_OP,
        seed=seed,
        shapes={"hr": list(hr.shape), "sr": list(sr.shape)},
        max_rel_error=worst,
        tol=tol,
        checked=len(flat),
        failing=worst_at if worst > tol else None,
        details={"parameters": int(sizes.sum()), "config": "micro, 8x8 patches"},
    )
    _log(report)
    return report


def _log(report: GradCheckReport) -> None:
    status = "passed" if report.passed else f"FAILED at {report.failing}"
    message = (
        f"gradcheck {report.op} (seed {report.seed}): max rel. error {report.max_rel_error:.2e} "
        f"over {report.checked} coordinates, {status}"
    )
    if report.passed:
        logger.info(message)
    else:
        logger.warning(message)


def run_checks(
    ops: list[str] | None = None, seed: int = 0, random_shapes: bool = False
) -> list[GradCheckReport]:
    return [
        finite_diff_check(name, seed=seed, random_shapes=random_shapes)
        for name in (ops or registered_ops())
    ]


def report_table(reports: list[GradCheckReport]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "op": r.op,
                "seed": r.seed,
                "checked": r.checked,
                "max_rel_error": r.max_rel_error,
                "passed": r.passed,
                "failing": r.failing or "",
            }
            for r in reports
        ]
    )
