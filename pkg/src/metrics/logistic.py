"""
Five-parameter logistic remapping of predictions onto the MOS scale:

    q(x) = b1 * (1/2 - 1/(1 + exp(b2 * (x - b3)))) + b4 * x + b5

fitted by Levenberg-Marquardt least squares.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import special

from src.errors import FitDegenerateError
from src.utils.logger import setup_logger

logger = setup_logger(__name__)

DAMPING_START = 1e-3
DAMPING_FACTOR = 10.0
MAX_ITERATIONS = 500
RELATIVE_TOLERANCE = 1e-10
STATIONARY_COSINE = 1e-6
EXACT_FIT = 1e-10
MIN_SAMPLES = 5


@dataclass(frozen=True)
class LogisticParams:
    b1: float
    b2: float
    b3: float
    b4: float
    b5: float

    def as_array(self) -> np.ndarray:
        return np.array([self.b1, self.b2, self.b3, self.b4, self.b5])

    @classmethod
    def from_array(cls, beta: np.ndarray) -> LogisticParams:
        return cls(*(float(b) for b in beta))

    def to_dict(self) -> dict:
        return asdict(self)

    def __call__(self, x) -> np.ndarray:
        return logistic_5(np.asarray(x, dtype=np.float64), self.as_array())


@dataclass(frozen=True)
class LogisticFit:
    params: LogisticParams
    mapped: np.ndarray
    cost: float
    iterations: int
    converged: bool


def logistic_5(x: np.ndarray, beta: np.ndarray) -> np.ndarray:
    b1, b2, b3, b4, b5 = beta
    # 1/2 - 1/(1 + exp(b2 (x - b3))) == expit(b2 (x - b3)) - 1/2
    return b1 * (special.expit(b2 * (x - b3)) - 0.5) + b4 * x + b5


def _jacobian(x: np.ndarray, beta: np.ndarray) -> np.ndarray:
    b1, b2, b3, _, _ = beta
    s = special.expit(b2 * (x - b3))
    ds = s * (1.0 - s)
    return np.column_stack(
        [s - 0.5, b1 * ds * (x - b3), -b1 * ds * b2, x, np.ones_like(x)]
    )


def _cost(x: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    r = logistic_5(x, beta) - y
    return float(r @ r)


def _stationary(J: np.ndarray, r: np.ndarray, g: np.ndarray, y: np.ndarray) -> bool:
    """True for an exact fit or a residual (numerically) orthogonal to every Jacobian column."""
    residual = float(np.linalg.norm(r))
    if residual <= EXACT_FIT * max(float(np.linalg.norm(y)), 1.0):
        return True
    return float(np.linalg.norm(g)) <= STATIONARY_COSINE * float(np.linalg.norm(J)) * residual


def _levenberg_marquardt(x: np.ndarray, y: np.ndarray, beta: np.ndarray):
    damping = DAMPING_START
    cost = _cost(x, y, beta)
    converged = False
    iteration = 0
    for iteration in range(1, MAX_ITERATIONS + 1):
        J = _jacobian(x, beta)
        r = y - logistic_5(x, beta)
        JtJ = J.T @ J
        g = J.T @ r
        scale = np.diag(JtJ)
        diag = np.diag(np.maximum(scale, 1e-12 * max(float(scale.max()), 1.0)))
        improved = False
        while damping < 1e16:
            try:
                step = np.linalg.solve(JtJ + damping * diag, g)
            except np.linalg.LinAlgError:
                damping *= DAMPING_FACTOR
                continue
            candidate = beta + step
            new_cost = _cost(x, y, candidate)
            if np.isfinite(new_cost) and new_cost <= cost:
                change = (cost - new_cost) / max(cost, np.finfo(float).tiny)
                beta, cost = candidate, new_cost
                damping = max(damping / DAMPING_FACTOR, 1e-15)
                improved = True
                break
            damping *= DAMPING_FACTOR
        if not improved:
            # damping saturated: only a stationary point counts as converged
            converged = _stationary(J, r, g, y)
            break
        if change < RELATIVE_TOLERANCE or cost == 0.0:
            converged = True
            break
    return beta, cost, iteration, converged


def logistic_fit_5param(pred, mos) -> LogisticFit:
    """
    Least-squares fit of `logistic_5` mapping `pred` onto `mos`.

    Starts from b1 = range(mos), b2 = 4/range(pred), b3 = mean(pred), b4 = 0, b5 = mean(mos),
    and also from the affine least-squares solution (b1 = 0); the lower final cost wins, so the
    fit is never worse than the best straight line.
    """
    x = np.asarray(pred, dtype=np.float64).ravel()
    y = np.asarray(mos, dtype=np.float64).ravel()
    if x.size != y.size:
        raise FitDegenerateError(f"prediction and MOS lengths differ ({x.size} vs {y.size})")
    if x.size < MIN_SAMPLES:
        raise FitDegenerateError(f"logistic fit needs at least {MIN_SAMPLES} samples, got {x.size}")
    spread = float(np.ptp(x))
    if spread == 0.0:
        raise FitDegenerateError("logistic fit is degenerate for constant predictions")

    start = np.array([np.ptp(y), 4.0 / spread, x.mean(), 0.0, y.mean()])
    slope, intercept = np.polyfit(x, y, 1)
    affine = np.array([0.0, 4.0 / spread, x.mean(), slope, intercept])

    best = None
    for beta0 in (start, affine):
        beta, cost, iterations, converged = _levenberg_marquardt(x, y, beta0)
        if best is None or cost < best[1]:
            best = (beta, cost, iterations, converged)
    beta, cost, iterations, converged = best
    if not converged:
        logger.warning(f"Logistic fit stopped after {iterations} iterations without converging")
    params = LogisticParams.from_array(beta)
    return LogisticFit(params, logistic_5(x, beta), cost, iterations, converged)
