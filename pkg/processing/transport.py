"""Cost normalization and the Sinkhorn-Knopp assignment solver.

The solver follows the alternating scheme exactly: ``A0 = exp(-epsilon * D'')``
where ``D''`` is the standardized, min-shifted cost, then ``iterations`` rounds
of (row normalization, column normalization). One iteration is one row step
plus one column step, so every returned plan ends on a column normalization.
``sinkhorn_converged`` reaches the same fixed point with Newton steps on the
scalings once the plain iteration has warmed up.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lstsq
from scipy.special import xlogy

from models.config import SinkhornConfig
from processing.numerics import argmax_rows, as_matrix, matrix_stats
from utils.errors import NonConvergenceError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

STD_GUARD = 1e-8
UNDERFLOW_FLOOR = 1e-300
NEWTON_WARMUP = 10
NEWTON_HALVINGS = 50


@dataclass(frozen=True)
class TransportPlan:
    plan: np.ndarray
    iterations_run: int

    def __post_init__(self) -> None:
        self.plan.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.plan.shape

    def argmax(self) -> np.ndarray:
        return plan_argmax(self.plan)


def normalize_cost(D: np.ndarray) -> np.ndarray:
    """Standardize ``D`` to unit spread, then shift so its minimum is exactly zero."""
    D = as_matrix(D)
    mean, std = matrix_stats(D)
    if std <= STD_GUARD:
        return np.zeros_like(D)
    standardized = (D - mean) / std
    return standardized - standardized.min()


def sinkhorn_init(D: np.ndarray, epsilon: float) -> TransportPlan:
    A0 = np.exp(-epsilon * as_matrix(D))
    if not np.all(np.isfinite(A0)):
        raise NumericalError(
            f"Sinkhorn initialization produced non-finite entries (epsilon={epsilon}, "
            f"cost range [{np.min(D):.3e}, {np.max(D):.3e}])."
        )
    return TransportPlan(A0, 0)


def _column_target(rows: int, cols: int, balanced: bool) -> float:
    return rows / cols if balanced else 1.0


def _row_step(A: np.ndarray) -> np.ndarray:
    A = np.maximum(A, UNDERFLOW_FLOOR)
    return A / A.sum(axis=1, keepdims=True)


def _column_step(A: np.ndarray, target: float) -> np.ndarray:
    A = np.maximum(A, UNDERFLOW_FLOOR)
    return target * A / A.sum(axis=0, keepdims=True)


def _check_finite(A: np.ndarray, iteration: int) -> None:
    if not np.all(np.isfinite(A)):
        raise NumericalError(f"Transport plan became non-finite at iteration {iteration}.")


def sinkhorn_steps(plan: TransportPlan | np.ndarray, iterations: int, balanced: bool = False) -> TransportPlan:
    """Continue alternating normalization from an existing plan."""
    if isinstance(plan, TransportPlan):
        A, done = np.array(plan.plan), plan.iterations_run
    else:
        A, done = as_matrix(plan).copy(), 0
    target = _column_target(*A.shape, balanced)
    for it in range(iterations):
        A = _column_step(_row_step(A), target)
        _check_finite(A, done + it + 1)
    return TransportPlan(A, done + iterations)


def prepare_plan(D: np.ndarray, cfg: SinkhornConfig) -> TransportPlan:
    D = as_matrix(D)
    if D.size == 0:
        raise ShapeError("Cost matrix must be nonempty", D.shape)
    cost = normalize_cost(D) if cfg.normalize else D
    return sinkhorn_init(cost, cfg.epsilon)


def sinkhorn(D: np.ndarray, cfg: SinkhornConfig | None = None) -> TransportPlan:
    cfg = cfg or SinkhornConfig()
    return sinkhorn_steps(prepare_plan(D, cfg), cfg.iterations, cfg.balanced)


def sinkhorn_trace(D: np.ndarray, cfg: SinkhornConfig | None = None) -> list[float]:
    """Max entrywise change between consecutive iterations, one value per iteration.

    The first value compares iteration 1 with the initial plan ``A0``.
    """
    cfg = cfg or SinkhornConfig()
    plan = prepare_plan(D, cfg)
    residuals = []
    for _ in range(cfg.iterations):
        nxt = sinkhorn_steps(plan, 1, cfg.balanced)
        residuals.append(float(np.max(np.abs(nxt.plan - plan.plan))))
        plan = nxt
    return residuals


def marginal_violation(A: np.ndarray, balanced: bool = False) -> float:
    """Largest deviation of a row or column sum from the fixed point's marginals.

    Columns carry ``1`` (``l / n`` when balanced) and rows carry the same total
    mass spread evenly, ``n / l`` (``1`` when balanced).
    """
    A = as_matrix(A)
    rows, cols = A.shape
    col_target = _column_target(rows, cols, balanced)
    row_target = cols * col_target / rows
    return float(
        max(np.max(np.abs(A.sum(axis=1) - row_target)), np.max(np.abs(A.sum(axis=0) - col_target)))
    )


def _newton_step(A: np.ndarray, balanced: bool) -> np.ndarray:
    """One damped Newton step on the scaling ``diag(e^a) A diag(e^b)``.

    The last column potential is pinned to zero, which removes the shared-shift
    null direction of the dual. The step is halved until the marginal violation drops.
    """
    rows, cols = A.shape
    col_target = _column_target(rows, cols, balanced)
    row_target = cols * col_target / rows
    row_sums, col_sums = A.sum(axis=1), A.sum(axis=0)
    size = rows + cols - 1
    hessian = np.zeros((size, size))
    hessian[:rows, :rows] = np.diag(row_sums)
    hessian[:rows, rows:] = A[:, :-1]
    hessian[rows:, :rows] = A[:, :-1].T
    hessian[rows:, rows:] = np.diag(col_sums[:-1])
    gradient = np.concatenate([row_sums - row_target, col_sums[:-1] - col_target])
    direction = lstsq(hessian, -gradient)[0]
    a, b = direction[:rows], np.append(direction[rows:], 0.0)

    before = marginal_violation(A, balanced)
    step = 1.0
    candidate = A
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(NEWTON_HALVINGS):
            candidate = A * np.exp(step * a)[:, None] * np.exp(step * b)[None, :]
            if np.all(np.isfinite(candidate)) and marginal_violation(candidate, balanced) < before:
                return candidate
            step /= 2.0
    return A


def sinkhorn_converged(
    D: np.ndarray,
    epsilon: float = 10.0,
    tol: float = 1e-12,
    max_iters: int = 100_000,
    normalize: bool = True,
    balanced: bool = False,
) -> TransportPlan:
    """Solve for the fixed point of the alternating normalization.

    Runs ``NEWTON_WARMUP`` plain iterations, then damped Newton steps on the
    row/column scalings. Each step counts as one iteration. Stops once every
    row and column sum is within ``tol`` of its marginal; the plain iteration
    alone contracts too slowly for that at low temperature.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}.")
    plan = prepare_plan(D, SinkhornConfig(epsilon=epsilon, normalize=normalize, balanced=balanced))
    violation = float("inf")
    while plan.iterations_run < max_iters:
        if plan.iterations_run < NEWTON_WARMUP:
            plan = sinkhorn_steps(plan, 1, balanced)
        else:
            A = _newton_step(np.array(plan.plan), balanced)
            _check_finite(A, plan.iterations_run + 1)
            plan = TransportPlan(A, plan.iterations_run + 1)
        violation = marginal_violation(plan.plan, balanced)
        if violation < tol:
            logger.debug("Sinkhorn converged in %d iterations (violation %.3e)", plan.iterations_run, violation)
            return plan
    raise NonConvergenceError(violation, plan.iterations_run)


def ot_objective(A: TransportPlan | np.ndarray, D: np.ndarray, epsilon: float) -> float:
    """Entropic transport objective ``Tr(A^T D) - H(A) / epsilon``."""
    A = A.plan if isinstance(A, TransportPlan) else as_matrix(A)
    D = as_matrix(D)
    if A.shape != D.shape:
        raise ShapeError("Plan and cost shapes differ", A.shape, D.shape)
    transport_cost = float(np.sum(A * D))
    # xlogy(0, 0) == 0 gives the 0 * log 0 convention.
    entropy = -float(np.sum(xlogy(A, A)))
    return transport_cost - entropy / epsilon


def plan_argmax(A: np.ndarray) -> np.ndarray:
    return argmax_rows(A)
