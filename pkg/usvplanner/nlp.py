"""
Smooth minimization with equality constraints and box bounds.

An augmented-Lagrangian outer loop updates multipliers or the penalty on a
LANCELOT-style schedule. Every inner subproblem is a bound-constrained
minimization: problems that supply sparse Gauss-Newton curvature and a
constraint Jacobian get a projected Newton method, all others L-BFGS-B.
"""

import logging
from typing import Callable, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy import linalg, optimize, sparse
from scipy.sparse import linalg as sparse_linalg
from typing_extensions import Literal

from usvplanner.config.defaults import (
    NEWTON_DENSE_DIM,
    SOLVER_CONSTRAINT_TOL,
    SOLVER_GRAD_TOL,
    SOLVER_INITIAL_PENALTY,
    SOLVER_MAX_INNER_ITERS,
    SOLVER_MAX_OUTER_ITERS,
    SOLVER_PENALTY_GROWTH,
)
from usvplanner.helper import FloatArray


logger = logging.getLogger(__name__)

ObjectiveFn = Callable[[FloatArray], Tuple[float, FloatArray]]
# Returns the residual vector and the action w -> J(z)^T w of its Jacobian
VectorJacobianProduct = Callable[[FloatArray], FloatArray]
ConstraintFn = Callable[[FloatArray], Tuple[FloatArray, VectorJacobianProduct]]
# Sparse matrix valued: objective curvature (n x n) or constraint Jacobian (m x n)
MatrixFn = Callable[[FloatArray], sparse.spmatrix]

SolveStatus = Literal["converged", "max-iters", "numerical-failure"]

# Tolerance schedule constants
ETA_0 = 0.1258925
OMEGA_0 = 1.0
A_ETA, B_ETA = 0.1, 0.9
A_OMEGA, B_OMEGA = 1.0, 1.0

# Projected Newton line search
ARMIJO = 1e-4
MAX_BACKTRACKS = 40
ACTIVE_EPS = 1e-3


class NonFiniteEvaluation(ArithmeticError):
    pass


class NlpProblem(NamedTuple):
    dim: int
    objective: ObjectiveFn
    equality_constraints: Optional[ConstraintFn] = None
    lower: Optional[FloatArray] = None
    upper: Optional[FloatArray] = None
    # Positive semi-definite approximation of the objective Hessian
    curvature: Optional[MatrixFn] = None
    constraint_jacobian: Optional[MatrixFn] = None

    def bounds(self) -> Tuple[FloatArray, FloatArray]:
        lower = np.full(self.dim, -np.inf) if self.lower is None else self.lower
        upper = np.full(self.dim, np.inf) if self.upper is None else self.upper
        return np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)

    def constraint_values(self, z: FloatArray) -> FloatArray:
        if self.equality_constraints is None:
            return np.zeros(0)
        residual, _ = self.equality_constraints(z)
        return residual

    @property
    def has_curvature(self) -> bool:
        return self.curvature is not None and (
            self.equality_constraints is None or self.constraint_jacobian is not None
        )


class SolveOptions(NamedTuple):
    max_outer_iters: int = SOLVER_MAX_OUTER_ITERS
    max_inner_iters: int = SOLVER_MAX_INNER_ITERS
    constraint_tol: float = SOLVER_CONSTRAINT_TOL
    grad_tol: float = SOLVER_GRAD_TOL
    initial_penalty: float = SOLVER_INITIAL_PENALTY
    penalty_growth: float = SOLVER_PENALTY_GROWTH

    def validate(self) -> "SolveOptions":
        if self.max_outer_iters < 1 or self.max_inner_iters < 1:
            raise ValueError("iteration limits must be at least 1")
        if not (self.constraint_tol > 0 and self.grad_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.initial_penalty > 0:
            raise ValueError("initial penalty must be positive")
        if not self.penalty_growth > 1:
            raise ValueError("penalty growth must exceed 1")
        return self


class SolveReport(NamedTuple):
    z_star: FloatArray
    objective_value: float
    constraint_violation: float
    projected_gradient: float
    iterations: int
    inner_iterations: int
    status: SolveStatus
    multipliers: FloatArray
    violation_history: Tuple[float, ...]
    violation_monotone: bool

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def projected_gradient(
    z: FloatArray, gradient: FloatArray, lower: FloatArray, upper: FloatArray
) -> FloatArray:
    return z - np.clip(z - gradient, lower, upper)


def _inf_norm(values: FloatArray) -> float:
    return float(np.max(np.abs(values))) if values.size else 0.0


class _AugmentedLagrangian:
    def __init__(self, problem: NlpProblem, multipliers: FloatArray) -> None:
        self.problem = problem
        self.multipliers = multipliers
        self.penalty = 0.0

    def __call__(self, z: FloatArray) -> Tuple[float, FloatArray]:
        value, gradient = self.problem.objective(z)
        if self.problem.equality_constraints is not None:
            residual, jacobian_t = self.problem.equality_constraints(z)
            weights = self.multipliers + self.penalty * residual
            value = (
                value
                + float(self.multipliers @ residual)
                + 0.5 * self.penalty * float(residual @ residual)
            )
            gradient = gradient + jacobian_t(weights)
        if not (np.isfinite(value) and np.all(np.isfinite(gradient))):
            raise NonFiniteEvaluation("non-finite objective or gradient")
        return float(value), np.asarray(gradient, dtype=float)

    def lagrangian(self, z: FloatArray) -> Tuple[float, FloatArray]:
        """Objective value and gradient of the plain Lagrangian"""
        value, gradient = self.problem.objective(z)
        if self.problem.equality_constraints is not None:
            _, jacobian_t = self.problem.equality_constraints(z)
            gradient = gradient + jacobian_t(self.multipliers)
        return float(value), gradient

    def hessian(self, z: FloatArray) -> sparse.csc_matrix:
        """Gauss-Newton Hessian: the second-order constraint terms are dropped"""
        assert self.problem.curvature is not None
        hessian = sparse.csc_matrix(self.problem.curvature(z))
        if self.problem.constraint_jacobian is not None:
            jacobian = sparse.csc_matrix(self.problem.constraint_jacobian(z))
            hessian = hessian + self.penalty * (jacobian.T @ jacobian)
        return sparse.csc_matrix(hessian)


def _newton_direction(
    hessian: sparse.csc_matrix, gradient: FloatArray, free: FloatArray
) -> FloatArray:
    """
    Newton step on the free variables, scaled steepest descent on the ones
    held at a bound.
    """
    diagonal = hessian.diagonal()
    scale = max(1.0, float(np.max(np.abs(diagonal)))) if diagonal.size else 1.0
    floor = 1e-10 * scale
    direction = -gradient / np.maximum(diagonal, floor)
    if not np.any(free):
        return direction
    index = np.flatnonzero(free)
    reduced = hessian[index][:, index] + floor * sparse.eye(len(index))
    try:
        if len(index) <= NEWTON_DENSE_DIM:
            step = linalg.solve(reduced.toarray(), -gradient[index], assume_a="sym")
        else:
            step = sparse_linalg.spsolve(sparse.csc_matrix(reduced), -gradient[index])
    except (linalg.LinAlgError, RuntimeError):
        step = np.full(len(index), np.nan)
    if np.all(np.isfinite(step)) and float(step @ gradient[index]) < 0:
        direction[index] = step
    return direction


def _projected_newton(
    merit: _AugmentedLagrangian,
    z: FloatArray,
    lower: FloatArray,
    upper: FloatArray,
    tolerance: float,
    max_iters: int,
) -> Tuple[FloatArray, int]:
    """
    Minimize the augmented Lagrangian over the box with a projected Newton
    method and an Armijo search along the projection arc. Every accepted step
    decreases the merit value, up to rounding.
    """
    value, gradient = merit(z)
    iterations = 0
    while iterations < max_iters:
        pg_norm = _inf_norm(projected_gradient(z, gradient, lower, upper))
        if pg_norm <= tolerance:
            break
        eps = min(ACTIVE_EPS, pg_norm)
        held = ((z <= lower + eps) & (gradient > 0)) | (
            (z >= upper - eps) & (gradient < 0)
        )
        direction = _newton_direction(merit.hessian(z), gradient, ~held)

        step = 1.0
        accepted = stalled = False
        finite_trials = 0
        for _ in range(MAX_BACKTRACKS):
            trial = np.clip(z + step * direction, lower, upper)
            if np.array_equal(trial, z):
                stalled = True
                break
            try:
                trial_value, trial_gradient = merit(trial)
            except NonFiniteEvaluation:
                step *= 0.5
                continue
            finite_trials += 1
            slope = float(gradient @ (trial - z))
            if trial_value <= value + ARMIJO * slope:
                accepted = True
            elif trial_value <= value + 1e-12 * max(1.0, abs(value)):
                # Rounding-level change: accept if stationarity improves
                trial_pg = projected_gradient(trial, trial_gradient, lower, upper)
                accepted = _inf_norm(trial_pg) < pg_norm
            if accepted:
                break
            step *= 0.5
        if not (accepted or stalled or finite_trials):
            raise NonFiniteEvaluation("no finite point along the search arc")
        if not accepted:
            break
        z, value, gradient = trial, trial_value, trial_gradient
        iterations += 1
    return z, iterations


def _lbfgs(
    merit: _AugmentedLagrangian,
    z: FloatArray,
    bounds: optimize.Bounds,
    tolerance: float,
    max_iters: int,
) -> Tuple[FloatArray, int]:
    result = optimize.minimize(
        merit,
        z,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": max_iters, "gtol": tolerance, "ftol": 1e-15, "maxcor": 10},
    )
    return result.x, int(result.nit)


def minimize(
    problem: NlpProblem,
    z0: FloatArray,
    opts: SolveOptions = SolveOptions(),
    multipliers0: Optional[FloatArray] = None,
) -> SolveReport:
    opts.validate()
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (problem.dim,):
        raise ValueError(
            f"initial point has shape {z0.shape}, expected ({problem.dim},)"
        )
    lower, upper = problem.bounds()
    z = np.clip(z0, lower, upper)
    bounds = optimize.Bounds(lower, upper)
    newton = problem.has_curvature

    residual0 = problem.constraint_values(z)
    multipliers = np.zeros(residual0.size)
    if multipliers0 is not None and np.shape(multipliers0) == multipliers.shape:
        multipliers = np.asarray(multipliers0, dtype=float).copy()
    merit = _AugmentedLagrangian(problem, multipliers)
    merit.penalty = opts.initial_penalty
    eta_floor, omega_floor = opts.constraint_tol, opts.grad_tol
    eta = max(ETA_0 * merit.penalty**-A_ETA, eta_floor)
    omega = max(OMEGA_0 * merit.penalty**-A_OMEGA, omega_floor)

    status: SolveStatus = "max-iters"
    history: List[float] = []
    inner_total = 0
    outer = 0
    violation = _inf_norm(residual0)
    pg_norm = np.inf
    value, _ = problem.objective(z)

    for outer in range(1, opts.max_outer_iters + 1):
        try:
            if newton:
                candidate, inner = _projected_newton(
                    merit, z, lower, upper, omega, opts.max_inner_iters
                )
            else:
                candidate, inner = _lbfgs(
                    merit, z, bounds, omega, opts.max_inner_iters
                )
        except NonFiniteEvaluation:
            logger.warning("Non-finite evaluation in outer iteration %d", outer)
            status = "numerical-failure"
            break
        inner_total += inner
        z = np.clip(candidate, lower, upper)

        residual = problem.constraint_values(z)
        violation = _inf_norm(residual)
        history.append(violation)
        if violation <= eta:
            merit.multipliers = merit.multipliers + merit.penalty * residual
            eta = max(eta / merit.penalty**B_ETA, eta_floor)
            omega = max(omega / merit.penalty**B_OMEGA, omega_floor)
        else:
            merit.penalty *= opts.penalty_growth
            eta = max(ETA_0 * merit.penalty**-A_ETA, eta_floor)
            omega = max(OMEGA_0 * merit.penalty**-A_OMEGA, omega_floor)

        value, gradient = merit.lagrangian(z)
        pg_norm = _inf_norm(projected_gradient(z, gradient, lower, upper))
        logger.debug(
            "Outer %d: f=%.6g violation=%.3g pg=%.3g penalty=%.3g inner=%d",
            outer,
            value,
            violation,
            pg_norm,
            merit.penalty,
            inner,
        )
        if not np.isfinite(value):
            status = "numerical-failure"
            break
        if violation <= opts.constraint_tol and pg_norm <= opts.grad_tol:
            status = "converged"
            break

    monotone = all(
        later <= earlier + 1e-12 for earlier, later in zip(history, history[1:])
    )
    return SolveReport(
        z_star=z,
        objective_value=float(value),
        constraint_violation=float(violation),
        projected_gradient=float(pg_norm),
        iterations=outer,
        inner_iterations=inner_total,
        status=status,
        multipliers=merit.multipliers,
        violation_history=tuple(history),
        violation_monotone=monotone,
    )


def check_gradient(problem: NlpProblem, z: FloatArray, fd_step: float = 1e-6) -> float:
    """
    Largest relative disagreement between the analytic objective gradient and
    central differences, relative to max(1, |analytic|).
    """
    z = np.asarray(z, dtype=float)
    _, analytic = problem.objective(z)
    worst = 0.0
    for i in range(problem.dim):
        step = np.zeros_like(z)
        step[i] = fd_step
        forward, _ = problem.objective(z + step)
        backward, _ = problem.objective(z - step)
        numeric = (forward - backward) / (2 * fd_step)
        error = abs(numeric - analytic[i]) / max(1.0, abs(analytic[i]))
        worst = max(worst, error)
    return worst


def check_constraint_gradient(
    problem: NlpProblem, z: FloatArray, weights: FloatArray, fd_step: float = 1e-6
) -> float:
    """As check_gradient, for the scalar function w . c(z) of the constraints"""
    if problem.equality_constraints is None:
        return 0.0
    constraints = problem.equality_constraints

    def weighted(point: FloatArray) -> Tuple[float, FloatArray]:
        residual, jacobian_t = constraints(point)
        return float(weights @ residual), jacobian_t(weights)

    return check_gradient(problem._replace(objective=weighted), z, fd_step)
