"""
Sample-average minimization of J over a box of control parameters.

Every objective value reuses the same seed set, so theta -> J_hat(theta) is a
deterministic function and the search (Halton grid, then bounded
Nelder-Mead from the best grid point) is reproducible.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize as scipy_minimize
from scipy.stats import qmc

from cost_functional import estimate_j
from feedback_controls import FeedbackControl, set_mode_value
from spectral_core import Mode, check_mode

logger = logging.getLogger(__name__)

FATOL = 1e-6
XATOL = 1e-4


class BoxError(ValueError):
    """Parameter outside the box, malformed box, or budget too small."""


class BoxCoordinate(NamedTuple):
    role: str
    mode: Mode


class TraceEntry(NamedTuple):
    index: int
    theta: Tuple[float, ...]
    objective: float
    phase: str


class OptimizationResult(NamedTuple):
    theta_star: np.ndarray
    j_star: float
    evals: int
    trace: List[TraceEntry]


@dataclass(frozen=True, eq=False)
class ParamBox:
    """Closed box of parameters; coordinate k sets one gain or base amplitude of the template."""

    lower: np.ndarray
    upper: np.ndarray
    coords: Tuple[BoxCoordinate, ...]
    template: FeedbackControl
    _span: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).ravel()
        upper = np.asarray(self.upper, dtype=float).ravel()
        coords = tuple(BoxCoordinate(str(role), (int(m[0]), int(m[1]))) for role, m in self.coords)
        if not (len(lower) == len(upper) == len(coords)) or not coords:
            raise BoxError(f"box needs matching nonempty bounds and coordinates, "
                           f"got {len(lower)}/{len(upper)}/{len(coords)}")
        if np.any(lower > upper) or not np.all(np.isfinite(lower)) or not np.all(np.isfinite(upper)):
            raise BoxError("box bounds must be finite with lower <= upper")
        for c in coords:
            if c.role not in ("gain", "base"):
                raise BoxError(f"unknown coordinate role '{c.role}'")
            check_mode(c.mode, self.template.trunc)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "_span", upper - lower)

    @property
    def dims(self):
        return len(self.coords)

    def contains(self, theta):
        theta = np.asarray(theta, dtype=float)
        return theta.shape == (self.dims,) and bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def clip(self, theta):
        return np.clip(np.asarray(theta, dtype=float), self.lower, self.upper)

    def embed(self, theta):
        if not self.contains(theta):
            raise BoxError(f"theta={list(np.atleast_1d(theta))} outside the box")
        phi = self.template
        for value, coord in zip(np.asarray(theta, dtype=float), self.coords):
            phi = set_mode_value(phi, coord.role, coord.mode, float(value))
        return phi


def saa_objective(theta, box, cfg, g, spec, n_paths, seed, threads=1):
    """estimate_j(embed(theta)).mean over the fixed seed set."""
    return estimate_j(cfg, box.embed(theta), g, spec, n_paths, seed, threads).mean


class _BudgetExhausted(Exception):
    pass


class _Evaluator:
    def __init__(self, box, objective, budget):
        self.box = box
        self.objective = objective
        self.budget = budget
        self.trace: List[TraceEntry] = []
        self.phase = "grid"

    def __call__(self, theta):
        if len(self.trace) >= self.budget:
            raise _BudgetExhausted()
        theta = self.box.clip(theta)
        value = float(self.objective(theta))
        self.trace.append(TraceEntry(len(self.trace), tuple(float(v) for v in theta), value, self.phase))
        logger.debug("eval %d [%s] theta=%s J=%.8g", len(self.trace) - 1, self.phase, theta, value)
        return value


def grid_points(box, count):
    """Unscrambled Halton lattice mapped onto the box; the first point is the lower corner."""
    unit = qmc.Halton(d=box.dims, scramble=False).random(count)
    return box.lower + unit * box._span


def _initial_simplex(box, x0):
    steps = np.where(box._span > 0, 0.1 * box._span, 1e-3)
    simplex = [x0]
    for i in range(box.dims):
        vertex = x0.copy()
        if x0[i] + steps[i] <= box.upper[i] or box._span[i] == 0:
            vertex[i] = x0[i] + steps[i]
        else:
            vertex[i] = x0[i] - steps[i]
        simplex.append(vertex)
    return np.array(simplex)


def minimize(box, cfg, g, spec, n_paths, seed, budget, threads=1) -> OptimizationResult:
    """
    Halton grid scan of ceil(budget/3) points, then Nelder-Mead refinement
    from the best grid point with points clamped to the box.

    Args:
        box: ParamBox
        budget: maximum objective evaluations, at least 3 (d + 1)

    Returns:
        OptimizationResult with the full evaluation trace
    """
    if budget < 3 * (box.dims + 1):
        raise BoxError(f"budget {budget} below 3*(d+1) = {3 * (box.dims + 1)}")

    def objective(theta):
        return saa_objective(theta, box, cfg, g, spec, n_paths, seed, threads)

    evaluate = _Evaluator(box, objective, budget)
    n_grid = int(math.ceil(budget / 3))
    for theta in grid_points(box, n_grid):
        evaluate(theta)
    best = min(evaluate.trace, key=lambda e: e.objective)
    logger.info("grid stage: %d points, best J=%.6g at %s", n_grid, best.objective, best.theta)

    remaining = budget - len(evaluate.trace)
    if remaining > box.dims:
        evaluate.phase = "simplex"
        x0 = np.array(best.theta)
        try:
            scipy_minimize(
                evaluate, x0, method="Nelder-Mead",
                bounds=list(zip(box.lower, box.upper)),
                options={"initial_simplex": _initial_simplex(box, x0), "maxfev": remaining,
                         "fatol": FATOL, "xatol": XATOL},
            )
        except _BudgetExhausted:
            logger.debug("evaluation budget %d exhausted during refinement", budget)

    best = min(evaluate.trace, key=lambda e: e.objective)
    logger.info("J* = %.6g at theta = %s (%d evals)", best.objective, list(best.theta), len(evaluate.trace))
    return OptimizationResult(np.array(best.theta), best.objective, len(evaluate.trace), evaluate.trace)


def best_so_far(trace: Sequence[TraceEntry]):
    return np.minimum.accumulate([e.objective for e in trace])
