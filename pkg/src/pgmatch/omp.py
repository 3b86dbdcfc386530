"""Gradient matching by regularised orthogonal matching pursuit.

The objective for a selection ``S`` with weights ``w >= 0`` is::

    E(w, S) = lam * ||w||^2 + || sum_{i in S} w_i g_i - target ||

with the Euclidean norm, not squared.
"""
from dataclasses import dataclass, field

import numpy as np

from .kernels import omp_select, solve_reg_nnls

DEFAULT_LAMBDA = 0.01
DEFAULT_EPSILON = 1e-6


class GMError(ValueError):
    pass


@dataclass
class GMProblem:
    target: np.ndarray
    candidates: np.ndarray  # (n_candidates, dim)
    k: int
    lam: float = DEFAULT_LAMBDA
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=np.float64)
        self.candidates = np.atleast_2d(np.asarray(self.candidates, dtype=np.float64))
        if self.candidates.size == 0:
            raise GMError("empty candidate list")
        if self.candidates.shape[1] != self.target.shape[0]:
            raise GMError("candidate and target dimensions differ")
        if self.k < 0 or self.k > len(self.candidates):
            raise GMError(f"budget k={self.k} outside [0, {len(self.candidates)}]")
        if self.lam < 0 or self.epsilon < 0:
            raise GMError("lambda and epsilon must be nonnegative")


@dataclass
class GMResult:
    selected: list
    weights: np.ndarray
    objective: float
    iterations: int
    history: list = field(default_factory=list)  # objective after each iteration, starting at ||target||


def eval_objective(problem, selected, weights):
    selected = np.asarray(selected, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if selected.shape != weights.shape:
        raise GMError("selected and weights differ in length")
    n = len(problem.candidates)
    if selected.size and (selected.min() < 0 or selected.max() >= n):
        raise GMError("candidate index out of range")
    approx = weights @ problem.candidates[selected] if selected.size else 0.0
    resid = approx - problem.target
    return problem.lam * float(weights @ weights) + float(np.sqrt(np.dot(resid, resid)))


def solve_weights(problem, selected):
    """Nonnegative weights minimising the objective on a fixed selection."""
    selected = list(selected)
    if not selected:
        raise GMError("selection is empty")
    if len(set(selected)) != len(selected):
        raise GMError("duplicate indices in selection")
    A = problem.candidates[selected].T
    return solve_reg_nnls(A, problem.target, problem.lam)


def gradient_match(problem):
    """Greedy OMP under the batch budget ``problem.k``.

    Each step adds the unselected candidate with the largest inner product
    against the residual (ties to the smallest index), re-solves the weights
    and stops on budget, ``objective <= epsilon`` or no positive alignment.
    """
    sel, weights, history = omp_select(problem.candidates, problem.target, problem.k,
                                       problem.lam, problem.epsilon)
    selected = [int(j) for j in sel]
    obj = eval_objective(problem, selected, weights) if selected else float(history[0])
    return GMResult(selected, weights, obj, len(selected), list(history))
