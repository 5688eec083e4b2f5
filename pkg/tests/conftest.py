"""Shared oracle helpers for the test suite.

These stay independent of the code paths they check: assignment values
come from exhaustive permutation search, primal transport values from a
generic constrained optimizer, derivatives from central differences.
"""

from itertools import permutations

import numpy as np
from scipy.optimize import minimize

_PERM_CACHE = {}


def all_permutations(n: int) -> np.ndarray:
    if n not in _PERM_CACHE:
        _PERM_CACHE[n] = np.array(list(permutations(range(n))), dtype=np.int64)
    return _PERM_CACHE[n]


def brute_force_ot_cost(cost: np.ndarray) -> float:
    """Exact uniform-weight OT value of a square cost matrix by enumeration."""
    n = cost.shape[0]
    perms = all_permutations(n)
    totals = cost[np.arange(n)[None, :], perms].sum(axis=1)
    return float(totals.min()) / n


def brute_force_w2(a: np.ndarray, b: np.ndarray) -> float:
    sq = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return float(np.sqrt(brute_force_ot_cost(sq)))


def primal_entropic_minimum(cost: np.ndarray, a: np.ndarray, b: np.ndarray, eps: float) -> float:
    """Direct minimization of <C, P> + eps * KL(P | a x b) over the polytope.

    Sequential quadratic programming on the raw plan entries; shares no
    machinery with the fixed-point solver it cross-checks.
    """
    n, m = cost.shape
    ab = np.outer(a, b).ravel()
    c = cost.ravel()

    def objective(p):
        p = np.maximum(p, 1e-300)
        return float(c @ p + eps * np.sum(p * np.log(p / ab) - p + ab))

    def gradient(p):
        p = np.maximum(p, 1e-300)
        return c + eps * np.log(p / ab)

    constraints = [
        {"type": "eq", "fun": lambda p, i=i: p.reshape(n, m)[i].sum() - a[i]} for i in range(n)
    ] + [
        {"type": "eq", "fun": lambda p, j=j: p.reshape(n, m)[:, j].sum() - b[j]}
        for j in range(m - 1)  # last column constraint is implied by the others
    ]
    result = minimize(
        objective,
        ab.copy(),
        jac=gradient,
        method="SLSQP",
        bounds=[(1e-12, 1.0)] * (n * m),
        constraints=constraints,
        options={"maxiter": 800, "ftol": 1e-14},
    )
    assert result.success, f"oracle optimizer failed: {result.message}"
    return float(result.fun)


def central_difference(fn, x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = fn()
        x[idx] = old - h
        fm = fn()
        x[idx] = old
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad
