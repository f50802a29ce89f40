"""Gromov-Wasserstein alignment of an item cost matrix with a 2D lattice.

The solver is a permutation-restricted Frank-Wolfe scheme: each step
linearizes the quartic GW objective, solves the inner linear problem (exact
assignment at epsilon=0, Sinkhorn scaling at epsilon>0) and accepts a
line-search step. Plans are resolved to discrete layouts by maximizing the
coupled mass with an exact linear sum assignment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import (
    DimensionMismatch,
    GridTooSmall,
    NumericalUnderflow,
    NonConvergence,
    TooLarge,
)


@dataclass(frozen=True)
class GridTemplate:
    """g x g unit lattice with pairwise squared Euclidean distances."""

    side: int
    coordinates: np.ndarray      # (g*g, 2) row-major
    cost: np.ndarray             # (g*g, g*g)

    @classmethod
    def square(cls, side):
        r, c = np.divmod(np.arange(side * side), side)
        coords = np.stack([r, c], axis=1).astype(np.float64)
        diff = coords[:, None, :] - coords[None, :, :]
        cost = np.sum(diff**2, axis=2)
        return cls(side=side, coordinates=coords, cost=cost)


@dataclass(frozen=True)
class TransportPlan:
    matrix: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    objective: float
    converged: bool = True


@dataclass(frozen=True)
class LayoutPermutation:
    """Injective map from real item indices to (row, col) lattice cells."""

    item_to_cell: tuple          # ((row, col), ...) for the real items
    n_items: int
    n_dummy: int

    def cell_to_item(self):
        return {cell: i for i, cell in enumerate(self.item_to_cell)}


def _check_pair(C_item, C_grid):
    C_item = np.asarray(C_item, dtype=np.float64)
    C_grid = np.asarray(C_grid, dtype=np.float64)
    if C_item.ndim != 2 or C_item.shape[0] != C_item.shape[1]:
        raise DimensionMismatch(f"item cost matrix is not square: {C_item.shape}")
    if C_grid.shape != C_item.shape:
        raise DimensionMismatch(f"cost shapes differ: {C_item.shape} vs {C_grid.shape}")
    return C_item, C_grid


def _linear_term(C1, C2, T):
    # L(T)[i,j] = sum_{k,l} (C1[i,k] - C2[j,l])^2 T[k,l], for symmetric C1, C2
    row = T.sum(axis=1)
    col = T.sum(axis=0)
    return (C1**2) @ row[:, None] + ((C2**2) @ col)[None, :] - 2.0 * C1 @ T @ C2


def gw_objective(C_item, C_grid, T):
    """Distortion sum_{i,j,k,l} (C_item[i,k] - C_grid[j,l])^2 T[i,j] T[k,l]."""
    C1, C2 = _check_pair(C_item, C_grid)
    M = T.matrix if isinstance(T, TransportPlan) else np.asarray(T, dtype=np.float64)
    if M.shape != C1.shape:
        raise DimensionMismatch(f"plan shape {M.shape} does not match costs {C1.shape}")
    return float(np.sum(_linear_term(C1, C2, M) * M))


def sinkhorn(cost, p, q, epsilon, max_iter=10000, tol=1e-9):
    """Entropic-regularized plan diag(u) exp(-cost/epsilon) diag(v).

    Runs in the log domain (potentials f, g) so peaked kernels stay finite.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    cost = np.asarray(cost, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if np.any(p <= 0) or np.any(q <= 0):
        raise ValueError("marginals must be strictly positive")
    log_p = np.log(p)
    log_q = np.log(q)
    f = np.zeros_like(p)
    g = np.zeros_like(q)
    for _ in range(max_iter):
        f = epsilon * (log_p - _logsumexp((g[None, :] - cost) / epsilon, axis=1))
        g = epsilon * (log_q - _logsumexp((f[:, None] - cost) / epsilon, axis=0))
        plan = np.exp((f[:, None] + g[None, :] - cost) / epsilon)
        if not np.all(np.isfinite(plan)):
            raise NumericalUnderflow("kernel entries vanished; epsilon too small")
        err = max(
            np.abs(plan.sum(axis=1) - p).max(),
            np.abs(plan.sum(axis=0) - q).max(),
        )
        if err <= tol:
            return plan
    raise NonConvergence(f"sinkhorn did not reach tol={tol} in {max_iter} iterations")


def _logsumexp(x, axis):
    m = x.max(axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.exp(x - m).sum(axis=axis))


def _perm_plan(perm, m):
    T = np.zeros((m, m))
    T[np.arange(m), perm] = 1.0 / m
    return T


def _perm_objective(C1, C2, perm):
    m = len(perm)
    C2p = C2[np.ix_(perm, perm)]
    return float(np.sum((C1 - C2p) ** 2)) / (m * m)


def _two_opt(C1, C2, perm):
    """Pairwise-exchange descent on the permutation objective."""
    perm = np.array(perm, dtype=np.int64)
    obj = _perm_objective(C1, C2, perm)
    m = len(perm)
    improved = True
    while improved:
        improved = False
        for i in range(m):
            for j in range(i + 1, m):
                perm[i], perm[j] = perm[j], perm[i]
                cand = _perm_objective(C1, C2, perm)
                if cand < obj - 1e-15:
                    obj = cand
                    improved = True
                else:
                    perm[i], perm[j] = perm[j], perm[i]
    return perm, obj


def solve_gw(C_item, C_grid, epsilon=0.0, seed=0, restarts=20, max_outer=1000, rel_tol=1e-9):
    """Minimize the GW distortion over plans with uniform marginals.

    Runs ``restarts`` seeded initializations (uniform plan plus random
    doubly-stochastic perturbations) and keeps the lowest-objective result.
    At epsilon=0 the returned plan is a permutation scaled by 1/m.
    """
    C1, C2 = _check_pair(C_item, C_grid)
    m = C1.shape[0]
    p = np.full(m, 1.0 / m)
    rng = np.random.default_rng(seed)

    best_obj = math.inf
    best_T = None
    converged_all = True

    def consider(perm):
        nonlocal best_obj, best_T
        cand = _perm_objective(C1, C2, perm)
        if cand < best_obj:
            best_obj = cand
            best_T = _perm_plan(np.asarray(perm), m)

    def entropic_value(T):
        pos = T[T > 0]
        return float(np.sum(_linear_term(C1, C2, T) * T) + epsilon * np.sum(pos * np.log(pos)))

    if epsilon == 0.0:
        consider(np.arange(m))
    for r in range(restarts):
        if r == 0:
            T = np.outer(p, p)
        else:
            alpha = rng.uniform(0.1, 1.0)
            perm = rng.permutation(m)
            T = (1.0 - alpha) * np.outer(p, p) + alpha * _perm_plan(perm, m)
        converged = False
        if epsilon == 0.0:
            obj = float(np.sum(_linear_term(C1, C2, T) * T))
            for _ in range(max_outer):
                grad = 2.0 * _linear_term(C1, C2, T)
                _, cols = linear_sum_assignment(grad)
                D = _perm_plan(cols, m)
                consider(cols)  # every inner permutation is an exact candidate
                delta = D - T
                b = float(np.sum(grad * delta))
                if b >= -rel_tol * max(1.0, abs(obj)):
                    converged = True
                    break
                a = float(np.sum(_linear_term(C1, C2, delta) * delta))
                if a > 0:
                    t = min(1.0, max(0.0, -b / (2.0 * a)))
                else:
                    t = 1.0 if a + b < 0 else 0.0
                if t == 0.0:
                    converged = True
                    break
                T = T + t * delta
                new_obj = obj + b * t + a * t * t
                if abs(obj - new_obj) <= rel_tol * max(1.0, abs(obj)):
                    obj = new_obj
                    converged = True
                    break
                obj = new_obj
            _, cols = linear_sum_assignment(-T)
            refined, _ = _two_opt(C1, C2, cols)
            consider(refined)
        else:
            # mirror descent: Sinkhorn projection of the linearized cost,
            # accepted with a damped backtracking step on the entropic value
            value = entropic_value(T)
            for _ in range(max_outer):
                grad = 2.0 * _linear_term(C1, C2, T)
                try:
                    D = sinkhorn(grad, p, p, epsilon, max_iter=50000, tol=1e-8)
                except (NumericalUnderflow, NonConvergence):
                    _, cols = linear_sum_assignment(grad)
                    D = _perm_plan(cols, m)
                accepted = False
                t = 1.0
                for _ in range(12):
                    cand = (1.0 - t) * T + t * D
                    cand_value = entropic_value(cand)
                    if cand_value < value - rel_tol * max(1.0, abs(value)):
                        T, value = cand, cand_value
                        accepted = True
                        break
                    t /= 2.0
                if not accepted:
                    converged = True
                    break
            obj = float(np.sum(_linear_term(C1, C2, T) * T))
            if obj < best_obj:
                best_obj = obj
                best_T = T
        converged_all = converged_all and converged
    return TransportPlan(
        matrix=best_T,
        row_marginal=p.copy(),
        col_marginal=p.copy(),
        objective=best_obj,
        converged=converged_all,
    )


def resolve_assignment(T, n_items=None, grid_side=None):
    """Resolve a plan to the permutation maximizing the coupled mass.

    Ties are broken toward the lexicographically smallest permutation. The
    plan's column index j is interpreted as the row-major cell (j // g, j % g)
    of a g x g lattice, g inferred as sqrt(m) unless given.
    """
    M = T.matrix if isinstance(T, TransportPlan) else np.asarray(T, dtype=np.float64)
    m = M.shape[0]
    if M.shape != (m, m):
        raise DimensionMismatch(f"plan is not square: {M.shape}")
    perm = _lexmin_max_assignment(M)
    g = grid_side if grid_side is not None else math.isqrt(m)
    if g * g != m and grid_side is None:
        raise DimensionMismatch(f"plan size {m} is not a perfect square; pass grid_side")
    n_items = m if n_items is None else n_items
    cells = tuple((int(perm[i] // g), int(perm[i] % g)) for i in range(n_items))
    return LayoutPermutation(item_to_cell=cells, n_items=n_items, n_dummy=m - n_items)


def _lexmin_max_assignment(M, eps_scale=1e-9):
    """Max-total-mass assignment, lexicographically smallest among optima."""
    m = M.shape[0]
    cost = -M
    rows, cols = linear_sum_assignment(cost)
    best = cost[rows, cols].sum()
    eps = eps_scale * max(1.0, float(np.abs(M).max()))
    perm = np.full(m, -1, dtype=np.int64)
    free_cols = list(range(m))
    fixed = 0.0
    for i in range(m):
        for pos, j in enumerate(free_cols):
            rest_cols = free_cols[:pos] + free_cols[pos + 1 :]
            if i + 1 < m:
                sub = cost[np.ix_(range(i + 1, m), rest_cols)]
                r2, c2 = linear_sum_assignment(sub)
                rest = sub[r2, c2].sum()
            else:
                rest = 0.0
            if fixed + cost[i, j] + rest <= best + eps:
                perm[i] = j
                fixed += cost[i, j]
                free_cols = rest_cols
                break
        if perm[i] < 0:
            # numerical fallback: keep the plain optimal column for this row
            perm[i] = free_cols.pop(0)
            fixed += cost[i, perm[i]]
    return perm


def brute_force_gw(C_item, C_grid):
    """Exhaustive minimum over all m! permutation plans (verification oracle)."""
    import itertools

    C1, C2 = _check_pair(C_item, C_grid)
    m = C1.shape[0]
    if m > 8:
        raise TooLarge(f"brute force limited to m <= 8, got {m}")
    best_perm = None
    best_obj = math.inf
    for perm in itertools.permutations(range(m)):
        obj = _perm_objective(C1, C2, list(perm))
        if obj < best_obj - 1e-15:
            best_obj = obj
            best_perm = perm
    return best_perm, best_obj


def pad_to_square(C_item, g):
    """Extend an m x m cost matrix with zero-distance dummies to g^2 items."""
    C_item = np.asarray(C_item, dtype=np.float64)
    m = C_item.shape[0]
    if g * g < m:
        raise GridTooSmall(f"grid side {g} gives {g*g} cells for {m} items")
    n_dummy = g * g - m
    out = np.zeros((g * g, g * g))
    out[:m, :m] = C_item
    return out, n_dummy
