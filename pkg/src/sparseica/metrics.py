"""Identifiability scoring: correlation matrices, exact assignment, MCC,
component-wise linearity and composed-map support diagnosis."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .support import SupportPattern, compute_support, relative_tol


@dataclass
class EvalReport:
    """Mean correlation coefficient under the optimal source assignment."""

    mcc: float
    assignment: tuple[int, ...]
    correlation: np.ndarray
    linearity_r2: np.ndarray
    method: str

    def to_dict(self) -> dict:
        return {
            "mcc": self.mcc,
            "assignment": list(self.assignment),
            "correlation": [[float(v) for v in row] for row in self.correlation],
            "linearity_r2": [float(v) for v in self.linearity_r2],
            "method": self.method,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def correlation_csv(self) -> str:
        lines = [",".join(f"e{j + 1}" for j in range(self.correlation.shape[1]))]
        for row in self.correlation:
            lines.append(",".join(f"{v:.17g}" for v in row))
        return "\n".join(lines) + "\n"


def _rankdata(x: np.ndarray) -> np.ndarray:
    """Average ranks, midpoints for ties."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def correlation_matrix(
    sources: np.ndarray, estimates: np.ndarray, method: str = "pearson"
) -> np.ndarray:
    """Entry (i, j): correlation between true source i and estimate j."""
    S = np.asarray(sources, dtype=np.float64)
    E = np.asarray(estimates, dtype=np.float64)
    if S.shape[0] != E.shape[0]:
        raise ValueError("sample counts differ")
    if S.shape[0] < 3:
        raise ValueError("need at least 3 samples")
    if method == "spearman":
        S = np.column_stack([_rankdata(S[:, i]) for i in range(S.shape[1])])
        E = np.column_stack([_rankdata(E[:, j]) for j in range(E.shape[1])])
    elif method != "pearson":
        raise ValueError(f"unknown method {method!r}")
    S = S - S.mean(axis=0)
    E = E - E.mean(axis=0)
    s_norm = np.linalg.norm(S, axis=0)
    e_norm = np.linalg.norm(E, axis=0)
    if np.any(s_norm == 0) or np.any(e_norm == 0):
        raise ValueError("zero-variance column")
    return (S.T @ E) / np.outer(s_norm, e_norm)


def _min_assignment(cost: np.ndarray) -> np.ndarray:
    """Exact minimum-cost assignment, shortest augmenting paths, O(n^3)."""
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.full(n + 1, n, dtype=int)  # p[j]: row matched to column j; n = free
    for i in range(n):
        p[n] = i
        j0 = n
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        pred = np.full(n + 1, n, dtype=int)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = -1
            for j in range(n):
                if used[j]:
                    continue
                cur = cost[i0, j] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    pred[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == n:
                break
        while j0 != n:
            j1 = pred[j0]
            p[j0] = p[j1]
            j0 = j1
    result = np.zeros(n, dtype=int)
    for j in range(n):
        if p[j] < n:
            result[p[j]] = j
    return result


def assign(costs: np.ndarray) -> tuple[int, ...]:
    """Permutation sigma maximizing sum |costs[i, sigma(i)]|, exact.

    Ties are broken toward the lexicographically smallest permutation by
    fixing rows in order and re-solving the remaining subproblem.
    """
    c = np.abs(np.asarray(costs, dtype=np.float64))
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("cost matrix must be square")
    n = c.shape[0]
    if n == 0:
        return ()
    best = _assignment_value(c, list(range(n)), list(range(n)))
    scale = max(1.0, float(np.max(c)))
    tol = 1e-9 * scale
    sigma: list[int] = []
    rows = list(range(n))
    free_cols = list(range(n))
    total_fixed = 0.0
    for i in rows:
        chosen = None
        for j in free_cols:
            rest_rows = [r for r in rows if r > i]
            rest_cols = [col for col in free_cols if col != j]
            rest = _assignment_value(c, rest_rows, rest_cols)
            if total_fixed + c[i, j] + rest >= best - tol:
                chosen = j
                break
        if chosen is None:  # numerical safety net; should not happen
            chosen = free_cols[0]
        sigma.append(chosen)
        total_fixed += c[i, chosen]
        free_cols.remove(chosen)
    return tuple(sigma)


def _assignment_value(
    c: np.ndarray, rows: Sequence[int], cols: Sequence[int]
) -> float:
    """Optimal total of the max-|c| assignment on a square submatrix."""
    if not rows:
        return 0.0
    sub = c[np.ix_(rows, cols)]
    perm = _min_assignment(-sub)
    return float(sub[np.arange(len(rows)), perm].sum())


def mcc(
    sources: np.ndarray, estimates: np.ndarray, method: str = "pearson"
) -> EvalReport:
    """Mean absolute correlation between matched true and estimated sources.

    Absolute values are taken before solving the assignment (sign
    indeterminacy is trivial); this is a protocol decision, matching the
    standard usage of the metric.
    """
    corr = correlation_matrix(sources, estimates, method)
    sigma = assign(corr)
    matched = np.abs(corr[np.arange(corr.shape[0]), list(sigma)])
    r2 = componentwise_linearity(sources, estimates, sigma)
    return EvalReport(
        mcc=float(matched.mean()),
        assignment=sigma,
        correlation=corr,
        linearity_r2=r2,
        method=method,
    )


def componentwise_linearity(
    sources: np.ndarray, estimates: np.ndarray, assignment: Sequence[int]
) -> np.ndarray:
    """R^2 of the per-component least-squares line estimate ~ a*source + b."""
    S = np.asarray(sources, dtype=np.float64)
    E = np.asarray(estimates, dtype=np.float64)
    sigma = list(assignment)
    if sorted(sigma) != list(range(S.shape[1])):
        raise ValueError("assignment is not a permutation")
    out = np.zeros(S.shape[1])
    for i, j in enumerate(sigma):
        x = S[:, i]
        y = E[:, j]
        sx = x - x.mean()
        sy = y - y.mean()
        den = float(sx @ sx)
        var_y = float(sy @ sy)
        if den == 0 or var_y == 0:
            raise ValueError(f"degenerate variance in component {i}")
        a = float(sx @ sy) / den
        resid = sy - a * sx
        out[i] = 1.0 - float(resid @ resid) / var_y
    return out


def jh_support(
    mixing: Callable[[np.ndarray], np.ndarray],
    mixing_jacobian: Callable[[np.ndarray], np.ndarray],
    unmixing_jacobian: Callable[[np.ndarray], np.ndarray],
    points: Sequence[np.ndarray],
    rel_tol: float = 1e-6,
) -> tuple[SupportPattern, bool]:
    """Sampled union support of the composed map estimate^-1 o truth.

    Returns the pattern and whether it is permutation-like (exactly one
    entry per row and per column), the executable form of component-wise
    recovery.
    """
    sample = [np.asarray(p, dtype=np.float64) for p in points]
    mats = [unmixing_jacobian(mixing(p)) @ mixing_jacobian(p) for p in sample]
    scale = max(relative_tol(m, rel_tol) for m in mats)
    entries: set[tuple[int, int]] = set()
    for m in mats:
        entries.update(compute_support(m, scale).entries)
    pattern = SupportPattern(mats[0].shape[0], mats[0].shape[1], frozenset(entries))
    n = pattern.rows
    perm_like = (
        len(pattern) == n
        and all(len(pattern.row_support(i)) == 1 for i in range(n))
        and all(len(pattern.col_support(j)) == 1 for j in range(pattern.cols))
    )
    return pattern, perm_like
