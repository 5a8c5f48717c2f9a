"""Executable checkers for the structural sparsity conditions.

Each checker returns a ConditionReport with a verdict plus, per source,
either a witness (the structure that certifies the condition) or a concrete
counterexample.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable

import numpy as np

from .support import (
    SupportPattern,
    binary_rank,
    compute_support,
    overlap,
    relative_tol,
    standard_sample_points,
)

UNDERCOMPLETE_MAX_COLS = 20


@dataclass
class ConditionReport:
    """Verdict of one structural condition with per-source evidence."""

    condition: str
    verdict: bool
    details: list[dict] = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "verdict": self.verdict,
            "details": self.details,
            "tolerances": self.tolerances,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def check_intersection_condition(pattern: SupportPattern) -> ConditionReport:
    """For every source k, do the rows touching k intersect exactly in {k}?

    Uses the maximal candidate row set R_k = {i : k in row support i}: the
    intersection over R_k is the smallest intersection achievable by any row
    set containing k in all rows, so checking R_k alone is equivalent to
    enumerating all subsets (cross-validated by brute force in the tests).
    The witness reported for a passing source is R_k.
    """
    if len(pattern) == 0:
        raise ValueError("pattern has no entries")
    row_supports = [pattern.row_support(i) for i in range(pattern.rows)]
    details = []
    verdict = True
    for k in range(pattern.cols):
        touching = [i for i in range(pattern.rows) if k in row_supports[i]]
        if not touching:
            details.append({
                "source": k, "holds": False, "witness_rows": [],
                "intersection": [], "reason": "no row is influenced by this source",
            })
            verdict = False
            continue
        meet = set(row_supports[touching[0]])
        for i in touching[1:]:
            meet &= row_supports[i]
        holds = meet == {k}
        details.append({
            "source": k,
            "holds": holds,
            "witness_rows": touching,
            "intersection": sorted(meet),
        })
        verdict = verdict and holds
    return ConditionReport("intersection", verdict, details)


def _as_pattern(matrix_or_pattern, tol: float | None) -> SupportPattern:
    if isinstance(matrix_or_pattern, SupportPattern):
        return matrix_or_pattern
    m = np.asarray(matrix_or_pattern, dtype=np.float64)
    return compute_support(m, relative_tol(m) if tol is None else tol)


def check_undercomplete_condition(
    mixing, tol: float | None = None
) -> ConditionReport:
    """Union-minus-rank inequality over every column subset.

    For each C with |C| > 1 and each k in C, the size of the union of the
    column supports in C minus the rank of the overlap of the column
    submatrix must exceed |supp(column k)|. Enumerates all 2^n - n - 1
    subsets (exponential; guarded at n <= 20). On failure the first
    violating (C, k) in combination order is reported.
    """
    pattern = _as_pattern(mixing, tol)
    n = pattern.cols
    if n > UNDERCOMPLETE_MAX_COLS:
        raise ValueError(
            f"subset enumeration is exponential; refusing n={n} > "
            f"{UNDERCOMPLETE_MAX_COLS} columns"
        )
    col_rows = [pattern.col_support(j) for j in range(n)]
    details = []
    for size in range(2, n + 1):
        for subset in combinations(range(n), size):
            union_rows = frozenset().union(*(col_rows[j] for j in subset))
            sub = pattern.restrict_columns(subset)
            rank = binary_rank(overlap(sub))
            margin = len(union_rows) - rank
            for k in subset:
                if margin <= len(col_rows[k]):
                    details.append({
                        "holds": False,
                        "columns": list(subset),
                        "source": k,
                        "union_size": len(union_rows),
                        "overlap_rank": rank,
                        "column_support_size": len(col_rows[k]),
                    })
                    return ConditionReport(
                        "undercomplete", False, details,
                        tolerances={} if tol is None else {"support_tol": tol},
                    )
    details.append({
        "holds": True,
        "subsets_checked": 2 ** n - n - 1,
        "column_support_sizes": [len(c) for c in col_rows],
    })
    return ConditionReport(
        "undercomplete", True, details,
        tolerances={} if tol is None else {"support_tol": tol},
    )


def check_span_condition(
    jacobian_at: Callable[[np.ndarray], np.ndarray],
    support: SupportPattern,
    trials: int = 256,
    tol: float = 1e-6,
    seed: int = 0,
) -> ConditionReport:
    """Can sampled Jacobian rows span the row-support subspaces?

    For each row i with support F_i, greedily collects sampled points whose
    i-th Jacobian row (restricted to F_i) increases the rank, succeeding when
    |F_i| independent rows are found. Only the span half of the assumption is
    checked; the matching-support half constrains the *estimated* support and
    can only be assessed after estimation, so it is flagged, not checked.
    """
    if support.rows != support.cols:
        raise ValueError("span check expects square Jacobians")
    n = support.cols
    points = standard_sample_points(n, trials, seed)
    details = []
    verdict = True
    cache: list[np.ndarray] = []

    def jac(idx: int) -> np.ndarray:
        while len(cache) <= idx:
            cache.append(np.asarray(jacobian_at(points[len(cache)]), dtype=np.float64))
        return cache[idx]

    for i in range(support.rows):
        cols = sorted(support.row_support(i))
        need = len(cols)
        if need == 0:
            details.append({"row": i, "holds": True, "witness_points": [],
                            "rank": 0, "needed": 0})
            continue
        collected: list[np.ndarray] = []
        witness: list[int] = []
        rank = 0
        for t in range(trials):
            row = jac(t)[i, cols]
            candidate = collected + [row]
            s = np.linalg.svd(np.asarray(candidate), compute_uv=False)
            new_rank = int(np.sum(s > tol * s[0])) if s[0] > 0 else 0
            if new_rank > rank:
                collected = candidate
                witness.append(t)
                rank = new_rank
            if rank == need:
                break
        holds = rank == need
        details.append({"row": i, "holds": holds, "witness_points": witness,
                        "rank": rank, "needed": need})
        verdict = verdict and holds
    return ConditionReport(
        "span", verdict, details,
        tolerances={"rank_tol": tol},
        notes=("estimation_dependent: the matching-support half of the "
               "assumption involves the estimated support and is not checked "
               "here",),
    )


def check_sparsity_budget(
    estimated: SupportPattern, truth: SupportPattern
) -> bool:
    """True iff the estimated support is no larger than the true one."""
    if estimated.shape != truth.shape:
        raise ValueError(
            f"shape mismatch: {estimated.shape} vs {truth.shape}"
        )
    return len(estimated) <= len(truth)
