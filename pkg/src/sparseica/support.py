"""Support patterns of matrices and matrix-valued functions.

Binary occupancy bookkeeping: thresholded supports, the overlap transform
(drop rows that touch a single source), numeric rank of 0/1 realizations and
coordinate-subspace membership. All operations are pure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_REL_TOL = 1e-9
RANK_TOL = 1e-9


@dataclass(frozen=True)
class SupportPattern:
    """Set of occupied (row, col) positions of an m x n matrix, 0-based."""

    rows: int
    cols: int
    entries: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.rows < 0 or self.cols < 0:
            raise ValueError("pattern shape must be nonnegative")
        object.__setattr__(self, "entries", frozenset(
            (int(i), int(j)) for i, j in self.entries
        ))
        for i, j in self.entries:
            if not (0 <= i < self.rows and 0 <= j < self.cols):
                raise ValueError(f"entry {(i, j)} outside {self.rows}x{self.cols}")

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, pos: tuple[int, int]) -> bool:
        return (int(pos[0]), int(pos[1])) in self.entries

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def row_support(self, i: int) -> frozenset[int]:
        """Column indices occupied in row i."""
        return frozenset(j for r, j in self.entries if r == i)

    def col_support(self, j: int) -> frozenset[int]:
        """Row indices occupied in column j."""
        return frozenset(i for i, c in self.entries if c == j)

    def to_matrix(self) -> np.ndarray:
        """0/1 float realization."""
        m = np.zeros((self.rows, self.cols))
        for i, j in self.entries:
            m[i, j] = 1.0
        return m

    def restrict_columns(self, cols: Sequence[int]) -> "SupportPattern":
        """Sub-pattern of the given columns, reindexed to 0..len(cols)-1."""
        order = {int(c): k for k, c in enumerate(cols)}
        kept = {(i, order[j]) for i, j in self.entries if j in order}
        return SupportPattern(self.rows, len(order), frozenset(kept))

    @classmethod
    def from_matrix(cls, mask: np.ndarray) -> "SupportPattern":
        mask = np.asarray(mask)
        idx = np.argwhere(mask != 0)
        return cls(mask.shape[0], mask.shape[1],
                   frozenset((int(i), int(j)) for i, j in idx))

    def to_json(self) -> str:
        return json.dumps({
            "rows": self.rows,
            "cols": self.cols,
            "entries": sorted([list(e) for e in self.entries]),
        })

    @classmethod
    def from_json(cls, text: str) -> "SupportPattern":
        doc = json.loads(text)
        return cls(int(doc["rows"]), int(doc["cols"]),
                   frozenset((int(i), int(j)) for i, j in doc["entries"]))


@dataclass(frozen=True)
class IndexSubset:
    """Subset of coordinates {0, ..., ambient-1}."""

    ambient: int
    members: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "members", frozenset(int(i) for i in self.members))
        for i in self.members:
            if not 0 <= i < self.ambient:
                raise ValueError(f"index {i} outside ambient dimension {self.ambient}")

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, i: int) -> bool:
        return int(i) in self.members


def compute_support(matrix: np.ndarray, tol: float | None = None,
                    ) -> SupportPattern:
    """Positions with |entry| > tol.

    tol is an absolute threshold; when omitted it defaults to the relative
    rule 1e-9 times the largest absolute entry. An empty matrix yields an
    empty pattern of matching shape.
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if tol is None:
        tol = relative_tol(matrix)
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    idx = np.argwhere(np.abs(matrix) > tol)
    return SupportPattern(matrix.shape[0], matrix.shape[1],
                          frozenset((int(i), int(j)) for i, j in idx))


def relative_tol(matrix: np.ndarray, rel: float = DEFAULT_REL_TOL) -> float:
    """Default thresholding rule: rel times the max absolute entry."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.size == 0:
        return 0.0
    return rel * float(np.max(np.abs(matrix)))


def function_support(
    jacobian_at: Callable[[np.ndarray], np.ndarray],
    sample_points: Iterable[np.ndarray],
    tol: float | None = None,
) -> SupportPattern:
    """Union of thresholded supports of `jacobian_at` over the points.

    Executable surrogate for the support of a matrix-valued function: the
    exact definition quantifies over the whole domain, which is not
    computable, so membership is under-approximated by sampling. When tol is
    omitted, one relative threshold (1e-9 times the largest absolute entry
    across all sampled matrices) is applied uniformly.
    """
    points = list(sample_points)
    if not points:
        raise ValueError("at least one sample point is required")
    shape = None
    mats = []
    for p in points:
        m = np.atleast_2d(np.asarray(jacobian_at(np.asarray(p)), dtype=np.float64))
        if shape is None:
            shape = m.shape
        elif m.shape != shape:
            raise ValueError(f"jacobian shape changed: {m.shape} vs {shape}")
        mats.append(m)
    if tol is None:
        tol = DEFAULT_REL_TOL * max(
            (float(np.max(np.abs(m))) for m in mats), default=0.0)
    entries: set[tuple[int, int]] = set()
    for m in mats:
        entries.update(compute_support(m, tol).entries)
    return SupportPattern(shape[0], shape[1], frozenset(entries))


def overlap(pattern: SupportPattern) -> SupportPattern:
    """Drop every entry that is the only one in its row."""
    counts: dict[int, int] = {}
    for i, _ in pattern.entries:
        counts[i] = counts.get(i, 0) + 1
    kept = frozenset((i, j) for i, j in pattern.entries if counts[i] >= 2)
    return SupportPattern(pattern.rows, pattern.cols, kept)


def binary_rank(pattern: SupportPattern) -> int:
    """Numeric rank of the 0/1 realization.

    Singular values below RANK_TOL times the largest are treated as zero;
    adequate for the desk-scale patterns (n <= 20) this toolkit handles.
    """
    if not pattern.entries:
        return 0
    s = np.linalg.svd(pattern.to_matrix(), compute_uv=False)
    return int(np.sum(s > RANK_TOL * s[0]))


def in_subspace(v: np.ndarray, subset: IndexSubset, tol: float = 0.0) -> bool:
    """True iff every coordinate outside the subset is below tol in magnitude."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != subset.ambient:
        raise ValueError(f"vector of dim {v.shape} does not match ambient "
                         f"{subset.ambient}")
    outside = [i for i in range(subset.ambient) if i not in subset.members]
    if not outside:
        return True
    return bool(np.all(np.abs(v[outside]) <= tol))


def standard_sample_points(
    dim: int, count: int = 64, seed: int = 0
) -> list[np.ndarray]:
    """Default evaluation points for function supports: standard-normal draws."""
    rng = np.random.default_rng(seed)
    return [rng.standard_normal(dim) for _ in range(count)]
