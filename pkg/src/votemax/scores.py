"""Voting-based scores over a full opinion snapshot at one timestamp.

All comparisons between opinion values are exact by default: equality across
candidates is meaningful in the rank algebra (ties count against the scored
candidate).  An optional ``tie_eps`` snaps |a-b| <= eps to a tie for noisy
data; it defaults to 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import DataError, ScoreSpec


@dataclass(frozen=True)
class OpinionSnapshot:
    """(r, n) opinion matrix at a fixed timestamp, one row per candidate."""

    matrix: np.ndarray
    t: int = 0

    def __post_init__(self):
        mat = np.ascontiguousarray(self.matrix, dtype=np.float64)
        if mat.ndim != 2:
            raise DataError("snapshot matrix must be 2-D (candidates x nodes)")
        if mat.size and (mat.min() < 0.0 or mat.max() > 1.0):
            raise DataError("snapshot entries must lie in [0, 1]")
        mat.flags.writeable = False
        object.__setattr__(self, "matrix", mat)

    @property
    def r(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[1]


def beta_ranks(matrix: np.ndarray, q: int, tie_eps: float = 0.0) -> np.ndarray:
    """Rank of candidate q in every node's preference order (1 = top).

    beta(v) counts the candidates x with b[x, v] >= b[q, v]; q itself always
    counts, and exact ties with other candidates worsen q's rank.
    """
    bq = matrix[q]
    if tie_eps > 0.0:
        geq = matrix >= bq - tie_eps
    else:
        geq = matrix >= bq
    return geq.sum(axis=0)


def rank_beta(snapshot: OpinionSnapshot, q: int, v: int, tie_eps: float = 0.0) -> int:
    return int(beta_ranks(snapshot.matrix, q, tie_eps)[v])


def _rank_contributions(matrix: np.ndarray, spec: ScoreSpec, tie_eps: float) -> np.ndarray:
    beta = beta_ranks(matrix, spec.target, tie_eps)
    contrib = np.zeros(matrix.shape[1])
    within = beta <= spec.p
    if spec.kind == "positional-p-approval":
        om = np.asarray(spec.omega)
        contrib[within] = om[beta[within] - 1]
    else:
        contrib[within] = 1.0
    return contrib


def copeland_wins(matrix: np.ndarray, q: int, tie_eps: float = 0.0) -> int:
    """Number of one-on-one contests q wins: strictly more nodes prefer q to x
    than prefer x to q.  An even split is not a win."""
    bq = matrix[q]
    wins = 0
    for x in range(matrix.shape[0]):
        if x == q:
            continue
        if tie_eps > 0.0:
            gt = int(np.sum(bq - matrix[x] > tie_eps))
            lt = int(np.sum(matrix[x] - bq > tie_eps))
        else:
            gt = int(np.sum(bq > matrix[x]))
            lt = int(np.sum(bq < matrix[x]))
        if gt > lt:
            wins += 1
    return wins


def score(snapshot: OpinionSnapshot, spec: ScoreSpec, tie_eps: float = 0.0) -> float:
    """Evaluate one voting score for the spec's target candidate."""
    spec.validate_for(snapshot.r)
    mat = snapshot.matrix
    if spec.kind == "cumulative":
        return float(mat[spec.target].sum())
    if spec.kind == "copeland":
        return float(copeland_wins(mat, spec.target, tie_eps))
    return float(_rank_contributions(mat, spec, tie_eps).sum())


def all_candidate_scores(snapshot: OpinionSnapshot, spec: ScoreSpec,
                         tie_eps: float = 0.0) -> np.ndarray:
    """The spec's score kind evaluated for every candidate in turn."""
    vals = np.zeros(snapshot.r)
    for q in range(snapshot.r):
        vals[q] = score(snapshot, ScoreSpec(spec.kind, q, spec.p, spec.omega), tie_eps)
    return vals


def winner_check(snapshot: OpinionSnapshot, spec: ScoreSpec, tie_eps: float = 0.0) -> bool:
    """True iff the target's score strictly exceeds every other candidate's
    under the same score kind; a tie is not a win."""
    vals = all_candidate_scores(snapshot, spec, tie_eps)
    others = np.delete(vals, spec.target)
    if others.size == 0:
        return True
    return bool(vals[spec.target] > others.max())


def gamma_margins(matrix: np.ndarray, q: int) -> np.ndarray:
    """Per-node minimum opinion gap between the target and any other
    candidate; 0 means some competitor ties exactly."""
    others = np.delete(matrix, q, axis=0)
    if others.shape[0] == 0:
        return np.full(matrix.shape[1], np.inf)
    return np.abs(others - matrix[q]).min(axis=0)


def mu_margin(matrix: np.ndarray, q: int) -> float:
    """Minimum normalized majority margin of the target across one-on-one
    contests: min_x |#{v: b_q > b_x} - #{v: b_q < b_x}| / n."""
    n = matrix.shape[1]
    best = np.inf
    for x in range(matrix.shape[0]):
        if x == q:
            continue
        gt = int(np.sum(matrix[q] > matrix[x]))
        lt = int(np.sum(matrix[q] < matrix[x]))
        best = min(best, abs(gt - lt) / n)
    return float(best) if best != np.inf else 1.0
