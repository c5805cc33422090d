"""Exact opinion propagation to a finite time horizon.

Each step applies, per node i,

    b[i] <- (1 - d[i]) * sum_j w[j->i] * b_prev[j]  +  d[i] * b0[i]

over the incoming edge lists (sparse, O(m) per step).  With all-zero
stubbornness this is a plain DeGroot averaging step; with d[i]=1 node i is
pinned to its initial opinion.  Candidates propagate independently.
"""

from __future__ import annotations

import numpy as np

from .graph import CampaignState, InfluenceGraph, SeedSet, apply_seeds


def step_arrays(graph: InfluenceGraph, q: int, b: np.ndarray, b0: np.ndarray,
                d: np.ndarray) -> np.ndarray:
    return (1.0 - d) * (graph.in_csr[q] @ b) + d * b0


def propagate_arrays(graph: InfluenceGraph, q: int, b0: np.ndarray, d: np.ndarray,
                     horizon: int, start: np.ndarray | None = None,
                     start_t: int = 0) -> np.ndarray:
    """Low-level propagation on raw arrays; returns opinions at ``horizon``."""
    b = (b0 if start is None else start).copy()
    for _ in range(horizon - start_t):
        b = step_arrays(graph, q, b, b0, d)
    return b


def step_fj(graph: InfluenceGraph, state: CampaignState) -> CampaignState:
    """Advance one campaign by a single timestep; the input is unmodified."""
    b = step_arrays(graph, state.candidate, state.b, state.b0, state.d)
    # Bypass __post_init__: range preservation holds by column-stochasticity,
    # and revalidating every step would dominate the O(m) work.
    out = CampaignState.__new__(CampaignState)
    out.candidate = state.candidate
    out.b0 = state.b0
    out.d = state.d
    b.flags.writeable = False
    out.b = b
    out.t = state.t + 1
    return out


def propagate(graph: InfluenceGraph, state: CampaignState, horizon: int) -> CampaignState:
    """Propagate to timestamp ``horizon`` (identity when already there)."""
    if horizon < state.t:
        raise ValueError(f"horizon {horizon} is before current timestamp {state.t}")
    cur = state
    for _ in range(horizon - state.t):
        cur = step_fj(graph, cur)
    return cur


def propagate_batch(graph: InfluenceGraph, q: int, B0: np.ndarray, D: np.ndarray,
                    horizon: int) -> np.ndarray:
    """Propagate many opinion columns of one candidate at once.

    ``B0`` and ``D`` are (n, c) with one scenario per column; returns the
    (n, c) opinions at the horizon.  Used by greedy selection to evaluate a
    whole batch of candidate seeds with dense matvecs.
    """
    B = B0.copy()
    A = graph.in_csr[q]
    for _ in range(horizon):
        B = (1.0 - D) * (A @ B) + D * B0
    return B


def snapshot_matrix(graph: InfluenceGraph, campaigns, horizon: int,
                    seeds: SeedSet | None = None) -> np.ndarray:
    """(r, n) opinions of all candidates at ``horizon``, with the target's
    seeds (if any) applied before propagation."""
    rows = []
    for state in campaigns:
        st = state
        if seeds is not None and state.candidate == seeds.candidate:
            st = apply_seeds(st, seeds)
        rows.append(propagate(graph, st, horizon).b)
    return np.vstack(rows)


def convergence_profile(graph: InfluenceGraph, state: CampaignState, max_t: int,
                        delta_pcts) -> np.ndarray:
    """Fraction of nodes still moving, per timestep and per tolerance.

    Entry [t-1, j] is the fraction of nodes v with
    ``|b_t(v) - b_{t-1}(v)| > (delta_j / 100) * b_{t-1}(v)``.
    A node with b_{t-1}=0 counts as changed iff b_t > 0 (the threshold is 0),
    except under an infinite tolerance, which never flags a node.
    """
    if max_t < 1:
        raise ValueError("max_t must be at least 1")
    deltas = np.asarray(list(delta_pcts), dtype=np.float64)
    if np.any(deltas <= 0):
        raise ValueError("tolerances must be positive")
    out = np.zeros((max_t, deltas.size))
    prev = state
    for t in range(1, max_t + 1):
        cur = step_fj(graph, prev)
        diff = np.abs(cur.b - prev.b)
        with np.errstate(invalid="ignore"):
            # inf * 0 -> nan; comparisons against nan are False, which is the
            # wanted behaviour for an infinite tolerance.
            thresh = np.outer(prev.b, deltas / 100.0)
            changed = diff[:, None] > thresh
        out[t - 1] = changed.mean(axis=0)
        prev = cur
    return out
