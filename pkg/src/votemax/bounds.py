"""Submodular lower / upper bound functions for the rank-based and Copeland
scores, built from three node sets:

* favorable:        nodes that already rank the target within the top p at
                    the horizon with no seeds placed;
* weakly favorable: nodes that prefer the target to at least one competitor
                    at the horizon with no seeds placed;
* reachable:        nodes at most t forward hops from some seed (empty for
                    the empty seed set, modular over unions).

The favorable and weakly favorable sets are seed-independent, so they are
computed once from the no-seed propagation and cached.
"""

from __future__ import annotations

import numpy as np

from . import diffusion, scores
from .graph import DataError, InfluenceGraph, ScoreSpec, SeedSet


class BoundSets:
    """Cached bound ingredients for one (instance, spec, horizon)."""

    def __init__(self, graph: InfluenceGraph, campaigns, spec: ScoreSpec, horizon: int):
        if spec.kind == "cumulative":
            raise DataError("bound functions apply to rank-based and copeland scores only")
        spec.validate_for(graph.r)
        self.graph = graph
        self.campaigns = campaigns
        self.spec = spec
        self.horizon = int(horizon)
        base = diffusion.snapshot_matrix(graph, campaigns, horizon)
        self.base_matrix = base
        q = spec.target
        self.favorable = scores.beta_ranks(base, q) <= spec.p
        if graph.r > 1:
            others = np.delete(base, q, axis=0)
            self.weakly_favorable = base[q] > others.min(axis=0)
        else:
            self.weakly_favorable = np.ones(graph.n, dtype=bool)
        self.copeland_factor = (graph.r - 1) / (graph.n // 2 + 1)
        self._reach_single: dict[int, np.ndarray] = {}

    def reach_of(self, v: int) -> np.ndarray:
        """<=t-hop reachability mask of a single node (memoized; reachability
        of a set is the union of its members' masks)."""
        if v not in self._reach_single:
            self._reach_single[v] = self.graph.reachable_within(
                self.spec.target, [v], self.horizon)
        return self._reach_single[v]

    def reachable(self, seeds) -> np.ndarray:
        mask = np.zeros(self.graph.n, dtype=bool)
        for v in seeds:
            mask |= self.reach_of(v)
        return mask

    def ub(self, seeds) -> float:
        """Upper bound from covered nodes; 'covered' means favorable or
        reachable (weakly favorable for copeland)."""
        if self.spec.kind == "copeland":
            covered = self.reachable(seeds) | self.weakly_favorable
            return self.copeland_factor * int(covered.sum())
        covered = self.reachable(seeds) | self.favorable
        return self.spec.omega_at(1) * int(covered.sum())

    def lb(self, seeds) -> float:
        """Lower bound: last-position weight times the seeded opinion mass on
        the favorable set (rank-based scores only)."""
        if self.spec.kind == "copeland":
            raise DataError("no lower bound is defined for the copeland score")
        seed_set = seeds if isinstance(seeds, SeedSet) else SeedSet(self.spec.target, tuple(seeds))
        state = self.campaigns[self.spec.target]
        from .graph import apply_seeds
        seeded = apply_seeds(state, seed_set)
        b = diffusion.propagate(self.graph, seeded, self.horizon).b
        return self.spec.omega_at(self.spec.p) * float(b[self.favorable].sum())

    def copeland_assumption_holds(self, matrix: np.ndarray) -> bool:
        """True when no node holds exactly equal opinions for two candidates
        at the horizon (the premise of the copeland upper bound)."""
        return bool(np.all(scores.gamma_margins(matrix, self.spec.target) > 0.0))


def lb_positional(graph, campaigns, spec: ScoreSpec, seeds: SeedSet, horizon: int,
                  bound_sets: BoundSets | None = None) -> float:
    bs = bound_sets or BoundSets(graph, campaigns, spec, horizon)
    return bs.lb(seeds)


def ub_positional(graph, campaigns, spec: ScoreSpec, seeds: SeedSet, horizon: int,
                  bound_sets: BoundSets | None = None) -> float:
    bs = bound_sets or BoundSets(graph, campaigns, spec, horizon)
    return bs.ub(seeds)


def ub_copeland(graph, campaigns, seeds: SeedSet, horizon: int,
                bound_sets: BoundSets | None = None) -> float:
    bs = bound_sets or BoundSets(graph, campaigns,
                                 ScoreSpec.copeland(seeds.candidate), horizon)
    return bs.ub(seeds)
