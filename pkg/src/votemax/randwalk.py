"""Reverse-random-walk estimation of horizon-t opinions.

A walk from node u follows incoming edges backwards: at node v it stops with
probability equal to v's stubbornness, otherwise it moves to an in-neighbor
sampled by influence weight, for at most t transitions.  The initial opinion
of the walk's end node is an unbiased estimate of u's opinion at the
horizon.  Walks are generated once with the empty seed set; any seed set is
then evaluated by cutting each walk at its first seed occurrence
(post-generation truncation), which changes nothing in expectation and lets
one walk pool serve every greedy round.

Storage is flat (concatenated node sequences plus offsets); the per-node
inverted index keeps only first-occurrence positions because truncation
always happens at the first occurrence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diffusion
from .graph import DataError, InfluenceGraph, ScoreSpec, SeedSet
from .selection import SelectionResult, exact_prefix_trace


# ---------------------------------------------------------------------------
# walk-count calculators (Hoeffding)
# ---------------------------------------------------------------------------

def _check_rho(rho):
    if not 0.0 < rho < 1.0:
        raise DataError("rho must lie strictly between 0 and 1")


def lambda_cumulative(delta: float, rho: float) -> int:
    """Walks per node so each opinion estimate is within delta of the truth
    with probability at least rho."""
    if delta <= 0:
        raise DataError("delta must be positive")
    _check_rho(rho)
    return math.ceil(math.log(2.0 / (1.0 - rho)) / (2.0 * delta * delta))


def lambda_rank(gamma: float, rho: float) -> int:
    """Walks per node so the node's preference position of the target is
    estimated correctly with probability at least rho, given opinion margin
    gamma."""
    if gamma <= 0:
        raise DataError("gamma must be positive (zero-margin nodes are excluded)")
    _check_rho(rho)
    return math.ceil(math.log(2.0 / (1.0 - rho)) / (2.0 * gamma * gamma))


def lambda_copeland(gamma: float, rho: float) -> int:
    """One-sided variant used for pairwise-contest estimation."""
    if gamma <= 0:
        raise DataError("gamma must be positive (zero-margin nodes are excluded)")
    _check_rho(rho)
    return math.ceil(math.log(1.0 / (1.0 - rho)) / (2.0 * gamma * gamma))


# ---------------------------------------------------------------------------
# walk generation and the store
# ---------------------------------------------------------------------------

def _rng_for(seed: int, *tags: int):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(t) for t in tags))
    return np.random.default_rng(np.random.Philox(seed=ss))


def _simulate(graph: InfluenceGraph, q: int, d: np.ndarray, horizon: int,
              starts: np.ndarray, rng_seed: int):
    """Vectorized reverse-walk simulation.  Randomness comes from one Philox
    substream per step, so runs are reproducible for a given seed regardless
    of how the walk loop is scheduled."""
    nw = starts.size
    cdf = graph.walk_cdf(q)
    indptr = graph.in_csr[q].indptr.astype(np.int64)
    indices = graph.in_csr[q].indices
    cur = starts.astype(np.int64)
    alive = np.arange(nw, dtype=np.int64)
    lengths = np.ones(nw, dtype=np.int64)
    step_nodes = []
    for step in range(1, horizon + 1):
        if alive.size == 0:
            break
        u = _rng_for(rng_seed, 1, step).random(alive.size)
        dcur = d[cur]
        cont = u >= dcur
        alive = alive[cont]
        if alive.size == 0:
            break
        # conditional on continuing, (u-d)/(1-d) is again uniform in [0,1)
        umove = (u[cont] - dcur[cont]) / (1.0 - dcur[cont])
        frm = cur[cont]
        idx = np.searchsorted(cdf, frm + umove, side="right")
        idx = np.minimum(np.maximum(idx, indptr[frm]), indptr[frm + 1] - 1)
        cur = indices[idx].astype(np.int64)
        lengths[alive] += 1
        step_nodes.append((alive, cur.astype(np.int32)))
    offsets = np.zeros(nw + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    nodes = np.empty(offsets[-1], dtype=np.int32)
    nodes[offsets[:-1]] = starts
    for s, (walk_ids, vals) in enumerate(step_nodes, start=1):
        nodes[offsets[walk_ids] + s] = vals
    return offsets, nodes


def _multi_range(starts, counts):
    """Concatenate arange(start, start+count) blocks without a Python loop."""
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    out = np.ones(total, dtype=np.int64)
    out[0] = starts[0]
    cuts = np.cumsum(counts)[:-1]
    out[cuts] = starts[1:] - (starts[:-1] + counts[:-1] - 1)
    return np.cumsum(out)


@dataclass
class WalkStore:
    """Pool of reverse walks plus the indices the greedy loops need.

    ``eff_len`` / ``end_val`` hold the current truncation state and are the
    only mutable pieces; the node sequences themselves are never rewritten,
    so pure queries against arbitrary seed sets stay valid after a greedy
    run ends (call :meth:`reset` to discard truncations).
    """

    graph: InfluenceGraph
    candidate: int
    horizon: int
    b0: np.ndarray               # no-seed initial opinions of the campaign
    starts: np.ndarray           # start node of each walk
    offsets: np.ndarray          # CSR over walks into ``nodes``
    nodes: np.ndarray            # concatenated node sequences
    lam: np.ndarray              # walks per start node (0 for unsampled nodes)
    weight: np.ndarray           # per-walk weight in score estimates
    sampled: bool                # True for uniformly sampled (sketch) starts
    eff_len: np.ndarray = field(init=False)
    end_val: np.ndarray = field(init=False)

    def __post_init__(self):
        nw = self.starts.size
        n = self.graph.n
        lengths = np.diff(self.offsets)
        walk_of = np.repeat(np.arange(nw, dtype=np.int64), lengths)
        pos = np.arange(self.nodes.size, dtype=np.int64) - self.offsets[walk_of]
        order = np.lexsort((pos, self.nodes, walk_of))
        w_s, n_s, p_s = walk_of[order], self.nodes[order], pos[order]
        first = np.ones(order.size, dtype=bool)
        first[1:] = (w_s[1:] != w_s[:-1]) | (n_s[1:] != n_s[:-1])
        fw, fn, fp = w_s[first], n_s[first], p_s[first]

        by_node = np.lexsort((fw, fn))
        self.inv_walk = fw[by_node].astype(np.int64)
        self.inv_pos = fp[by_node].astype(np.int32)
        self.inv_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(fn[by_node], minlength=n), out=self.inv_ptr[1:])

        # the same first-occurrence entries grouped by walk (fw is already
        # sorted by walk, then node)
        self.went_node = fn.astype(np.int64)
        self.went_pos = fp.astype(np.int32)
        self.went_ptr = np.zeros(nw + 1, dtype=np.int64)
        np.cumsum(np.bincount(fw, minlength=nw), out=self.went_ptr[1:])

        by_start = np.argsort(self.starts, kind="stable")
        self.start_walks = by_start.astype(np.int64)
        self.start_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.starts, minlength=n), out=self.start_ptr[1:])

        self.reset()

    # -- state ---------------------------------------------------------------

    def reset(self):
        """Restore the untruncated (empty seed set) state."""
        self.eff_len = np.diff(self.offsets).astype(np.int64)
        self.end_val = self.b0[self.nodes[self.offsets[1:] - 1]].copy()

    @property
    def n_walks(self) -> int:
        return self.starts.size

    def walks_from(self, v: int) -> np.ndarray:
        return self.start_walks[self.start_ptr[v]:self.start_ptr[v + 1]]

    def occurrences(self, v: int):
        """(walk ids, first positions) of node v across the pool."""
        lo, hi = self.inv_ptr[v], self.inv_ptr[v + 1]
        return self.inv_walk[lo:hi], self.inv_pos[lo:hi]

    def truncate_at(self, v: int):
        """Cut every walk containing v at v's first occurrence (in place)."""
        walks, pos = self.occurrences(v)
        active = pos < self.eff_len[walks]
        walks, pos = walks[active], pos[active]
        self.eff_len[walks] = pos + 1
        self.end_val[walks] = 1.0

    def node_estimates(self) -> np.ndarray:
        """Per-node opinion estimates under the current truncation state
        (nan for nodes without walks)."""
        n = self.graph.n
        acc = np.zeros(n)
        np.add.at(acc, self.starts, self.end_val)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.lam > 0, acc / self.lam, np.nan)

    # -- pure queries (independent of truncation state) -----------------------

    def end_values_under(self, seeds) -> np.ndarray:
        """Per-walk end-node initial opinions after truncating the original
        walks at the first occurrence of any seed."""
        vals = self.b0[self.nodes[self.offsets[1:] - 1]].copy()
        lengths = np.diff(self.offsets)
        cut = np.full(self.n_walks, np.iinfo(np.int64).max)
        for s in seeds:
            walks, pos = self.occurrences(int(s))
            np.minimum.at(cut, walks, pos.astype(np.int64))
        # first occurrences include the final position, so a walk that merely
        # ends at a seed is covered too
        vals[cut < lengths] = 1.0
        return vals


def generate_walks(graph: InfluenceGraph, campaign, horizon: int, lambdas,
                   rng_seed: int = 0) -> WalkStore:
    """Generate ``lambdas[v]`` t-step reverse walks from every node v with the
    empty seed set (termination follows the campaign's stubbornness)."""
    lam = np.broadcast_to(np.asarray(lambdas, dtype=np.int64), (graph.n,)).copy()
    if np.any(lam < 1):
        raise DataError("need at least one walk per node")
    starts = np.repeat(np.arange(graph.n, dtype=np.int32), lam)
    offsets, nodes = _simulate(graph, campaign.candidate, campaign.d, horizon,
                               starts, rng_seed)
    weight = 1.0 / lam[starts.astype(np.int64)]
    return WalkStore(graph=graph, candidate=campaign.candidate, horizon=horizon,
                     b0=campaign.b0, starts=starts.astype(np.int64),
                     offsets=offsets, nodes=nodes, lam=lam, weight=weight,
                     sampled=False)


def estimate_opinion(store: WalkStore, seeds, v: int) -> float:
    """Mean truncated-end opinion over v's walks; unbiased for v's opinion at
    the store's horizon under the given seed set."""
    walks = store.walks_from(v)
    if walks.size == 0:
        raise DataError(f"node {v} has no walks in the store")
    seed_nodes = set(int(s) for s in seeds)
    vals = store.end_values_under(seed_nodes)
    return float(vals[walks].mean())


# ---------------------------------------------------------------------------
# greedy over the store
# ---------------------------------------------------------------------------

def _initial_gains(store: WalkStore) -> np.ndarray:
    """Marginal cumulative-score gain of every node at the empty seed set:
    each walk a node appears in contributes (1 - end opinion) times the
    walk's weight."""
    gains = np.zeros(store.graph.n)
    contrib = (1.0 - store.end_val[store.inv_walk]) * store.weight[store.inv_walk]
    np.add.at(gains, np.repeat(np.arange(store.graph.n), np.diff(store.inv_ptr)),
              contrib)
    return gains


def _store_greedy_cumulative(store: WalkStore, k: int):
    """k rounds of estimated-gain argmax with incremental gain maintenance;
    equivalent to rescanning the whole pool each round."""
    store.reset()
    gains = _initial_gains(store)
    selectable = np.ones(store.graph.n, dtype=bool)
    if store.sampled:
        base_est = float(store.weight @ store.end_val)
    else:
        base_est = float(store.node_estimates().sum())
    chosen: list[int] = []
    est_trace: list[float] = []
    current = base_est
    for _ in range(k):
        masked = np.where(selectable, gains, -np.inf)
        u = int(np.argmax(masked))
        chosen.append(u)
        current += float(gains[u])
        est_trace.append(current)
        selectable[u] = False

        walks, pos = store.occurrences(u)
        active = pos < store.eff_len[walks]
        walks, pos = walks[active], pos[active]
        upd = store.end_val[walks] < 1.0
        w_upd = walks[upd]
        if w_upd.size:
            # remove these walks' contribution from every node in their
            # still-active prefix (their end value becomes 1)
            lo = store.went_ptr[w_upd]
            cnt = store.went_ptr[w_upd + 1] - lo
            flat = _multi_range(lo, cnt)
            wrep = np.repeat(w_upd, cnt)
            keep = store.went_pos[flat] < store.eff_len[wrep]
            delta = (1.0 - store.end_val[wrep[keep]]) * store.weight[wrep[keep]]
            np.add.at(gains, store.went_node[flat[keep]], -delta)
        store.eff_len[walks] = pos + 1
        store.end_val[walks] = 1.0
    return chosen, est_trace, base_est


def _rank_contrib_nodes(est: np.ndarray, others: np.ndarray, spec: ScoreSpec) -> np.ndarray:
    """Per-node score contribution from estimated target opinions and exact
    competitor opinions."""
    beta = np.ones(est.size, dtype=np.int64)
    for row in others:
        beta += row >= est
    within = beta <= spec.p
    if spec.kind == "positional-p-approval":
        om = np.asarray(spec.omega)
        return np.where(within, om[np.minimum(beta, len(om)) - 1], 0.0)
    return within.astype(np.float64)


def _store_greedy_rank(store: WalkStore, others: np.ndarray, spec: ScoreSpec, k: int):
    """Greedy for the rank-based and Copeland scores over a per-node store.

    Each round re-evaluates, for every still-selectable node, only the walks
    that node appears in (via the inverted index): truncating them lifts the
    estimates of their start nodes, and the voting contribution of those
    start nodes is recomputed against the exact competitor opinions.
    """
    store.reset()
    n = store.graph.n
    copeland = spec.kind == "copeland"
    selectable = np.ones(n, dtype=bool)
    chosen: list[int] = []
    est_trace: list[float] = []

    inv_lam = np.where(store.lam > 0, 1.0 / np.maximum(store.lam, 1), 0.0)
    for _ in range(k):
        est = store.node_estimates()
        est = np.where(np.isnan(est), 0.0, est)
        if copeland:
            gt = (est[None, :] > others).sum(axis=1)
            lt = (est[None, :] < others).sum(axis=1)
            current = float((gt > lt).sum())
        else:
            contrib = _rank_contrib_nodes(est, others, spec)
            current = float(contrib.sum())

        best_u, best_gain = -1, -np.inf
        for u in range(n):
            if not selectable[u]:
                continue
            walks, pos = store.occurrences(u)
            active = (pos < store.eff_len[walks]) & (store.end_val[walks] < 1.0)
            walks = walks[active]
            if walks.size == 0:
                gain = 0.0
            else:
                dstarts = store.starts[walks]
                deltas = (1.0 - store.end_val[walks]) * inv_lam[dstarts]
                touched, inverse = np.unique(dstarts, return_inverse=True)
                dsum = np.zeros(touched.size)
                np.add.at(dsum, inverse, deltas)
                new_est = est[touched] + dsum
                if copeland:
                    sub = others[:, touched]
                    dgt = (new_est[None, :] > sub).sum(axis=1) - (est[touched][None, :] > sub).sum(axis=1)
                    dlt = (new_est[None, :] < sub).sum(axis=1) - (est[touched][None, :] < sub).sum(axis=1)
                    gain = float(((gt + dgt) > (lt + dlt)).sum()) - current
                else:
                    new_c = _rank_contrib_nodes(new_est, others[:, touched], spec)
                    gain = float(new_c.sum() - contrib[touched].sum())
            if gain > best_gain:
                best_u, best_gain = u, gain
        chosen.append(best_u)
        est_trace.append(current + best_gain)
        selectable[best_u] = False
        store.truncate_at(best_u)
    return chosen, est_trace


def rw_greedy(graph: InfluenceGraph, campaigns, spec: ScoreSpec, k: int,
              horizon: int, delta: float = 0.1, rho: float = 0.9,
              rng_seed: int = 0, lambdas=None, alpha: int | None = None,
              gamma_floor: float = 1e-3, lambda_cap: int | None = None,
              store: WalkStore | None = None) -> SelectionResult:
    """Greedy seed selection on walk estimates.

    Walk counts come from the calculator matching the score kind: the
    Hoeffding count for cumulative, the margin-based counts (with the greedy
    margin heuristic) for the rank-based and Copeland scores.  Nodes whose
    estimated margin falls below ``gamma_floor`` get the floor's walk count,
    capped at ``lambda_cap`` (default 10x the cumulative count at delta=0.05).
    """
    if k > graph.n:
        raise DataError(f"budget k={k} exceeds node count n={graph.n}")
    spec.validate_for(graph.r)
    q = spec.target
    provenance: dict = {"delta": delta, "rho": rho}
    if store is None:
        if lambdas is None:
            if spec.kind == "cumulative":
                lambdas = lambda_cumulative(delta, rho)
                provenance["lambda"] = int(lambdas)
            else:
                gam = estimate_gamma_star(graph, campaigns, q, k, horizon,
                                          alpha=alpha, rho=rho, delta=delta,
                                          rng_seed=rng_seed + 1)
                calc = lambda_copeland if spec.kind == "copeland" else lambda_rank
                cap = lambda_cap or 10 * lambda_cumulative(0.05, rho)
                lambdas = np.minimum(
                    [calc(max(g, gamma_floor), rho) for g in gam], cap).astype(np.int64)
                provenance["lambda"] = [int(x) for x in lambdas]
                provenance["gamma_floor"] = gamma_floor
        store = generate_walks(graph, campaigns[q], horizon, lambdas, rng_seed)
    provenance["n_walks"] = int(store.n_walks)

    if spec.kind == "cumulative":
        chosen, est_trace, base_est = _store_greedy_cumulative(store, k)
    else:
        others = _other_opinions(graph, campaigns, q, horizon)
        chosen, est_trace = _store_greedy_rank(store, others, spec, k)

    base, trace = exact_prefix_trace(graph, campaigns, spec, horizon, chosen)
    return SelectionResult(SeedSet(q, tuple(chosen)), trace, base,
                           extras={"estimated_trace": est_trace,
                                   "provenance": provenance})


def _other_opinions(graph, campaigns, q, horizon) -> np.ndarray:
    """Exact horizon opinions of every non-target candidate (computed once;
    the target's seeds never touch other campaigns)."""
    rows = [diffusion.propagate(graph, campaigns[x], horizon).b
            for x in range(graph.r) if x != q]
    return np.vstack(rows) if rows else np.zeros((0, graph.n))


# ---------------------------------------------------------------------------
# margin heuristics
# ---------------------------------------------------------------------------

def estimate_gamma_star(graph: InfluenceGraph, campaigns, target: int, k: int,
                        horizon: int, alpha: int | None = None, rho: float = 0.9,
                        delta: float = 0.1, rng_seed: int = 0) -> np.ndarray:
    """Per-node pessimistic opinion margin over seed sets up to size k.

    For each node, greedily add the seed that shrinks the node's estimated
    margin to the nearest competitor, stopping at k seeds or when no
    candidate shrinks it further; the reached margin approximates the
    worst case over the greedy trajectory.
    """
    if alpha is None:
        alpha = lambda_cumulative(delta, rho)
    store = generate_walks(graph, campaigns[target], horizon, alpha, rng_seed)
    others = _other_opinions(graph, campaigns, target, horizon)
    out = np.empty(graph.n)
    for v in range(graph.n):
        out[v] = _gamma_greedy_node(store, others[:, v], v, k)
    return out


def _gamma_greedy_node(store: WalkStore, other_vals: np.ndarray, v: int, k: int) -> float:
    walks = store.walks_from(v)
    seqs = [store.nodes[store.offsets[w]:store.offsets[w + 1]] for w in walks]
    vals = np.array([store.b0[s[-1]] for s in seqs])
    cuts = [len(s) for s in seqs]

    def margin(est):
        if other_vals.size == 0:
            return np.inf
        return float(np.abs(other_vals - est).min())

    est = float(vals.mean())
    best = margin(est)
    seeds: set[int] = set()
    for _ in range(k):
        cand_best, cand_margin, cand_state = -1, best, None
        candidates = sorted({int(x) for s, c in zip(seqs, cuts) for x in s[:c]} - seeds)
        for u in candidates:
            new_vals = vals.copy()
            new_cuts = list(cuts)
            for i, s in enumerate(seqs):
                hit = np.nonzero(s[:cuts[i]] == u)[0]
                if hit.size:
                    new_cuts[i] = int(hit[0]) + 1
                    new_vals[i] = 1.0
            m = margin(float(new_vals.mean()))
            if m < cand_margin:
                cand_best, cand_margin, cand_state = u, m, (new_vals, new_cuts)
        if cand_best < 0:
            break
        seeds.add(cand_best)
        vals, cuts = cand_state
        best = cand_margin
    return best
