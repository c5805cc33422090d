"""Sketch-based estimation: reverse walks from uniformly sampled start nodes.

A sketch is a single reverse walk from a start node drawn uniformly at
random with replacement; theta sketches estimate population-level scores
(the cumulative estimate is n/theta times the sum of truncated end-node
opinions).  The sample-size calculators follow the concentration analysis:
a closed form for the cumulative score and feasibility scans over theta for
the rank-based and Copeland scores.  All scan inequalities are evaluated in
the log domain because rho**theta underflows double precision quickly.
"""

from __future__ import annotations

import math

import numpy as np

from .graph import DataError, InfluenceGraph, ScoreSpec, SeedSet
from .randwalk import (WalkStore, _other_opinions, _rng_for, _simulate,
                       _store_greedy_cumulative, generate_walks,
                       lambda_cumulative)
from .selection import SelectionResult, baseline_select, exact_prefix_trace

ONE_MINUS_INV_E = 1.0 - 1.0 / math.e
THETA_SCAN_CAP = 2 ** 40


class InfeasibleTheta(DataError):
    """No sketch count satisfies the requested accuracy inequality."""


def _log_comb(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


# ---------------------------------------------------------------------------
# sketch generation and the cumulative estimate
# ---------------------------------------------------------------------------

def generate_sketches(graph: InfluenceGraph, campaign, horizon: int, theta: int,
                      rng_seed: int = 0) -> WalkStore:
    """theta reverse walks, each from an independently and uniformly sampled
    start node (with replacement), one walk per sample."""
    if theta < 1:
        raise DataError("theta must be at least 1")
    starts = _rng_for(rng_seed, 2).integers(0, graph.n, size=theta).astype(np.int32)
    offsets, nodes = _simulate(graph, campaign.candidate, campaign.d, horizon,
                               starts, rng_seed)
    lam = np.bincount(starts, minlength=graph.n).astype(np.int64)
    weight = np.full(theta, graph.n / theta)
    return WalkStore(graph=graph, candidate=campaign.candidate, horizon=horizon,
                     b0=campaign.b0, starts=starts.astype(np.int64),
                     offsets=offsets, nodes=nodes, lam=lam, weight=weight,
                     sampled=True)


def estimate_cumulative(store: WalkStore, seeds) -> float:
    """n/theta times the summed truncated end-node opinions."""
    seed_nodes = set(int(s) for s in seeds)
    return float(store.weight @ store.end_values_under(seed_nodes))


# ---------------------------------------------------------------------------
# sample-size calculators
# ---------------------------------------------------------------------------

def theta_cumulative(n: int, k: int, opt_lb: float, epsilon: float, l: float) -> int:
    """Sketch count for a (1 - 1/e - epsilon)-approximate cumulative greedy
    with probability at least 1 - n^-l; monotone decreasing in OPT, so any
    lower bound on OPT is valid."""
    if opt_lb <= 0:
        raise DataError("opt_lb must be positive")
    if epsilon <= 0:
        raise DataError("epsilon must be positive")
    log_term = math.log(2.0) + l * math.log(n)
    bracket = (ONE_MINUS_INV_E * math.sqrt(log_term)
               + math.sqrt(ONE_MINUS_INV_E * (log_term + _log_comb(n, k))))
    return math.ceil(2.0 * n / (opt_lb * epsilon * epsilon) * bracket * bracket)


def _scan_smallest_theta(log_g, log_target: float, cap: int = THETA_SCAN_CAP):
    """Smallest integer theta >= 1 with log_g(theta) >= log_target, or None.

    log_g rises to a single peak and then falls (or is monotone in the
    degenerate cases), so doubling finds either a feasible point or the
    falling branch, and bisection pins the first crossing.
    """
    def bisect_first(lo, hi):
        # predicate is monotone below the first crossing; g(lo) < target <= g(hi)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if log_g(mid) >= log_target:
                hi = mid
            else:
                lo = mid
        return hi

    if log_g(1) >= log_target:
        return 1
    hi = 1
    while hi <= cap:
        g_hi, g_2hi = log_g(hi), log_g(2 * hi)
        if g_2hi >= log_target:
            return bisect_first(hi, 2 * hi)
        if g_2hi <= g_hi:
            peak = _ternary_argmax(log_g, 1, 2 * hi)
            if log_g(peak) >= log_target:
                return bisect_first(1, peak)
            return None
        hi *= 2
    return None


def _ternary_argmax(f, lo: int, hi: int) -> int:
    while hi - lo > 2:
        m1 = lo + (hi - lo) // 3
        m2 = hi - (hi - lo) // 3
        if f(m1) < f(m2):
            lo = m1 + 1
        else:
            hi = m2
    return max(range(lo, hi + 1), key=f)


def _log1m_exp(log_x: float) -> float:
    """log(1 - exp(log_x)) for log_x <= 0; -inf when exp(log_x) >= 1."""
    if log_x >= 0.0:
        return -np.inf
    if log_x > -0.693:
        return math.log(-math.expm1(log_x))
    return math.log1p(-math.exp(log_x))


def theta_scan_rank(n: int, k: int, r: int, opt_lb: float, epsilon: float,
                    l: float, rho: float) -> int:
    """Smallest theta satisfying the rank-score accuracy inequality
    rho^theta * (1 - 2 exp(-eps^2 OPT theta / ((8+2eps) n))) >= 1 - 1/(C(n,k) n^l).

    Raises InfeasibleTheta when the left side never reaches the target.
    """
    if opt_lb <= 0 or epsilon <= 0:
        raise DataError("opt_lb and epsilon must be positive")
    if not 0.0 < rho <= 1.0:
        raise DataError("rho must lie in (0, 1]")
    c = epsilon * epsilon * opt_lb / ((8.0 + 2.0 * epsilon) * n)
    log_rho = math.log(rho)
    log_target = _log1m_exp(-(_log_comb(n, k) + l * math.log(n)))

    def log_g(theta):
        return theta * log_rho + _log1m_exp(math.log(2.0) - c * theta)

    theta = _scan_smallest_theta(log_g, log_target)
    if theta is None:
        raise InfeasibleTheta("no sketch count satisfies the rank-score inequality")
    return theta


def theta_scan_copeland(n: int, k: int, r: int, mu_star: float, l: float,
                        rho: float) -> int:
    """Smallest theta satisfying the Copeland accuracy inequality
    rho^theta * (1 - (1-mu^2)^(theta/2)) >= 1 - 1/(C(n,k) n^l (r-1))."""
    if not 0.0 <= mu_star <= 1.0:
        raise DataError("mu_star must lie in [0, 1]")
    if not 0.0 < rho <= 1.0:
        raise DataError("rho must lie in (0, 1]")
    if r < 2:
        raise DataError("copeland needs at least two candidates")
    log_rho = math.log(rho)
    log_target = _log1m_exp(-(_log_comb(n, k) + l * math.log(n) + math.log(r - 1)))
    if mu_star >= 1.0:
        log_decay = -np.inf
    elif mu_star == 0.0:
        log_decay = 0.0
    else:
        log_decay = math.log1p(-mu_star * mu_star)

    def log_g(theta):
        return theta * log_rho + _log1m_exp(0.5 * theta * log_decay)

    theta = _scan_smallest_theta(log_g, log_target)
    if theta is None:
        raise InfeasibleTheta("no sketch count satisfies the copeland inequality")
    return theta


# ---------------------------------------------------------------------------
# OPT lower bound and margin heuristics
# ---------------------------------------------------------------------------

def _sketch_score_estimate(store: WalkStore, others_at_start: np.ndarray,
                           spec: ScoreSpec, end_vals: np.ndarray) -> float:
    """Estimated score from per-sketch end values (cumulative or rank-based)."""
    if spec.kind == "cumulative":
        return float(store.weight @ end_vals)
    contrib = _sketch_rank_contrib(end_vals, others_at_start, spec)
    return float(store.weight @ contrib)


def _sketch_rank_contrib(end_vals: np.ndarray, others_at_start: np.ndarray,
                         spec: ScoreSpec) -> np.ndarray:
    beta = np.ones(end_vals.size, dtype=np.int64)
    for row in others_at_start:
        beta += row >= end_vals
    within = beta <= spec.p
    if spec.kind == "positional-p-approval":
        om = np.asarray(spec.omega)
        return np.where(within, om[np.minimum(beta, len(om)) - 1], 0.0)
    return within.astype(np.float64)


def estimate_opt_lower_bound(graph: InfluenceGraph, campaigns, spec: ScoreSpec,
                             k: int, horizon: int, rng_seed: int = 0,
                             significance: float = 0.01) -> float:
    """Halving scan for a statistically supported lower bound on the optimal
    size-k score.

    At probe x the degree-centrality top-k set (cheap and feasible, so its
    score lower-bounds OPT) is evaluated on a fresh sketch pool, and x is
    accepted when the estimate's lower confidence bound at the given
    significance is at least x.  Falls back to k when nothing is accepted
    (for the cumulative score, k seeds alone guarantee OPT >= k).
    """
    if spec.kind == "copeland":
        raise DataError("the copeland calculator takes a margin, not an OPT bound")
    n = graph.n
    xs: list[float] = []
    x = n / 2.0
    while x > k:
        xs.append(x)
        x /= 2.0
    xs.append(float(k))
    cheap = baseline_select(graph, "degree", k, candidate=spec.target)
    others = _other_opinions(graph, campaigns, spec.target, horizon)
    for i, probe in enumerate(xs):
        if probe <= 0:
            break
        theta = math.ceil(2.0 * n / (probe * 0.25 ** 2) * math.log(2.0 * n))
        store = generate_sketches(graph, campaigns[spec.target], horizon, theta,
                                  rng_seed=rng_seed * 1009 + i)
        end_vals = store.end_values_under(set(cheap.nodes))
        est = _sketch_score_estimate(store, others[:, store.starts], spec, end_vals)
        if est <= probe:
            continue
        beta = est / probe - 1.0
        # upper-tail exponent at the hypothesis boundary F = probe
        log_tail = -(beta * beta) / (2.0 + 2.0 * beta / 3.0) * theta * probe / n
        if log_tail <= math.log(significance):
            return float(probe)
    return float(k)


def estimate_mu_star(graph: InfluenceGraph, campaigns, target: int, k: int,
                     horizon: int, alpha: int | None = None, rho: float = 0.9,
                     delta: float = 0.1, rng_seed: int = 0) -> float:
    """Pessimistic one-on-one majority margin over seed sets up to size k.

    Mirrors the per-node margin heuristic: starting from the empty set,
    repeatedly add the node that minimizes the estimated margin, stopping at
    k seeds or when no candidate decreases it."""
    if alpha is None:
        alpha = lambda_cumulative(delta, rho)
    store = generate_walks(graph, campaigns[target], horizon, alpha, rng_seed)
    others = _other_opinions(graph, campaigns, target, horizon)
    n = graph.n

    def margin_from(est):
        if others.shape[0] == 0:
            return 1.0
        gt = (est[None, :] > others).sum(axis=1)
        lt = (est[None, :] < others).sum(axis=1)
        return float(np.abs(gt - lt).min() / n)

    est = store.node_estimates()
    best = margin_from(est)
    chosen: set[int] = set()
    for _ in range(k):
        cand, cand_margin = -1, best
        for u in range(n):
            if u in chosen:
                continue
            walks, pos = store.occurrences(u)
            active = (pos < store.eff_len[walks]) & (store.end_val[walks] < 1.0)
            walks = walks[active]
            new_est = est.copy()
            if walks.size:
                # u sits at position 0 of its own walks, so its estimate
                # rises to exactly 1 through the same update
                dstarts = store.starts[walks]
                deltas = (1.0 - store.end_val[walks]) / store.lam[dstarts]
                np.add.at(new_est, dstarts, deltas)
            m = margin_from(new_est)
            if m < cand_margin:
                cand, cand_margin = u, m
        if cand < 0:
            break
        chosen.add(cand)
        store.truncate_at(cand)
        est = store.node_estimates()
        best = cand_margin
    return best


# ---------------------------------------------------------------------------
# sketch-based greedy
# ---------------------------------------------------------------------------

def _store_greedy_rank_rs(store: WalkStore, others: np.ndarray, spec: ScoreSpec,
                          k: int):
    """Greedy over sampled sketches for the rank-based and Copeland scores.

    Every sketch contributes through its own truncated end value compared
    against the exact competitor opinions at its start node; the majority
    rule for Copeland is taken over the theta samples.
    """
    store.reset()
    n = store.graph.n
    copeland = spec.kind == "copeland"
    ost = others[:, store.starts] if others.shape[0] else np.zeros((0, store.n_walks))
    scale = store.weight[0] if store.n_walks else 1.0   # n / theta
    selectable = np.ones(n, dtype=bool)
    chosen: list[int] = []
    est_trace: list[float] = []

    for _ in range(k):
        ev = store.end_val
        if copeland:
            gt = (ev[None, :] > ost).sum(axis=1)
            lt = (ev[None, :] < ost).sum(axis=1)
            current = float((gt > lt).sum())
        else:
            contrib = _sketch_rank_contrib(ev, ost, spec)
            current = scale * float(contrib.sum())

        best_u, best_gain = -1, -np.inf
        for u in range(n):
            if not selectable[u]:
                continue
            walks, pos = store.occurrences(u)
            active = (pos < store.eff_len[walks]) & (store.end_val[walks] < 1.0)
            walks = walks[active]
            if walks.size == 0:
                gain = 0.0
            elif copeland:
                sub = ost[:, walks] if ost.size else np.zeros((0, walks.size))
                old_e = store.end_val[walks]
                dgt = (1.0 > sub).sum(axis=1) - (old_e[None, :] > sub).sum(axis=1)
                dlt = (1.0 < sub).sum(axis=1) - (old_e[None, :] < sub).sum(axis=1)
                gain = float(((gt + dgt) > (lt + dlt)).sum()) - current
            else:
                sub = ost[:, walks] if ost.size else np.zeros((0, walks.size))
                new_c = _sketch_rank_contrib(np.ones(walks.size), sub, spec)
                old_c = _sketch_rank_contrib(store.end_val[walks], sub, spec)
                gain = scale * float(new_c.sum() - old_c.sum())
            if gain > best_gain:
                best_u, best_gain = u, gain
        chosen.append(best_u)
        est_trace.append(current + best_gain)
        selectable[best_u] = False
        store.truncate_at(best_u)
    return chosen, est_trace


def rs_greedy(graph: InfluenceGraph, campaigns, spec: ScoreSpec, k: int,
              horizon: int, theta: int | None = None, rng_seed: int = 0,
              epsilon: float = 0.1, l: float = 1.0, rho: float = 0.9,
              theta_mode: str = "formula",
              store: WalkStore | None = None) -> SelectionResult:
    """Greedy seed selection over estimated scores from a sketch pool."""
    if k > graph.n:
        raise DataError(f"budget k={k} exceeds node count n={graph.n}")
    spec.validate_for(graph.r)
    q = spec.target
    provenance: dict = {"epsilon": epsilon, "l": l, "rng_seed": rng_seed}
    if store is None:
        if theta is None:
            theta, provenance = choose_theta(graph, campaigns, spec, k, horizon,
                                             epsilon=epsilon, l=l, rho=rho,
                                             mode=theta_mode, rng_seed=rng_seed)
        else:
            provenance["mode"] = "explicit"
        store = generate_sketches(graph, campaigns[q], horizon, int(theta), rng_seed)
    provenance["theta"] = int(store.n_walks)

    if spec.kind == "cumulative":
        chosen, est_trace, _ = _store_greedy_cumulative(store, k)
    else:
        others = _other_opinions(graph, campaigns, q, horizon)
        chosen, est_trace = _store_greedy_rank_rs(store, others, spec, k)
    base, trace = exact_prefix_trace(graph, campaigns, spec, horizon, chosen)
    return SelectionResult(SeedSet(q, tuple(chosen)), trace, base,
                           extras={"estimated_trace": est_trace,
                                   "provenance": provenance})


def choose_theta(graph, campaigns, spec: ScoreSpec, k: int, horizon: int,
                 epsilon: float = 0.1, l: float = 1.0, rho: float = 0.9,
                 mode: str = "formula", rng_seed: int = 0) -> tuple[int, dict]:
    """Pick a sketch count with its provenance record.

    ``formula`` is the closed form (cumulative only); ``scan`` is the
    feasibility scan (rank-based and copeland); ``heuristic`` is the doubling
    convergence probe and works for every kind.
    """
    prov: dict = {"mode": mode, "epsilon": epsilon, "l": l, "rho": rho}
    if mode == "heuristic":
        theta = heuristic_theta(graph, campaigns, spec, horizon, rng_seed)
        prov["theta"] = theta
        return theta, prov
    if spec.kind == "cumulative":
        if mode not in ("formula",):
            raise DataError("cumulative theta comes from the closed form (or heuristic)")
        opt_lb = estimate_opt_lower_bound(graph, campaigns, spec, k, horizon, rng_seed)
        theta = theta_cumulative(graph.n, k, opt_lb, epsilon, l)
        prov.update({"opt_lb": opt_lb, "theta": theta})
        return theta, prov
    if mode not in ("scan", "formula"):
        raise DataError(f"unknown theta mode {mode!r}")
    if spec.kind == "copeland":
        mu = estimate_mu_star(graph, campaigns, spec.target, k, horizon,
                              rho=rho, rng_seed=rng_seed)
        theta = theta_scan_copeland(graph.n, k, graph.r, mu, l, rho)
        prov.update({"mu_star": mu, "theta": theta})
        return theta, prov
    opt_lb = estimate_opt_lower_bound(graph, campaigns, spec, k, horizon, rng_seed)
    theta = theta_scan_rank(graph.n, k, graph.r, opt_lb, epsilon, l, rho)
    prov.update({"opt_lb": opt_lb, "theta": theta})
    return theta, prov


def heuristic_theta(graph: InfluenceGraph, campaigns, spec: ScoreSpec,
                    horizon: int, rng_seed: int = 0, start_exp: int = 10,
                    max_exp: int = 24, rel_tol: float = 0.01,
                    probe_k: int | None = None) -> int:
    """Doubling search for the sketch count at which the achieved true score
    stops moving (less than 1% change between consecutive counts).

    The probe runs at a fixed budget (100 seeds, capped to the instance), and
    the returned count is reusable across budgets and horizons.
    """
    from .selection import ExactEvaluator
    if probe_k is None:
        probe_k = min(100, graph.n)
    exact = ExactEvaluator(graph, campaigns, spec, horizon)
    theta_prev = 2 ** start_exp
    res = rs_greedy(graph, campaigns, spec, probe_k, horizon, theta=theta_prev,
                    rng_seed=rng_seed)
    score_prev = exact.value(res.seeds.nodes)
    for exp in range(start_exp + 1, max_exp + 1):
        theta = 2 ** exp
        res = rs_greedy(graph, campaigns, spec, probe_k, horizon, theta=theta,
                        rng_seed=rng_seed + exp)
        cur = exact.value(res.seeds.nodes)
        if abs(cur - score_prev) < rel_tol * max(score_prev, 1e-12):
            return theta_prev
        theta_prev, score_prev = theta, cur
    return theta_prev
