"""Influence graphs, campaign state, and dataset loading.

Nodes are dense integers ``0..n-1`` internally.  Input files may use
arbitrary string labels; the loader records the label <-> id mapping so
that every file written or read at the boundary speaks labels while the
numerics run on flat arrays.  Candidates are ``1..r`` in files and on the
command line, ``0..r-1`` internally.

File formats (all UTF-8, ``#`` starts a comment line):

* edge file, one per candidate:      ``src<TAB>dst<TAB>value``
* opinion / stubbornness files:      ``candidate<TAB>node<TAB>value``
* config file:                       ``key = value`` lines, see `read_config`
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

STOCHASTIC_TOL = 1e-9
DEFAULT_MU = 10.0

SCORE_KINDS = ("cumulative", "plurality", "p-approval", "positional-p-approval", "copeland")
RANK_KINDS = ("plurality", "p-approval", "positional-p-approval")


class DataError(ValueError):
    """Malformed or out-of-contract input data."""


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

class InfluenceGraph:
    """Per-candidate column-stochastic weighted digraph, immutable after load.

    ``in_csr[q]`` holds, in row v, the incoming edge weights of node v for
    candidate q (so each row sums to 1; in-degree-0 nodes carry an implicit
    self-loop of weight 1 and the DeGroot step leaves them fixed).
    ``out_csr[q]`` holds the same explicit edges grouped by source, used for
    forward BFS / reachability.
    """

    def __init__(self, n, in_csr, out_csr, selfloop, labels, m):
        self.n = int(n)
        self.r = len(in_csr)
        self.m = int(m)
        self.in_csr = tuple(in_csr)
        self.out_csr = tuple(out_csr)
        self.selfloop = tuple(selfloop)
        self.labels = tuple(labels)
        self._label_to_id = {lab: i for i, lab in enumerate(self.labels)}
        self._walk_cdf = {}
        for mat in self.in_csr + self.out_csr:
            mat.data.flags.writeable = False
            mat.indices.flags.writeable = False
            mat.indptr.flags.writeable = False

    def id_of(self, label: str) -> int:
        try:
            return self._label_to_id[str(label)]
        except KeyError:
            raise DataError(f"unknown node label {label!r}") from None

    def ids_of(self, labels: Iterable[str]) -> list[int]:
        return [self.id_of(lab) for lab in labels]

    def out_degree(self, q: int) -> np.ndarray:
        """Explicit out-edge counts for candidate q (self-loops excluded)."""
        ptr = self.out_csr[q].indptr
        return np.diff(ptr)

    def walk_cdf(self, q: int):
        """Augmented per-row cumulative weights used for vectorized
        inverse-CDF sampling of one in-neighbor per active walk.

        Entry ``j`` of row ``v`` stores ``v + cumsum(w)[j]`` so the whole
        array is globally non-decreasing and a single searchsorted over
        ``v + u`` (u uniform in [0,1)) lands inside row v.
        """
        if q not in self._walk_cdf:
            mat = self.in_csr[q]
            cum = np.copy(mat.data)
            for v in range(self.n):
                lo, hi = mat.indptr[v], mat.indptr[v + 1]
                np.cumsum(mat.data[lo:hi], out=cum[lo:hi])
            rows = np.repeat(np.arange(self.n, dtype=np.float64), np.diff(mat.indptr))
            aug = rows + cum
            aug.flags.writeable = False
            self._walk_cdf[q] = aug
        return self._walk_cdf[q]

    def reachable_within(self, q: int, sources: Sequence[int], hops: int) -> np.ndarray:
        """Boolean mask of nodes at most ``hops`` forward hops from ``sources``
        in candidate q's graph. Zero hops reaches the sources themselves."""
        mask = np.zeros(self.n, dtype=bool)
        frontier = np.unique(np.asarray(list(sources), dtype=np.int64))
        if frontier.size == 0:
            return mask
        mask[frontier] = True
        mat = self.out_csr[q]
        for _ in range(hops):
            if frontier.size == 0:
                break
            nxt = np.unique(mat[frontier].indices)
            nxt = nxt[~mask[nxt]]
            mask[nxt] = True
            frontier = nxt
        return mask

    def check_invariants(self):
        """Raise DataError if any structural invariant is violated."""
        for q in range(self.r):
            mat = self.in_csr[q]
            sums = np.asarray(mat.sum(axis=1)).ravel()
            bad = np.where(np.abs(sums - 1.0) > STOCHASTIC_TOL)[0]
            if bad.size:
                raise DataError(
                    f"candidate {q + 1}: incoming weights of node "
                    f"{self.labels[bad[0]]} sum to {sums[bad[0]]!r}, expected 1")
            if mat.data.size and (mat.data.min() < 0 or mat.data.max() > 1 + STOCHASTIC_TOL):
                raise DataError(f"candidate {q + 1}: edge weight outside [0, 1]")
            fwd = {(int(s), int(d)) for d in range(self.n)
                   for s in mat.indices[mat.indptr[d]:mat.indptr[d + 1]]
                   if not (self.selfloop[q][d] and s == d)}
            out = self.out_csr[q]
            rev = {(int(s), int(d)) for s in range(self.n)
                   for d in out.indices[out.indptr[s]:out.indptr[s + 1]]}
            if fwd != rev:
                raise DataError(f"candidate {q + 1}: forward/reverse adjacency mismatch")


@dataclass
class CampaignState:
    """Opinions and stubbornness of one candidate's campaign at a timestamp."""

    candidate: int
    b0: np.ndarray           # initial opinions, [0,1]^n
    d: np.ndarray            # stubbornness, [0,1]^n
    b: np.ndarray            # current opinions at time t
    t: int = 0

    def __post_init__(self):
        for name in ("b0", "d", "b"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise DataError(f"{name} entries must lie in [0, 1]")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.t == 0 and not np.array_equal(self.b, self.b0):
            raise DataError("at t=0 current opinions must equal initial opinions")

    @classmethod
    def initial(cls, candidate: int, b0, d) -> "CampaignState":
        b0 = np.asarray(b0, dtype=np.float64)
        return cls(candidate=candidate, b0=b0, d=np.asarray(d, dtype=np.float64),
                   b=b0.copy(), t=0)


@dataclass(frozen=True)
class SeedSet:
    """Ordered seed nodes for one target candidate (insertion order of greedy)."""

    candidate: int
    nodes: tuple[int, ...] = ()

    def __post_init__(self):
        nodes = tuple(int(v) for v in self.nodes)
        if len(set(nodes)) != len(nodes):
            raise DataError("duplicate seed node")
        object.__setattr__(self, "nodes", nodes)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.nodes, dtype=np.int64)


@dataclass(frozen=True)
class ScoreSpec:
    """Which voting score to evaluate, with its parameters.

    ``omega`` is the 1-indexed-by-position weight sequence of length r for
    the positional variant; for plurality and p-approval the effective
    weights are all 1 up to position p.
    """

    kind: str
    target: int
    p: int = 1
    omega: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in SCORE_KINDS:
            raise DataError(f"unknown score kind {self.kind!r}")
        if self.p < 1:
            raise DataError("p must be at least 1")
        if self.omega is not None:
            om = tuple(float(w) for w in self.omega)
            if any(w < 0.0 or w > 1.0 for w in om):
                raise DataError("omega entries must lie in [0, 1]")
            if any(om[i] > om[i - 1] for i in range(1, len(om))):
                raise DataError("omega must be non-increasing")
            object.__setattr__(self, "omega", om)
        if self.kind == "positional-p-approval" and self.omega is None:
            raise DataError("positional-p-approval needs omega")

    @property
    def is_rank_based(self) -> bool:
        return self.kind in RANK_KINDS

    def omega_at(self, position: int) -> float:
        """Weight of a 1-indexed preference position (0 beyond p)."""
        if position > self.p:
            return 0.0
        if self.kind == "positional-p-approval":
            return self.omega[position - 1]
        return 1.0

    def validate_for(self, r: int):
        if self.kind != "cumulative" and self.p > r:
            raise DataError(f"p={self.p} exceeds candidate count r={r}")
        if self.kind == "positional-p-approval" and len(self.omega) != r:
            raise DataError(f"omega must have length r={r}")

    @classmethod
    def cumulative(cls, target):
        return cls("cumulative", target)

    @classmethod
    def plurality(cls, target):
        return cls("plurality", target, p=1)

    @classmethod
    def p_approval(cls, target, p):
        return cls("p-approval", target, p=p)

    @classmethod
    def positional(cls, target, p, omega):
        return cls("positional-p-approval", target, p=p, omega=tuple(omega))

    @classmethod
    def copeland(cls, target):
        return cls("copeland", target)


@dataclass
class Dataset:
    """A fully loaded problem instance: graph plus one campaign per candidate."""

    graph: InfluenceGraph
    campaigns: list[CampaignState]
    config: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# seed transformation
# ---------------------------------------------------------------------------

def apply_seeds(state: CampaignState, seeds: SeedSet) -> CampaignState:
    """Return a fresh state with each seed's initial opinion and stubbornness
    forced to 1. The input state is left untouched."""
    if seeds.candidate != state.candidate:
        raise DataError("seed set targets a different candidate")
    if state.t != 0:
        raise DataError("seeds are placed at t=0; got a state at t=%d" % state.t)
    n = state.b0.shape[0]
    ids = seeds.as_array()
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise DataError(f"seed id out of range (n={n})")
    b0 = state.b0.copy()
    d = state.d.copy()
    b0[ids] = 1.0
    d[ids] = 1.0
    return CampaignState(candidate=state.candidate, b0=b0, d=d, b=b0.copy(), t=0)


# ---------------------------------------------------------------------------
# file parsing
# ---------------------------------------------------------------------------

def _data_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line


def _parse_edge_file(path):
    """Yield (lineno, src_label, dst_label, value) triples."""
    rows = []
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected src<TAB>dst<TAB>value")
        try:
            val = float(parts[2])
        except ValueError:
            raise DataError(f"{path}:{lineno}: value {parts[2]!r} is not a number") from None
        rows.append((lineno, parts[0], parts[1], val))
    return rows


def _parse_value_file(path):
    """Yield (lineno, candidate_index0, node_label, value) from a
    candidate<TAB>node<TAB>value file."""
    rows = []
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected candidate<TAB>node<TAB>value")
        try:
            cand = int(parts[0])
            val = float(parts[2])
        except ValueError:
            raise DataError(f"{path}:{lineno}: cannot parse candidate/value") from None
        rows.append((lineno, cand - 1, parts[1], val))
    return rows


def _sorted_labels(labels: set[str]) -> list[str]:
    try:
        return sorted(labels, key=lambda s: (0, int(s)))
    except ValueError:
        return sorted(labels)


def _transform_weights(values, transform, mu, path):
    vals = np.asarray(values, dtype=np.float64)
    if transform == "raw-count":
        if np.any(vals < 0):
            raise DataError(f"{path}: raw counts must be non-negative")
        return 1.0 - np.exp(-vals / mu)
    if transform == "weight":
        if vals.size and (vals.min() < 0.0 or vals.max() > 1.0):
            raise DataError(f"{path}: weights must lie in [0, 1]")
        return vals
    raise DataError(f"unknown transform {transform!r}")


def load_graph(edge_files: Sequence[str], transform: str = "weight",
               mu: float = DEFAULT_MU, labels: Sequence[str] | None = None) -> InfluenceGraph:
    """Load one edge file per candidate into an InfluenceGraph.

    ``transform='raw-count'`` maps each raw count a to ``1 - exp(-a/mu)``
    before normalization; ``'weight'`` takes values as-is.  Incoming weights
    of every node are then normalized to sum to 1, and in-degree-0 nodes get
    an implicit self-loop of weight 1.
    """
    if mu <= 0:
        raise DataError("mu must be positive")
    parsed = [(_parse_edge_file(p), p) for p in edge_files]
    if labels is None:
        seen: set[str] = set()
        for rows, _ in parsed:
            for _, s, t, _ in rows:
                seen.add(s)
                seen.add(t)
        labels = _sorted_labels(seen)
    label_to_id = {lab: i for i, lab in enumerate(labels)}
    n = len(labels)

    in_csr, out_csr, selfloops = [], [], []
    union_edges: set[tuple[int, int]] = set()
    for rows, path in parsed:
        pairs: dict[tuple[int, int], int] = {}
        src, dst, raw = [], [], []
        for lineno, s, t, val in rows:
            if s not in label_to_id or t not in label_to_id:
                missing = s if s not in label_to_id else t
                raise DataError(f"{path}:{lineno}: node {missing!r} is not in the node universe")
            si, di = label_to_id[s], label_to_id[t]
            if (si, di) in pairs:
                raise DataError(
                    f"{path}:{lineno}: duplicate edge {s}->{t} (first at line {pairs[(si, di)]})")
            pairs[(si, di)] = lineno
            src.append(si)
            dst.append(di)
            raw.append(val)
        union_edges.update(pairs.keys())
        w = _transform_weights(raw, transform, mu, path)
        src_a = np.asarray(src, dtype=np.int64)
        dst_a = np.asarray(dst, dtype=np.int64)

        sums = np.zeros(n)
        np.add.at(sums, dst_a, w)
        indeg = np.zeros(n, dtype=np.int64)
        np.add.at(indeg, dst_a, 1)
        dead = np.where((indeg > 0) & (sums <= 0.0))[0]
        if dead.size:
            raise DataError(
                f"{path}: node {labels[dead[0]]} has in-edges with all-zero weight; cannot normalize")
        wn = np.where(sums[dst_a] > 0, w / sums[dst_a], 0.0)

        loop = indeg == 0
        loop_ids = np.where(loop)[0]
        rows_all = np.concatenate([dst_a, loop_ids])
        cols_all = np.concatenate([src_a, loop_ids])
        data_all = np.concatenate([wn, np.ones(loop_ids.size)])
        mat = sp.csr_matrix((data_all, (rows_all, cols_all)), shape=(n, n))
        mat.sort_indices()
        in_csr.append(mat)
        out = sp.csr_matrix((np.ones(src_a.size), (src_a, dst_a)), shape=(n, n))
        out.sort_indices()
        out_csr.append(out)
        selfloops.append(loop)

    graph = InfluenceGraph(n=n, in_csr=in_csr, out_csr=out_csr,
                           selfloop=selfloops, labels=labels, m=len(union_edges))
    graph.check_invariants()
    return graph


def _uniform_policy(policy: str):
    """Parse a 'uniform:X' default-stubbornness policy; None if not one."""
    if policy and policy.startswith("uniform:"):
        val = float(policy.split(":", 1)[1])
        if not 0.0 <= val <= 1.0:
            raise DataError(f"uniform stubbornness {val} outside [0, 1]")
        return val
    return None


def _read_values(path, graph: InfluenceGraph, what: str) -> np.ndarray:
    out = np.full((graph.r, graph.n), np.nan)
    for lineno, cand, label, val in _parse_value_file(path):
        if not 0 <= cand < graph.r:
            raise DataError(f"{path}:{lineno}: candidate {cand + 1} out of range 1..{graph.r}")
        node = graph.id_of(label)
        if not 0.0 <= val <= 1.0:
            raise DataError(
                f"{path}:{lineno}: {what} {val} for node {label} / candidate {cand + 1} "
                f"outside [0, 1]")
        out[cand, node] = val
    missing = np.argwhere(np.isnan(out))
    if missing.size:
        cand, node = missing[0]
        raise DataError(
            f"{path}: missing {what} row for node {graph.labels[node]} / candidate {cand + 1}")
    return out


def load_campaigns(opinion_file: str, stubbornness_file: str | None,
                   graph: InfluenceGraph, stubbornness_policy: str = "file") -> list[CampaignState]:
    """Load per-candidate initial opinions and stubbornness at t=0.

    Values outside [0,1] are rejected, never clamped.  With
    ``stubbornness_policy='uniform:X'`` the file is ignored and every node
    gets stubbornness X.
    """
    opinions = _read_values(opinion_file, graph, "opinion")
    uni = _uniform_policy(stubbornness_policy)
    if uni is not None:
        stub = np.full((graph.r, graph.n), uni)
    else:
        if stubbornness_file is None:
            raise DataError("stubbornness file required unless policy is uniform:X")
        stub = _read_values(stubbornness_file, graph, "stubbornness")
    return [CampaignState.initial(q, opinions[q], stub[q]) for q in range(graph.r)]


# ---------------------------------------------------------------------------
# config + dataset
# ---------------------------------------------------------------------------

def read_config(path: str) -> dict:
    """Parse a key=value config file.

    Recognized keys: ``candidates``, ``edge_file.<q>`` (q = 1..r),
    ``opinion_file``, ``stubbornness_file``, ``stubbornness`` (``file`` or
    ``uniform:X``), ``transform`` (``weight`` | ``raw-count``), ``mu``.
    Relative paths resolve against the config file's directory.
    """
    cfg: dict = {"path": os.path.abspath(path)}
    base = os.path.dirname(os.path.abspath(path))
    edge_files: dict[int, str] = {}
    for lineno, line in _data_lines(path):
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "candidates":
            cfg["candidates"] = int(value)
        elif key.startswith("edge_file."):
            edge_files[int(key.split(".", 1)[1])] = os.path.join(base, value)
        elif key in ("opinion_file", "stubbornness_file"):
            cfg[key] = os.path.join(base, value)
        elif key == "stubbornness":
            cfg["stubbornness"] = value
        elif key == "transform":
            if value not in ("weight", "raw-count"):
                raise DataError(f"{path}:{lineno}: transform must be weight or raw-count")
            cfg["transform"] = value
        elif key == "mu":
            cfg["mu"] = float(value)
        else:
            raise DataError(f"{path}:{lineno}: unknown config key {key!r}")
    if "candidates" not in cfg:
        raise DataError(f"{path}: missing 'candidates'")
    r = cfg["candidates"]
    if sorted(edge_files) != list(range(1, r + 1)):
        raise DataError(f"{path}: need edge_file.1 .. edge_file.{r}")
    cfg["edge_files"] = [edge_files[q] for q in range(1, r + 1)]
    if "opinion_file" not in cfg:
        raise DataError(f"{path}: missing 'opinion_file'")
    cfg.setdefault("stubbornness", "file")
    cfg.setdefault("transform", "weight")
    cfg.setdefault("mu", DEFAULT_MU)
    return cfg


def load_dataset(config_path: str) -> Dataset:
    """Load a complete instance from a config file.

    The node universe is the union of labels in the edge and opinion files,
    so isolated nodes can be declared by opinion rows alone.
    """
    cfg = read_config(config_path)
    seen: set[str] = set()
    for p in cfg["edge_files"]:
        for _, s, t, _ in _parse_edge_file(p):
            seen.add(s)
            seen.add(t)
    for _, _, label, _ in _parse_value_file(cfg["opinion_file"]):
        seen.add(label)
    labels = _sorted_labels(seen)
    graph = load_graph(cfg["edge_files"], transform=cfg["transform"],
                       mu=cfg["mu"], labels=labels)
    campaigns = load_campaigns(cfg["opinion_file"], cfg.get("stubbornness_file"),
                               graph, cfg["stubbornness"])
    return Dataset(graph=graph, campaigns=campaigns, config=cfg)


def read_seed_file(path: str, graph: InfluenceGraph, candidate: int) -> SeedSet:
    """Read a seed file: either one node label per line or the 3-column
    ``rank<TAB>node<TAB>score`` format emitted by selection."""
    nodes = []
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        label = parts[1] if len(parts) == 3 else parts[0]
        nodes.append(graph.id_of(label))
    return SeedSet(candidate=candidate, nodes=tuple(nodes))
