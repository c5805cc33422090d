"""Synthetic dataset generation and the bundled 4-node example instance.

Datasets are emitted in the loader's file formats (tab-separated edges,
opinions, stubbornness, plus a key=value config), with deterministic output
for a fixed rng seed: same seed, byte-identical files.
"""

from __future__ import annotations

import os

import networkx as nx
import numpy as np

from .graph import DataError, load_dataset

_CONFIG_TEMPLATE = """\
# generated dataset
candidates = {r}
{edge_lines}
opinion_file = opinions.tsv
stubbornness_file = stubbornness.tsv
transform = weight
mu = 10
"""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_edge_file(path, edges, weights):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# src\tdst\tweight\n")
        for (u, v), w in zip(edges, weights):
            fh.write(f"{u}\t{v}\t{_fmt(w)}\n")


def _write_value_file(path, matrix, labels):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# candidate\tnode\tvalue\n")
        for q in range(matrix.shape[0]):
            for i, lab in enumerate(labels):
                fh.write(f"{q + 1}\t{lab}\t{_fmt(matrix[q, i])}\n")


def _write_config(out_dir, r):
    edge_lines = "\n".join(f"edge_file.{q + 1} = edges_c{q + 1}.tsv" for q in range(r))
    path = os.path.join(out_dir, "config.cfg")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_CONFIG_TEMPLATE.format(r=r, edge_lines=edge_lines))
    return path


def _normalize_incoming(edges, raw):
    """Scale weights so each destination's incoming weights sum to 1."""
    sums: dict[int, float] = {}
    for (u, v), w in zip(edges, raw):
        sums[v] = sums.get(v, 0.0) + w
    return [w / sums[v] for (u, v), w in zip(edges, raw)]


def _emit(out_dir, labels, per_candidate_graphs, opinions, stubbornness):
    """per_candidate_graphs: one (edges, weights) pair per candidate."""
    os.makedirs(out_dir, exist_ok=True)
    r = opinions.shape[0]
    for q, (edges, weights) in enumerate(per_candidate_graphs):
        _write_edge_file(os.path.join(out_dir, f"edges_c{q + 1}.tsv"), edges, weights)
    _write_value_file(os.path.join(out_dir, "opinions.tsv"), opinions, labels)
    _write_value_file(os.path.join(out_dir, "stubbornness.tsv"), stubbornness, labels)
    return _write_config(out_dir, r)


def gen_synthetic(kind: str, n: int, attach_or_p: float, r: int, rng_seed: int,
                  out_dir: str) -> str:
    """Generate a dataset and return the path of its config file.

    ``scale-free`` grows a preferential-attachment graph (``attach_or_p``
    edges per new node) and directs every tie both ways; ``random`` draws
    each directed edge independently with probability ``attach_or_p``.
    Edge weights are uniform then normalized per destination; opinions and
    stubbornness are uniform in [0, 1].
    """
    rng = np.random.default_rng(rng_seed)
    if kind == "scale-free":
        g = nx.barabasi_albert_graph(n, int(attach_or_p), seed=int(rng_seed))
        edges = []
        for u, v in sorted(g.edges()):
            edges.append((u, v))
            edges.append((v, u))
        edges.sort()
    elif kind == "random":
        if n > 5000:
            raise DataError("random kind is quadratic; use scale-free beyond n=5000")
        mat = rng.random((n, n)) < attach_or_p
        np.fill_diagonal(mat, False)
        edges = [(int(u), int(v)) for u, v in np.argwhere(mat)]
    else:
        raise DataError(f"unknown synthetic kind {kind!r}")

    labels = [str(i) for i in range(n)]
    graphs = []
    for _ in range(r):
        raw = rng.uniform(size=len(edges))
        graphs.append((edges, _normalize_incoming(edges, raw)))
    opinions = rng.uniform(size=(r, n))
    stubbornness = rng.uniform(size=(r, n))
    return _emit(out_dir, labels, graphs, opinions, stubbornness)


def subsample_dataset(src_config: str, fraction: float, rng_seed: int,
                      out_dir: str) -> str:
    """Induced-subgraph copy on a uniform node sample; fraction 1.0 keeps
    every node and reproduces the dataset."""
    if not 0.0 < fraction <= 1.0:
        raise DataError("fraction must lie in (0, 1]")
    ds = load_dataset(src_config)
    g = ds.graph
    rng = np.random.default_rng(rng_seed)
    keep_count = max(1, int(round(fraction * g.n)))
    keep = np.sort(rng.choice(g.n, size=keep_count, replace=False)) \
        if keep_count < g.n else np.arange(g.n)
    keep_set = set(int(v) for v in keep)
    labels = [g.labels[v] for v in keep]

    graphs = []
    for q in range(g.r):
        mat = g.in_csr[q]
        qedges, qraw = [], []
        for dst in keep:
            for idx in range(mat.indptr[dst], mat.indptr[dst + 1]):
                src = int(mat.indices[idx])
                if g.selfloop[q][dst] and src == dst:
                    continue
                if src in keep_set:
                    qedges.append((g.labels[src], g.labels[dst]))
                    qraw.append(float(mat.data[idx]))
        order = sorted(range(len(qedges)), key=lambda i: qedges[i])
        qedges = [qedges[i] for i in order]
        qraw = [qraw[i] for i in order]
        sums: dict[str, float] = {}
        for (u, v), w in zip(qedges, qraw):
            sums[v] = sums.get(v, 0.0) + w
        graphs.append((qedges, [w / sums[v] for (u, v), w in zip(qedges, qraw)]))
    opinions = np.vstack([ds.campaigns[q].b0[keep] for q in range(g.r)])
    stubbornness = np.vstack([ds.campaigns[q].d[keep] for q in range(g.r)])
    return _emit(out_dir, labels, graphs, opinions, stubbornness)


def write_running_example(out_dir: str) -> str:
    """The 4-node, 2-candidate worked example used across the test suite.

    Nodes 1 and 2 have no in-edges and keep their initial opinions; node 3
    averages 1 and 2; node 4 follows 3.  Every node has stubbornness 0.5 for
    both candidates, and both candidates share the influence weights.
    """
    labels = ["1", "2", "3", "4"]
    edges = [("1", "3"), ("2", "3"), ("3", "4")]
    weights = [0.5, 0.5, 1.0]
    opinions = np.array([
        [0.40, 0.80, 0.60, 0.90],
        [0.35, 0.75, 1.00, 0.80],
    ])
    stubbornness = np.full((2, 4), 0.5)
    return _emit(out_dir, labels, [(edges, weights), (edges, weights)],
                 opinions, stubbornness)
