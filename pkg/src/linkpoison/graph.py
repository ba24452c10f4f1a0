"""Graph data model, dataset IO, link splits and structural statistics.

Graphs are undirected and unweighted: a symmetric {0,1} adjacency matrix with
a zero diagonal, optional node features, optional integer node labels, and an
optional user/item partition marker for bipartite interaction graphs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from linkpoison import _kernels

log = logging.getLogger(__name__)


class GraphFormatError(ValueError):
    """Malformed dataset file."""


class InfeasibleSplitError(ValueError):
    """The requested split cannot be sampled from this graph."""


@dataclass(frozen=True)
class Graph:
    n: int
    adjacency: np.ndarray                      # n x n float64, entries in {0, 1}
    features: np.ndarray | None = None         # n x d float64
    labels: np.ndarray | None = None           # n int64, -1 for unlabeled
    bipartite: tuple[int, int] | None = None   # (user_count, item_count)
    meta: dict = field(default_factory=dict)

    @property
    def edge_count(self) -> int:
        return int(self.adjacency.sum()) // 2

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def edges(self) -> list[tuple[int, int]]:
        """All edges as canonical (i, j) pairs with i < j, sorted."""
        ii, jj = np.nonzero(np.triu(self.adjacency, k=1))
        return list(zip(ii.tolist(), jj.tolist()))

    def has_edge(self, i: int, j: int) -> bool:
        return self.adjacency[i, j] == 1.0

    def is_user(self, node: int) -> bool:
        if self.bipartite is None:
            raise ValueError("graph is not bipartite")
        return node < self.bipartite[0]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


def make_graph(adjacency, features=None, labels=None, bipartite=None, meta=None) -> Graph:
    """Validate invariants and build an immutable Graph."""
    adj = np.asarray(adjacency, dtype=np.float64)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise GraphFormatError(f"adjacency must be square, got {adj.shape}")
    n = adj.shape[0]
    if not np.array_equal(adj, adj.T):
        raise GraphFormatError("adjacency must be symmetric")
    if np.diagonal(adj).any():
        raise GraphFormatError("adjacency must have a zero diagonal")
    if not np.isin(adj, (0.0, 1.0)).all():
        raise GraphFormatError("adjacency entries must be exactly 0 or 1")
    if bipartite is not None:
        u, i = bipartite
        if u + i != n:
            raise GraphFormatError(f"partition sizes {u}+{i} != {n} nodes")
        if adj[:u, :u].any() or adj[u:, u:].any():
            raise GraphFormatError("bipartite graph has a within-partition edge")
    if features is not None:
        features = np.asarray(features, dtype=np.float64)
        if features.shape[0] != n:
            raise GraphFormatError(f"feature rows {features.shape[0]} != {n} nodes")
        features = _freeze(features)
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (n,):
            raise GraphFormatError(f"labels shape {labels.shape} != ({n},)")
        labels = _freeze(labels)
    return Graph(n, _freeze(adj), features, labels, bipartite, dict(meta or {}))


def graph_from_edges(n, edges, features=None, labels=None, bipartite=None, meta=None) -> Graph:
    adj = np.zeros((n, n), dtype=np.float64)
    for i, j in edges:
        adj[i, j] = 1.0
        adj[j, i] = 1.0
    return make_graph(adj, features, labels, bipartite, meta)


# ---------------------------------------------------------------------------
# file formats: edge list ("i j" per line, optional "#nodes=N" header),
# features CSV (row per node), labels CSV ("node,label")
# ---------------------------------------------------------------------------

def load_graph(edge_path, feature_path=None, label_path=None, bipartite=None) -> Graph:
    declared_n = None
    raw = 0
    self_loops = 0
    edges: set[tuple[int, int]] = set()
    max_id = -1
    with open(edge_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                body = text[1:].strip()
                if body.startswith("nodes="):
                    try:
                        declared_n = int(body.split("=", 1)[1])
                    except ValueError:
                        raise GraphFormatError(
                            f"{edge_path}:{lineno}: bad node-count header {text!r}")
                continue
            parts = text.split()
            if len(parts) != 2:
                raise GraphFormatError(
                    f"{edge_path}:{lineno}: expected two node ids, got {text!r}")
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(
                    f"{edge_path}:{lineno}: non-integer node id in {text!r}")
            if i < 0 or j < 0:
                raise GraphFormatError(f"{edge_path}:{lineno}: negative node id")
            raw += 1
            if i == j:
                self_loops += 1
                continue
            edges.add((min(i, j), max(i, j)))
            max_id = max(max_id, i, j)
    if self_loops:
        log.warning("%s: dropped %d self-loop line(s)", edge_path, self_loops)
    n = declared_n if declared_n is not None else max_id + 1
    if max_id >= n:
        raise GraphFormatError(f"{edge_path}: node id {max_id} >= declared count {n}")
    if n <= 0:
        raise GraphFormatError(f"{edge_path}: no nodes")

    features = _load_features(feature_path, n) if feature_path else None
    labels = _load_labels(label_path, n) if label_path else None
    meta = {
        "source": str(edge_path),
        "raw_edge_count": raw,
        "dedup_edge_count": len(edges),
        "self_loops_dropped": self_loops,
    }
    log.info("%s: %d nodes, %d raw lines, %d deduplicated edges",
             edge_path, n, raw, len(edges))
    return graph_from_edges(n, sorted(edges), features, labels, bipartite, meta)


def _load_features(path, n) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                rows.append([float(v) for v in text.split(",")])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: non-numeric feature value")
    feats = np.asarray(rows, dtype=np.float64)
    if feats.shape[0] != n:
        raise GraphFormatError(f"{path}: {feats.shape[0]} feature rows != {n} nodes")
    return feats


def _load_labels(path, n) -> np.ndarray:
    labels = np.full(n, -1, dtype=np.int64)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split(",")
            if len(parts) != 2:
                raise GraphFormatError(f"{path}:{lineno}: expected 'node,label'")
            try:
                node, lab = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: non-integer entry")
            if not 0 <= node < n:
                raise GraphFormatError(f"{path}:{lineno}: node id {node} out of range")
            labels[node] = lab
    return labels


def save_graph(g: Graph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#nodes={g.n}\n")
        for i, j in g.edges():
            fh.write(f"{i} {j}\n")


# ---------------------------------------------------------------------------
# link splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinkSplit:
    train_pos: list[tuple[int, int]]
    val_pos: list[tuple[int, int]]
    test_pos: list[tuple[int, int]]
    val_neg: list[tuple[int, int]]
    test_neg: list[tuple[int, int]]
    seed: int


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _candidate_non_edges(g: Graph) -> np.ndarray:
    """All non-edges as an array of (i, j) with i < j, canonical order.

    For bipartite graphs only cross-partition pairs qualify.
    """
    mask = np.triu(np.ones((g.n, g.n), dtype=bool), k=1) & (g.adjacency == 0)
    if g.bipartite is not None:
        u = g.bipartite[0]
        cross = np.zeros((g.n, g.n), dtype=bool)
        cross[:u, u:] = True
        mask &= cross
    ii, jj = np.nonzero(mask)
    return np.stack([ii, jj], axis=1)


def make_split(g: Graph, fractions=(0.85, 0.05, 0.10), seed: int = 0) -> LinkSplit:
    """Seeded train/val/test split of edges plus matched negative samples."""
    ftrain, fval, ftest = fractions
    if min(fractions) < 0 or ftrain <= 0:
        raise ValueError(f"bad split fractions {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")

    rng = np.random.default_rng(seed)
    edges = g.edges()
    m = len(edges)
    n_val = _round_half_up(m * fval)
    n_test = _round_half_up(m * ftest)
    if n_val + n_test > m:
        raise InfeasibleSplitError("not enough edges for the requested split")
    order = rng.permutation(m)
    val_pos = [edges[k] for k in order[:n_val]]
    test_pos = [edges[k] for k in order[n_val:n_val + n_test]]
    train_pos = [edges[k] for k in order[n_val + n_test:]]

    need = n_val + n_test
    candidates = _candidate_non_edges(g)
    if need > len(candidates):
        raise InfeasibleSplitError(
            f"graph too dense: need {need} negatives, only {len(candidates)} non-edges")
    picked = rng.choice(len(candidates), size=need, replace=False) if need else []
    negs = [tuple(candidates[k]) for k in picked]
    val_neg = [(int(i), int(j)) for i, j in negs[:n_val]]
    test_neg = [(int(i), int(j)) for i, j in negs[n_val:]]
    return LinkSplit(train_pos, val_pos, test_pos, val_neg, test_neg, seed)


def training_graph(g: Graph, split: LinkSplit) -> Graph:
    """The graph a model is allowed to train on: only the split's train edges."""
    return graph_from_edges(g.n, split.train_pos, g.features, g.labels, g.bipartite,
                            {**g.meta, "train_edges_of": g.meta.get("source", "graph")})


# ---------------------------------------------------------------------------
# structural statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GraphStats:
    nodes: int
    edges: int
    avg_degree: float
    density: float
    diameter: int
    avg_clustering: float
    avg_path_length: float

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes,
            "edges": self.edges,
            "avg_degree": self.avg_degree,
            "density": self.density,
            "diameter": self.diameter,
            "avg_clustering_coefficient": self.avg_clustering,
            "avg_path_length": self.avg_path_length,
        }


def adjacency_csr(adj: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-pointer/column-index form with sorted rows, for the kernels."""
    n = adj.shape[0]
    indptr = np.zeros(n + 1, dtype=np.int32)
    cols = []
    for i in range(n):
        row = np.nonzero(adj[i])[0].astype(np.int32)
        cols.append(row)
        indptr[i + 1] = indptr[i] + len(row)
    indices = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int32)
    return indptr, indices.astype(np.int32)


def compute_stats(g: Graph) -> GraphStats:
    """Degree/density plus diameter, clustering and mean path length.

    Diameter and path length are taken over the largest connected component;
    the local clustering coefficient of a node with degree < 2 counts as 0.
    """
    if g.n == 0:
        raise ValueError("empty graph")
    degrees = g.degrees
    edges = g.edge_count
    avg_degree = 2.0 * edges / g.n
    density = 2.0 * edges / (g.n * (g.n - 1)) if g.n > 1 else 0.0

    indptr, indices = adjacency_csr(g.adjacency)
    tri = _kernels.triangle_counts(indptr, indices, g.n)
    coeffs = np.zeros(g.n)
    eligible = degrees >= 2
    d = degrees[eligible]
    coeffs[eligible] = 2.0 * tri[eligible] / (d * (d - 1))
    avg_clustering = float(coeffs.mean())

    labels = _kernels.connected_components(indptr, indices, g.n)
    sizes = np.bincount(labels)
    comp = int(np.argmax(sizes))
    members = np.nonzero(labels == comp)[0].astype(np.int32)
    if len(members) > 1:
        diameter, total, pairs = _kernels.bfs_distance_aggregate(
            indptr, indices, members, g.n)
        apl = total / pairs if pairs else 0.0
    else:
        diameter, apl = 0, 0.0
    return GraphStats(g.n, edges, avg_degree, density, int(diameter),
                      avg_clustering, float(apl))


def largest_component_subgraph(g: Graph, max_nodes: int | None = None) -> Graph:
    """Induced subgraph on the largest component, optionally capped in size.

    When capped, nodes are taken in breadth-first order from the component's
    highest-degree node, which keeps the subgraph connected.
    """
    indptr, indices = adjacency_csr(g.adjacency)
    labels = _kernels.connected_components(indptr, indices, g.n)
    comp = int(np.argmax(np.bincount(labels)))
    members = np.nonzero(labels == comp)[0]
    if max_nodes is not None and len(members) > max_nodes:
        start = members[int(np.argmax(g.degrees[members]))]
        seen = {int(start)}
        frontier = [int(start)]
        picked = [int(start)]
        while frontier and len(picked) < max_nodes:
            nxt = []
            for u in frontier:
                for v in indices[indptr[u]:indptr[u + 1]]:
                    v = int(v)
                    if v not in seen:
                        seen.add(v)
                        picked.append(v)
                        nxt.append(v)
                        if len(picked) >= max_nodes:
                            break
                if len(picked) >= max_nodes:
                    break
            frontier = nxt
        members = np.array(sorted(picked))
    keep = np.sort(members)
    adj = g.adjacency[np.ix_(keep, keep)]
    feats = g.features[keep] if g.features is not None else None
    labs = g.labels[keep] if g.labels is not None else None
    meta = {**g.meta, "subset_of": g.meta.get("source", "graph"), "subset_nodes": len(keep)}
    return make_graph(adj, feats, labs, None, meta)


# ---------------------------------------------------------------------------
# edits
# ---------------------------------------------------------------------------

def _edit_pair(edit) -> tuple[int, int]:
    if hasattr(edit, "i") and hasattr(edit, "j"):
        return int(edit.i), int(edit.j)
    i, j = edit[0], edit[1]
    return int(i), int(j)


def apply_edits(g: Graph, edits) -> Graph:
    """Flip each listed pair symmetrically; returns a new validated Graph."""
    adj = g.adjacency.copy()
    adj.setflags(write=True)
    count = 0
    for edit in edits:
        i, j = _edit_pair(edit)
        if i == j:
            raise ValueError(f"edit on diagonal ({i},{i}) rejected")
        if not (0 <= i < g.n and 0 <= j < g.n):
            raise ValueError(f"edit ({i},{j}) out of range for {g.n} nodes")
        if g.bipartite is not None and g.is_user(i) == g.is_user(j):
            raise ValueError(f"edit ({i},{j}) does not cross the bipartite partition")
        adj[i, j] = 1.0 - adj[i, j]
        adj[j, i] = adj[i, j]
        count += 1
    meta = {**g.meta, "edits_applied": g.meta.get("edits_applied", 0) + count}
    return make_graph(adj, g.features, g.labels, g.bipartite, meta)
