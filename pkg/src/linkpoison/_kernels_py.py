"""Pure-Python kernels for the interpreter-bound graph loops.

Reference implementations of the hot kernels; `linkpoison._speedups` provides
compiled equivalents with identical semantics. Keep the two in lockstep:
parity is covered by tests/test_kernels.py and run-to-run determinism of the
whole toolkit relies on both backends producing the same bytes.
"""

from __future__ import annotations

from collections import deque

import numpy as np


def connected_components(indptr, indices, n):
    """Label nodes by connected component, ids assigned in first-seen order."""
    labels = np.full(n, -1, dtype=np.int32)
    comp = 0
    for start in range(n):
        if labels[start] != -1:
            continue
        labels[start] = comp
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in indices[indptr[u]:indptr[u + 1]]:
                if labels[v] == -1:
                    labels[v] = comp
                    queue.append(v)
        comp += 1
    return labels


def bfs_distance_aggregate(indptr, indices, sources, n):
    """BFS from every source; returns (max distance, sum of distances, pair count).

    Pairs are ordered (source, reachable other node); unreachable nodes are
    ignored. Used for diameter and average path length of a component.
    """
    dist = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    diameter = 0
    total = 0
    pairs = 0
    for s in sources:
        dist.fill(-1)
        dist[s] = 0
        queue[0] = s
        head, tail = 0, 1
        while head < tail:
            u = queue[head]
            head += 1
            du = dist[u]
            for v in indices[indptr[u]:indptr[u + 1]]:
                if dist[v] == -1:
                    dist[v] = du + 1
                    queue[tail] = v
                    tail += 1
        for k in range(tail):
            d = dist[queue[k]]
            if d > 0:
                total += d
                pairs += 1
                if d > diameter:
                    diameter = d
    return diameter, total, pairs


def triangle_counts(indptr, indices, n):
    """Triangles through each node; neighbor lists must be sorted ascending."""
    counts = np.zeros(n, dtype=np.int64)
    for u in range(n):
        nbrs_u = indices[indptr[u]:indptr[u + 1]]
        for v in nbrs_u:
            if v <= u:
                continue
            # merge-count common neighbors of u and v
            nbrs_v = indices[indptr[v]:indptr[v + 1]]
            a, b = 0, 0
            while a < len(nbrs_u) and b < len(nbrs_v):
                x, y = nbrs_u[a], nbrs_v[b]
                if x == y:
                    if x != u and x != v:
                        counts[u] += 1
                        counts[v] += 1
                        counts[x] += 1
                    a += 1
                    b += 1
                elif x < y:
                    a += 1
                else:
                    b += 1
    # every triangle was found from both of its two lowest vertices
    counts //= 2
    return counts


def greedy_select(score, adj, budget):
    """Budgeted greedy edge-flip selection over an upper-triangular score matrix.

    Repeatedly takes the largest |score| cell (first occurrence in row-major
    order on ties, i.e. smallest (i, j)); emits an addition when the score is
    positive and no edge exists, a removal when negative and an edge exists,
    and in every case retires the cell. Cells scored exactly 0 are ineligible.
    Returns a list of (i, j, is_add, magnitude) with at most `budget` entries.
    """
    n = score.shape[0]
    work = np.abs(score)
    edits = []
    remaining = int(budget)
    while remaining > 0:
        flat = int(np.argmax(work))
        i, j = divmod(flat, n)
        if work[i, j] == 0.0:
            break
        s = score[i, j]
        if s > 0 and adj[i, j] == 0:
            edits.append((i, j, True, float(work[i, j])))
            remaining -= 1
        elif s < 0 and adj[i, j] == 1:
            edits.append((i, j, False, float(work[i, j])))
            remaining -= 1
        work[i, j] = 0.0
    return edits
