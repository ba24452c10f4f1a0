# cython: boundscheck=False, wraparound=False, cdivision=True
# Compiled versions of the kernels in _kernels_py; semantics must match exactly.

import numpy as np

cimport numpy as cnp

cnp.import_array()


def connected_components(cnp.int32_t[::1] indptr, cnp.int32_t[::1] indices, int n):
    labels_arr = np.full(n, -1, dtype=np.int32)
    cdef cnp.int32_t[::1] labels = labels_arr
    queue_arr = np.empty(n, dtype=np.int32)
    cdef cnp.int32_t[::1] queue = queue_arr
    cdef int comp = 0
    cdef int start, head, tail, u, v
    cdef cnp.int32_t k
    for start in range(n):
        if labels[start] != -1:
            continue
        labels[start] = comp
        queue[0] = start
        head = 0
        tail = 1
        while head < tail:
            u = queue[head]
            head += 1
            for k in range(indptr[u], indptr[u + 1]):
                v = indices[k]
                if labels[v] == -1:
                    labels[v] = comp
                    queue[tail] = v
                    tail += 1
        comp += 1
    return labels_arr


def bfs_distance_aggregate(cnp.int32_t[::1] indptr, cnp.int32_t[::1] indices,
                           cnp.int32_t[::1] sources, int n):
    dist_arr = np.empty(n, dtype=np.int64)
    queue_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] dist = dist_arr
    cdef cnp.int64_t[::1] queue = queue_arr
    cdef cnp.int64_t diameter = 0, total = 0, pairs = 0
    cdef cnp.int64_t du, d
    cdef int si, s, head, tail, u, v, k, q
    for si in range(sources.shape[0]):
        s = sources[si]
        for k in range(n):
            dist[k] = -1
        dist[s] = 0
        queue[0] = s
        head = 0
        tail = 1
        while head < tail:
            u = <int>queue[head]
            head += 1
            du = dist[u]
            for k in range(indptr[u], indptr[u + 1]):
                v = indices[k]
                if dist[v] == -1:
                    dist[v] = du + 1
                    queue[tail] = v
                    tail += 1
        for q in range(tail):
            d = dist[queue[q]]
            if d > 0:
                total += d
                pairs += 1
                if d > diameter:
                    diameter = d
    return int(diameter), int(total), int(pairs)


def triangle_counts(cnp.int32_t[::1] indptr, cnp.int32_t[::1] indices, int n):
    counts_arr = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] counts = counts_arr
    cdef int u, v, k
    cdef int a, b, ua, ub, x, y
    for u in range(n):
        for k in range(indptr[u], indptr[u + 1]):
            v = indices[k]
            if v <= u:
                continue
            a = indptr[u]
            ua = indptr[u + 1]
            b = indptr[v]
            ub = indptr[v + 1]
            while a < ua and b < ub:
                x = indices[a]
                y = indices[b]
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
    for u in range(n):
        counts[u] //= 2
    return counts_arr


def greedy_select(cnp.float64_t[:, ::1] score, cnp.float64_t[:, ::1] adj, int budget):
    cdef int n = score.shape[0]
    work_arr = np.abs(np.asarray(score))
    cdef cnp.float64_t[:, ::1] work = work_arr
    cdef int remaining = budget
    cdef int i, j, bi, bj
    cdef cnp.float64_t best, s
    edits = []
    while remaining > 0:
        best = 0.0
        bi = -1
        bj = -1
        for i in range(n):
            for j in range(n):
                if work[i, j] > best:
                    best = work[i, j]
                    bi = i
                    bj = j
        if bi < 0:
            break
        s = score[bi, bj]
        if s > 0 and adj[bi, bj] == 0:
            edits.append((bi, bj, True, best))
            remaining -= 1
        elif s < 0 and adj[bi, bj] == 1:
            edits.append((bi, bj, False, best))
            remaining -= 1
        work[bi, bj] = 0.0
    return edits
