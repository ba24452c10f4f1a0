"""Kernel backend selection: compiled extension if built, else pure Python."""

from __future__ import annotations

from linkpoison import _kernels_py

try:
    from linkpoison import _speedups as _impl

    BACKEND = "compiled"
except ImportError:  # extension not built; the fallback is fully equivalent
    _impl = _kernels_py
    BACKEND = "python"

connected_components = _impl.connected_components
bfs_distance_aggregate = _impl.bfs_distance_aggregate
triangle_counts = _impl.triangle_counts
greedy_select = _impl.greedy_select
