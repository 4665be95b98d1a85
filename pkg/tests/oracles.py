"""Independent brute-force references used by the tests."""

from __future__ import annotations

import itertools

import numpy as np


def temporal_bruteforce(n, n_days, triples, min_gap=1, max_gap=5):
    """Enumerate every time-respecting walk; return (betweenness, closeness, dist)."""
    by_src = {}
    for s, t, d in set(map(tuple, triples)):
        if s != t:
            by_src.setdefault(s, []).append((t, d))
    seqs = set()

    def extend(path, day):
        seqs.add(tuple(path))
        for t, d in by_src.get(path[-1], []):
            if day is None or min_gap <= d - day <= max_gap:
                extend(path + [t], d)

    for s in range(n):
        extend([s], None)
    dist = np.full((n, n), -1)
    for s in range(n):
        dist[s, s] = 0
    for q in seqs:
        if len(q) > 1:
            s, t = q[0], q[-1]
            if s != t and (dist[s, t] < 0 or len(q) - 1 < dist[s, t]):
                dist[s, t] = len(q) - 1
    bc = np.zeros(n)
    for q in seqs:
        s, t = q[0], q[-1]
        if s != t and len(q) - 1 == dist[s, t]:
            for v in q[1:-1]:
                bc[v] += 1
    cc = np.zeros(n)
    for s, t in itertools.permutations(range(n), 2):
        if dist[s, t] > 0:
            cc[t] += 1.0 / dist[s, t]
    return bc, cc, dist
