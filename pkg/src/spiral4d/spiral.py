"""Spiral vertex orderings: k-rings, k-disks, spiral trajectories, and the
fixed-length per-vertex spiral tables consumed by the convolution layers.

Tables depend only on connectivity plus the graph-geodesic start rule, so
they are computed once per topology and reused for every mesh that shares it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import AdjacencyList, Mesh, build_adjacency, graph_geodesic

PAD = -1


def k_ring(adj: AdjacencyList, v: int, k: int) -> set:
    """Vertices at exactly k hops from v: ring(0) = {v},
    ring(k+1) = N(ring(k)) - disk(k)."""
    return _rings(adj, v, k)[k]


def k_disk(adj: AdjacencyList, v: int, k: int) -> set:
    """Vertices at up to k hops from v (union of rings 0..k)."""
    disk = set()
    for ring in _rings(adj, v, k):
        disk |= ring
    return disk


def _rings(adj: AdjacencyList, v: int, k: int) -> list:
    if not 0 <= v < adj.n_vertices:
        raise IndexError(f"vertex {v} out of range")
    if k < 0:
        raise ValueError("k must be >= 0")
    rings = [{v}]
    disk = {v}
    for _ in range(k):
        frontier = set()
        for u in rings[-1]:
            frontier.update(int(w) for w in adj.neighbors[u])
        ring = frontier - disk
        rings.append(ring)
        disk |= ring
    return rings


def _successor_maps(adj: AdjacencyList) -> list:
    """succ[u][a] = vertex following a in u's CCW one-ring (cyclic for
    interior vertices, path order for boundary ones)."""
    succ = []
    for u in range(adj.n_vertices):
        ring = adj.rings[u]
        m = {}
        last = len(ring) - 1
        for j, a in enumerate(ring):
            if j < last:
                m[int(a)] = int(ring[j + 1])
            elif not adj.boundary[u]:
                m[int(a)] = int(ring[0])
        succ.append(m)
    return succ


def _pick_start(candidates, geodesics):
    return min(candidates, key=lambda u: (geodesics[u], u))


def spiral(adj: AdjacencyList, v: int, k: int, geodesics: np.ndarray,
           _succ: list | None = None) -> list:
    """Spiral trajectory around v: rings 0..k concatenated, each ring ordered
    counter-clockwise.

    Ring 1 starts at the vertex with the smallest graph-geodesic distance to
    the reference vertex (the distances are passed in); ring r > 1 starts at
    the vertex adjacent to the previous ring's start with minimal geodesic.
    Ties pick the lower vertex index. For a boundary vertex the open one-ring
    path is traversed from its geodesic-minimal endpoint.
    """
    rings = _rings(adj, v, k)
    succ = _succ if _succ is not None else _successor_maps(adj)
    out = [v]
    if k == 0:
        return out

    # ring 1: the stored CCW one-ring, rotated (or, on a boundary, traversed
    # from the chosen endpoint)
    ring1 = [int(u) for u in adj.rings[v]]
    if adj.boundary[v]:
        if _pick_start((ring1[0], ring1[-1]), geodesics) != ring1[0]:
            ring1 = ring1[::-1]
        ordered = ring1
    else:
        s = ring1.index(_pick_start(ring1, geodesics))
        ordered = ring1[s:] + ring1[:s]
    out.extend(ordered)

    prev_starts = [ordered[0]]
    for r in range(2, k + 1):
        ring = rings[r]
        if not ring:
            break
        inner = rings[r - 1]
        neighbor_sets = {u: set(int(w) for w in adj.neighbors[u]) for u in ring}
        start = None
        for anchor_set in ([prev_starts[-1]], prev_starts):
            cands = [u for u in ring
                     if any(a in neighbor_sets[u] for a in anchor_set)]
            if cands:
                start = _pick_start(cands, geodesics)
                break
        if start is None:
            start = _pick_start(ring, geodesics)
        seq = [start]
        visited = {start}
        cur = start
        while len(seq) < len(ring):
            nxt = None
            ccw = [w for w in neighbor_sets[cur] & ring
                   if w not in visited and succ[cur].get(w) in inner]
            if ccw:
                nxt = min(ccw)
            else:
                touching = [w for w in neighbor_sets[cur] & ring if w not in visited]
                if touching:
                    nxt = min(touching)
                else:  # disconnected remainder of the ring: deterministic jump
                    nxt = _pick_start(ring - visited, geodesics)
            seq.append(nxt)
            visited.add(nxt)
            cur = nxt
        out.extend(seq)
        prev_starts.append(start)
    return out


@dataclass(frozen=True)
class SpiralTable:
    """Fixed-length spiral indices for one hierarchy level.

    indices: (N, L) int64; row v starts with v, entries of PAD (-1) pad the
    suffix of short spirals.
    """

    indices: np.ndarray
    k: int
    reference_vertex: int
    level: int = 0

    def __post_init__(self):
        idx = np.ascontiguousarray(np.asarray(self.indices, dtype=np.int64))
        idx.flags.writeable = False
        object.__setattr__(self, "indices", idx)

    @property
    def n_vertices(self) -> int:
        return self.indices.shape[0]

    @property
    def length(self) -> int:
        return self.indices.shape[1]


def build_spiral_table(mesh: Mesh, k: int = 1, length: int | None = None,
                       reference_vertex: int = 0, level: int = 0) -> SpiralTable:
    """Precompute spirals for every vertex, truncated or PAD-padded to a fixed
    length. Default length covers the longest k-disk on this topology."""
    if k < 0:
        raise ValueError("k must be >= 0")
    adj = build_adjacency(mesh)
    geo = graph_geodesic(mesh, reference_vertex, adj)
    succ = _successor_maps(adj)
    spirals = [spiral(adj, v, k, geo, _succ=succ) for v in range(mesh.n_vertices)]
    if length is None:
        length = max(len(s) for s in spirals)
    if length < 1:
        raise ValueError("spiral length must be >= 1")
    table = np.full((mesh.n_vertices, length), PAD, dtype=np.int64)
    for v, s in enumerate(spirals):
        s = s[:length]
        table[v, : len(s)] = s
    return SpiralTable(indices=table, k=k, reference_vertex=reference_vertex,
                       level=level)


def choose_reference_vertex(mesh: Mesh, spec="max_z") -> int:
    """Resolve a reference-vertex spec: an explicit index, or "max_z" for the
    vertex with the largest z coordinate (nose tip on an upright template).
    Ties pick the lower index."""
    if isinstance(spec, (int, np.integer)):
        idx = int(spec)
        if not 0 <= idx < mesh.n_vertices:
            raise IndexError(f"reference vertex {idx} out of range")
        return idx
    if spec == "max_z":
        return int(np.argmax(mesh.vertices[:, 2]))
    raise ValueError(f"unknown reference vertex spec: {spec!r}")


def nearest_vertex(mesh: Mesh, point: np.ndarray) -> int:
    """Lowest-index vertex closest to a 3D point (used to carry the reference
    vertex down the hierarchy)."""
    d = np.linalg.norm(mesh.vertices - np.asarray(point, dtype=np.float64), axis=1)
    return int(np.argmin(d))
