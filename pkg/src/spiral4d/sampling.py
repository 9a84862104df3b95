"""Mesh resolution hierarchy: quadric-error decimation with collapse-to-
endpoint placement, barycentric up-sampling matrices, and a binary cache.

Coarse vertices are always a subset of fine vertex positions, so surviving
vertices get exactly one-hot rows in the up-sampling matrices while discarded
vertices get the barycentric weights of their projection onto the nearest
coarse triangle.
"""

from __future__ import annotations

import hashlib
import heapq
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .mesh import Mesh
from .spiral import SpiralTable


@dataclass
class SparseMatrix:
    """Row-sorted sparse matrix in (row, col, weight) triplet form."""

    shape: tuple
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    row_starts: np.ndarray | None = field(default=None, repr=False)
    col_perm: np.ndarray | None = field(default=None, repr=False)
    col_starts: np.ndarray | None = field(default=None, repr=False)
    _weight_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.shape = (int(self.shape[0]), int(self.shape[1]))
        self.rows = np.ascontiguousarray(self.rows, dtype=np.int64)
        self.cols = np.ascontiguousarray(self.cols, dtype=np.int64)
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if not (len(self.rows) == len(self.cols) == len(self.weights)):
            raise ValueError("triplet arrays must have equal length")
        n, m = self.shape
        if len(self.rows) and (
            self.rows.min() < 0 or self.rows.max() >= n
            or self.cols.min() < 0 or self.cols.max() >= m
        ):
            raise ValueError("triplet index out of shape bounds")
        order = np.lexsort((self.cols, self.rows))
        self.rows = np.ascontiguousarray(self.rows[order])
        self.cols = np.ascontiguousarray(self.cols[order])
        self.weights = np.ascontiguousarray(self.weights[order])
        key = self.rows * m + self.cols
        if len(key) > 1 and (np.diff(key) == 0).any():
            raise ValueError("duplicate (row, col) entry")
        # segment indices for the fast kernel paths, valid when every
        # row/column has at least one entry
        if len(self.rows) and np.unique(self.rows).size == n:
            self.row_starts = np.searchsorted(self.rows, np.arange(n)).astype(np.int64)
        perm = np.argsort(self.cols, kind="stable").astype(np.int64)
        if len(self.cols) and np.unique(self.cols).size == m:
            self.col_perm = perm
            self.col_starts = np.searchsorted(self.cols[perm], np.arange(m)).astype(np.int64)

    @property
    def nnz(self) -> int:
        return len(self.rows)

    def weights_as(self, dtype):
        dtype = np.dtype(dtype)
        if dtype not in self._weight_cache:
            self._weight_cache[dtype] = np.ascontiguousarray(self.weights, dtype=dtype)
        return self._weight_cache[dtype]

    def dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = self.weights
        return out


def upsample(features: np.ndarray, q: SparseMatrix) -> np.ndarray:
    """Lift coarse per-vertex features to the fine level: out = q @ features."""
    features = np.ascontiguousarray(features)
    if features.ndim != 2 or features.shape[0] != q.shape[1]:
        raise ValueError(
            f"feature shape {features.shape} does not match matrix cols {q.shape[1]}"
        )
    return kernels.spmm(q.rows, q.cols, q.weights_as(features.dtype), features,
                        q.shape[0], q.row_starts)


# ---- quadric-error decimation ----

_BOUNDARY_WEIGHT = 1e3


def _homog(points):
    return np.concatenate([points, np.ones((len(points), 1))], axis=1)


def _quadric_costs(positions, quadrics, us, vs):
    """Cost of collapsing each edge (u, v) to either endpoint.

    Returns (cost, keep_second) where keep_second[i] says vertex vs[i] is the
    cheaper survivor; ties keep the lower index."""
    q = quadrics[us] + quadrics[vs]
    hu = _homog(positions[us])
    hv = _homog(positions[vs])
    cu = np.einsum("ei,eij,ej->e", hu, q, hu)
    cv = np.einsum("ei,eij,ej->e", hv, q, hv)
    lower_is_v = vs < us
    keep_second = (cv < cu) | ((cv == cu) & lower_is_v)
    return np.where(keep_second, cv, cu), keep_second


def _initial_quadrics(mesh: Mesh) -> np.ndarray:
    v, f = mesh.vertices, mesh.faces
    n = v.shape[0]
    e1 = v[f[:, 1]] - v[f[:, 0]]
    e2 = v[f[:, 2]] - v[f[:, 0]]
    nrm = np.cross(e1, e2)
    area2 = np.linalg.norm(nrm, axis=1)
    unit = nrm / np.maximum(area2, 1e-300)[:, None]
    d = -np.einsum("ij,ij->i", unit, v[f[:, 0]])
    plane = np.concatenate([unit, d[:, None]], axis=1)
    k = 0.5 * area2[:, None, None] * plane[:, :, None] * plane[:, None, :]
    quadrics = np.zeros((n, 4, 4))
    for c in range(3):
        np.add.at(quadrics, f[:, c], k)

    # boundary edges get a perpendicular constraint plane so open rims
    # resist collapsing inward
    edge_faces = {}
    for fi, (a, b, c) in enumerate(f):
        for u, w in ((a, b), (b, c), (c, a)):
            key = (min(u, w), max(u, w))
            edge_faces.setdefault(key, []).append(fi)
    for (u, w), inc in edge_faces.items():
        if len(inc) != 1:
            continue
        edge = v[w] - v[u]
        c_nrm = np.cross(edge, unit[inc[0]])
        ln = np.linalg.norm(c_nrm)
        if ln < 1e-300:
            continue
        c_nrm = c_nrm / ln
        plane_b = np.append(c_nrm, -c_nrm @ v[u])
        kb = _BOUNDARY_WEIGHT * (edge @ edge) * np.outer(plane_b, plane_b)
        quadrics[u] += kb
        quadrics[w] += kb
    return quadrics


class _DecimationState:
    def __init__(self, mesh: Mesh):
        self.pos = mesh.vertices
        self.faces = mesh.faces.copy()
        self.face_alive = np.ones(len(self.faces), dtype=bool)
        self.vertex_faces = [set() for _ in range(mesh.n_vertices)]
        for fi, face in enumerate(self.faces):
            for u in face:
                self.vertex_faces[int(u)].add(fi)
        self.nbrs = [set() for _ in range(mesh.n_vertices)]
        for a, b, c in self.faces:
            a, b, c = int(a), int(b), int(c)
            self.nbrs[a].update((b, c))
            self.nbrs[b].update((a, c))
            self.nbrs[c].update((a, b))
        self.quadrics = _initial_quadrics(mesh)
        self.alive = np.ones(mesh.n_vertices, dtype=bool)
        self.version = np.zeros(mesh.n_vertices, dtype=np.int64)

    def opposite_vertices(self, u, v):
        third = set()
        for fi in self.vertex_faces[u] & self.vertex_faces[v]:
            third.update(int(x) for x in self.faces[fi] if x != u and x != v)
        return third

    def collapse_ok(self, keep, drop):
        """Link condition, degree guards, and face-flip rejection for a
        candidate collapse drop -> keep."""
        common = self.nbrs[keep] & self.nbrs[drop]
        shared = self.opposite_vertices(keep, drop)
        if common != shared or not 1 <= len(shared) <= 2:
            return False
        new_deg = len((self.nbrs[keep] | self.nbrs[drop]) - {keep, drop})
        if new_deg < 3:
            return False
        for w in common:
            if len(self.nbrs[w]) - 1 < 3:
                return False
        moved = [fi for fi in self.vertex_faces[drop]
                 if keep not in map(int, self.faces[fi])]
        if not moved:
            return False
        tri = self.faces[np.array(moved, dtype=np.int64)]
        old = self._normals(tri)
        tri_new = np.where(tri == drop, keep, tri)
        new = self._normals(tri_new)
        norms = np.linalg.norm(new, axis=1)
        if (norms < 1e-12).any():
            return False
        if (np.einsum("ij,ij->i", old, new) <= 0).any():
            return False
        return True

    def _normals(self, tri):
        p = self.pos
        return np.cross(p[tri[:, 1]] - p[tri[:, 0]], p[tri[:, 2]] - p[tri[:, 0]])

    def collapse(self, keep, drop):
        self.quadrics[keep] = self.quadrics[keep] + self.quadrics[drop]
        for fi in list(self.vertex_faces[drop]):
            face = self.faces[fi]
            if keep in map(int, face):
                self.face_alive[fi] = False
                for u in map(int, face):
                    self.vertex_faces[u].discard(fi)
            else:
                self.faces[fi] = np.where(face == drop, keep, face)
                self.vertex_faces[drop].discard(fi)
                self.vertex_faces[keep].add(fi)
        for w in self.nbrs[drop]:
            if w != keep:
                self.nbrs[w].discard(drop)
                self.nbrs[w].add(keep)
                self.nbrs[keep].add(w)
        self.nbrs[keep].discard(drop)
        self.nbrs[keep].discard(keep)
        for w in list(self.nbrs[drop]):
            self.nbrs[w].discard(drop)
        self.nbrs[drop] = set()
        self.alive[drop] = False
        self.version[keep] += 1
        self.version[drop] += 1


def decimate(mesh: Mesh, target_count: int):
    """Quadric-error edge collapse down to target_count vertices.

    Collapses place the survivor at an existing endpoint, so the coarse
    vertex set is a subset of the fine one. Returns (coarse_mesh, kept) with
    kept mapping coarse indices to fine indices. Stops early with a warning
    if no manifold-preserving collapse remains.
    """
    if target_count < 4:
        raise ValueError("target_count must be >= 4")
    n = mesh.n_vertices
    if target_count >= n:
        return mesh, np.arange(n, dtype=np.int64)

    st = _DecimationState(mesh)
    heap = []

    def push_edges(us, vs):
        us = np.asarray(us, dtype=np.int64)
        vs = np.asarray(vs, dtype=np.int64)
        if us.size == 0:
            return
        cost, keep_second = _quadric_costs(st.pos, st.quadrics, us, vs)
        for i in range(len(us)):
            u, v = int(us[i]), int(vs[i])
            heapq.heappush(heap, (
                float(cost[i]), u, v, bool(keep_second[i]),
                int(st.version[u]), int(st.version[v]),
            ))

    first = np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]],
                            mesh.faces[:, [2, 0]]])
    und = np.unique(np.sort(first, axis=1), axis=0)
    push_edges(und[:, 0], und[:, 1])

    remaining = n
    while remaining > target_count and heap:
        cost, u, v, keep_second, ver_u, ver_v = heapq.heappop(heap)
        if not (st.alive[u] and st.alive[v]):
            continue
        if ver_u != st.version[u] or ver_v != st.version[v]:
            continue
        if v not in st.nbrs[u]:
            continue
        keep, drop = (v, u) if keep_second else (u, v)
        if not st.collapse_ok(keep, drop):
            if not st.collapse_ok(drop, keep):
                continue
            keep, drop = drop, keep
        st.collapse(keep, drop)
        remaining -= 1
        others = np.fromiter(st.nbrs[keep], dtype=np.int64)
        push_edges(np.full(len(others), keep, dtype=np.int64), others)

    if remaining > target_count:
        warnings.warn(
            f"decimation stopped early at {remaining} vertices "
            f"(target {target_count}): no manifold-preserving collapse left"
        )
    kept = np.flatnonzero(st.alive).astype(np.int64)
    fine_to_coarse = np.full(n, -1, dtype=np.int64)
    fine_to_coarse[kept] = np.arange(len(kept))
    faces = st.faces[st.face_alive]
    coarse = Mesh(mesh.vertices[kept], fine_to_coarse[faces])
    return coarse, kept


# ---- barycentric up-sampling matrices ----

def _closest_point_barycentric(a, b, c, p):
    """Closest point on triangles (a, b, c) to point p, vectorized over
    triangles. Returns (bary (n,3), dist_sq (n,), interior (n,))."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    n = len(a)
    bary = np.empty((n, 3))
    interior = np.zeros(n, dtype=bool)
    done = np.zeros(n, dtype=bool)

    def assign(mask, w0, w1, w2):
        m = mask & ~done
        bary[m, 0] = np.broadcast_to(w0, (n,))[m] if np.ndim(w0) else w0
        bary[m, 1] = np.broadcast_to(w1, (n,))[m] if np.ndim(w1) else w1
        bary[m, 2] = np.broadcast_to(w2, (n,))[m] if np.ndim(w2) else w2
        done[m] = True

    assign((d1 <= 0) & (d2 <= 0), 1.0, 0.0, 0.0)
    assign((d3 >= 0) & (d4 <= d3), 0.0, 1.0, 0.0)
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        t = d1 / (d1 - d3)
    assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), 1.0 - t, t, 0.0)
    assign((d6 >= 0) & (d5 <= d6), 0.0, 0.0, 1.0)
    vb = d5 * d2 - d1 * d6
    with np.errstate(divide="ignore", invalid="ignore"):
        t = d2 / (d2 - d6)
    assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), 1.0 - t, 0.0, t)
    va = d3 * d6 - d5 * d4
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
    assign((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), 0.0, 1.0 - t, t)
    interior[~done] = True
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    m = ~done
    bary[m, 0] = (1.0 - v - w)[m]
    bary[m, 1] = v[m]
    bary[m, 2] = w[m]
    closest = bary[:, 0, None] * a + bary[:, 1, None] * b + bary[:, 2, None] * c
    dist_sq = np.einsum("ij,ij->i", closest - p, closest - p)
    return bary, dist_sq, interior


def build_up_matrix(fine: Mesh, coarse: Mesh, kept: np.ndarray,
                    knn: int = 8, all_faces: bool = False) -> SparseMatrix:
    """Up-sampling matrix from a coarse mesh back to the fine one.

    Surviving fine vertices get a one-hot row on their coarse counterpart;
    discarded vertices get the barycentric coordinates of their closest point
    on the nearest coarse triangle (candidates pruned by a k-nearest coarse
    vertex search unless all_faces is set). Projections that land outside
    every candidate triangle are clamped to the nearest edge or corner and
    counted in a warning.
    """
    n_fine, n_coarse = fine.n_vertices, coarse.n_vertices
    kept = np.asarray(kept, dtype=np.int64)
    if kept.shape != (n_coarse,):
        raise ValueError("kept map must have one fine index per coarse vertex")
    rows, cols, weights = [], [], []
    rows.extend(kept.tolist())
    cols.extend(range(n_coarse))
    weights.extend([1.0] * n_coarse)

    discarded = np.setdiff1d(np.arange(n_fine, dtype=np.int64), kept)
    if discarded.size:
        vert_faces = [[] for _ in range(n_coarse)]
        for fi, face in enumerate(coarse.faces):
            for u in face:
                vert_faces[int(u)].append(fi)
        tree = cKDTree(coarse.vertices)
        tri = coarse.faces
        pa, pb, pc = (coarse.vertices[tri[:, i]] for i in range(3))
        clamped = 0
        for v in discarded:
            p = fine.vertices[v]
            if all_faces:
                cand = np.arange(len(tri))
            else:
                _, nn = tree.query(p, k=min(knn, n_coarse))
                cand = np.unique(np.concatenate(
                    [np.asarray(vert_faces[int(j)], dtype=np.int64)
                     for j in np.atleast_1d(nn)]
                ))
            bary, dist_sq, interior = _closest_point_barycentric(
                pa[cand], pb[cand], pc[cand], p
            )
            best = int(np.lexsort((cand, dist_sq))[0])
            if not interior[best]:
                clamped += 1
            w = np.maximum(bary[best], 0.0)
            w = w / w.sum()
            face = tri[cand[best]]
            for ci, wi in zip(face, w):
                rows.append(int(v))
                cols.append(int(ci))
                weights.append(float(wi))
        if clamped:
            warnings.warn(
                f"{clamped} discarded vertices projected outside every coarse "
                f"triangle and were clamped"
            )
    return SparseMatrix((n_fine, n_coarse), np.array(rows), np.array(cols),
                        np.array(weights))


# ---- hierarchy ----

@dataclass
class SamplingHierarchy:
    """Mesh pyramid ordered coarse to fine with up-sampling matrices.

    levels[0] is the coarsest mesh; ups[k] lifts level-k features to level
    k+1; kept[k] maps level-k vertex indices to level-(k+1) indices.
    """

    levels: list
    ups: list
    kept: list

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def sizes(self) -> list:
        return [m.n_vertices for m in self.levels]

    def down_maps(self) -> list:
        """Per pair, the fine-to-coarse survivor map (-1 for discarded)."""
        maps = []
        for k, kept in enumerate(self.kept):
            m = np.full(self.levels[k + 1].n_vertices, -1, dtype=np.int64)
            m[kept] = np.arange(len(kept))
            maps.append(m)
        return maps

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for mesh in self.levels:
            h.update(mesh.vertices.tobytes())
            h.update(mesh.faces.tobytes())
        for kept in self.kept:
            h.update(kept.tobytes())
        for up in self.ups:
            h.update(up.rows.tobytes())
            h.update(up.cols.tobytes())
            h.update(up.weights.tobytes())
        return h.hexdigest()


def build_hierarchy(mesh: Mesh, factors=(5, 5, 5, 5)) -> SamplingHierarchy:
    """Decimate by each reduction factor in turn (vertex target is
    ceil(N / factor)) and build the up-sampling matrix for every adjacent
    pair. Deterministic for identical inputs."""
    factors = list(factors)
    if not factors:
        raise ValueError("factors must be nonempty")
    if any(f <= 1 for f in factors):
        raise ValueError("reduction factors must be > 1")
    fine_levels = [mesh]
    kept_maps = []
    ups = []
    for f in factors:
        cur = fine_levels[-1]
        target = max(4, -(-cur.n_vertices // f))
        coarse, kept = decimate(cur, target)
        ups.append(build_up_matrix(cur, coarse, kept))
        fine_levels.append(coarse)
        kept_maps.append(kept)
    return SamplingHierarchy(
        levels=fine_levels[::-1],
        ups=ups[::-1],
        kept=kept_maps[::-1],
    )


# ---- binary cache ----

_CACHE_MAGIC = b"S4DHIER"
_CACHE_VERSION = 1
_ARR_DTYPES = {0: "<f8", 1: "<i8"}
_ARR_CODES = {np.dtype(np.float64): 0, np.dtype(np.int64): 1}


def _pack_array(arr) -> bytes:
    arr = np.ascontiguousarray(arr)
    code = _ARR_CODES[arr.dtype]
    head = struct.pack("<BB", code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}q", *arr.shape)
    return head + dims + arr.astype(_ARR_DTYPES[code]).tobytes()


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.ofs = 0

    def take(self, n):
        out = self.buf[self.ofs : self.ofs + n]
        if len(out) != n:
            raise ValueError("truncated cache file")
        self.ofs += n
        return out

    def i64(self):
        return struct.unpack("<q", self.take(8))[0]

    def array(self):
        code, ndim = struct.unpack("<BB", self.take(2))
        shape = struct.unpack(f"<{ndim}q", self.take(8 * ndim))
        dtype = np.dtype(_ARR_DTYPES[code])
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(self.take(count * dtype.itemsize), dtype=dtype)
        return data.reshape(shape).copy()


def save_cache(path, hierarchy: SamplingHierarchy, tables, meta=None) -> str:
    """Write hierarchy plus per-level spiral tables; returns the payload's
    sha256 content hash (also stored in the file for integrity checks)."""
    meta = dict(meta or {})
    chunks = []
    chunks.append(struct.pack("<q", len(meta)))
    for k in sorted(meta):
        kb = k.encode("utf-8")
        vb = str(meta[k]).encode("utf-8")
        chunks.append(struct.pack("<q", len(kb)) + kb)
        chunks.append(struct.pack("<q", len(vb)) + vb)
    chunks.append(struct.pack("<q", hierarchy.n_levels))
    for mesh in hierarchy.levels:
        chunks.append(_pack_array(mesh.vertices))
        chunks.append(_pack_array(mesh.faces))
    for kept in hierarchy.kept:
        chunks.append(_pack_array(kept))
    for up in hierarchy.ups:
        chunks.append(struct.pack("<qq", *up.shape))
        chunks.append(_pack_array(up.rows))
        chunks.append(_pack_array(up.cols))
        chunks.append(_pack_array(up.weights))
    tables = list(tables)
    chunks.append(struct.pack("<q", len(tables)))
    for t in tables:
        chunks.append(struct.pack("<qqq", t.level, t.k, t.reference_vertex))
        chunks.append(_pack_array(t.indices))
    payload = b"".join(chunks)
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC + bytes([_CACHE_VERSION]))
        fh.write(digest)
        fh.write(payload)
    return digest.hex()


def load_cache(path):
    """Reload a cache file; returns (hierarchy, tables, meta, content_hash).
    Raises on magic/version mismatch or corrupted payload."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(_CACHE_MAGIC)] != _CACHE_MAGIC:
        raise ValueError(f"{path}: not a spiral4d hierarchy cache")
    version = blob[len(_CACHE_MAGIC)]
    if version != _CACHE_VERSION:
        raise ValueError(f"{path}: cache version {version} not supported")
    ofs = len(_CACHE_MAGIC) + 1
    digest = blob[ofs : ofs + 32]
    payload = blob[ofs + 32 :]
    if hashlib.sha256(payload).digest() != digest:
        raise ValueError(f"{path}: cache payload corrupted")
    r = _Reader(payload)
    meta = {}
    for _ in range(r.i64()):
        klen = r.i64()
        key = r.take(klen).decode("utf-8")
        vlen = r.i64()
        meta[key] = r.take(vlen).decode("utf-8")
    n_levels = r.i64()
    levels = [Mesh(r.array(), r.array()) for _ in range(n_levels)]
    kept = [r.array() for _ in range(n_levels - 1)]
    ups = []
    for _ in range(n_levels - 1):
        shape = (r.i64(), r.i64())
        ups.append(SparseMatrix(shape, r.array(), r.array(), r.array()))
    tables = []
    for _ in range(r.i64()):
        level, k, ref = r.i64(), r.i64(), r.i64()
        tables.append(SpiralTable(indices=r.array(), k=k, reference_vertex=ref,
                                  level=level))
    hierarchy = SamplingHierarchy(levels=levels, ups=ups, kept=kept)
    return hierarchy, tables, meta, digest.hex()
