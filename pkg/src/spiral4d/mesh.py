"""Fixed-topology triangular meshes: representation, OBJ/PLY I/O, adjacency,
and graph geodesic distances.

Coordinates are interpreted as millimetres throughout.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed or violates the format."""


class NonManifoldError(ValueError):
    """Raised when connectivity is non-manifold or inconsistently oriented."""


@dataclass(frozen=True)
class Mesh:
    """Triangular surface mesh with immutable vertex and face arrays.

    vertices: (N, 3) float64, millimetres.
    faces: (M, 3) int64 vertex indices, consistently oriented.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must be (N, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError(f"faces must be (M, 3), got {f.shape}")
        if v.shape[0] == 0 or f.shape[0] == 0:
            raise MeshFormatError("empty mesh")
        if f.min(initial=0) < 0 or f.max(initial=-1) >= v.shape[0]:
            raise MeshFormatError("face index out of range")
        degen = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if degen.any():
            raise MeshFormatError(f"degenerate face at index {int(np.argmax(degen))}")
        _check_orientation(f)
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def with_vertices(self, vertices) -> "Mesh":
        """Same connectivity, new vertex positions."""
        return Mesh(np.asarray(vertices, dtype=np.float64), self.faces)


def _check_orientation(faces: np.ndarray):
    """Every directed edge may appear at most once; an undirected edge shared
    by two faces must be traversed in opposite directions."""
    seen = set()
    for fi, (a, b, c) in enumerate(faces):
        for u, v in ((a, b), (b, c), (c, a)):
            e = (int(u), int(v))
            if e in seen:
                raise NonManifoldError(
                    f"inconsistent orientation or non-manifold edge {e} at face {fi}"
                )
            seen.add(e)


def load_mesh(path, fmt: str | None = None) -> Mesh:
    """Load an OBJ or ascii-PLY mesh. Vertex and face order are preserved.

    fmt: "obj" or "ply"; inferred from the file extension when omitted.
    """
    path = str(path)
    if fmt is None:
        fmt = path.rsplit(".", 1)[-1].lower()
    if fmt == "obj":
        return _load_obj(path)
    if fmt == "ply":
        return _load_ply(path)
    raise MeshFormatError(f"unsupported mesh format: {fmt!r}")


def save_mesh(mesh: Mesh, path, fmt: str | None = None):
    """Write a mesh as OBJ or ascii PLY; coordinates keep 9 significant digits
    so a reload reproduces them well within 1e-6 mm."""
    path = str(path)
    if fmt is None:
        fmt = path.rsplit(".", 1)[-1].lower()
    if fmt == "obj":
        _save_obj(mesh, path)
    elif fmt == "ply":
        _save_ply(mesh, path)
    else:
        raise MeshFormatError(f"unsupported mesh format: {fmt!r}")


def _load_obj(path) -> Mesh:
    verts, faces = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshFormatError(f"{path}:{lineno}: malformed vertex line")
                try:
                    verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError as exc:
                    raise MeshFormatError(f"{path}:{lineno}: {exc}") from None
            elif tag == "f":
                if len(parts) != 4:
                    raise MeshFormatError(
                        f"{path}:{lineno}: only triangular faces are supported"
                    )
                idx = []
                for tok in parts[1:]:
                    head = tok.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise MeshFormatError(
                            f"{path}:{lineno}: malformed face index {tok!r}"
                        ) from None
                    if i <= 0:
                        raise MeshFormatError(
                            f"{path}:{lineno}: OBJ face indices are 1-based, got {i}"
                        )
                    idx.append(i - 1)
                faces.append(idx)
            # vt/vn/o/g/s/usemtl/mtllib lines are ignored
    if not verts or not faces:
        raise MeshFormatError(f"{path}: empty mesh")
    try:
        return Mesh(np.array(verts), np.array(faces))
    except ValueError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def _save_obj(mesh: Mesh, path):
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
        for a, b, c in mesh.faces:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


def _load_ply(path) -> Mesh:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0].strip() != "ply":
        raise MeshFormatError(f"{path}: not a PLY file")
    n_vert = n_face = None
    vert_props = []
    cur_element = None
    body_start = None
    for i, line in enumerate(lines[1:], start=1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] != "ascii":
                raise MeshFormatError(f"{path}: only ascii PLY is supported")
        elif parts[0] == "element":
            cur_element = parts[1]
            if parts[1] == "vertex":
                n_vert = int(parts[2])
            elif parts[1] == "face":
                n_face = int(parts[2])
        elif parts[0] == "property" and cur_element == "vertex":
            if parts[1] != "list":
                vert_props.append(parts[-1])
        elif parts[0] == "end_header":
            body_start = i + 1
            break
    if body_start is None or n_vert is None or n_face is None:
        raise MeshFormatError(f"{path}: incomplete PLY header")
    try:
        ix, iy, iz = (vert_props.index(k) for k in ("x", "y", "z"))
    except ValueError:
        raise MeshFormatError(f"{path}: vertex element lacks x/y/z properties") from None
    body = [ln.split() for ln in lines[body_start:] if ln.strip()]
    if len(body) < n_vert + n_face:
        raise MeshFormatError(f"{path}: truncated PLY body")
    verts = np.empty((n_vert, 3), dtype=np.float64)
    for vi in range(n_vert):
        parts = body[vi]
        try:
            verts[vi] = (float(parts[ix]), float(parts[iy]), float(parts[iz]))
        except (ValueError, IndexError) as exc:
            raise MeshFormatError(f"{path}: bad vertex line {vi}: {exc}") from None
    faces = np.empty((n_face, 3), dtype=np.int64)
    for fi in range(n_face):
        parts = body[n_vert + fi]
        if not parts or parts[0] != "3":
            raise MeshFormatError(f"{path}: face {fi} is not a triangle")
        faces[fi] = (int(parts[1]), int(parts[2]), int(parts[3]))
    try:
        return Mesh(verts, faces)
    except ValueError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def _save_ply(mesh: Mesh, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {mesh.n_vertices}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        fh.write(f"element face {mesh.n_faces}\n")
        fh.write("property list uchar int vertex_indices\nend_header\n")
        for x, y, z in mesh.vertices:
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")
        for a, b, c in mesh.faces:
            fh.write(f"3 {a} {b} {c}\n")


@dataclass(frozen=True)
class AdjacencyList:
    """Per-vertex neighborhoods of a manifold triangular mesh.

    neighbors[v]: sorted int64 array of adjacent vertices.
    rings[v]: the one-ring in counter-clockwise order (w.r.t. outward face
        orientation); a closed cycle for interior vertices, an open path for
        boundary vertices.
    boundary[v]: True when the one-ring is an open path.
    """

    neighbors: list = field(repr=False)
    rings: list = field(repr=False)
    boundary: np.ndarray = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.neighbors)

    def degree(self, v: int) -> int:
        return len(self.neighbors[v])


def build_adjacency(mesh: Mesh) -> AdjacencyList:
    """Build sorted neighbor lists and CCW-ordered one-rings.

    For a face (v, a, b) the edge to a precedes the edge to b in the cyclic
    order around v, which is counter-clockwise seen from outside for
    consistently oriented outward faces.
    """
    n = mesh.n_vertices
    succ = [dict() for _ in range(n)]  # successor map around each vertex
    for a, b, c in mesh.faces:
        a, b, c = int(a), int(b), int(c)
        succ[a][b] = c
        succ[b][c] = a
        succ[c][a] = b
    neighbors = []
    rings = []
    boundary = np.zeros(n, dtype=bool)
    for v in range(n):
        nxt_map = succ[v]
        if not nxt_map:
            raise NonManifoldError(f"isolated vertex {v}")
        all_nbrs = set(nxt_map) | set(nxt_map.values())
        preds = set(nxt_map.values())
        starts = [u for u in all_nbrs if u not in preds]
        if len(starts) > 1:
            raise NonManifoldError(f"vertex {v}: one-ring splits into several fans")
        if starts:  # boundary vertex: open path
            boundary[v] = True
            start = starts[0]
        else:
            start = min(all_nbrs)  # deterministic rotation of the cycle
        ring = [start]
        cur = start
        while True:
            nxt = nxt_map.get(cur)
            if nxt is None or nxt == start:
                break
            if nxt in ring[1:]:
                raise NonManifoldError(f"vertex {v}: one-ring is not a simple cycle")
            ring.append(nxt)
            cur = nxt
        if len(ring) != len(all_nbrs):
            raise NonManifoldError(f"vertex {v}: one-ring is not a single cycle/path")
        rings.append(np.array(ring, dtype=np.int64))
        neighbors.append(np.array(sorted(all_nbrs), dtype=np.int64))
    return AdjacencyList(neighbors=neighbors, rings=rings, boundary=boundary)


def graph_geodesic(mesh: Mesh, source: int, adj: AdjacencyList | None = None) -> np.ndarray:
    """Shortest-path distance (mm) from `source` to every vertex along the
    edge graph, Dijkstra with Euclidean edge weights. Unreachable vertices
    get +inf. Ties expand the lower vertex index first.
    """
    if not 0 <= source < mesh.n_vertices:
        raise IndexError(f"source vertex {source} out of range")
    if adj is None:
        adj = build_adjacency(mesh)
    pos = mesh.vertices
    dist = np.full(mesh.n_vertices, np.inf)
    dist[source] = 0.0
    done = np.zeros(mesh.n_vertices, dtype=bool)
    heap = [(0.0, source)]
    while heap:
        d, v = heapq.heappop(heap)
        if done[v]:
            continue
        done[v] = True
        pv = pos[v]
        for u in adj.neighbors[v]:
            if done[u]:
                continue
            nd = d + float(np.linalg.norm(pos[u] - pv))
            if nd < dist[u]:
                dist[u] = nd
                heapq.heappush(heap, (nd, int(u)))
    return dist
