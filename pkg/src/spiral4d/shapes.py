"""Procedural test and template geometry: icospheres, fans, strips, and a
face-like ovoid template used by the synthetic dataset generator.

All shapes are closed or bordered manifold meshes with outward CCW faces.
"""

from __future__ import annotations

import numpy as np

from .mesh import Mesh


def tetrahedron(edge_length: float = 1.0) -> Mesh:
    """Regular tetrahedron, the smallest closed triangular mesh."""
    s = edge_length / (2.0 * np.sqrt(2.0))
    v = s * np.array(
        [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64
    )
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]], dtype=np.int64)
    return Mesh(v, f)


def fan(n_ring: int = 6, radius: float = 1.0) -> Mesh:
    """Closed triangle fan in the z=0 plane: center vertex 0, ring 1..n_ring
    counter-clockwise (normals +z)."""
    if n_ring < 3:
        raise ValueError("fan needs at least 3 ring vertices")
    ang = 2.0 * np.pi * np.arange(n_ring) / n_ring
    verts = np.zeros((n_ring + 1, 3))
    verts[1:, 0] = radius * np.cos(ang)
    verts[1:, 1] = radius * np.sin(ang)
    faces = [[0, 1 + i, 1 + (i + 1) % n_ring] for i in range(n_ring)]
    return Mesh(verts, np.array(faces, dtype=np.int64))


def strip(n_steps: int = 10, spacing: float = 1.0, height: float = 2.0) -> Mesh:
    """Triangle strip whose bottom row 0..n_steps is collinear with the given
    spacing, so edge-graph distances along the bottom grow by `spacing`."""
    nb = n_steps + 1
    bottom = np.stack(
        [spacing * np.arange(nb), np.zeros(nb), np.zeros(nb)], axis=1
    )
    top = np.stack(
        [spacing * (np.arange(n_steps) + 0.5),
         np.full(n_steps, height),
         np.zeros(n_steps)],
        axis=1,
    )
    verts = np.concatenate([bottom, top], axis=0)
    faces = []
    for i in range(n_steps):
        t = nb + i
        faces.append([i, i + 1, t])
        if i + 1 < n_steps:
            faces.append([i + 1, nb + i + 1, t])
    return Mesh(verts, np.array(faces, dtype=np.int64))


_ICO_T = (1.0 + np.sqrt(5.0)) / 2.0

_ICO_VERTS = np.array(
    [
        [-1, _ICO_T, 0], [1, _ICO_T, 0], [-1, -_ICO_T, 0], [1, -_ICO_T, 0],
        [0, -1, _ICO_T], [0, 1, _ICO_T], [0, -1, -_ICO_T], [0, 1, -_ICO_T],
        [_ICO_T, 0, -1], [_ICO_T, 0, 1], [-_ICO_T, 0, -1], [-_ICO_T, 0, 1],
    ],
    dtype=np.float64,
)

_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ],
    dtype=np.int64,
)


def icosphere(subdivisions: int = 0, radius: float = 1.0) -> Mesh:
    """Icosahedron subdivided `subdivisions` times and projected to a sphere.

    Vertex count is 10 * 4**subdivisions + 2 (so 12, 42, 162, 642, 2562, ...).
    """
    verts = [v / np.linalg.norm(v) for v in _ICO_VERTS]
    faces = [tuple(f) for f in _ICO_FACES]
    for _ in range(subdivisions):
        midpoint = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return Mesh(radius * np.array(verts), np.array(faces, dtype=np.int64))


def face_template(subdivisions: int = 4, size: float = 85.0) -> Mesh:
    """Face-like ovoid built from an icosphere: +z is the facial direction and
    the highest-z vertex is the nose tip, which makes it a stable spiral
    reference. Dimensions in millimetres (default head ~170 mm tall).
    """
    sphere = icosphere(subdivisions, radius=1.0)
    u = sphere.vertices
    nose = np.array([0.0, -0.08, 1.0])
    nose /= np.linalg.norm(nose)
    bump = np.exp(-np.sum((u - nose) ** 2, axis=1) / (2 * 0.18**2))
    v = u * (1.0 + 0.22 * bump)[:, None]
    v = v * np.array([0.80, 1.00, 0.78]) * size
    return Mesh(v, sphere.faces)
