"""spiral4d: dynamic 3D facial expression synthesis from a single neutral
mesh, built on spiral mesh convolutions and an LSTM motion encoder."""

from .kernels import BACKEND_NAME
from .mesh import Mesh, build_adjacency, graph_geodesic, load_mesh, save_mesh
from .sampling import SamplingHierarchy, SparseMatrix, build_hierarchy, upsample
from .spiral import PAD, SpiralTable, build_spiral_table, k_disk, k_ring, spiral

__version__ = "0.1.0"

__all__ = [
    "BACKEND_NAME",
    "Mesh",
    "PAD",
    "SamplingHierarchy",
    "SparseMatrix",
    "SpiralTable",
    "build_adjacency",
    "build_hierarchy",
    "build_spiral_table",
    "graph_geodesic",
    "k_disk",
    "k_ring",
    "load_mesh",
    "save_mesh",
    "spiral",
    "upsample",
    "__version__",
]
