"""Benchmark the compiled kernels against the numpy fallback.

Times the spiral gather/scatter pair, the sparse unpool products, and a full
decoder forward+backward pass on a desk-scale hierarchy. Run after building
the extension:

    python benchmarks/bench_kernels.py [--repeats 30]
"""

import argparse
import time

import numpy as np

from spiral4d import kernels, shapes
from spiral4d.autodiff import Graph, Tensor
from spiral4d.model import decode_frame, init_generator
from spiral4d.sampling import build_hierarchy
from spiral4d.spiral import build_spiral_table, choose_reference_vertex, nearest_vertex


def timeit(fn, repeats):
    fn()  # warmup
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_backend(backend, table, q, x, grad, coarse, repeats):
    idx = np.ascontiguousarray(table.indices.reshape(-1))
    n = x.shape[0]
    w = q.weights_as(x.dtype)
    rows, cols = q.rows, q.cols
    results = {}
    results["gather"] = timeit(lambda: backend.gather_rows(x, idx), repeats)
    g = np.ascontiguousarray(grad)
    results["scatter_add"] = timeit(
        lambda: backend.scatter_add_rows(g, idx, n), repeats)
    results["spmm"] = timeit(
        lambda: backend.spmm(rows, cols, w, coarse, q.shape[0], q.row_starts),
        repeats)
    g_fine = np.ascontiguousarray(x[:, : coarse.shape[1]])
    results["spmm_adjoint"] = timeit(
        lambda: backend.spmm_adjoint(rows, cols, w, g_fine, q.shape[1],
                                     q.col_perm, q.col_starts), repeats)
    return results


def bench_decoder(hierarchy, tables, repeats):
    params = init_generator(hierarchy, tables, seed=0)
    z0 = np.zeros((1, 64), dtype=np.float32)
    tensors = params.parameters()

    def step():
        g = Graph()
        z = Tensor(z0)
        out = g.mean(decode_frame(g, z, hierarchy, tables, params))
        g.backward(out, tensors)

    return timeit(step, max(3, repeats // 5))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=30)
    parser.add_argument("--subdivisions", type=int, default=4,
                        help="icosphere subdivision level (4 -> 2562 verts)")
    args = parser.parse_args()

    mesh = shapes.icosphere(args.subdivisions, radius=85.0)
    hierarchy = build_hierarchy(mesh, [5, 5, 5])
    ref = choose_reference_vertex(mesh)
    tables = [
        build_spiral_table(m, 1,
                           reference_vertex=nearest_vertex(m, mesh.vertices[ref]),
                           level=i)
        for i, m in enumerate(hierarchy.levels)
    ]
    table = tables[-1]
    q = hierarchy.ups[-1]
    rng = np.random.default_rng(0)
    d = 16
    x = rng.normal(size=(mesh.n_vertices, d)).astype(np.float32)
    grad = rng.normal(size=(table.indices.size, d)).astype(np.float32)
    coarse = rng.normal(size=(q.shape[1], d)).astype(np.float32)

    print(f"mesh N={mesh.n_vertices}, levels={hierarchy.sizes}, "
          f"L={table.length}, d={d}, active backend={kernels.BACKEND_NAME}")

    backends = [("numpy", kernels.numpy_backend)]
    if kernels.BACKEND_NAME == "compiled":
        from spiral4d import _core
        backends.append(("compiled", _core))

    rows = {}
    for name, backend in backends:
        rows[name] = bench_backend(backend, table, q, x, grad, coarse,
                                   args.repeats)

    names = list(rows[backends[0][0]].keys())
    header = f"{'kernel':<14}" + "".join(f"{n:>12}" for n, _ in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for k in names:
        line = f"{k:<14}"
        for n, _ in backends:
            line += f"{rows[n][k] * 1e6:>10.1f}us"
        if len(backends) == 2:
            line += f"{rows['numpy'][k] / rows['compiled'][k]:>9.1f}x"
        print(line)

    # full decoder forward+backward with each backend selected
    import importlib

    import spiral4d.kernels as kmod
    times = {}
    for n, backend in backends:
        kmod.gather_rows = backend.gather_rows
        kmod.scatter_add_rows = backend.scatter_add_rows
        kmod.spmm = backend.spmm
        kmod.spmm_adjoint = backend.spmm_adjoint
        times[n] = bench_decoder(hierarchy, tables, args.repeats)
    importlib.reload(kmod)
    line = f"{'decoder fw+bw':<14}"
    for n, _ in backends:
        line += f"{times[n] * 1e3:>10.2f}ms"
    if len(backends) == 2:
        line += f"{times['numpy'] / times['compiled']:>9.1f}x"
    print(line)


if __name__ == "__main__":
    main()
