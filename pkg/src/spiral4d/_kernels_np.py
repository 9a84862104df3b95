"""Pure-numpy implementations of the hot kernels (spiral gather/scatter and
sparse unpooling products). Used when the compiled extension is unavailable
or disabled; see spiral4d.kernels for selection."""

import numpy as np

BACKEND_NAME = "numpy"


def gather_rows(x, idx):
    """out[r] = x[idx[r]], with idx == -1 producing a zero row."""
    safe = np.where(idx < 0, 0, idx)
    out = x.take(safe, axis=0)
    out[idx < 0] = 0
    return out


def scatter_add_rows(g, idx, n_rows):
    """Adjoint of gather_rows: accumulate g[r] into out[idx[r]], dropping
    rows where idx == -1."""
    out = np.zeros((n_rows, g.shape[1]), dtype=g.dtype)
    mask = idx >= 0
    np.add.at(out, idx[mask], g[mask])
    return out


def spmm(rows, cols, weights, x, n_rows, row_starts=None):
    """out[r] = sum over entries (r, c, w) of w * x[c]; rows are sorted.

    row_starts (first entry index of each row, valid only when every row has
    at least one entry) enables the fast segment-sum path.
    """
    contrib = weights[:, None] * x[cols]
    if row_starts is not None:
        return np.add.reduceat(contrib, row_starts, axis=0)
    out = np.zeros((n_rows, x.shape[1]), dtype=x.dtype)
    np.add.at(out, rows, contrib)
    return out


def spmm_adjoint(rows, cols, weights, g, n_cols, perm=None, col_starts=None):
    """out[c] = sum over entries (r, c, w) of w * g[r] (transpose apply).

    perm sorts entries by column and col_starts marks segment starts, valid
    only when every column has at least one entry.
    """
    if perm is not None and col_starts is not None:
        contrib = weights[perm, None] * g[rows[perm]]
        return np.add.reduceat(contrib, col_starts, axis=0)
    out = np.zeros((n_cols, g.shape[1]), dtype=g.dtype)
    np.add.at(out, cols, weights[:, None] * g[rows])
    return out
