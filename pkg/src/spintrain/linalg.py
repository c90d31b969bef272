"""Small linear-algebra helpers shared by states, solvers and tests."""

from __future__ import annotations

import numpy as np

__all__ = ["twin_space_permutation", "vec_col", "unvec_col"]


def vec_col(mat: np.ndarray) -> np.ndarray:
    """Column-major vectorisation: vec(M)[j*d + i] = M[i, j]."""
    return np.asarray(mat).T.reshape(-1)


def unvec_col(vec: np.ndarray, d: int) -> np.ndarray:
    return np.asarray(vec).reshape(d, d).T


def twin_space_permutation(dims) -> np.ndarray:
    """Index map between the global column-major vec ordering and the
    per-site twin-space ordering of a vectorised density operator.

    For site dimensions ``dims`` the twin space orders basis states as a
    tensor product of local pairs (sigma_k, sigma'_k); the global vec ordering
    is (sigma, sigma') over the full Hilbert space.  Returns ``perm`` with
    ``twin_vector = global_vector[perm]``.
    """
    dims = list(dims)
    total = int(np.prod(dims))
    digits = np.array(np.unravel_index(np.arange(total), dims)).T  # (total, N)
    perm = np.empty(total * total, dtype=np.int64)
    for g_col in range(total):
        dc = digits[g_col]
        base = g_col * total
        for g_row in range(total):
            dr = digits[g_row]
            t = 0
            for k, d in enumerate(dims):
                t = t * d * d + dc[k] * d + dr[k]
            perm[t] = base + g_row
    return perm
