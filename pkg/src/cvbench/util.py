"""Shared numerics and seeding helpers."""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from a tuple of printable parts.

    Pure function of its arguments: the same parts give the same seed on any
    platform, in any process, for any worker count.
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def sq_distances(A, B, block_elems: int = 1 << 24) -> np.ndarray:
    """Squared Euclidean distances between rows of A and rows of B.

    Computed by broadcasting rather than a BLAS matmul so the reduction order
    (and hence the exact float result) does not depend on BLAS threading.
    Row blocks keep the (rows x m x d) intermediate near ``block_elems``
    elements.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    n, d = A.shape
    m = B.shape[0]
    out = np.empty((n, m))
    rows = max(1, block_elems // max(1, m * max(1, d)))
    for start in range(0, n, rows):
        stop = min(n, start + rows)
        diff = A[start:stop, None, :] - B[None, :, :]
        out[start:stop] = np.einsum("ijk,ijk->ij", diff, diff)
    return out
