"""Local Hermitian operator basis and coefficient transforms.

Every operator on ``n`` sites expands in products of a single-site
orthonormal Hermitian basis whose first element is ``I / sqrt(d)``. In
these coordinates a partial trace over site ``v`` keeps exactly the
coefficients whose index at ``v`` is zero, which makes projections onto
``{Tr_v X = 0}`` diagonal.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def local_basis(d: int) -> np.ndarray:
    """Generalized Gell-Mann matrices, orthonormal in Hilbert-Schmidt inner product.

    Returns an array of shape ``(d*d, d, d)`` with element 0 equal to
    ``I / sqrt(d)``.
    """
    mats = [np.eye(d, dtype=complex) / np.sqrt(d)]
    for j in range(d):
        for k in range(j + 1, d):
            s = np.zeros((d, d), dtype=complex)
            s[j, k] = s[k, j] = 1 / np.sqrt(2)
            a = np.zeros((d, d), dtype=complex)
            a[j, k] = -1j / np.sqrt(2)
            a[k, j] = 1j / np.sqrt(2)
            mats += [s, a]
    for l in range(1, d):
        g = np.zeros((d, d), dtype=complex)
        g[np.arange(l), np.arange(l)] = 1.0
        g[l, l] = -l
        mats.append(g / np.sqrt(l * (l + 1)))
    out = np.array(mats)
    out.setflags(write=False)
    return out


def to_coeffs(mats: np.ndarray, d: int, n: int) -> np.ndarray:
    """Coefficients ``Tr[B_alpha X]`` for a matrix or a batch of matrices.

    Input shape ``(..., D, D)`` with ``D = d**n``; output ``(..., d**(2n))``
    (real part only, so inputs are assumed Hermitian).
    """
    mats = np.asarray(mats)
    batch = mats.shape[:-2]
    t = mats.reshape((-1,) + (d,) * (2 * n))
    # bt[alpha, i*d + j] = B_alpha[j, i]
    bt = local_basis(d).transpose(0, 2, 1).reshape(d * d, d * d)
    for k in range(n):
        m = n - k
        t = np.moveaxis(t, (1, m + 1), (-2, -1))
        sh = t.shape[:-2]
        t = t.reshape(sh + (d * d,)) @ bt.T
    return t.real.reshape(batch + (d ** (2 * n),))


def from_coeffs(coeffs: np.ndarray, d: int, n: int) -> np.ndarray:
    """Inverse of :func:`to_coeffs`."""
    coeffs = np.asarray(coeffs)
    batch = coeffs.shape[:-1]
    t = coeffs.reshape((-1,) + (d * d,) * n).astype(complex)
    bf = local_basis(d).reshape(d * d, d * d)
    for _ in range(n):
        t = np.moveaxis(t, 1, -1) @ bf
        t = t.reshape(t.shape[:-1] + (d, d))
    # axes now (b, i0, j0, i1, j1, ...)
    perm = [0] + [1 + 2 * k for k in range(n)] + [2 + 2 * k for k in range(n)]
    D = d ** n
    return t.transpose(perm).reshape(batch + (D, D))


@lru_cache(maxsize=None)
def support_mask(d: int, n: int) -> np.ndarray:
    """Boolean ``(n, d**(2n))`` array; entry ``[v, alpha]`` is ``alpha_v != 0``."""
    idx = np.indices((d * d,) * n).reshape(n, -1)
    mask = idx != 0
    mask.setflags(write=False)
    return mask


def support_size(d: int, n: int) -> np.ndarray:
    return support_mask(d, n).sum(axis=0)
