"""Independent reference computations used by the test-suite.

None of these share code with the package: they are slow, direct formulas
kept deliberately simple.
"""
from __future__ import annotations

import numpy as np


def spectral_green(x, sources=None, charges=None, t=2e-3, n=22, basis=None):
    """Zero-mean periodic Green's function from a heat-regularised reciprocal sum.

    ``G_t = (2 pi / V) sum_{k != 0} exp(-t k^2) cos(k.x) / k^2`` is the heat flow
    of ``G`` for time ``t``.  Away from the sources ``Laplacian G = 2 pi / V`` is
    constant, so ``G = G_t - 2 pi t / V`` up to ``exp(-d^2 / 4t)`` where ``d`` is
    the distance to the nearest source image.  With several sources of total
    charge zero the constant cancels.
    """
    x = np.asarray(x, dtype=float)
    B = np.eye(3) if basis is None else np.asarray(basis, dtype=float)
    V = abs(np.linalg.det(B))
    dual = np.linalg.inv(B).T
    if sources is None:
        sources = np.zeros((1, 3))
        charges = np.ones(1)
    sources = np.atleast_2d(sources)
    charges = np.asarray(charges, dtype=float)
    r = np.arange(-n, n + 1)
    total = 0.0
    for i in r:
        N = np.stack(np.meshgrid([i], r, r, indexing="ij"), -1).reshape(-1, 3)
        N = N[np.any(N != 0, axis=1)]
        k = 2.0 * np.pi * N @ dual.T
        k2 = np.einsum("ij,ij->i", k, k)
        S = np.cos((x - sources) @ k.T).T @ charges
        total += np.sum(np.exp(-t * k2) * S / k2)
    return 2.0 * np.pi / V * total - 2.0 * np.pi * t / V * charges.sum()


def sharp_image_difference(x, y, R=40):
    """``G(x) - G(y)`` on the unit cubic torus from a sharp spherical image sum.

    The background ``-(1/V) int 1/(2|x - u|)`` over the ball contributes
    ``pi |x|^2 / 3`` (plus an x-independent constant that cancels).
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    n = int(np.ceil(R)) + 1
    r = np.arange(-n, n + 1)
    L = np.stack(np.meshgrid(r, r, r, indexing="ij"), -1).reshape(-1, 3).astype(float)
    L = L[np.linalg.norm(L, axis=1) <= R]
    s = np.sum(0.5 / np.linalg.norm(x - L, axis=1) - 0.5 / np.linalg.norm(y - L, axis=1))
    return s + np.pi / 3.0 * (x @ x - y @ y)


def fd_laplacian(fun, x, step):
    """Plain 7-point Laplacian."""
    x = np.asarray(x, float)
    v0 = fun(x)
    acc = -6.0 * v0
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        acc += fun(x + e) + fun(x - e)
    return acc / step**2


def wedge_brute(a, b):
    """``a ^ b`` coefficient of ``e0123`` by expanding both 2-forms into 4x4 matrices."""
    import itertools

    pairs = ((0, 1), (0, 2), (0, 3), (2, 3), (3, 1), (1, 2))

    def mat(c):
        A = np.zeros((4, 4))
        for k, (i, j) in enumerate(pairs):
            A[i, j] += c[k]
            A[j, i] -= c[k]
        return A

    A, Bm = mat(a), mat(b)
    total = 0.0
    for p in itertools.permutations(range(4)):
        sign = np.linalg.det(np.eye(4)[list(p)])
        total += sign * A[p[0], p[1]] * Bm[p[2], p[3]]
    return total / 4.0


def hodge_brute(g, orientation=1):
    """Hodge star on 2-forms from ``*(e^a ^ e^b) = (1/2) sqrt|g| g^{ac} g^{bd} eps_{cdef} e^e ^ e^f``."""
    import itertools

    pairs = ((0, 1), (0, 2), (0, 3), (2, 3), (3, 1), (1, 2))
    eps = np.zeros((4, 4, 4, 4))
    for p in itertools.permutations(range(4)):
        eps[p] = np.linalg.det(np.eye(4)[list(p)])
    gi = np.linalg.inv(g)
    vol = np.sqrt(np.linalg.det(g)) * orientation
    S = np.zeros((6, 6))
    for col, (a, b) in enumerate(pairs):
        F = np.zeros((4, 4))
        F[a, b], F[b, a] = 1.0, -1.0
        Fup = gi @ F @ gi.T
        star = 0.5 * vol * np.einsum("cd,cdef->ef", Fup, eps)
        S[:, col] = [star[i, j] for i, j in pairs]
    return S
