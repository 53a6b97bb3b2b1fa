"""Small numerical kernels shared by the backends."""

from __future__ import annotations

from functools import lru_cache
from math import factorial

import numpy as np


def phi_functions(z: np.ndarray, order: int) -> list[np.ndarray]:
    """phi_1..phi_order of the exponential integrator, phi_j(z) = sum z^i / (i + j)!."""
    z = np.asarray(z, dtype=float)
    out = [np.empty_like(z) for _ in range(order)]
    small = np.abs(z) < 1.0
    zs = z[small]
    for j in range(1, order + 1):
        acc = np.zeros_like(zs)
        term = np.full_like(zs, 1.0 / factorial(j))
        for i in range(30):
            acc = acc + term
            term = term * zs / (i + j + 1)
        out[j - 1][small] = acc
    zl = z[~small]
    prev = np.exp(zl)
    for j in range(1, order + 1):
        prev = (prev - 1.0 / factorial(j - 1)) / zl
        out[j - 1][~small] = prev
    return out



@lru_cache(maxsize=32)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on (0, 1)."""
    z, w = np.polynomial.legendre.leggauss(order)
    return (z + 1) / 2, w / 2


def composite_gauss(edges, order: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the composite rule on consecutive ``edges``."""
    edges = np.asarray(edges, dtype=float)
    th, w = gauss_legendre(order)
    h = np.diff(edges)
    nodes = edges[:-1, None] + h[:, None] * th[None, :]
    weights = h[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()


def uniform_edges(a: float, b: float, max_width: float) -> np.ndarray:
    n = max(1, int(np.ceil((b - a) / max_width - 1e-12)))
    return np.linspace(a, b, n + 1)
