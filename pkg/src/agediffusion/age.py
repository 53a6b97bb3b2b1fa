"""Age-transport backend: d/da with an inflow slot at age zero.

States are stored as cell averages on a uniform age grid, so the transport
semigroup is an exact shift whenever time is a multiple of the cell width.
Each age cell carries a fiber vector (a scalar, or a Y vector of the
diffusion backend).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.signal import lfilter

from .errors import AlignmentError, ArgumentError, DomainError
from .numerics import phi_functions
from .operators import OperatorHandle, OperatorParams


@dataclass(frozen=True)
class AgeGrid:
    a_max: float
    n_a: int

    def __post_init__(self):
        if not (self.a_max > 0 and self.n_a >= 1):
            raise ArgumentError("age grid needs a_max > 0 and n_a >= 1")

    @property
    def delta_a(self) -> float:
        return self.a_max / self.n_a

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_a + 1) * self.delta_a

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n_a) + 0.5) * self.delta_a

    def steps(self, t: float) -> int:
        """Number of cells covered by time t; t must be a multiple of the cell width."""
        if t < 0:
            raise ArgumentError("time must be non-negative")
        n = t / self.delta_a
        k = int(round(n))
        if abs(n - k) > 1e-9 * max(1.0, n):
            raise AlignmentError(f"t={t} is not a multiple of delta_a={self.delta_a}")
        return k


@dataclass(frozen=True)
class XVector:
    """Head slot (age-zero inflow) and age-indexed tail of fiber vectors."""

    head: np.ndarray
    tail: np.ndarray

    def __post_init__(self):
        h = np.atleast_1d(np.asarray(self.head, dtype=float))
        t = np.asarray(self.tail, dtype=float)
        if t.ndim == 1:
            t = t[:, None]
        if t.shape[1] != h.shape[0]:
            raise ArgumentError("head and tail fibers differ in dimension")
        object.__setattr__(self, "head", h)
        object.__setattr__(self, "tail", t)

    @property
    def fiber_dim(self) -> int:
        return self.head.shape[0]

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.head, self.tail.ravel()])

    @classmethod
    def from_flat(cls, v, n_a: int, d: int) -> "XVector":
        v = np.asarray(v, dtype=float)
        if v.shape != (d * (n_a + 1),):
            raise ArgumentError(f"expected flat vector of length {d * (n_a + 1)}")
        return cls(v[:d], v[d:].reshape(n_a, d))

    @classmethod
    def zeros(cls, n_a: int, d: int) -> "XVector":
        return cls(np.zeros(d), np.zeros((n_a, d)))


def x_norm(x: XVector, grid: AgeGrid, weights: Optional[np.ndarray] = None, p: float = 2.0) -> float:
    """(|head|^p + int |tail(a)|^p da)^(1/p), exact for the cell-average function."""
    w = np.ones(x.fiber_dim) if weights is None else weights
    head = np.sqrt(w @ x.head ** 2)
    cells = np.sqrt(x.tail ** 2 @ w)
    return float((head ** p + grid.delta_a * np.sum(cells ** p)) ** (1 / p))


def tail_admissible(x: XVector, grid: AgeGrid, tol: float = 1e-8, weights=None) -> bool:
    """Truncation check: the last cell is negligible relative to the whole tail."""
    w = np.ones(x.fiber_dim) if weights is None else weights
    cells = np.sqrt(x.tail ** 2 @ w)
    total = np.sqrt(grid.delta_a * np.sum(cells ** 2))
    return bool(cells[-1] <= tol * max(total, 1e-300))


def age_resolvent(lam: float, y, psi, grid: AgeGrid) -> XVector:
    """(lam - A)^{-1}(y, psi): tail(a) = e^{-lam a} y + int_0^a e^{-lam (a-s)} psi(s) ds.

    ``lam`` may be an array broadcasting against the fiber axis, which gives a
    separate rate per fiber component.
    """
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise ArgumentError("lambda must be positive")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    psi = np.asarray(psi, dtype=float)
    if psi.ndim == 1:
        psi = psi[:, None]
    d = y.shape[0]
    lam = np.broadcast_to(lam, (d,))
    z = lam * grid.delta_a
    e = np.exp(-z)
    phi1, phi2 = phi_functions(-z, 2)
    node = np.empty((grid.n_a, d))
    node[0] = y
    if grid.n_a > 1:
        b = psi[:-1] * grid.delta_a * phi1  # exact node increment for constant psi
        for i in range(d):
            node[1:, i] = lfilter([1.0], [1.0, -e[i]], b[:, i])
        powers = np.exp(-np.outer(np.arange(1, grid.n_a), z))
        node[1:] += powers * y
    avg = node * phi1 + psi * grid.delta_a * phi2
    return XVector(np.zeros(d), avg)


def age_shift_semigroup(t: float, x: XVector, grid: AgeGrid) -> XVector:
    """Right shift of the tail by t with zero fill; requires a zero head."""
    if np.any(x.head != 0):
        raise DomainError("shift semigroup acts on the domain closure (zero head)")
    n = grid.steps(t)
    out = np.zeros_like(x.tail)
    if n < grid.n_a:
        out[n:] = x.tail[: grid.n_a - n]
    return XVector(np.zeros_like(x.head), out)


def age_semigroup_integral(t: float, x: XVector, grid: AgeGrid) -> XVector:
    """int_0^t T(s) x ds, exact on cell averages for aligned t."""
    if np.any(x.head != 0):
        raise DomainError("shift semigroup acts on the domain closure (zero head)")
    n = grid.steps(t)
    phi = x.tail
    out = np.zeros_like(phi)
    if n == 0:
        return XVector(np.zeros_like(x.head), out)
    # int_{a-t}^{a} phi averaged over each cell: half weights at both ends
    cs = np.vstack([np.zeros((1, phi.shape[1])), np.cumsum(phi, axis=0)])  # cs[k] = sum_{i<k}
    j = np.arange(grid.n_a)
    lo = np.clip(j - n + 1, 0, None)
    inner = cs[j] - cs[lo]
    end = np.where((j - n >= 0)[:, None], phi[np.clip(j - n, 0, None)], 0.0)
    out = grid.delta_a * (inner + 0.5 * phi + 0.5 * end)
    return XVector(np.zeros_like(x.head), out)


def age_diamond(g, h, t: float, grid: AgeGrid) -> XVector:
    """(S_A diamond (g, h))(t) for data constant on each time cell of width delta_a.

    ``g[n]`` is the inflow on [n da, (n+1) da); ``h[n]`` the tail forcing there.
    Returns exact cell averages of g(t - a) chi_(0,t)(a) + int_0^t T(t - s) h(s) ds.
    """
    n = grid.steps(t)
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    d = g.shape[1]
    out = np.zeros((grid.n_a, d))
    if n == 0:
        return XVector(np.zeros(d), out)
    if g.shape[0] < n or h.shape[0] < n:
        raise ArgumentError(f"data cover fewer than {n} time cells")
    if h.ndim == 2:
        h = h[:, :, None]
    m = min(n, grid.n_a)
    out[:m] = g[n - 1 :: -1][:m]
    half = 0.5 * grid.delta_a
    for k in range(n):
        row = h[n - 1 - k]
        if k < grid.n_a:
            out[k:] += half * row[: grid.n_a - k]
        if k + 1 < grid.n_a:
            out[k + 1 :] += half * row[: grid.n_a - k - 1]
    return XVector(np.zeros(d), out)


def age_apply(x: XVector, grid: AgeGrid) -> XVector:
    """Finite-difference application of A: (-phi(0), -phi').

    Second-order differences of cell averages; used only as an independent
    check of exact formulas.
    """
    phi = x.tail
    da = grid.delta_a
    if grid.n_a < 3:
        raise ArgumentError("need at least 3 age cells")
    left = (15 * phi[0] - 10 * phi[1] + 3 * phi[2]) / 8
    right = (15 * phi[-1] - 10 * phi[-2] + 3 * phi[-3]) / 8
    nodes = np.vstack([left, 0.5 * (phi[1:] + phi[:-1]), right])
    return XVector(-left, -(nodes[1:] - nodes[:-1]) / da)


def age_probes(grid: AgeGrid, d: int = 1, n: int = 64, seed: int = 3) -> list[np.ndarray]:
    """Seeded flat X vectors: a third inflow-only, a third tail-only, the rest mixed."""
    rng = np.random.default_rng(seed)
    a = grid.centers
    out = []
    for i in range(n):
        head = rng.standard_normal(d)
        rate = rng.uniform(0.5, 3.0)
        freq = rng.uniform(0.0, 4.0)
        tail = np.exp(-rate * a)[:, None] * np.cos(freq * a + rng.uniform(0, np.pi))[:, None]
        tail = tail * rng.standard_normal(d)[None, :]
        kind = i % 3
        if kind == 0:
            tail = np.zeros_like(tail)
        elif kind == 1:
            head = np.zeros_like(head)
        out.append(XVector(head, tail).flatten())
    return out


def age_params(p: float = 2.0, omega: float = 0.5) -> OperatorParams:
    """Growth constants for the L^p convolution estimate of the transport operator.

    The inflow part is bounded with constant 1 for any omega >= 0; the tail
    part needs omega > 0 and Hoelder gives (omega p')^(-1/p').  Adding the two
    costs a factor 2^(1 - 1/p).
    """
    pc = p / (p - 1)
    M = 2 ** (1 - 1 / p) * max(1.0, (omega * pc) ** (-1 / pc))
    return OperatorParams(omega_A=omega, M_A=M, p=p, eta=omega + 0.25)


def age_handle(
    grid: AgeGrid,
    d: int = 1,
    weights: Optional[np.ndarray] = None,
    p: float = 2.0,
    params: Optional[OperatorParams] = None,
) -> OperatorHandle:
    """Handle on flat X vectors [head (d), tail (n_a * d)]."""
    if params is None:
        params = age_params(p)
    w = np.ones(d) if weights is None else np.asarray(weights, dtype=float)

    def unflat(v):
        return XVector.from_flat(v, grid.n_a, d)

    def resolvent(lam, v):
        x = unflat(v)
        return age_resolvent(lam, x.head, x.tail, grid).flatten()

    def semigroup(t, v):
        return age_shift_semigroup(t, unflat(v), grid).flatten()

    def semigroup_integral(t, v):
        return age_semigroup_integral(t, unflat(v), grid).flatten()

    def diamond_exact(path: Callable, t):
        n = grid.steps(t)
        if n == 0:
            return np.zeros(d * (grid.n_a + 1)), 0.0
        mids = (np.arange(n) + 0.5) * grid.delta_a
        vals = np.asarray(path(mids), dtype=float)
        g = vals[:, :d]
        h = vals[:, d:].reshape(n, grid.n_a, d)
        return age_diamond(g, h, t, grid).flatten(), 0.0

    def in_closure(v):
        return bool(np.all(unflat(v).head == 0))

    return OperatorHandle(
        resolvent=resolvent,
        semigroup_part=semigroup,
        params=params,
        backend_tag="age_transport",
        norm=lambda v: x_norm(unflat(v), grid, w, p),
        apply=lambda v: age_apply(unflat(v), grid).flatten(),
        semigroup_integral=semigroup_integral,
        diamond_exact=diamond_exact,
        in_closure=in_closure,
        in_domain=in_closure,
        nilpotent_after=grid.a_max,
        time_step=grid.delta_a,
    )
