"""Fermionic Brownian motion: marginal densities and exact Grassmann expectations.

Generator layout for a grid of N times in n odd dimensions: an optional block
of ``offset`` leading generators (used for the start point xi), then for each
slot k = 1..N the block theta_k^1..theta_k^n followed by rho_k^1..rho_k^n.
Berezin integration over a slot integrates its 2n generators in that order.

The density on a grid is

    exp i(-rho_1.theta_1 - rho_2.(theta_2 - theta_1) - ... - rho_N.(theta_N - theta_{N-1}))

which factorises exactly as prod_{k,i} (1 - i rho_k^i (theta_k^i - theta_{k-1}^i)).
Each slot integrates to w_n = i^n (-1)^(n(n-1)/2): 1 for even n, +-i for odd n.
Densities are divided by w_n per slot so that every grid has weight 1 and the
consistency conditions hold exactly for all n; for even n this factor is 1 and
the density is the literal exponential.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grassmann import (
    GrassmannElement,
    GrassmannError,
    SuperPolynomial,
    berezin_partial,
    check_budget,
    gr_mul,
    operator_from_function,
    substitute,
)


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    times: tuple[float, ...]

    def __post_init__(self):
        t = tuple(float(x) for x in self.times)
        if len(t) < 1:
            raise GridError("a time grid needs at least one time")
        if t[0] < 0:
            raise GridError("times must be nonnegative")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise GridError(f"times must be strictly increasing: {t}")
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, N: int, T: float = 1.0) -> "TimeGrid":
        return cls(tuple(T * (k + 1) / N for k in range(N)))

    def __len__(self):
        return len(self.times)

    def truncated(self) -> "TimeGrid":
        return TimeGrid(self.times[:-1])


def slot_weight(n: int) -> complex:
    """Berezin integral of one slot factor of the literal density."""
    return (1j ** n) * (-1) ** (n * (n - 1) // 2)


@dataclass(frozen=True)
class SlotLayout:
    n: int
    N: int
    offset: int = 0
    total: int = field(init=False)

    def __post_init__(self):
        tot = self.offset + 2 * self.n * self.N
        check_budget(tot, f"fermionic grid (n={self.n}, N={self.N}, offset={self.offset})")
        object.__setattr__(self, "total", tot)

    def theta(self, k: int, i: int) -> int:
        """Generator label of theta_k^i (k, i 1-based)."""
        self._check(k, i)
        return self.offset + (k - 1) * 2 * self.n + i

    def rho(self, k: int, i: int) -> int:
        self._check(k, i)
        return self.offset + (k - 1) * 2 * self.n + self.n + i

    def _check(self, k, i):
        if not (1 <= k <= self.N and 1 <= i <= self.n):
            raise GridError(f"slot ({k}, {i}) outside grid with N={self.N}, n={self.n}")

    def slot_mask(self, k: int) -> int:
        return ((1 << (2 * self.n)) - 1) << (self.offset + (k - 1) * 2 * self.n)

    def all_slots_mask(self) -> int:
        return ((1 << (2 * self.n * self.N)) - 1) << self.offset

    def gen(self, label: int, coeff=1.0) -> GrassmannElement:
        return GrassmannElement.generator(label, self.total, coeff)


def slot_factor(layout: SlotLayout, k: int, normalise: bool = True) -> GrassmannElement:
    """prod_i (1 - i rho_k^i (theta_k^i - theta_{k-1}^i)), theta_0 = 0."""
    n, tot = layout.n, layout.total
    out = GrassmannElement.one(tot).astype(np.complex128)
    for i in range(1, n + 1):
        diff = layout.gen(layout.theta(k, i))
        if k > 1:
            diff = diff - layout.gen(layout.theta(k - 1, i))
        out = gr_mul(out, GrassmannElement.one(tot) + gr_mul(layout.gen(layout.rho(k, i)), diff) * (-1j))
    if normalise:
        out = out * (1.0 / slot_weight(n))
    return out


@dataclass(frozen=True)
class FermionicMarginal:
    grid: TimeGrid
    n: int
    layout: SlotLayout
    normalised: bool = True

    @property
    def density(self) -> GrassmannElement:
        """Fully expanded density (3^(nN) terms; meant for small grids)."""
        out = GrassmannElement.one(self.layout.total)
        for k in range(1, len(self.grid) + 1):
            out = gr_mul(out, slot_factor(self.layout, k, self.normalised))
        return out

    def integrate_last(self) -> GrassmannElement:
        return berezin_partial(self.density, self.layout.slot_mask(len(self.grid)))

    def weight(self):
        return fexpect(GrassmannElement.one(self.layout.total), self)


def marginal_density(grid: TimeGrid | Sequence[float], n: int, offset: int = 0,
                     normalised: bool = True) -> FermionicMarginal:
    if not isinstance(grid, TimeGrid):
        grid = TimeGrid(tuple(grid))
    if n < 1:
        raise GridError("n must be positive")
    layout = SlotLayout(n, len(grid), offset)
    return FermionicMarginal(grid, n, layout, normalised)


def fexpect(rv: GrassmannElement, marginal: FermionicMarginal):
    """Exact Grassmann expectation int d(all slots) density * rv.

    Slots are integrated from the last to the first; the density factors of
    earlier slots do not involve later generators and are even, so they pull
    out of each partial integral.  Returns a scalar when nothing but slot
    generators is involved, otherwise a GrassmannElement in the leading block.
    """
    lay = marginal.layout
    if len(rv) and int(rv.masks.max()) >> lay.total:
        raise GridError("random variable references a time outside the grid")
    if rv.n != lay.total:
        rv = rv.with_n(lay.total)
    acc = rv.astype(np.complex128)
    for k in range(len(marginal.grid), 0, -1):
        acc = berezin_partial(gr_mul(slot_factor(lay, k, marginal.normalised), acc), lay.slot_mask(k))
    if lay.offset == 0:
        return complex(acc.body())
    return GrassmannElement(acc.masks, acc.coeffs, lay.offset)


def fexpect_bound(rv: GrassmannElement, marginal: FermionicMarginal) -> tuple[float, float]:
    """(|E[rv]|, sum of |coefficients|); the first never exceeds the second."""
    e = fexpect(rv, marginal)
    s = float(np.sum(np.abs(rv.coeffs.astype(np.complex128)))) if len(rv) else 0.0
    return float(abs(e)), s


def _as_element(F, n: int) -> GrassmannElement:
    if isinstance(F, SuperPolynomial):
        F = F.as_element()
    if F.n != n:
        raise GrassmannError(f"function on {F.n} odd variables, expected {n}")
    return F


def _path_images(lay: SlotLayout, k: int, insertion: bool) -> list[GrassmannElement]:
    """xi + theta_k (minus i rho_k for an operator insertion) as images of xi^1..xi^n."""
    out = []
    for i in range(1, lay.n + 1):
        v = lay.gen(i).astype(np.complex128)
        if k > 0:
            v = v + lay.gen(lay.theta(k, i))
        if insertion:
            v = v - lay.gen(lay.rho(k, i)) * 1j
        out.append(v)
    return out


def operator_product_expectation(Fs: Sequence, G, grid: TimeGrid | Sequence[float],
                                 route: str = "expansion") -> GrassmannElement:
    """F_1(psi) ... F_N(psi) G with psi = xi + d/dxi, via fermionic Brownian motion.

    The path started at xi is Theta_k = xi + theta_k.  Operator insertions are
    F_k(Theta_k - i rho_k) and the function acted on is G(Theta_N); with the
    density sign above this is the same as inserting theta + i rho against
    exp(+i rho.dtheta).  ``route="matrix"`` multiplies the operator matrices
    instead, which is the independent check.
    """
    if not isinstance(grid, TimeGrid):
        grid = TimeGrid(tuple(grid))
    N = len(grid)
    if len(Fs) != N:
        raise GridError(f"{len(Fs)} insertions for a grid of {N} times")
    if grid.times[0] <= 0:
        raise GridError("insertion times must be strictly positive")
    n = (G.as_element() if isinstance(G, SuperPolynomial) else G).n
    G = _as_element(G, n)
    Fs = [_as_element(F, n) for F in Fs]
    if route == "matrix":
        v = G.to_vector(dtype=complex)
        for F in reversed(Fs):
            v = operator_from_function(F).matrix @ v
        return GrassmannElement.from_vector(v, n)
    if route != "expansion":
        raise ValueError(f"unknown route {route!r}")
    npad = n + (n % 2)
    lay = SlotLayout(npad, N, npad)
    marg = FermionicMarginal(grid, npad, lay)
    Gp = G.with_n(npad)
    acc = substitute(Gp, _path_images(lay, N, False))
    for k in range(N, 0, -1):
        ins = substitute(Fs[k - 1].with_n(npad), _path_images(lay, k, True))
        acc = berezin_partial(gr_mul(ins, gr_mul(slot_factor(lay, k, marg.normalised), acc)), lay.slot_mask(k))
    out = GrassmannElement(acc.masks, acc.coeffs, npad)
    return out.with_n(n)


def random_slot_variable(rng: np.random.Generator, marginal: FermionicMarginal, n_terms: int = 6,
                         max_degree: int | None = None) -> GrassmannElement:
    """Random finitely defined variable: a few monomials in the slot generators."""
    lay = marginal.layout
    k_gens = 2 * lay.n * lay.N
    terms = {}
    for _ in range(n_terms):
        deg = int(rng.integers(0, (max_degree or k_gens) + 1))
        deg = min(deg, k_gens)
        idx = sorted(rng.choice(k_gens, size=deg, replace=False) + 1 + lay.offset)
        m = 0
        for g in idx:
            m |= 1 << (int(g) - 1)
        terms[m] = terms.get(m, 0) + complex(rng.normal(), rng.normal())
    return GrassmannElement.from_dict(terms, lay.total)
