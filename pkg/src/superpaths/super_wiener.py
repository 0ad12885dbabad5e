"""Super Brownian motion: sampled even paths with exact fermionic slots.

The even part is ordinary Brownian motion with increments of variance dt per
component.  The odd part is never sampled: fermionic expectations are exact
Berezin integrals from :mod:`superpaths.fermionic_wiener`, so they add no
variance to Monte Carlo estimates.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from . import rng as _rng
from .fermionic_wiener import FermionicMarginal, TimeGrid, fexpect, marginal_density
from .grassmann import GrassmannElement, indices_of


class AnticipationError(RuntimeError):
    """A functional read path data from after its evaluation time."""


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    n_paths: int

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.value - target) <= k * self.stderr + 1e-12

    def __iter__(self):
        return iter((self.value, self.stderr))


def estimate(samples: np.ndarray) -> Estimate:
    s = np.asarray(samples)
    n = len(s)
    if np.iscomplexobj(s):
        s = s.real
    sd = float(np.std(s, ddof=1)) if n > 1 else float("inf")
    return Estimate(float(np.mean(s)), float(sd / np.sqrt(n)), n)


@dataclass(frozen=True)
class PathEnsemble:
    """Brownian increments, generated lazily block by block.

    Path p uses block p // BLOCK of the counter-based stream keyed by seed,
    so any subset of paths can be regenerated on its own.
    """

    m: int
    T: float
    steps: int
    n_paths: int
    seed: int
    stream: str = "increments"

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.steps + 1)

    def increment_blocks(self) -> Iterator[tuple[int, np.ndarray]]:
        """Yield (first path index, increments of shape (B, steps, m))."""
        sq = np.sqrt(self.dt)
        for b, lo, hi in _rng.blocks(self.n_paths):
            z = _rng.normal_block(self.seed, b, hi - lo, (self.steps, self.m), self.stream)
            yield lo, z * sq

    def path_blocks(self) -> Iterator[tuple[int, np.ndarray]]:
        """Yield (first path index, b of shape (B, steps+1, m)) with b_0 = 0."""
        for lo, db in self.increment_blocks():
            b = np.zeros((db.shape[0], self.steps + 1, self.m))
            np.cumsum(db, axis=1, out=b[:, 1:])
            yield lo, b

    @property
    def increments(self) -> np.ndarray:
        return np.concatenate([db for _, db in self.increment_blocks()], axis=0)

    @property
    def paths(self) -> np.ndarray:
        return np.concatenate([b for _, b in self.path_blocks()], axis=0)

    def metadata(self) -> dict:
        return {"m": self.m, "T": self.T, "steps": self.steps, "dt": self.dt,
                "n_paths": self.n_paths, "seed": self.seed, "stream": self.stream}


def sample(m: int, T: float, steps: int, n_paths: int, seed: int, stream: str = "increments") -> PathEnsemble:
    if T <= 0:
        raise ValueError("T must be positive")
    if steps < 1 or n_paths < 1 or m < 1:
        raise ValueError("steps, n_paths and m must be at least 1")
    return PathEnsemble(int(m), float(T), int(steps), int(n_paths), int(seed), stream)


# ---------------------------------------------------------------------------
# adapted functionals

class PathView:
    """Read access to a block of paths up to the current step only."""

    def __init__(self, b: np.ndarray, dt: float):
        self._b = b
        self._dt = dt
        self.step = 0

    def b(self, j: int | None = None) -> np.ndarray:
        j = self.step if j is None else j
        if j > self.step:
            raise AnticipationError(f"read of step {j} while evaluating step {self.step}")
        if j < 0:
            raise IndexError(j)
        return self._b[:, j, :]

    def t(self, j: int | None = None) -> float:
        return (self.step if j is None else j) * self._dt

    @property
    def n(self) -> int:
        return self._b.shape[0]


class AdaptedFunctional:
    """Wraps fn(view) -> values at the view's current step.

    Values are arrays of shape (B,) for scalar processes or (B, m) for
    integrands against db.  The view refuses reads of future steps.
    """

    def __init__(self, fn: Callable[[PathView], np.ndarray]):
        self.fn = fn

    def __call__(self, view: PathView) -> np.ndarray:
        return np.asarray(self.fn(view))


def _as_adapted(F) -> AdaptedFunctional:
    return F if isinstance(F, AdaptedFunctional) else AdaptedFunctional(F)


def _left_point_sum(F, ens: PathEnsemble, ito: bool) -> np.ndarray:
    F = _as_adapted(F)
    out = []
    for _, b in ens.path_blocks():
        view = PathView(b, ens.dt)
        acc = np.zeros(b.shape[0], dtype=complex)
        for r in range(ens.steps):
            view.step = r
            v = F(view)
            if ito:
                db = b[:, r + 1, :] - b[:, r, :]
                v = np.broadcast_to(v, db.shape) if v.ndim < 2 else v
                acc += np.sum(v * db, axis=1)
            else:
                acc += np.broadcast_to(v, (b.shape[0],)) * ens.dt
        out.append(acc)
    res = np.concatenate(out)
    return res.real if not np.any(res.imag) else res


def time_integral(F, ens: PathEnsemble) -> np.ndarray:
    """Per-path Riemann sum sum_r F_{t_r} dt over left points."""
    return _left_point_sum(F, ens, ito=False)


def ito_integral(F, ens: PathEnsemble) -> np.ndarray:
    """Per-path Ito sum sum_r F^a_{t_r} (b^a_{r+1} - b^a_r)."""
    return _left_point_sum(F, ens, ito=True)


# ---------------------------------------------------------------------------
# super expectations

def fermionic_moments(rvs: Sequence[GrassmannElement], marginal: FermionicMarginal) -> np.ndarray:
    return np.array([fexpect(rv, marginal) for rv in rvs], dtype=complex)


def super_expect(F: Callable[[np.ndarray], np.ndarray], ens: PathEnsemble,
                 fermionic: Sequence[GrassmannElement] | None = None,
                 marginal: FermionicMarginal | None = None) -> Estimate:
    """MC average over paths of the exact fermionic expectation per path.

    ``F(b_block)`` gets paths of shape (B, steps+1, m).  Without a fermionic
    part it returns shape (B,).  With ``fermionic = [rv_1..rv_K]`` it returns
    shape (B, K): the super random variable is sum_k F[:, k] rv_k and each
    rv_k is integrated exactly against ``marginal``.
    """
    weights = None
    if fermionic is not None:
        if marginal is None:
            raise ValueError("a fermionic part needs a marginal")
        weights = fermionic_moments(fermionic, marginal)
    vals = []
    for _, b in ens.path_blocks():
        v = np.asarray(F(b))
        if weights is not None:
            v = v @ weights
        vals.append(v)
    return estimate(np.concatenate(vals))


# ---------------------------------------------------------------------------
# Ito formula residual

@dataclass(frozen=True)
class EvenFunction:
    """Smooth coefficient function on R^p with gradient and Hessian.

    value: (..., p) -> (...); grad: (..., p) -> (..., p); hess: (..., p) -> (..., p, p).
    """

    value: Callable
    grad: Callable
    hess: Callable

    @classmethod
    def polynomial(cls, coeffs: Sequence[float]) -> "EvenFunction":
        """One-variable polynomial sum_k coeffs[k] x^k."""
        P = np.polynomial.Polynomial(coeffs)
        d1, d2 = P.deriv(1), P.deriv(2)
        return cls(lambda x: P(x[..., 0]), lambda x: d1(x)[..., :], lambda x: d2(x)[..., :, None])

    @classmethod
    def constant(cls, c: float, p: int = 1) -> "EvenFunction":
        return cls(lambda x: np.full(x.shape[:-1], c, dtype=float),
                   lambda x: np.zeros(x.shape),
                   lambda x: np.zeros(x.shape + (p,)))


def euler_maruyama(x0, drift: Callable, diffusion: Callable, b: np.ndarray, dt: float) -> np.ndarray:
    """x_{r+1} = x_r + g(x_r) dt + h(x_r) db_r for a block of paths.

    drift: (B, p) -> (B, p); diffusion: (B, p) -> (B, p, m).
    Returns x of shape (B, steps+1, p).
    """
    B, S1, m = b.shape
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    p = x0.shape[-1]
    x = np.empty((B, S1, p))
    x[:, 0] = x0
    for r in range(S1 - 1):
        db = b[:, r + 1] - b[:, r]
        x[:, r + 1] = x[:, r] + drift(x[:, r]) * dt + np.einsum("bpm,bm->bp", diffusion(x[:, r]), db)
    return x


def ito_residual(F: Mapping[int, EvenFunction], n: int, drift: Callable, diffusion: Callable,
                 ens: PathEnsemble, x0=0.0, t_start: float | None = None) -> Estimate:
    """MC estimate of LHS - RHS of the Ito formula for a super function F.

    F maps odd multi-index masks over the 2n variables (theta^1..theta^n,
    rho^1..rho^n) to even coefficient functions of x in R^p.  The even path
    solves dx = g dt + h db by Euler-Maruyama; the residual per path is

        F(x_t, theta_t, rho_t) - F(x_t', theta_t', rho_t')
          - sum_r [grad F . (g dt + h db) + 1/2 hess F : h h^T dt]

    with left-point sums over [t', t], 0 < t' < t = T (t' defaults to T/2).
    Odd factors are integrated exactly: endpoint monomials on the grid
    {t', t}, integrand monomials on a single slot.
    """
    r0 = ens.steps // 2 if t_start is None else int(round(t_start / ens.dt))
    if not 0 < r0 < ens.steps:
        raise ValueError("need 0 < t_start < T on the step grid")
    marg = marginal_density(TimeGrid((r0 * ens.dt, ens.T)), n)
    single = marginal_density(TimeGrid((ens.dt,)), n)

    def place(mask: int, k: int, lay) -> GrassmannElement:
        out = GrassmannElement.one(lay.total)
        for g in indices_of(mask):
            lab = lay.theta(k, g) if g <= n else lay.rho(k, g - n)
            out = out * GrassmannElement.generator(lab, lay.total)
        return out

    w_start = {mk: fexpect(place(mk, 1, marg.layout), marg) for mk in F}
    w_end = {mk: fexpect(place(mk, 2, marg.layout), marg) for mk in F}
    w_mid = {mk: fexpect(place(mk, 1, single.layout), single) for mk in F}
    vals = []
    for _, b in ens.path_blocks():
        x = euler_maruyama(x0, drift, diffusion, b, ens.dt)
        res = np.zeros(b.shape[0], dtype=complex)
        for mk, f in F.items():
            lhs = f.value(x[:, -1]) * w_end[mk] - f.value(x[:, r0]) * w_start[mk]
            rhs = np.zeros(b.shape[0])
            for r in range(r0, ens.steps):
                xr = x[:, r]
                db = b[:, r + 1] - b[:, r]
                h = diffusion(xr)
                dx = drift(xr) * ens.dt + np.einsum("bpm,bm->bp", h, db)
                rhs += np.sum(f.grad(xr) * dx, axis=1)
                rhs += 0.5 * np.einsum("bij,bia,bja->b", f.hess(xr), h, h) * ens.dt
            res += lhs - rhs * w_mid[mk]
        vals.append(res)
    return estimate(np.concatenate(vals))
