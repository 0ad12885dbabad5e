"""Calculus on (1|1)-dimensional supertime and the flat Dirac super evolution.

A function of supertime is F(t;tau) = f(t) + tau g(t) with tau odd.  The
superderivative D = d/dtau + tau d/dt squares to d/dt, and integration
between the limits (0;0) and (t;tau) is

    int dsigma int_0^{t + sigma tau} F(s;sigma) ds

with a left Berezin integral over sigma.  Applied to DF it returns
F(t;tau) - F(0;0).  Symbolic parts are sympy expressions in ``T``; the
Grassmann bookkeeping (sigma, tau and any odd constants) runs through
:class:`~superpaths.grassmann.GrassmannElement` with sympy coefficients.

Operator-valued functions carry a parity operator Gamma.  tau commutes with
even operators and anticommutes with odd ones, so f tau = tau (Gamma f Gamma).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Mapping

import numpy as np
import scipy.linalg as sla
import sympy as sp

from .grassmann import (FermionOperator, GrassmannElement, GrassmannError, clifford, d_matrix,
                        grading_matrix, indices_of, odd_derive, xi_matrix)

T = sp.Symbol("t", real=True)
S = sp.Symbol("s", real=True)

SIGMA, TAU = 1, 2          # generator labels inside the integration algebra


@dataclass(frozen=True)
class SuperTimeFunction:
    """F(t;tau) = even(t) + tau odd(t) with sympy parts in the symbol ``T``."""

    even: sp.Expr
    odd: sp.Expr = sp.Integer(0)

    def __post_init__(self):
        object.__setattr__(self, "even", sp.sympify(self.even))
        object.__setattr__(self, "odd", sp.sympify(self.odd))

    def __add__(self, other):
        return SuperTimeFunction(self.even + other.even, self.odd + other.odd)

    def __sub__(self, other):
        return SuperTimeFunction(self.even - other.even, self.odd - other.odd)

    def __mul__(self, other):
        if isinstance(other, SuperTimeFunction):
            # scalar parts are even, so tau passes them freely
            return SuperTimeFunction(self.even * other.even, self.even * other.odd + self.odd * other.even)
        return SuperTimeFunction(self.even * other, self.odd * other)

    __rmul__ = __mul__

    def at(self, t) -> tuple:
        return self.even.subs(T, t), self.odd.subs(T, t)

    def diff_t(self) -> "SuperTimeFunction":
        return SuperTimeFunction(sp.diff(self.even, T), sp.diff(self.odd, T))

    def expand(self) -> "SuperTimeFunction":
        return SuperTimeFunction(sp.expand(self.even), sp.expand(self.odd))

    def is_zero(self) -> bool:
        return sp.simplify(self.even) == 0 and sp.simplify(self.odd) == 0

    def equals(self, other: "SuperTimeFunction") -> bool:
        return (self - other).is_zero()


def super_derivative(F: SuperTimeFunction) -> SuperTimeFunction:
    """D(f + tau g) = g + tau f'."""
    return SuperTimeFunction(F.odd, sp.diff(F.even, T))


def random_polynomial(rng: np.random.Generator, degree: int, scale: int = 5) -> SuperTimeFunction:
    """Polynomial parts with small random integer coefficients."""
    a = rng.integers(-scale, scale + 1, size=(2, degree + 1))
    return SuperTimeFunction(sum(int(c) * T**k for k, c in enumerate(a[0])),
                             sum(int(c) * T**k for k, c in enumerate(a[1])))


# ---------------------------------------------------------------------------
# integration between even and odd limits

def _map_coeffs(F: GrassmannElement, fn) -> GrassmannElement:
    return GrassmannElement.from_dict({k: fn(v) for k, v in F.terms().items()}, F.n, dtype=object)


def _scalar(c, n: int) -> GrassmannElement:
    return GrassmannElement.from_dict({0: sp.sympify(c)}, n, dtype=object)


def _shift(F: GrassmannElement, var: sp.Symbol, at, nil: GrassmannElement) -> GrassmannElement:
    """F(at + nil) for coefficients in ``var`` and an even nilpotent ``nil``.

    The Taylor series stops once the power of ``nil`` vanishes.
    """
    out = _map_coeffs(F, lambda c: sp.sympify(c).subs(var, at))
    power = GrassmannElement.one(F.n, exact=True).astype(object)
    term = F
    k = 0
    while True:
        k += 1
        power = power * nil
        if not power:
            return out
        term = _map_coeffs(term, lambda c: sp.diff(c, var))
        out = out + _map_coeffs(term, lambda c: c.subs(var, at) / sp.factorial(k)) * power


def _drop_zeros(F: GrassmannElement) -> GrassmannElement:
    return GrassmannElement.from_dict({k: v for k, v in F.terms().items() if sp.simplify(v) != 0}, F.n, dtype=object)


def superintegral_element(F: GrassmannElement) -> GrassmannElement:
    """int dsigma int_0^{t + sigma tau} F(s;sigma) ds on the integration algebra.

    F lives on generators (sigma, tau, extra odd constants...) with sympy
    coefficients in ``S``.  The result is a function of ``T`` and tau.
    """
    if F.n < 2:
        raise GrassmannError("the integration algebra needs sigma and tau")
    anti = _map_coeffs(F, lambda c: sp.integrate(sp.sympify(c), (S, 0, T)).subs(T, S))
    st = GrassmannElement.monomial((SIGMA, TAU), F.n, sp.Integer(1)).astype(object)
    shifted = _shift(anti, S, T, st)
    return _drop_zeros(odd_derive(shifted, SIGMA))


def _to_integration_algebra(F: SuperTimeFunction, n: int = 2) -> GrassmannElement:
    """F(s;sigma) as an element on (sigma, tau, ...)."""
    return GrassmannElement.from_dict({0: F.even.subs(T, S), 1 << (SIGMA - 1): F.odd.subs(T, S)}, n, dtype=object)


def super_integral(F: SuperTimeFunction) -> SuperTimeFunction:
    """Integral of F over supertime from (0;0) to (t;tau), as a function of (t;tau)."""
    r = superintegral_element(_to_integration_algebra(F)).terms()
    return SuperTimeFunction(r.get(0, 0), r.get(1 << (TAU - 1), 0))


@dataclass(frozen=True)
class FTCCheck:
    integral: SuperTimeFunction
    difference: SuperTimeFunction
    exact: bool


def ftc_check(F: SuperTimeFunction) -> FTCCheck:
    """Integral of DF against F(t;tau) - F(0;0), compared symbolically."""
    lhs = super_integral(super_derivative(F)).expand()
    rhs = SuperTimeFunction(F.even - F.even.subs(T, 0), F.odd).expand()
    return FTCCheck(lhs, rhs, lhs.equals(rhs))


# ---------------------------------------------------------------------------
# superpaths and the gradient identity

@dataclass(frozen=True)
class SuperPath:
    """X: R^{1|1} -> R^{p|q} with components on (sigma, tau, beta_1..beta_k).

    ``components`` lists p even then q odd elements; coefficients are sympy
    expressions in ``S``.  The beta generators are odd constants that let the
    components carry the right parity.
    """

    p: int
    q: int
    components: tuple

    @property
    def n(self) -> int:
        return self.components[0].n

    def check_parity(self) -> None:
        for i, X in enumerate(self.components):
            want_even = i < self.p
            if X and (X.is_even() if want_even else X.is_odd()) is False:
                raise GrassmannError(f"component {i} has the wrong parity")


@dataclass(frozen=True)
class SuperFunction:
    """G(x, xi) = sum_mu G_mu(x) xi^mu on R^{p|q}, sympy in ``symbols``."""

    p: int
    q: int
    parts: Mapping[int, sp.Expr]
    symbols: tuple = field(default=())

    def __post_init__(self):
        if not self.symbols:
            object.__setattr__(self, "symbols", tuple(sp.symbols(f"x1:{self.p + 1}", real=True)))

    def d_even(self, i: int) -> "SuperFunction":
        x = self.symbols[i]
        return SuperFunction(self.p, self.q, {k: sp.diff(v, x) for k, v in self.parts.items()}, self.symbols)

    def d_odd(self, j: int) -> "SuperFunction":
        """Left derivative in xi^j (1-based)."""
        bit = 1 << (j - 1)
        out = {}
        for k, v in self.parts.items():
            if k & bit:
                sign = -1 if bin(k & (bit - 1)).count("1") & 1 else 1
                out[k ^ bit] = sign * v
        return SuperFunction(self.p, self.q, out, self.symbols)


def compose(G: SuperFunction, X: SuperPath) -> GrassmannElement:
    """G(X(s;sigma)) via Taylor expansion in the nilpotent parts of X."""
    n = X.n
    body = [X.components[i].project(0) for i in range(G.p)]
    nil = [X.components[i] - _scalar(body[i], n) for i in range(G.p)]
    out = GrassmannElement.zero(n, dtype=object)
    for mu, g in G.parts.items():
        # (nil . grad)^k g / k!, accumulated with x left symbolic
        term = _scalar(g, n)
        acc = term
        k = 0
        while True:
            k += 1
            nxt = GrassmannElement.zero(n, dtype=object)
            for i in range(G.p):
                nxt = nxt + nil[i] * _map_coeffs(term, lambda c, i=i: sp.diff(c, G.symbols[i]))
            term = _map_coeffs(nxt, lambda c, k=k: c / k)
            if not _drop_zeros(term):
                break
            acc = acc + term
        subs = dict(zip(G.symbols, body))
        val = _map_coeffs(acc, lambda c: sp.sympify(c).subs(subs))
        for j in indices_of(mu):
            val = val * X.components[G.p + j - 1]
        out = out + val
    return _drop_zeros(_map_coeffs(out, sp.expand))


def superderivative_element(F: GrassmannElement) -> GrassmannElement:
    """D = d/dsigma + sigma d/ds on the integration algebra."""
    sig = GrassmannElement.generator(SIGMA, F.n, sp.Integer(1)).astype(object)
    return odd_derive(F, SIGMA) + sig * _map_coeffs(F, lambda c: sp.diff(c, S))


def _endpoint(F: GrassmannElement, at_t: bool) -> GrassmannElement:
    """F(t;tau) (sigma renamed to tau, s to t) or F(0;0)."""
    sb, tb = 1 << (SIGMA - 1), 1 << (TAU - 1)
    out = {}
    for k, v in F.terms().items():
        if k & tb:
            raise GrassmannError("superpath components must not depend on tau")
        if at_t:
            k2 = (k ^ sb) | tb if k & sb else k
            # sigma is leftmost and tau is next, so renaming keeps the order
            out[k2] = out.get(k2, 0) + sp.sympify(v).subs(S, T)
        elif not k & sb:
            out[k] = out.get(k, 0) + sp.sympify(v).subs(S, 0)
    return GrassmannElement.from_dict(out, F.n, dtype=object)


@dataclass(frozen=True)
class GradientIdentity:
    integral: GrassmannElement
    difference: GrassmannElement
    chain_rule_residual: GrassmannElement
    exact: bool


def gradient_along_superpath(X: SuperPath, G: SuperFunction) -> GradientIdentity:
    """int_0^tau int_0^t DX^i d_iG(X) against G(X(t;tau)) - G(X(0;0)).

    Also returns D(G o X) - DX^i d_iG(X), which must vanish.
    """
    X.check_parity()
    integrand = GrassmannElement.zero(X.n, dtype=object)
    for i in range(X.p):
        integrand = integrand + superderivative_element(X.components[i]) * compose(G.d_even(i), X)
    for j in range(X.q):
        integrand = integrand + superderivative_element(X.components[X.p + j]) * compose(G.d_odd(j + 1), X)
    integrand = _drop_zeros(_map_coeffs(integrand, sp.expand))
    direct = superderivative_element(compose(G, X))
    chain = _drop_zeros(_map_coeffs(direct - integrand, sp.expand))
    lhs = _drop_zeros(_map_coeffs(superintegral_element(integrand), sp.expand))
    GX = compose(G, X)
    rhs = _drop_zeros(_map_coeffs(_endpoint(GX, True) - _endpoint(GX, False), sp.expand))
    diff = _drop_zeros(_map_coeffs(lhs - rhs, sp.simplify))
    return GradientIdentity(lhs, rhs, chain, not diff and not chain)


def polynomial_superpath(rng: np.random.Generator, p: int = 1, q: int = 1, degree: int = 2,
                         n_beta: int = 2) -> SuperPath:
    """Random polynomial superpath on (sigma, tau, beta_1..beta_n_beta)."""
    n = 2 + n_beta

    def poly():
        return sum(int(c) * S**k for k, c in enumerate(rng.integers(-3, 4, size=degree + 1)))

    comps = []
    for i in range(p + q):
        terms = {}
        want_even = i < p
        for mask in range(1 << n):
            if mask & (1 << (TAU - 1)):
                continue
            if (bin(mask).count("1") % 2 == 0) != want_even:
                continue
            if bin(mask).count("1") > 2:
                continue
            terms[mask] = poly()
        comps.append(GrassmannElement.from_dict(terms, n, dtype=object))
    return SuperPath(p, q, tuple(comps))


# ---------------------------------------------------------------------------
# Dirac functions

def _pair_projector(r: int, m: int) -> np.ndarray:
    """P_r on the 2^m mask basis.

    g (a + b e1 + c e2 + d e1 e2) h  ->
        g ((a + i d)/2 (1 - i e1 e2) + (b + i c)/2 (e1 - i e2)) h
    with e1 = eta^{2r-1}, e2 = eta^{2r}.  Masks are sorted, so g, the pair and
    h stay in order and no reordering signs appear.
    """
    b1, b2 = 1 << (2 * r - 2), 1 << (2 * r - 1)
    both = b1 | b2
    P = np.zeros((1 << m, 1 << m), complex)
    for mu in range(1 << m):
        rest = mu & ~both
        k = mu & both
        if k == 0:          # a
            P[rest, mu] += 0.5
            P[rest | both, mu] += -0.5j
        elif k == both:     # d
            P[rest, mu] += 0.5j
            P[rest | both, mu] += 0.5
        elif k == b1:       # b
            P[rest | b1, mu] += 0.5
            P[rest | b2, mu] += -0.5j
        else:               # c
            P[rest | b1, mu] += 0.5j
            P[rest | b2, mu] += 0.5
    return P


def _require_even_m(m: int):
    if m < 2 or m % 2:
        raise ValueError(f"Dirac functions need an even dimension m >= 2, got {m}")


def conjugate_clifford(a: int, m: int) -> np.ndarray:
    """psibar^a = eta^a - d/deta^a."""
    return xi_matrix(a, m) - d_matrix(a, m)


def dirac_projection(m: int) -> FermionOperator:
    """P = P_1 ... P_{m/2}, the projector onto Dirac functions."""
    _require_even_m(m)
    P = np.eye(1 << m, dtype=complex)
    for r in range(1, m // 2 + 1):
        P = P @ _pair_projector(r, m)
    return FermionOperator(m, P)


def dirac_constraint(r: int, m: int) -> np.ndarray:
    """psibar^{2r-1} psibar^{2r}; Dirac functions are its i-eigenvectors."""
    return conjugate_clifford(2 * r - 1, m) @ conjugate_clifford(2 * r, m)


@dataclass(frozen=True)
class DiracSpace:
    """The 2^{m/2}-dimensional image of P with restricted operators.

    ``basis`` has orthonormal columns of definite parity, even ones first.
    """

    m: int
    P: FermionOperator
    basis: np.ndarray
    grading: np.ndarray
    psi: tuple

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def restrict(self, A: np.ndarray) -> np.ndarray:
        return self.basis.conj().T @ A @ self.basis


def dirac_space(m: int, scale=1) -> DiracSpace:
    P = dirac_projection(m)
    par = np.bitwise_count(np.arange(1 << m, dtype=np.uint64)) & np.uint64(1)
    cols = []
    for want in (0, 1):
        blk = P.matrix[:, par == want]
        if blk.size:
            cols.append(sla.orth(blk))
    V = np.concatenate(cols, axis=1)
    G = np.real(np.diag(V.conj().T @ grading_matrix(m) @ V))
    psi = tuple(V.conj().T @ clifford(a, m, scale).matrix @ V for a in range(1, m + 1))
    return DiracSpace(m, P, V, np.diag(np.round(G)), psi)


def torus_modes(m: int, K: int = 3) -> np.ndarray:
    """Integer wave vectors with max |k_a| <= K, in lexicographic order."""
    return np.array(list(product(range(-K, K + 1), repeat=m)), dtype=float)


def dirac_operator(m: int, K: int = 3, space: DiracSpace | None = None, literal: bool = False) -> np.ndarray:
    """Flat torus Dirac operator on Fourier modes, restricted to Dirac functions.

    Block-diagonal over modes.  The default block is psi^a k_a, the symbol of
    -i psi^a d_a, which is Hermitian with square |k|^2.  ``literal=True`` uses
    psi^a (i k_a), the symbol of psi^a d_a, whose square is -|k|^2.
    """
    sp_ = space or dirac_space(m)
    modes = torus_modes(m, K)
    phase = 1j if literal else 1.0
    blocks = [phase * sum(k[a] * sp_.psi[a] for a in range(m)) for k in modes]
    return sla.block_diag(*blocks)


def mode_grading(m: int, K: int = 3, space: DiracSpace | None = None) -> np.ndarray:
    sp_ = space or dirac_space(m)
    return np.kron(np.eye(len(torus_modes(m, K))), sp_.grading)


def clifford_constant(D: np.ndarray, m: int, K: int) -> float:
    """c in D^2 = c |k|^2, fitted over all modes (exact up to round-off)."""
    k2 = np.repeat(np.sum(torus_modes(m, K) ** 2, axis=1), D.shape[0] // len(torus_modes(m, K)))
    d2 = np.real(np.diag(D @ D))
    nz = k2 > 0
    return float(np.dot(d2[nz], k2[nz]) / np.dot(k2[nz], k2[nz]))


# ---------------------------------------------------------------------------
# operator-valued functions of supertime

@dataclass(frozen=True)
class OperatorSuperFunction:
    """F(t;tau) = even(t) + tau odd(t) with matrix-valued callables.

    ``d_even``/``d_odd`` give the t-derivatives of the parts; ``grading`` is
    the parity operator that decides how tau passes an operator.
    """

    even: Callable[[float], np.ndarray]
    odd: Callable[[float], np.ndarray]
    grading: np.ndarray
    d_even: Callable[[float], np.ndarray] | None = None
    d_odd: Callable[[float], np.ndarray] | None = None

    @classmethod
    def constant(cls, even, odd, grading) -> "OperatorSuperFunction":
        z = np.zeros_like(even)
        return cls(lambda t: even, lambda t: odd, grading, lambda t: z, lambda t: z)

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        return self.even(t), self.odd(t)

    def odd_right(self, t: float) -> np.ndarray:
        """Coefficient with tau written on the right: tau g = (Gamma g Gamma) tau."""
        G = self.grading
        return G @ self.odd(t) @ G

    def times(self, other: "OperatorSuperFunction", t: float) -> tuple[np.ndarray, np.ndarray]:
        """(f1 + tau g1)(f2 + tau g2) = f1 f2 + tau (Gamma f1 Gamma g2 + g1 f2)."""
        f1, g1 = self.at(t)
        f2, g2 = other.at(t)
        G = self.grading
        return f1 @ f2, G @ f1 @ G @ g2 + g1 @ f2


def operator_super_derivative(F: OperatorSuperFunction) -> OperatorSuperFunction:
    """D(f + tau g) = g + tau f'; the second derivative of g is not needed."""
    if F.d_even is None:
        raise ValueError("the even part needs a t-derivative")
    return OperatorSuperFunction(F.odd, F.d_even, F.grading, F.d_odd, None)


def super_evolution(D: np.ndarray, grading: np.ndarray) -> OperatorSuperFunction:
    """U(t;tau) = exp(-D^2 t - D tau) for an odd Hermitian D.

    D tau = -tau D, so U = e^{-D^2 t} + tau D e^{-D^2 t} with tau on the left,
    equivalently e^{-D^2 t} - D tau e^{-D^2 t} with tau on the right.
    """
    w, V = np.linalg.eigh(D)
    Vh = V.conj().T

    def heat(t, power=0):
        lam = w ** 2
        return (V * (np.exp(-lam * t) * w ** power)) @ Vh

    def heat_d(t, power=0):
        return -(V * (w ** 2 * np.exp(-w ** 2 * t) * w ** power)) @ Vh

    return OperatorSuperFunction(lambda t: heat(t), lambda t: heat(t, 1), grading,
                                 lambda t: heat_d(t), lambda t: heat_d(t, 1))


def evolution_identity_residual(D: np.ndarray, grading: np.ndarray, t: float) -> float:
    """max |D_(t;tau) U - U (D - 2 tau D^2)| over both parts, at time t."""
    U = super_evolution(D, grading)
    lhs_e, lhs_o = operator_super_derivative(U).at(t)
    rhs_e, rhs_o = U.times(OperatorSuperFunction.constant(D, -2.0 * D @ D, grading), t)
    return float(max(np.max(np.abs(lhs_e - rhs_e)), np.max(np.abs(lhs_o - rhs_o))))


def heat_semigroup(D: np.ndarray, t: float) -> np.ndarray:
    """e^{-D^2 t} by the matrix exponential, independent of the eigenbasis."""
    return sla.expm(-t * (D @ D))


def matrix_to_text(A: np.ndarray, name: str = "matrix") -> str:
    """Header then one ``row col value`` line per nonzero entry."""
    lines = [f"{name} rows={A.shape[0]} cols={A.shape[1]}"]
    for r, c in zip(*np.nonzero(np.abs(A) > 0)):
        v = complex(A[r, c])
        lines.append(f"{r} {c} {v.real!r} {v.imag!r}")
    return "\n".join(lines) + "\n"
