"""Exact-algebra property checks shared by the selftest command and the test suite.

Each check returns a :class:`CheckResult` whose ``value`` is the largest
defect found (0 for an exact identity) or the measured quantity.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np
import sympy as sp

from . import geometry as geo
from . import grassmann as gm
from . import supertime as st
from .fermionic_wiener import (fexpect_bound, marginal_density, operator_product_expectation,
                               random_slot_variable)


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    oracle: float
    passed: bool
    seconds: float
    detail: str = ""


def _timed(name: str, fn: Callable[[], tuple], oracle: float = 0.0) -> CheckResult:
    t0 = time.perf_counter()
    value, passed, *detail = fn()
    return CheckResult(name, float(value), oracle, bool(passed), time.perf_counter() - t0,
                       detail[0] if detail else "")


def _anticommutator_defect(scale, target: float, n_max: int) -> float:
    worst = 0.0
    for n in range(1, n_max + 1):
        ops = [gm.clifford(i, n, scale).matrix for i in range(1, n + 1)]
        I = np.eye(1 << n)
        for i in range(n):
            for j in range(i, n):
                A = ops[i] @ ops[j] + ops[j] @ ops[i]
                worst = max(worst, float(np.max(np.abs(A - target * (i == j) * I))))
    return worst


def anticommutation(n_max: int = 8) -> CheckResult:
    """{psi^i, psi^j} = delta^ij (scale 1/2) and 2 delta^ij (scale 1), n <= n_max."""
    def run():
        d = max(_anticommutator_defect("delta", 1.0, n_max), _anticommutator_defect("dirac", 2.0, n_max))
        return d, d == 0.0
    return _timed("anticommutation", run)


def fourier_inversion(n_max: int = 8, seed: int = 0) -> CheckResult:
    """Fourier transform applied twice returns the input, even n <= n_max."""
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for n in range(2, n_max + 1, 2):
            F = gm.random_element(rng, n, n_terms=min(12, 1 << n), complex_=True)
            back = gm.fourier(gm.fourier(F))
            worst = max(worst, float(np.max(np.abs(back.to_vector(dtype=complex) - F.to_vector(dtype=complex)))))
        return worst, worst == 0.0
    return _timed("fourier_inversion", run)


def delta_identity(n_max: int = 6, seed: int = 1) -> CheckResult:
    """int dtheta delta(xi, theta) F(theta) = F(xi) for even n <= n_max."""
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for n in range(2, n_max + 1, 2):
            F = gm.random_element(rng, n)
            out = gm.apply_kernel(gm.delta_kernel(n), F)
            worst = max(worst, float(np.max(np.abs(out.to_vector() - F.to_vector()))))
        return worst, worst == 0.0
    return _timed("delta_identity", run)


def trace_formulas(n_ops: int = 100, seed: int = 2) -> CheckResult:
    """Kernel-route supertrace and trace against matrix traces on random operators."""
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for k in range(n_ops):
            n = 2 if k % 2 else 4
            K = gm.FermionOperator(n, rng.integers(-3, 4, size=(1 << n, 1 << n)).astype(float))
            for mode in ("grade", "plain"):
                a = gm.supertrace(K, mode, "kernel")
                b = gm.supertrace(K, mode, "matrix")
                worst = max(worst, abs(complex(a) - complex(b)))
        return worst, worst == 0.0
    return _timed("trace_formulas", run)


def operator_products(n_max: int = 4, N_max: int = 3, seed: int = 3) -> CheckResult:
    """Fermionic path expectation of F_1(psi)..F_N(psi) G against matrix products."""
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for n in range(1, n_max + 1):
            for N in range(1, N_max + 1):
                Fs = [gm.random_element(rng, n, n_terms=3) for _ in range(N)]
                G = gm.random_element(rng, n, n_terms=3)
                grid = [0.5 * (k + 1) for k in range(N)]
                a = operator_product_expectation(Fs, G, grid, "expansion").to_vector(dtype=complex)
                b = operator_product_expectation(Fs, G, grid, "matrix").to_vector(dtype=complex)
                worst = max(worst, float(np.max(np.abs(a - b))))
        return worst, worst <= 1e-12
    return _timed("operator_products", run)


def expectation_bound(n_vars: int = 200, seed: int = 4) -> CheckResult:
    """|E[F]| <= sum of |coefficients| for random finitely defined variables."""
    def run():
        rng = np.random.default_rng(seed)
        worst = -np.inf
        for k in range(n_vars):
            marg = marginal_density([0.3 * (j + 1) for j in range(1 + k % 3)], 1 + k % 2)
            rv = random_slot_variable(rng, marg, n_terms=5)
            e, s = fexpect_bound(rv, marg)
            worst = max(worst, e - s)
        return worst, worst <= 1e-12
    return _timed("expectation_bound", run)


def index_density_exact() -> CheckResult:
    """Generating-function evaluator equals the determinant series, m in {2, 4}."""
    def run():
        mism = 0
        tops = []
        for m in (2, 4):
            R = geo.constant_curvature_data(m, Fraction(1))
            a = geo.index_density(m, R).top
            b = geo.index_density_bruteforce(m, R).top
            mism += a != b
            tops.append(a)
        rng = np.random.default_rng(5)
        R = np.zeros((4, 4, 4, 4), dtype=object)
        for a_, b_, i, j in np.ndindex(4, 4, 4, 4):
            R[a_, b_, i, j] = Fraction(0)
        for a_ in range(4):
            for b_ in range(a_ + 1, 4):
                for i in range(4):
                    for j in range(i + 1, 4):
                        v = Fraction(int(rng.integers(-3, 4)))
                        R[a_, b_, i, j], R[b_, a_, i, j] = v, -v
                        R[a_, b_, j, i], R[b_, a_, j, i] = -v, v
        mism += geo.index_density(4, R).top != geo.index_density_bruteforce(4, R).top
        zero = tops[0] == 0
        return mism, mism == 0 and zero, f"m=2 top {tops[0]}, m=4 top {tops[1]}"
    return _timed("index_density_exact", run)


def supertime_ftc(degree: int = 6) -> CheckResult:
    """Integral of DF equals F(t;tau) - F(0;0) for a generic polynomial of the degree."""
    def run():
        a = sp.symbols(f"a0:{degree + 1}")
        b = sp.symbols(f"b0:{degree + 1}")
        F = st.SuperTimeFunction(sum(a[k] * st.T**k for k in range(degree + 1)),
                                 sum(b[k] * st.T**k for k in range(degree + 1)))
        ok = st.ftc_check(F).exact
        return (0.0 if ok else 1.0), ok
    return _timed("supertime_ftc", run)


def supertime_square(n_funcs: int = 50, seed: int = 6) -> CheckResult:
    """D(DF) = dF/dt on random polynomial functions of supertime."""
    def run():
        rng = np.random.default_rng(seed)
        bad = 0
        for _ in range(n_funcs):
            F = st.random_polynomial(rng, int(rng.integers(0, 7)))
            bad += not st.super_derivative(st.super_derivative(F)).equals(F.diff_t())
        return bad, bad == 0
    return _timed("supertime_square", run)


def super_evolution_identity(m: int = 2, K: int = 1, times=(0.0, 0.25, 1.0)) -> CheckResult:
    """D_(t;tau) U = U (D - 2 tau D^2) for the truncated torus Dirac operator."""
    def run():
        space = st.dirac_space(m)
        D = st.dirac_operator(m, K, space)
        G = st.mode_grading(m, K, space)
        r = max(st.evolution_identity_residual(D, G, t) for t in times)
        return r, r < 1e-12, f"{len(st.torus_modes(m, K))} modes"
    return _timed("super_evolution_identity", run)


def dirac_projector(ms=(2, 4)) -> CheckResult:
    """P^2 = P, rank 2^{m/2}, and the Dirac constraints hold on the image."""
    def run():
        worst = 0.0
        ok = True
        for m in ms:
            P = st.dirac_projection(m).matrix
            worst = max(worst, float(np.max(np.abs(P @ P - P))))
            ok &= int(np.linalg.matrix_rank(P)) == 2 ** (m // 2)
            for r in range(1, m // 2 + 1):
                worst = max(worst, float(np.max(np.abs(st.dirac_constraint(r, m) @ P - 1j * P))))
        return worst, ok and worst == 0.0
    return _timed("dirac_projector", run)


SELFTEST = {
    "anticommutation": anticommutation,
    "fourier_inversion": fourier_inversion,
    "delta_identity": delta_identity,
    "trace_formulas": trace_formulas,
    "operator_products": operator_products,
    "expectation_bound": expectation_bound,
    "index_density_exact": index_density_exact,
    "dirac_projector": dirac_projector,
    "supertime_ftc": supertime_ftc,
    "supertime_square": supertime_square,
    "super_evolution_identity": super_evolution_identity,
}


def run_all() -> list[CheckResult]:
    return [fn() for fn in SELFTEST.values()]
