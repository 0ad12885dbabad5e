"""Release criteria, one test each, at their stated tolerances and run times."""
import math
import time
from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest

from superpaths import checks, cli
from superpaths import geometry as geo
from superpaths import grassmann as gm
from superpaths import morse_complex as mc
from superpaths import susy_flat as sf
from superpaths import supertime as st
from superpaths.super_wiener import EvenFunction, estimate, ito_integral, ito_residual, sample, time_integral


class Clock:
    def __init__(self, limit):
        self.limit = limit

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.seconds < self.limit, f"took {self.seconds:.1f}s, limit {self.limit}s"


def consistent(a, b, sigmas=3.0):
    return abs(a.value - b.value) <= sigmas * math.hypot(a.stderr, b.stderr)


def test_criterion_01_exact_algebra():
    with Clock(10):
        for n in range(1, 9):
            for scale, target in (("delta", 1.0), ("dirac", 2.0)):
                ops = [gm.clifford(i, n, scale).matrix for i in range(1, n + 1)]
                for i in range(n):
                    for j in range(n):
                        A = ops[i] @ ops[j] + ops[j] @ ops[i]
                        assert np.array_equal(A, target * (i == j) * np.eye(1 << n))
        assert checks.fourier_inversion(8).value == 0.0
        assert checks.delta_identity(8).value == 0.0
        r = checks.trace_formulas(100)
        assert r.passed and r.value == 0.0


def test_criterion_02_fermionic_wiener():
    with Clock(10):
        r = checks.operator_products(n_max=4, N_max=3)
        assert r.value == 0.0
        b = checks.expectation_bound(200)
        assert b.passed


def test_criterion_03_ito_suite():
    with Clock(60):
        ens = sample(1, 1.0, 50, 10_000, seed=31)
        one = lambda x: np.ones(x.shape + (1,))
        zero = lambda x: np.zeros_like(x)
        r = ito_residual({0: EvenFunction.constant(2.0)}, 1, zero, one, ens)
        assert r.value == 0.0
        r = ito_residual({0: EvenFunction.polynomial([0.0, 0.0, 1.0])}, 1, zero, one, ens)
        assert r.within(0.0)
        r = ito_residual({0b11: EvenFunction.polynomial([0.0, 1.0])}, 1, zero, one, ens, x0=0.2)
        assert abs(r.value) <= 3 * r.stderr + 1e-12
        I = ito_integral(lambda v: v.b()[:, :1], ens)
        Q = time_integral(lambda v: v.b()[:, 0] ** 2, ens)
        assert estimate(I ** 2 - Q).within(0.0)


def test_criterion_04_mehler():
    with Clock(120):
        e = sf.mehler_fk(1.0, 1.0, 100_000, 100, seed=41)
        assert abs(e.value / (1 / (4 * math.pi * math.sinh(0.5))) - 1) < 0.02


@pytest.mark.parametrize("spec,target", [(sf.quadratic(1, 1.0), 1.0), (sf.cos_sum(1, 1.0), 0.0)],
                         ids=["quadratic", "circle"])
def test_criterion_05_witten_index(spec, target):
    with Clock(120):
        out = sf.witten_index(spec, [0.5, 1.0, 2.0], n_paths=20_000, steps=200, seed=51)
        assert np.all(np.abs(out["grid"] - target) < 1e-6)
        assert np.ptp(out["grid"]) < 1e-6
        fk = out["fk"]
        assert all(e.within(target) for e in fk)
        assert all(consistent(a, b) for a, b in combinations(fk, 2))


def test_criterion_06_morse_complex():
    with Clock(300):
        circle = mc.morse_complex(sf.cos_sum(1, 1.0))
        assert mc.betti_numbers(circle) == [1, 1]
        assert np.all(mc.rescaled_coboundary(sf.cos_sum(1, 1.0), circle, 0) == 0)
        torus = mc.morse_complex(sf.cos_sum(2, 1.0))
        assert mc.betti_numbers(torus) == [1, 2, 1]
        spec = sf.quarter_cos2(2, 8.0)
        q = mc.morse_complex(spec)
        assert not np.any(q.coboundary(1) @ q.coboundary(0))
        for p in (0, 1):
            M, _ = mc.grid_tunneling(spec, q, p, sf.CubicalGrid(2, 64, 0, 2 * np.pi, True))
            C = mc.tunneling_matrix(spec, q, p)
            nz = C != 0
            assert nz.any() and np.all(np.abs(M[nz] / C[nz] - 1) < 0.1)


def test_criterion_07_geometry():
    with Clock(600):
        r = geo.horizontal_field_check(geo.sphere_metric_symbolic(), geo.polynomial_form_basis(1))
        assert r["weitzenbock"] < 1e-6
        for surf, chi in ((geo.round_sphere(), 2.0), (geo.flat_torus(), 0.0)):
            est = [geo.euler_characteristic(surf, t, 20_000, 100, seed=71) for t in (0.25, 0.5, 1.0)]
            assert all(e.within(chi) for e in est)
            assert all(consistent(a, b) for a, b in combinations(est, 2))


def test_criterion_08_index_density():
    with Clock(5):
        rng = np.random.default_rng(81)
        for m in (2, 4):
            for _ in range(3):
                R = np.full((m,) * 4, Fraction(0), dtype=object)
                for a, b in combinations(range(m), 2):
                    for i, j in combinations(range(m), 2):
                        v = Fraction(int(rng.integers(-4, 5)), int(rng.integers(1, 5)))
                        R[a, b, i, j], R[b, a, i, j], R[a, b, j, i], R[b, a, j, i] = v, -v, -v, v
                assert geo.index_density(m, R).top == geo.index_density_bruteforce(m, R).top
        assert geo.index_density(2, R[:2, :2, :2, :2]).top == 0


def test_criterion_09_supertime():
    with Clock(5):
        assert checks.supertime_ftc(6).passed
        for d in range(6):
            assert checks.supertime_ftc(d).passed
        assert checks.supertime_square(50).passed
        space = st.dirac_space(2)
        D = st.dirac_operator(2, 1, space)
        G = st.mode_grading(2, 1, space)
        assert len(st.torus_modes(2, 1)) == 9
        assert max(st.evolution_identity_residual(D, G, t) for t in (0.0, 0.3, 1.0, 2.5)) < 1e-12


@pytest.mark.parametrize("argv", [
    ["witten-index", "--h", "quad", "--t", "0.5,1,2", "--seed", "7"],
    ["euler-char", "--surface", "sphere", "--paths", "2000", "--steps", "40", "--seed", "7"],
    ["mehler", "--paths", "5000", "--seed", "7"],
    ["morse", "--h", "qcos2", "--u", "8", "--grid", "256"],
    ["index-density", "--curvature", "random", "--seed", "7"],
    ["supertime", "--K", "1", "--functions", "10"],
    ["selftest"],
], ids=lambda a: a[0])
def test_criterion_10_reproducibility(argv, tmp_path, capsys):
    outs = []
    for k in range(2):
        path = tmp_path / f"run{k}.csv"
        cli.main(argv + ["--output", str(path)])
        outs.append(path.read_bytes())
    capsys.readouterr()
    assert outs[0] == outs[1] and len(outs[0]) > 0
