import math
from fractions import Fraction

import numpy as np
import pytest
import sympy as sy

from superpaths import geometry as geo
from superpaths.grassmann import SuperPolynomial

SPHERE = geo.round_sphere()
TORUS = geo.flat_torus()


def ambient(surf, p):
    X = np.empty((len(p.x), 3))
    for c in range(len(surf.charts)):
        sel = p.chart == c
        if sel.any():
            X[sel] = surf.charts[c].to_ambient(p.x[sel])
    return X


def start_batch(surf, x0, B):
    x = np.tile(np.asarray(x0, float), (B, 1))
    cid = np.zeros(B, int)
    return geo.FramePoint(cid, x, surf.orthonormal_frame(cid, x))


# charts -----------------------------------------------------------------------

@pytest.mark.parametrize("surf", [SPHERE, TORUS], ids=["sphere", "torus"])
def test_christoffels_match_metric_derivatives(surf):
    pts = geo.sample_points(20, seed=1)
    for ch in surf.charts:
        assert ch.christoffel_defect(pts) < 1e-6
        assert ch.curvature_symmetry_defect(pts) < 1e-12


def test_unit_sphere_ricci_equals_metric():
    pts = geo.sample_points(20, seed=2)
    ch = SPHERE.charts[0]
    assert np.allclose(ch.ricci(pts), ch.metric(pts))


def test_chart_switch_is_consistent():
    ch0, ch1 = SPHERE.charts
    x = geo.sample_points(10, seed=3, radius=1.4) + 0.05
    y = ch1.from_ambient(ch0.to_ambient(x))
    assert np.allclose(ch1.to_ambient(y), ch0.to_ambient(x))


def test_volume_sampling_is_uniform_on_sphere():
    cid, x = SPHERE.sample_volume(seed=4, b=0, size=2048)
    X = ambient(SPHERE, geo.FramePoint(cid, x, np.zeros((2048, 2, 2))))
    assert np.allclose(np.linalg.norm(X, axis=1), 1)
    # uniform measure: E[z] = 0, E[z^2] = 1/3
    assert abs(X[:, 2].mean()) < 3 * math.sqrt(1 / 3 / 2048)
    assert abs((X[:, 2] ** 2).mean() - 1 / 3) < 3 * math.sqrt(4 / 45 / 2048)


def test_unknown_surface_rejected():
    with pytest.raises(ValueError):
        geo.surface("klein")


# frame paths ------------------------------------------------------------------

def test_flat_frame_is_constant():
    p = start_batch(TORUS, [1.0, 2.0], 256)
    q = geo.frame_paths(TORUS, p, 1.0, 100, seed=1)
    assert np.array_equal(q.e, p.e)


def test_sphere_frame_stays_orthonormal():
    q = geo.frame_paths(SPHERE, start_batch(SPHERE, [0.3, -0.2], 1000), 1.0, 1000, seed=1)
    assert np.median(q.orthonormality_defect(SPHERE)) < 1e-2


def test_heun_is_weakly_consistent_and_euler_is_not():
    # E[z_T] = z_0 exp(-T) for Brownian motion on the unit sphere
    p = start_batch(SPHERE, [0.3, -0.2], 4096)
    z0 = ambient(SPHERE, p)[0, 2]
    target = z0 * math.exp(-1.0)
    z = {}
    for scheme, steps in (("heun", 50), ("heun", 100), ("euler", 50)):
        zz = ambient(SPHERE, geo.frame_paths(SPHERE, p, 1.0, steps, seed=2, scheme=scheme))[:, 2]
        z[scheme, steps] = (zz.mean(), zz.std() / math.sqrt(len(zz)))
    for k in (("heun", 50), ("heun", 100)):
        assert abs(z[k][0] - target) < 3 * z[k][1]
    assert abs(z["euler", 50][0] - target) > 5 * z["euler", 50][1]


def test_unknown_scheme_rejected():
    p = start_batch(TORUS, [0.0, 0.0], 2)
    with pytest.raises(ValueError):
        geo.frame_sde_step(p, TORUS, np.zeros((2, 2)), 0.1, scheme="rk4")


# Feynman-Kac on forms ----------------------------------------------------------

def test_torus_plane_wave_decays_at_fourier_rate():
    k = np.array([1.0, 2.0])
    x0 = np.array([0.4, 1.1])
    g0 = geo.ambient_form(TORUS, scalar=lambda X: np.exp(1j * (X @ k)))
    e = geo.fk_laplace_beltrami(TORUS, g0, 0.5, 0, x0, 4096, 20, seed=1)["components"][0]
    exact = np.exp(-0.5 * (k @ k) * 0.5) * np.exp(1j * (x0 @ k))
    assert abs(e.value - exact) < 3 * e.stderr


def test_short_time_returns_initial_form():
    g0 = geo.ambient_form(SPHERE, scalar=lambda X: X[:, 2])
    x0 = np.array([0.3, -0.5])
    e = geo.fk_laplace_beltrami(SPHERE, g0, 0.005, 0, x0, 2048, 5, seed=2)["components"][0]
    assert abs(e.value - g0.components(0, x0[None])[0][0]) < 0.01


@pytest.mark.parametrize("kind", ["scalar", "covector", "area"])
def test_sphere_degree_one_harmonics_decay_like_exp_minus_t(kind):
    # z, dz and z vol are eigenforms with eigenvalue l(l+1)/2 = 1
    kw = {"scalar": dict(scalar=lambda X: X[:, 2]),
          "covector": dict(covector=lambda X: np.tile([0.0, 0.0, 1.0], (len(X), 1))),
          "area": dict(area=lambda X: X[:, 2])}[kind]
    g0 = geo.ambient_form(SPHERE, **kw)
    x0 = np.array([0.3, -0.5])
    t = 0.5
    out = geo.fk_laplace_beltrami(SPHERE, g0, t, 0, x0, 8192, 50, seed=2)["components"]
    ref = g0.components(0, x0[None])
    for mk, e in out.items():
        assert abs(e.value - ref[mk][0] * math.exp(-t)) < 3 * e.stderr


def test_volume_form_is_harmonic():
    g0 = geo.ambient_form(SPHERE, area=lambda X: np.ones(len(X)))
    x0 = np.array([0.3, -0.5])
    e = geo.fk_laplace_beltrami(SPHERE, g0, 0.5, 0, x0, 512, 20, seed=3)["components"][3]
    assert e.value == pytest.approx(g0.components(0, x0[None])[3][0], rel=1e-12)


def test_fk_flags_unmet_tolerance():
    g0 = geo.ambient_form(SPHERE, scalar=lambda X: X[:, 2])
    r = geo.fk_laplace_beltrami(SPHERE, g0, 0.5, 0, [0.1, 0.1], 64, 10, seed=4, tolerance=1e-6)
    assert r["flagged"]


def test_fk_time_range_checked():
    g0 = geo.ambient_form(SPHERE, scalar=lambda X: X[:, 2])
    with pytest.raises(ValueError):
        geo.fk_laplace_beltrami(SPHERE, g0, 3.0, 0, [0.0, 0.0], 8, 10, seed=0)


# supertraces -----------------------------------------------------------------------

def test_sphere_euler_characteristic():
    e = geo.euler_characteristic(SPHERE, 0.5, 4096, 100, seed=3)
    assert e.within(2.0)


def test_torus_euler_characteristic():
    e = geo.euler_characteristic(TORUS, 0.5, 2048, 50, seed=3)
    assert e.within(0.0)


def test_degree_one_heat_trace_matches_spectrum():
    t = 0.5
    l = np.arange(1, 400)
    exact = np.sum(2 * (2 * l + 1) * np.exp(-l * (l + 1) * t / 2))
    e = geo.heat_trace(SPHERE, t, 4096, 60, seed=5, degree=1)
    assert e.within(exact)


def test_extrapolation_needs_even_steps():
    with pytest.raises(ValueError):
        geo.euler_characteristic(SPHERE, 0.5, 16, 51, seed=0)


# symbolic forms ---------------------------------------------------------------

X1, X2 = geo.X1, geo.X2


def test_form_function_bridge_round_trip():
    f = X1 ** 2 * sy.sin(X2)
    F = SuperPolynomial({(1, 2): f}, n=2, m=2)
    form = geo.forms_bridge(F)
    assert form.c == {3: f}
    assert geo.forms_bridge(form).coeffs == F.coeffs
    assert form.to_text() == f"({f}) dx1^dx2"


def random_form(rng):
    mono = [X1 ** a * X2 ** b for a in range(4) for b in range(4)]
    return geo.Form({mk: sum(int(rng.integers(-3, 4)) * mono[j] for j in rng.choice(16, 3)) + sy.sin(X1 * X2) * int(rng.integers(0, 2))
                     for mk in range(4)})


def test_d_squared_is_zero():
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert geo.exterior_d(geo.exterior_d(random_form(rng))).is_zero()


def test_d_on_superpolynomial():
    F = SuperPolynomial({(): X1 * X2}, n=2, m=2)
    assert geo.exterior_d(F).coeffs == {1: X2, 2: X1}


def test_flat_hodge_laplacian_is_minus_coordinate_laplacian():
    rng = np.random.default_rng(1)
    g = geo.flat_metric_symbolic()
    for _ in range(10):
        f = random_form(rng)
        L = geo.hodge_laplacian(g, f)
        expect = f.map(lambda v: -(sy.diff(v, X1, 2) + sy.diff(v, X2, 2)))
        assert (L - expect).is_zero()


def test_flat_identities_hold_to_roundoff():
    r = geo.horizontal_field_check(geo.flat_metric_symbolic(), geo.polynomial_form_basis(2))
    assert max(r.values()) < 1e-12


def test_sphere_weitzenbock_and_horizontal_identities():
    r = geo.horizontal_field_check(geo.sphere_metric_symbolic(), geo.polynomial_form_basis(1))
    assert r["weitzenbock"] < 1e-6
    assert r["horizontal"] < 1e-6
    assert r["bochner"] < 1e-6


# index density -------------------------------------------------------------------

def random_curvature(rng, m):
    R = np.full((m, m, m, m), Fraction(0), dtype=object)
    for a in range(m):
        for b in range(a + 1, m):
            for i in range(m):
                for j in range(i + 1, m):
                    v = Fraction(int(rng.integers(-3, 4)), int(rng.integers(1, 4)))
                    R[a, b, i, j], R[b, a, i, j], R[a, b, j, i], R[b, a, j, i] = v, -v, -v, v
    return R


def test_two_dimensional_untwisted_density_vanishes():
    rng = np.random.default_rng(2)
    for _ in range(5):
        assert geo.index_density(2, random_curvature(rng, 2)).top == 0


def test_two_dimensional_twisted_density_is_minus_trace_over_two_pi():
    F = np.full((2, 2, 2, 2), Fraction(0), dtype=object)
    F[0, 0, 0, 1], F[0, 0, 1, 0] = Fraction(3), Fraction(-3)
    F[1, 1, 0, 1], F[1, 1, 1, 0] = Fraction(-1, 2), Fraction(1, 2)
    F[0, 1, 0, 1], F[0, 1, 1, 0] = Fraction(7), Fraction(-7)
    d = geo.index_density(2, geo.constant_curvature_data(2, Fraction(1)), twist=F)
    assert d.top == -Fraction(5, 2)
    assert d.value == pytest.approx(-2.5 / (2 * math.pi))


def test_two_block_curvature_matches_hand_expansion():
    # Omega_12 = a xi12 + c xi34, Omega_34 = b xi12 + d xi34: sqrt det = (1 + w1^2/3)(1 + w2^2/3)
    a, b, c, d = map(Fraction, (2, 3, 5, 7))
    R = np.full((4, 4, 4, 4), Fraction(0), dtype=object)
    for (A, B, i, j), v in (((0, 1, 0, 1), a), ((0, 1, 2, 3), c), ((2, 3, 0, 1), b), ((2, 3, 2, 3), d)):
        R[A, B, i, j], R[B, A, i, j], R[A, B, j, i], R[B, A, j, i] = v, -v, -v, v
    expect = Fraction(2) * (a * c + b * d) / 3
    assert geo.index_density(4, R).top == expect
    assert geo.index_density_bruteforce(4, R).top == expect


@pytest.mark.parametrize("m", [2, 4])
def test_density_matches_bruteforce_series_exactly(m):
    rng = np.random.default_rng(m)
    for _ in range(3):
        R = random_curvature(rng, m)
        a, b = geo.index_density(m, R), geo.index_density_bruteforce(m, R)
        assert a.top == b.top
        assert a.element == b.element


def test_float_mode_agrees_with_exact():
    R = random_curvature(np.random.default_rng(7), 4)
    exact = geo.index_density(4, R)
    approx = geo.index_density(4, R.astype(float), exact=False)
    assert approx.top == pytest.approx(float(exact.top), rel=1e-12, abs=1e-12)


def test_odd_dimension_rejected():
    with pytest.raises(ValueError):
        geo.index_density(3, np.zeros((3, 3, 3, 3)))
