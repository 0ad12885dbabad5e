import numpy as np
import pytest

from superpaths import grassmann as gm
from superpaths.fermionic_wiener import marginal_density
from superpaths.super_wiener import (AdaptedFunctional, AnticipationError, EvenFunction, estimate,
                                     euler_maruyama, ito_integral, ito_residual, sample, super_expect,
                                     time_integral)


@pytest.fixture(scope="module")
def ens():
    return sample(m=2, T=1.0, steps=20, n_paths=10_000, seed=11)


def test_endpoint_mean_is_zero(ens):
    bT = ens.paths[:, -1, :]
    for a in range(2):
        assert estimate(bT[:, a]).within(0.0)


def test_endpoint_second_moment_is_T(ens):
    assert estimate(ens.paths[:, -1, 0] ** 2).within(ens.T)


def test_increment_variance_is_dt():
    e = sample(1, 2.0, 4, 20_000, seed=1)
    assert estimate(e.increments[:, :, 0].ravel()[:20_000] ** 2).within(e.dt)


def test_same_seed_is_bit_identical():
    a = sample(2, 1.0, 7, 3000, seed=5).increments
    b = sample(2, 1.0, 7, 3000, seed=5).increments
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample(2, 1.0, 7, 3000, seed=6).increments)


def test_paths_are_prefix_stable():
    # a path's numbers depend only on its index, not on the ensemble size
    a = sample(1, 1.0, 5, 100, seed=9).increments
    b = sample(1, 1.0, 5, 5000, seed=9).increments
    assert np.array_equal(a, b[:100])


@pytest.mark.parametrize("kw", [{"T": 0.0}, {"T": -1.0}, {"steps": 0}])
def test_invalid_ensembles_rejected(kw):
    args = dict(m=1, T=1.0, steps=10, n_paths=10, seed=0) | kw
    with pytest.raises(ValueError):
        sample(**args)


def test_constant_super_expectation_is_one(ens):
    marg = marginal_density([0.5, 1.0], 1)
    e = super_expect(lambda b: np.ones((b.shape[0], 1)), ens, [gm.GrassmannElement.one(4)], marg)
    assert e.value == pytest.approx(1.0) and e.stderr == 0.0


def test_fermionic_sector_adds_no_variance(ens):
    marg = marginal_density([1.0], 1)
    lay = marg.layout
    rv = gm.GrassmannElement.generator(lay.theta(1, 1), 2) * gm.GrassmannElement.generator(lay.rho(1, 1), 2)
    bos = super_expect(lambda b: b[:, -1, 0] ** 2, ens)
    sup = super_expect(lambda b: (b[:, -1, 0] ** 2)[:, None], ens, [rv], marg)
    w = abs(complex(np.asarray(sup.value)) / bos.value)
    assert sup.stderr == pytest.approx(bos.stderr * w)


def test_adapted_times_future_increment_has_zero_mean(ens):
    # s1 = 0.25, s2 = 0.5, s3 = 0.75 on a 20 step grid
    i1, i2, i3 = 5, 10, 15
    e = super_expect(lambda b: b[:, i1, 0] ** 2 * (b[:, i3, 0] - b[:, i2, 0]), ens)
    assert e.within(0.0)


@pytest.mark.parametrize("i,j", [(0, 0), (0, 1), (1, 1)])
def test_adapted_times_increment_product(ens, i, j):
    i1, i2, i3 = 5, 10, 15
    s1, s2, s3 = (k * ens.dt for k in (i1, i2, i3))
    F = lambda b: 1.0 + b[:, i1, 0] ** 2
    e = super_expect(lambda b: F(b) * (b[:, i3, i] - b[:, i2, i]) * (b[:, i3, j] - b[:, i2, j]), ens)
    target = (1.0 + s1) * (i == j) * (s3 - s2)
    assert e.within(target)


def test_time_integral_of_one(ens):
    v = time_integral(lambda view: np.ones(view.n), ens)
    assert np.allclose(v, ens.T, atol=1e-12)


def test_ito_integral_of_one_telescopes(ens):
    v = ito_integral(lambda view: np.ones((view.n, 2)), ens)
    bT = ens.paths[:, -1, :]
    assert np.allclose(v, bT.sum(axis=1), atol=1e-12)


def test_ito_isometry(ens):
    I = ito_integral(lambda view: np.stack([view.b()[:, 0], np.zeros(view.n)], axis=1), ens)
    Q = time_integral(lambda view: view.b()[:, 0] ** 2, ens)
    assert estimate(I ** 2 - Q).within(0.0)


def test_anticipating_functional_rejected(ens):
    small = sample(1, 1.0, 4, 10, seed=0)
    with pytest.raises(AnticipationError):
        time_integral(AdaptedFunctional(lambda view: view.b(view.step + 1)[:, 0]), small)


def test_euler_maruyama_with_unit_diffusion_reproduces_path():
    e = sample(1, 1.0, 10, 50, seed=3)
    b = e.paths
    x = euler_maruyama(0.0, lambda x: np.zeros_like(x), lambda x: np.ones(x.shape + (1,)), b, e.dt)
    assert np.allclose(x, b)


def test_ito_residual_constant_is_exactly_zero():
    e = sample(1, 1.0, 20, 2000, seed=4)
    r = ito_residual({0: EvenFunction.constant(3.0)}, 1, lambda x: np.zeros_like(x),
                     lambda x: np.ones(x.shape + (1,)), e)
    assert r.value == 0.0 and r.stderr == 0.0


def test_ito_residual_square_with_second_order_term():
    e = sample(1, 1.0, 50, 20_000, seed=5)
    r = ito_residual({0: EvenFunction.polynomial([0.0, 0.0, 1.0])}, 1, lambda x: np.zeros_like(x),
                     lambda x: np.ones(x.shape + (1,)), e)
    assert r.within(0.0)


def test_ito_residual_square_fails_without_second_order_term():
    # sanity check of the test's power: dropping the 1/2 h h^T term leaves a bias of t - t'
    e = sample(1, 1.0, 50, 20_000, seed=5)
    f = EvenFunction.polynomial([0.0, 0.0, 1.0])
    flat = EvenFunction(f.value, f.grad, lambda x: np.zeros(x.shape + (1,)))
    r = ito_residual({0: flat}, 1, lambda x: np.zeros_like(x), lambda x: np.ones(x.shape + (1,)), e)
    assert not r.within(0.0)
    assert r.value == pytest.approx(0.5, abs=5 * r.stderr)


def test_ito_residual_with_fermionic_pair():
    e = sample(1, 1.0, 50, 20_000, seed=6)
    drift = lambda x: -0.5 * x
    diff = lambda x: np.ones(x.shape + (1,))
    r = ito_residual({0b11: EvenFunction.polynomial([0.0, 1.0, 1.0])}, 1, drift, diff, e, x0=0.3)
    assert abs(r.value) <= 3 * r.stderr + 1e-12
