import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from superpaths import grassmann as gm
from superpaths.fermionic_wiener import (GridError, TimeGrid, fexpect, fexpect_bound, marginal_density,
                                         operator_product_expectation, random_slot_variable, slot_weight)
from superpaths.grassmann import GrassmannElement as GE


def literal_exponential(marg):
    """exp(A) for the nilpotent even exponent A = -i sum_k rho_k.(theta_k - theta_{k-1})."""
    lay = marg.layout
    tot = lay.total
    A = GE.zero(tot).astype(complex)
    for k in range(1, len(marg.grid) + 1):
        for i in range(1, lay.n + 1):
            d = GE.generator(lay.theta(k, i), tot)
            if k > 1:
                d = d - GE.generator(lay.theta(k - 1, i), tot)
            A = A + GE.generator(lay.rho(k, i), tot) * d * (-1j)
    # power series, terminates because A is nilpotent
    out, term, j = GE.one(tot).astype(complex), GE.one(tot).astype(complex), 1
    while True:
        term = term * A * (1.0 / j)
        if not term:
            return out
        out = out + term
        j += 1


def test_single_slot_density_is_expanded_exponential():
    marg = marginal_density([1.0], 1, normalised=False)
    lay = marg.layout
    rho_theta = GE.generator(lay.rho(1, 1), 2) * GE.generator(lay.theta(1, 1), 2)
    assert marg.density == (GE.one(2) - rho_theta * 1j).astype(complex)


@pytest.mark.parametrize("n,N", [(1, 2), (2, 2), (1, 3), (2, 3), (3, 2)])
def test_unnormalised_density_matches_power_series(n, N):
    marg = marginal_density(TimeGrid.uniform(N), n, normalised=False)
    assert marg.density.allclose(literal_exponential(marg), atol=1e-14)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_slot_weight_is_berezin_integral_of_one_literal_slot(n):
    marg = marginal_density([1.0], n, normalised=False)
    assert slot_weight(n) == pytest.approx(gm.berezin(literal_exponential(marg)))


def test_even_dimension_density_is_literal_up_to_sign():
    # for even n the normalised density differs from the literal one by w_n per slot
    marg = marginal_density([0.5, 1.0], 2)
    lit = marginal_density([0.5, 1.0], 2, normalised=False)
    assert marg.density.allclose(lit.density * (1 / slot_weight(2)) ** 2)


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("N", [2, 3, 4])
def test_integrating_out_last_slot_gives_truncated_marginal(n, N):
    grid = TimeGrid(tuple(0.3 * (k + 1) for k in range(N)))
    full = marginal_density(grid, n)
    short = marginal_density(grid.truncated(), n)
    assert full.integrate_last().allclose(short.density.with_n(full.layout.total), atol=1e-14)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_every_grid_has_unit_weight(n):
    for N in (1, 2, 3):
        assert fexpect(GE.one(2 * n * N), marginal_density(TimeGrid.uniform(N), n)) == pytest.approx(1.0)


def test_unit_weight_is_what_makes_the_identity_evolution_exact():
    G = GE.from_dict({0: 2.0, 0b1: 3.0}, 2)
    out = operator_product_expectation([GE.one(2)], G, [1.0])
    assert out.allclose(G.astype(complex), atol=1e-14)


def test_single_slot_pair_expectation_has_unit_size():
    marg = marginal_density([1.0], 1)
    lay = marg.layout
    rv = GE.generator(lay.theta(1, 1), 2) * GE.generator(lay.rho(1, 1), 2)
    e, s = fexpect_bound(rv, marg)
    assert e == pytest.approx(1.0) and s == 1.0


def test_expectation_is_linear():
    rng = np.random.default_rng(0)
    marg = marginal_density([0.2, 0.7], 2)
    a, b = random_slot_variable(rng, marg), random_slot_variable(rng, marg)
    lhs = fexpect(a * 2.0 + b * (1 - 1j), marg)
    assert lhs == pytest.approx(2 * fexpect(a, marg) + (1 - 1j) * fexpect(b, marg))


def test_zero_variable_bound():
    marg = marginal_density([1.0], 1)
    assert fexpect_bound(GE.zero(2), marg) == (0.0, 0.0)


def test_random_variables_respect_coefficient_bound():
    rng = np.random.default_rng(1)
    for k in range(200):
        marg = marginal_density([0.25 * (j + 1) for j in range(1 + k % 3)], 1 + k % 3)
        e, s = fexpect_bound(random_slot_variable(rng, marg, n_terms=5), marg)
        assert e <= s + 1e-12


# operator products ---------------------------------------------------------

def test_single_insertion_of_generator():
    x1 = GE.generator(1, 1)
    assert operator_product_expectation([x1], x1, [1.0]).allclose(GE.one(1), atol=1e-14)


def test_double_insertion_is_identity():
    rng = np.random.default_rng(2)
    G = gm.random_element(rng, 3)
    x1 = GE.generator(1, 3)
    out = operator_product_expectation([x1, x1], G, [0.5, 1.0])
    assert out.allclose(G.astype(complex), atol=1e-13)


def test_random_products_match_matrix_composition():
    rng = np.random.default_rng(3)
    for k in range(50):
        n, N = 1 + k % 4, 1 + k % 3
        Fs = [gm.random_element(rng, n, n_terms=3) for _ in range(N)]
        G = gm.random_element(rng, n, n_terms=3)
        grid = sorted(rng.uniform(0.1, 2.0, N))
        if len(set(grid)) < N:
            continue
        a = operator_product_expectation(Fs, G, grid)
        b = operator_product_expectation(Fs, G, grid, route="matrix")
        assert a.allclose(b, atol=1e-12)


def test_products_do_not_depend_on_the_time_values():
    rng = np.random.default_rng(4)
    Fs = [gm.random_element(rng, 2, n_terms=3) for _ in range(2)]
    G = gm.random_element(rng, 2)
    a = operator_product_expectation(Fs, G, [0.1, 0.2])
    b = operator_product_expectation(Fs, G, [1.0, 5.0])
    assert a.allclose(b, atol=1e-13)


def test_superpolynomial_arguments_accepted():
    F = gm.SuperPolynomial({(1,): 1.0}, n=2, m=0)
    G = GE.generator(1, 2)
    assert operator_product_expectation([F], G, [1.0]).allclose(GE.one(2), atol=1e-14)


# errors ---------------------------------------------------------------------

@pytest.mark.parametrize("times", [(1.0, 1.0), (2.0, 1.0), (-1.0,), ()])
def test_bad_grids_rejected(times):
    with pytest.raises(GridError):
        TimeGrid(times)


def test_insertion_count_must_match_grid():
    with pytest.raises(GridError):
        operator_product_expectation([GE.one(1)], GE.one(1), [0.5, 1.0])


def test_variable_outside_grid_rejected():
    marg = marginal_density([1.0], 1)
    with pytest.raises(GridError):
        fexpect(GE.generator(3, 4), marg)


def test_generator_budget_enforced():
    with pytest.raises(gm.GeneratorBudgetError):
        marginal_density(TimeGrid.uniform(11), 3)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_bound_property(n, N, seed):
    rng = np.random.default_rng(seed)
    marg = marginal_density(TimeGrid.uniform(N), n)
    e, s = fexpect_bound(random_slot_variable(rng, marg, n_terms=4), marg)
    assert e <= s + 1e-12
