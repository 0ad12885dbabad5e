import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from superpaths import grassmann as gm
from superpaths.grassmann import GrassmannElement as GE


def brute_product(a: dict, b: dict) -> dict:
    """Product by concatenating index lists and bubble-sorting with a sign count."""
    out = {}
    for ma, ca in a.items():
        for mb, cb in b.items():
            idx = list(gm.indices_of(ma)) + list(gm.indices_of(mb))
            if len(set(idx)) < len(idx):
                continue
            sign = 1
            for i in range(len(idx)):
                for j in range(len(idx) - 1 - i):
                    if idx[j] > idx[j + 1]:
                        idx[j], idx[j + 1] = idx[j + 1], idx[j]
                        sign = -sign
            m = gm.mask_of(idx)
            out[m] = out.get(m, 0) + sign * ca * cb
    return {k: v for k, v in out.items() if v != 0}


def gen(i, n):
    return GE.generator(i, n)


def homogeneous(rng, n, parity):
    return gm.random_element(rng, n, n_terms=6, parity=parity)


# products -----------------------------------------------------------------

def test_disjoint_generators_multiply_in_order():
    assert (gen(1, 3) * gen(2, 3)).terms() == {0b11: 1.0}


def test_swapped_generators_pick_up_a_sign():
    assert (gen(2, 3) * gen(1, 3)).terms() == {0b11: -1.0}


def test_repeated_generator_annihilates():
    assert not (gen(1, 3) * gen(2, 3) * gen(2, 3))


def test_mismatched_algebras_rejected():
    with pytest.raises(gm.GrassmannError):
        gm.gr_mul(gen(1, 2), gen(1, 3))


@pytest.mark.parametrize("n", [3, 6, 10])
def test_product_matches_bubble_sort_oracle(n):
    rng = np.random.default_rng(n)
    for _ in range(20):
        a = gm.random_element(rng, n, n_terms=8)
        b = gm.random_element(rng, n, n_terms=8)
        assert gm.gr_mul(a, b).terms() == brute_product(a.terms(), b.terms())


def test_mask_sign_matches_vectorised_sign():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 1 << 12, 200)
    b = rng.integers(0, 1 << 12, 200)
    keep = (a & b) == 0
    vec = gm.reorder_sign(a[keep], b[keep])
    assert all(gm.mask_sign(int(x), int(y)) == s for x, y, s in zip(a[keep], b[keep], vec))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 16), st.integers(0, 2**32 - 1), st.sampled_from(["even", "odd"]), st.sampled_from(["even", "odd"]))
def test_associative_and_supercommutative(n, seed, pa, pb):
    rng = np.random.default_rng(seed)
    a, b, c = homogeneous(rng, n, pa), homogeneous(rng, n, pb), gm.random_element(rng, n, n_terms=4)
    assert ((a * b) * c) == (a * (b * c))
    sign = -1.0 if (pa == "odd" and pb == "odd") else 1.0
    assert (a * b) == (b * a) * sign


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_odd_elements_square_to_zero(n, seed):
    a = homogeneous(np.random.default_rng(seed), n, "odd")
    assert not (a * a)


# projection, augmentation, derivatives -----------------------------------

def test_projection_and_augmentation():
    a = GE.from_dict({0: 3.0, 0b11: 2.0}, 2)
    assert gm.gr_project(a, (1, 2)) == 2.0
    assert gm.augmentation(a) == 3.0
    assert gm.gr_project(GE.zero(4), (1, 3)) == 0
    assert gm.augmentation(GE.one(3)) == 1


def test_left_derivative_sign_rule():
    x12 = gen(1, 2) * gen(2, 2)
    assert gm.odd_derive(x12, 1).terms() == {0b10: 1.0}
    assert gm.odd_derive(x12, 2).terms() == {0b01: -1.0}
    assert not gm.odd_derive(gen(2, 2), 1)


def test_derivative_on_superpolynomial_keeps_callables():
    F = gm.SuperPolynomial({(1, 2): lambda x: x[..., 0] ** 2}, n=2, m=1)
    D = gm.odd_derive(F, 2)
    assert D.coefficient((1,))(np.array([[3.0]]))[0] == -9.0


@pytest.mark.parametrize("n", range(2, 9))
def test_derivatives_anticommute(n):
    D = [gm.d_matrix(i, n) for i in range(1, n + 1)]
    for i, j in itertools.combinations(range(n), 2):
        assert np.array_equal(D[i] @ D[j], -D[j] @ D[i])


def test_derivative_matrix_is_left_derivative():
    rng = np.random.default_rng(1)
    F = gm.random_element(rng, 5)
    for j in range(1, 6):
        v = gm.d_matrix(j, 5) @ F.to_vector()
        assert np.array_equal(v, gm.odd_derive(F, j).to_vector())


# Berezin integral ----------------------------------------------------------

def test_berezin_takes_top_coefficient():
    F = GE.from_dict({0b11: 3.0, 0b01: 5.0}, 2)
    assert gm.berezin(F) == 3.0
    assert gm.berezin(GE.one(2)) == 0


def test_exact_mode_uses_fractions():
    F = GE.from_dict({0: Fraction(1, 3), 0b11: Fraction(2, 7)}, 2)
    G = F * F
    assert G.terms() == {0: Fraction(1, 9), 0b11: Fraction(4, 21)}
    assert isinstance(gm.berezin(G), Fraction)


# Fourier transform ---------------------------------------------------------

def test_fourier_of_single_generator_inverts():
    F = gen(1, 2)
    Fh = gm.fourier(F)
    assert np.allclose(Fh.to_vector(dtype=complex), brute_fourier(F))
    assert set(Fh.terms()) == {0b10}
    assert gm.fourier(Fh) == F.astype(complex)


def test_fourier_of_zero_is_zero():
    assert not gm.fourier(GE.zero(4))


def test_fourier_rejects_odd_dimension():
    with pytest.raises(gm.GrassmannError):
        gm.fourier(gen(1, 3))


def brute_fourier(F: GE) -> np.ndarray:
    """int d^n xi F(xi) exp(i rho.xi) by expanding the exponential as a sum over subsets."""
    n = F.n
    out = np.zeros(1 << n, complex)
    for mu, c in F.terms().items():
        for S in range(1 << n):
            # prod_{i in S} (i rho^i xi^i) in increasing i, then times xi^mu on the left
            if S & mu:
                continue
            coef = c * (1j) ** bin(S).count("1")
            # the product of pairs rho^i xi^i: reorder to rho^S xi^S, sign (-1)^{k(k-1)/2}
            k = bin(S).count("1")
            coef *= (-1) ** (k * (k - 1) // 2)
            # xi^mu rho^S xi^S = (-1)^{|mu||S|} rho^S xi^mu xi^S
            coef *= (-1) ** (bin(mu).count("1") * k)
            s = gm.mask_sign(mu, S)
            if (mu | S) != (1 << n) - 1:
                continue
            out[S] += coef * s
    return out


@pytest.mark.parametrize("n", [2, 4])
def test_fourier_matches_subset_expansion(n):
    rng = np.random.default_rng(n)
    F = gm.random_element(rng, n)
    assert np.allclose(gm.fourier(F).to_vector(dtype=complex), brute_fourier(F), atol=0)


@pytest.mark.parametrize("n", [2, 4, 6, 8])
def test_double_fourier_is_identity(n):
    rng = np.random.default_rng(10 + n)
    for _ in range(25):
        F = gm.random_element(rng, n, n_terms=min(10, 1 << n), complex_=True)
        assert gm.fourier(gm.fourier(F)) == F.astype(complex)


# kernels -------------------------------------------------------------------

def test_delta_kernel_one_generator():
    assert gm.delta_kernel(1).terms() == {0b01: 1.0, 0b10: -1.0}


def test_delta_kernel_reproduces_input():
    F = gen(1, 2) * gen(2, 2)
    assert gm.apply_kernel(gm.delta_kernel(2), F) == F
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.choice([2, 4, 6]))
        F = gm.random_element(rng, n)
        assert gm.apply_kernel(gm.delta_kernel(n), F) == F


def test_clifford_action_on_low_monomials():
    psi = gm.clifford(1, 2)
    assert psi.apply(GE.one(2)).terms() == {0b01: 1.0}
    assert psi.apply(gen(1, 2)).terms() == {0: 1.0}


@pytest.mark.parametrize("n", range(1, 9))
def test_clifford_relations_both_normalisations(n):
    I = np.eye(1 << n)
    for scale, target in (("delta", 1.0), ("dirac", 2.0)):
        P = [gm.clifford(i, n, scale).matrix for i in range(1, n + 1)]
        for i in range(n):
            for j in range(n):
                assert np.array_equal(P[i] @ P[j] + P[j] @ P[i], target * (i == j) * I)


@pytest.mark.parametrize("n", [2, 4])
def test_psi_word_kernel_matches_operator_kernel(n):
    for mu in range(1 << n):
        a = gm.psi_mu_kernel(mu, n)
        b = gm.op_kernel(gm.psi_word(mu, n))
        assert np.allclose(a.to_vector(dtype=complex), b.to_vector(dtype=complex), atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([2, 4]), st.integers(0, 2**32 - 1))
def test_kernel_of_psi_words_acts_like_the_operator(n, seed):
    rng = np.random.default_rng(seed)
    W = gm.operator_from_function(gm.random_element(rng, n, n_terms=3))
    F = gm.random_element(rng, n)
    assert gm.apply_kernel(gm.op_kernel(W), F) == W.apply(F)


def test_kernel_round_trip():
    rng = np.random.default_rng(4)
    K = gm.FermionOperator(4, rng.integers(-3, 4, (16, 16)).astype(float))
    assert np.array_equal(gm.kernel_to_operator(gm.op_kernel(K), 4).matrix, K.matrix)


# traces --------------------------------------------------------------------

def test_identity_traces():
    I = gm.FermionOperator.identity(2)
    assert gm.supertrace(I, "grade") == 0
    assert gm.supertrace(I, "plain") == 4
    assert gm.supertrace(I, "grade", "kernel") == 0
    assert gm.supertrace(I, "plain", "kernel") == 4


@pytest.mark.parametrize("n", [2, 4, 6])
def test_berezin_traces_match_matrix_traces(n):
    rng = np.random.default_rng(n)
    gamma = np.diag(gm.grading_matrix(n))
    for _ in range(5 if n == 6 else 20):
        K = gm.FermionOperator(n, rng.integers(-3, 4, (1 << n, 1 << n)).astype(float))
        assert gm.supertrace(K, "grade", "kernel") == np.sum(gamma * np.diag(K.matrix))
        assert gm.supertrace(K, "plain", "kernel") == np.trace(K.matrix)


def test_supertrace_is_cyclic_on_even_operators():
    rng = np.random.default_rng(5)
    n = 4
    G = gm.grading_matrix(n)
    for _ in range(10):
        A = rng.normal(size=(16, 16))
        B = rng.normal(size=(16, 16))
        A, B = 0.5 * (A + G @ A @ G), 0.5 * (B + G @ B @ G)
        a = gm.supertrace(gm.FermionOperator(n, A @ B))
        b = gm.supertrace(gm.FermionOperator(n, B @ A))
        assert abs(a - b) < 1e-10


def test_hodge_supertrace_uses_fourier_involution():
    n = 2
    F = gm.fourier_matrix(n)
    assert np.allclose(F @ F, np.eye(4))
    assert gm.supertrace(gm.FermionOperator.identity(n), "hodge") == np.trace(F)


# serialisation and budget --------------------------------------------------

def test_element_text_round_trip():
    rng = np.random.default_rng(6)
    for kw in ({}, {"complex_": True}, {"exact": True}):
        a = gm.random_element(rng, 5, **kw)
        assert gm.element_from_text(a.to_text()) == a


def test_element_text_format_is_stable():
    a = GE.from_dict({0: 1.5, 0b101: -2.0}, 3)
    assert a.to_text() == "grassmann n=3 terms=2\n- 1.5\n1.3 -2.0\n"


def test_operator_text_round_trip():
    K = gm.clifford(2, 3)
    assert np.array_equal(gm.FermionOperator.from_text(K.to_text()).matrix, K.matrix)


def test_generator_budget():
    with pytest.raises(gm.GeneratorBudgetError):
        gm.check_budget(65)
    with pytest.raises(gm.GeneratorBudgetError):
        gm.delta_kernel(33)
