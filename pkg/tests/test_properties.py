import itertools

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from fbdomain.conjugacy import ExpandingAffineSequence, bounded_affine_orbit
from fbdomain.jets import (
    JetMap,
    TriangularPolyMap,
    basis,
    coeff_norm,
    compose,
    evaluate,
    invert_jet,
    invert_triangular,
    monomials,
    order_compare,
    triangular_identity_defect,
    truncate,
)
from fbdomain.normal_form import is_correctly_ordered, qr_lower_triangularize

SETTINGS = settings(max_examples=40, deadline=None)

dims = st.integers(1, 4)
degrees = st.integers(1, 5)
seeds = st.integers(0, 2 ** 32 - 1)


def random_jet(seed, k, d):
    rng = np.random.default_rng(seed)
    b = basis(k, d)
    coef = 0.5 * (rng.normal(size=(k, b.size)) + 1j * rng.normal(size=(k, b.size)))
    coef[:, 0] = 0
    for s in range(2, d + 1):
        sl = b.stratum(s)
        coef[:, sl] /= sl.stop - sl.start
    coef[:, 1:k + 1] = np.eye(k) + 0.3 * rng.normal(size=(k, k))
    return JetMap(coef)


def diff(a, b):
    return coeff_norm(JetMap(a.coef - b.coef, check=False))


@SETTINGS
@given(seeds, dims, degrees)
def test_truncation_idempotent(seed, k, d):
    m = random_jet(seed, k, d)
    for e in range(1, d + 1):
        once = truncate(m, e)
        np.testing.assert_array_equal(truncate(once, e).coef, once.coef)


@SETTINGS
@given(seeds, dims, degrees)
def test_associativity(seed, k, d):
    A, B, C = (random_jet(seed + i, k, d) for i in range(3))
    left = compose(compose(A, B, d), C, d)
    right = compose(A, compose(B, C, d), d)
    assert diff(left, right) <= 1e-12 * max(1.0, coeff_norm(left))


@SETTINGS
@given(seeds, dims, degrees)
def test_formal_inverse(seed, k, d):
    m = random_jet(seed, k, d)
    if np.linalg.cond(m.linear) > 1e3:
        return
    ident = compose(m, invert_jet(m, d), d)
    assert diff(ident, JetMap.identity(k, d)) <= 1e-10


@SETTINGS
@given(seeds, dims, st.integers(1, 4))
def test_triangular_inverse(seed, k, deg):
    rng = np.random.default_rng(seed)
    c = rng.uniform(0.1, 10, size=k) * np.exp(2j * np.pi * rng.random(k))
    terms = {}
    for j in range(2, k + 1):
        for alpha in monomials(j - 1, deg):
            if sum(alpha) >= 1:
                terms[(j, tuple(alpha) + (0,) * (k - j + 1))] = complex(*rng.normal(size=2))
    G = TriangularPolyMap.from_terms(c, terms)
    defect, scale = triangular_identity_defect(G, invert_triangular(G))
    assert defect <= 1e-12 * scale


@SETTINGS
@given(seeds, dims, st.integers(1, 4))
def test_evaluation_consistency(seed, k, d):
    A, B = random_jet(seed, k, d), random_jet(seed + 7, k, d)
    AB = compose(A, B, d)
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=k) + 1j * rng.normal(size=k)
    direction /= np.linalg.norm(direction)
    ratios = []
    for t in (0.1, 0.05, 0.025):
        z = t * direction
        err = np.linalg.norm(evaluate(AB, z) - evaluate(A, evaluate(B, z)))
        ratios.append(err / t ** (d + 1))
    assert np.all(np.isfinite(ratios)) and max(ratios) < 1e6


@SETTINGS
@given(dims, st.integers(1, 6))
def test_order_is_strict_total(k, d):
    stratum = [tuple(m) for m in monomials(k, d) if sum(m) == d]
    for a, b, c in itertools.product(stratum, repeat=3):
        if order_compare(a, b) > 0 and order_compare(b, c) > 0:
            assert order_compare(a, c) > 0
    assert all(order_compare((d,) + (0,) * (k - 1), a) <= 0 for a in stratum)


@SETTINGS
@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=5), st.floats(0.05, 0.99))
def test_correct_ordering_matches_brute_force(moduli, xi):
    ok, worst = is_correctly_ordered(moduli, xi)
    k = len(moduli)
    brute = max(moduli[j] * moduli[i] / moduli[l]
                for j in range(k) for i in range(k) for l in range(j + 1))
    assert abs(worst - brute) <= 1e-12 * brute
    assert ok == (brute <= xi)


@SETTINGS
@given(seeds, dims)
def test_qr_contract(seed, k):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(k, k)) + 1j * rng.normal(size=(k, k))
    U, L = qr_lower_triangularize(A)
    assert np.abs(U.conj().T @ U - np.eye(k)).max() <= 1e-12
    assert np.abs(np.triu(U @ A, 1)).max() <= 1e-12 * np.abs(A).max()


@SETTINGS
@given(seeds, st.integers(5, 60))
def test_bounded_orbit_relation(seed, N):
    rng = np.random.default_rng(seed)
    a = rng.uniform(1.1, 4, N) * np.exp(2j * np.pi * rng.random(N))
    b = rng.normal(size=N) + 1j * rng.normal(size=N)
    orb = bounded_affine_orbit(ExpandingAffineSequence(a, b))
    y = orb.orbit
    assert np.abs(y[1:] - (a * y[:-1] + b)).max() <= 1e-12 * max(1, np.abs(y).max())
    assert np.abs(y).max() <= orb.radius
