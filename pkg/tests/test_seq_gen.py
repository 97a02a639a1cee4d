import numpy as np
import pytest

from fbdomain.errors import DomainError
from fbdomain.jets import JetMap, coeff_norm, compose
from fbdomain.normal_form import NormalizationParams, is_correctly_ordered, normalize_sequence
from fbdomain.sampling import ball_points, sup_distance
from fbdomain.seq_gen import (
    AutomorphismSequence,
    autonomous,
    perturb,
    random_uniformly_attracting,
)


def test_autonomous_constant(shear):
    seq = autonomous(shear, 7)
    assert seq.horizon == 7
    assert all(np.array_equal(s.jet.coef, shear.coef) for s in seq.steps)
    ok, _ = is_correctly_ordered([0.5, 0.2], 0.9)
    assert ok


def test_autonomous_rejects_neutral():
    with pytest.raises(DomainError):
        autonomous(JetMap.from_linear(np.diag([1.0, 0.5]), 2), 3)


def test_tail_policies(shear):
    seq = perturb(shear, 0.01, 0, 4, n_samples=500)
    np.testing.assert_array_equal(seq.step(9).jet.coef, shear.coef)
    seq.tail = "cycle"
    np.testing.assert_array_equal(seq.step(6).jet.coef, seq.step(2).jet.coef)


def test_perturb_zero_is_autonomous(shear):
    seq = perturb(shear, 0.0, 0, 5, n_samples=500)
    for s in seq.steps:
        np.testing.assert_array_equal(s(np.eye(2)), shear(np.eye(2)))


def test_perturb_distance_fresh_samples(shear):
    seq = perturb(shear, 0.01, 5, 10, n_samples=2000)
    for s in seq.steps:
        assert sup_distance(s, shear, 2, n=10_000, seed=99) <= 0.01


def test_perturb_linear_moduli():
    F = JetMap.from_linear(np.diag([0.5, 0.2]), 2)
    seq = perturb(F, 0.01, 2, 20, model="linear", n_samples=2000)
    for s in seq.steps:
        mod = np.sort(np.abs(np.linalg.eigvals(s.jet.linear)))
        assert 0.19 < mod[0] < 0.21 and 0.49 < mod[1] < 0.51


def test_perturb_inverse_known(shear):
    seq = perturb(shear, 0.01, 1, 5, n_samples=1000)
    for s in seq.steps:
        ident = compose(s.jet.padded(s.inverse.d), s.inverse, s.inverse.d)
        assert coeff_norm(JetMap(ident.coef - JetMap.identity(2, ident.d).coef)) < 1e-10


def test_seed_determinism(shear):
    a = perturb(shear, 0.01, 11, 6, n_samples=1000).dumps()
    b = perturb(shear, 0.01, 11, 6, n_samples=1000).dumps()
    assert a == b
    assert perturb(shear, 0.01, 12, 6, n_samples=1000).dumps() != a


def test_sequence_round_trip(shear):
    seq = perturb(shear, 0.01, 0, 4, n_samples=500)
    back = AutomorphismSequence.loads(seq.dumps())
    assert back.dumps() == seq.dumps()


def test_random_ua_one_dimensional():
    seq = random_uniformly_attracting(1, 0.2, 0.6, 0.9, 3, 0, 30)
    mods = np.array([abs(s.jet.linear[0, 0]) for s in seq.steps])
    assert np.all((mods >= 0.2) & (mods <= 0.6))


def test_random_ua_ordering_and_contraction():
    seq = random_uniformly_attracting(2, 0.15, 0.55, 0.9, 3, 4, 20)
    pts = ball_points(2, 2000, 1.0, seed=77)
    r = np.linalg.norm(pts, axis=1)
    for s in seq.steps:
        lin = s.jet.linear
        assert np.abs(np.triu(lin, 1)).max() == 0
        ok, worst = is_correctly_ordered(np.abs(np.diag(lin)), 0.9)
        assert ok and worst <= 0.9
        ratio = np.linalg.norm(s(pts), axis=1) / r
        assert seq.meta["a_cert"] <= ratio.min() and ratio.max() <= seq.meta["b_cert"]


def test_random_ua_normalizes_as_noop():
    seq = random_uniformly_attracting(3, 0.15, 0.55, 0.9, 2, 1, 10)
    data, _ = normalize_sequence(seq, NormalizationParams(dilation=1.0, n_samples=1000))
    np.testing.assert_allclose(data.unitaries, np.array([np.eye(3)] * 11), atol=1e-15)
    for f, g in zip(seq.steps, data.jets):
        np.testing.assert_allclose(g.coef, f.jet.coef, atol=1e-15)


def test_random_ua_rejects_bad_bounds():
    with pytest.raises(DomainError):
        random_uniformly_attracting(2, 0.9, 0.2, 0.9, 2, 0, 5)
