import numpy as np
import pytest

from fbdomain.errors import (
    DomainError,
    NoSplitError,
    NotCorrectlyOrderedError,
    RankError,
)
from fbdomain.jets import JetMap, coeff_norm
from fbdomain.normal_form import (
    NormalizationData,
    NormalizationParams,
    conjugation_defect,
    flag_horizon_rate,
    is_correctly_ordered,
    lemma_containment,
    normalize_sequence,
    qr_lower_triangularize,
    recenter_orbit,
    subspace_sine,
    track_invariant_flag,
)
from fbdomain.seq_gen import AutomorphismSequence, PolyStep, autonomous, perturb


def test_qr_already_lower():
    A = np.array([[0.5, 0], [0.3, 0.2]])
    U, L = qr_lower_triangularize(A)
    np.testing.assert_allclose(U, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(L, A, atol=1e-15)


def test_qr_permutation():
    U, L = qr_lower_triangularize(np.array([[0, 1], [1, 0]]))
    np.testing.assert_allclose(U, [[0, 1], [1, 0]], atol=1e-15)
    np.testing.assert_allclose(L, np.eye(2), atol=1e-15)


def test_qr_upper_shear():
    U, L = qr_lower_triangularize(np.array([[1, 1], [0, 1]]))
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(U, s * np.array([[1, -1], [1, 1]]), atol=1e-15)
    np.testing.assert_allclose(L, s * np.array([[1, 0], [1, 2]]), atol=1e-15)


def test_qr_random_contract(rng):
    for _ in range(20):
        A = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        U, L = qr_lower_triangularize(A)
        assert np.abs(U.conj().T @ U - np.eye(4)).max() < 1e-12
        assert np.abs(np.triu(U @ A, 1)).max() < 1e-12 * np.abs(A).max()
        d = np.diag(L)
        assert np.all(d.real >= 0) and np.abs(d.imag).max() < 1e-15


def test_qr_singular():
    with pytest.raises(RankError):
        qr_lower_triangularize(np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_correctly_ordered_examples():
    ok, worst = is_correctly_ordered([0.5, 0.2], 0.6)
    assert ok and worst == pytest.approx(0.5)
    ok, worst = is_correctly_ordered([0.1, 0.9], 0.99)
    assert not ok and worst == pytest.approx(8.1)


def test_non_increasing_moduli_ordered():
    ok, _ = is_correctly_ordered([0.6, 0.6, 0.5, 0.3], 0.95)
    assert ok


def test_correctly_ordered_domain():
    with pytest.raises(DomainError):
        is_correctly_ordered([1.2, 0.1], 0.5)


def test_recenter_fixed_origin(shear):
    xs, jets, _ = recenter_orbit(autonomous(shear, 5))
    assert not np.any(xs)
    for j in jets:
        np.testing.assert_array_equal(j.coef, shear.coef)


def test_recenter_affine_one_dimensional():
    f = PolyStep(JetMap(np.array([[0, 0.5]])), np.array([0.1]))
    seq = AutomorphismSequence(1, JetMap(np.array([[0, 0.5]])), [f] * 40)
    xs, jets, _ = recenter_orbit(seq)
    assert abs(xs[-1, 0] - 0.2) < 1e-12
    n = np.arange(41)
    np.testing.assert_allclose(xs[:, 0], 0.2 * (1 - 0.5 ** n), atol=1e-16)
    for j in jets:
        np.testing.assert_allclose(j.coef, [[0, 0.5]], atol=1e-16)
        assert j.coef[0, 0] == 0


def test_flag_diagonal():
    mats = np.array([np.diag([0.9, 0.3])] * 20)
    fl = track_invariant_flag(mats, 1)
    for Q in fl.bases:
        assert subspace_sine(Q, np.array([[0], [1]])) < 1e-15
    np.testing.assert_allclose(fl.unitaries[0], np.eye(2), atol=1e-15)


def test_flag_eigenvector():
    A = np.array([[0.9, 0.01], [0, 0.3]])
    fl = track_invariant_flag(np.array([A] * 60), 1, reference=A)
    v = np.array([[-1 / 60], [1.0]])
    assert subspace_sine(fl.bases[0], v) < 1e-12
    assert fl.invariance.max() < 1e-12
    for U in fl.unitaries:
        assert np.abs(U.conj().T @ U - np.eye(2)).max() < 1e-12


def test_flag_no_split():
    with pytest.raises(NoSplitError):
        track_invariant_flag(np.array([np.diag([0.5, 0.49])] * 5), 1)


def test_flag_horizon_rate(rng):
    mats = np.array([np.diag([0.9, 0.3]) + 0.01 * rng.normal(size=(2, 2)) for _ in range(80)])
    rate, _, _ = flag_horizon_rate(mats, 1)
    assert abs(rate - 1 / 3) < 0.25 / 3


def test_lemma_containment():
    ok, worst = lemma_containment(np.diag([0.9, 0.3]), 1, 0.25)
    assert ok and worst < 1


def test_normalize_identity_case():
    F = JetMap.from_terms(2, 2, {(1, (1, 0)): 0.5, (2, (1, 0)): 0.3, (2, (0, 1)): 0.2,
                                 (2, (2, 0)): 0.1})
    data, profile = normalize_sequence(autonomous(F, 20), NormalizationParams(dilation=1.0))
    np.testing.assert_allclose(data.unitaries, np.array([np.eye(2)] * 21), atol=1e-15)
    assert not np.any(data.translations)
    for g in data.jets:
        np.testing.assert_allclose(g.coef, F.coef, atol=1e-15)
    assert 0.1 <= profile.a < profile.b <= 0.9


def test_normalize_profile_with_dilation():
    F = JetMap.from_terms(2, 2, {(1, (1, 0)): 0.5, (2, (1, 0)): 0.3, (2, (0, 1)): 0.2,
                                 (2, (2, 0)): 1.0})
    data, profile = normalize_sequence(autonomous(F, 20), NormalizationParams(n_samples=2000))
    assert data.dilation < 1
    assert 0.1 <= profile.a < profile.b <= 0.9


def test_normalize_perturbed_shear(shear):
    seq = perturb(shear, 0.01, 3, 30, n_samples=2000)
    data, profile = normalize_sequence(seq, NormalizationParams(n_samples=2000))
    ok, worst = is_correctly_ordered(profile.moduli.max(axis=0), 0.6)
    assert ok and worst <= 0.6
    assert data.max_upper <= 1e-10
    for n in (1, 10, 30):
        assert conjugation_defect(seq, data, n) <= 1e-10
        assert data.jets[n - 1].coef[:, 0].any() == False  # noqa: E712
    assert data.unitary_deviation() < 1


def test_normalize_rejects_badly_ordered():
    F = JetMap.from_linear(np.diag([0.3, 0.6]), 2)
    with pytest.raises(NotCorrectlyOrderedError):
        normalize_sequence(autonomous(F, 10), NormalizationParams(n_samples=500, xi_order=0.5))


def test_normalization_round_trip(shear):
    data, _ = normalize_sequence(perturb(shear, 0.01, 0, 10, n_samples=1000),
                                 NormalizationParams(n_samples=1000))
    back = NormalizationData.from_dict(data.to_dict())
    for a, b in zip(back.jets, data.jets):
        assert coeff_norm(JetMap(a.coef - b.coef)) == 0
    np.testing.assert_array_equal(back.unitaries, data.unitaries)
    z = np.array([[0.2, -0.1j]])
    np.testing.assert_allclose(data.to_original(data.to_normalized(z, 3), 3), z, atol=1e-15)
