import numpy as np
import pytest

from fbdomain.conjugacy import build_conjugacy
from fbdomain.errors import HorizonTooShortError, NotInBasinError
from fbdomain.fb_map import (
    apply_chain,
    apply_inverse_chain,
    basin_membership,
    classify_points,
    convergence_report,
    fatou_bieberbach_eval,
    forward_orbit,
    grid_points,
    growth_constants,
    psi_jacobian,
    render_ppm,
    slice_pixels,
    surjectivity_probe,
)
from fbdomain.jets import JetMap, TriangularPolyMap
from fbdomain.normal_form import NormalizationParams
from fbdomain.pipeline import run_pipeline
from fbdomain.sampling import ball_points, sphere_points
from fbdomain.seq_gen import autonomous, perturb


@pytest.fixture(scope="module")
def shear_run():
    F = JetMap.from_terms(2, 2, {(1, (1, 0)): 0.5, (2, (0, 1)): 0.2, (2, (2, 0)): 1.0})
    return run_pipeline(autonomous(F, 40), NormalizationParams(n_samples=2000))


@pytest.fixture(scope="module")
def perturbed_run():
    F = JetMap.from_terms(2, 2, {(1, (1, 0)): 0.5, (2, (0, 1)): 0.2, (2, (2, 0)): 1.0})
    seq = perturb(F, 0.01, 0, 40, n_samples=2000)
    return run_pipeline(seq, NormalizationParams(n_samples=2000))


def test_growth_linear_diagonal():
    G = [TriangularPolyMap.from_terms([0.5, 0.5], {})] * 10
    beta, gamma = growth_constants(G, 500)
    assert beta == pytest.approx(0.5 * 1.05, rel=1e-12)
    assert gamma == pytest.approx(2.0, rel=1e-12)


def test_growth_shear_finite():
    G = [TriangularPolyMap.from_terms([0.5, 0.2], {(2, (2, 0)): 1.0})] * 10
    beta, gamma = growth_constants(G, 500)
    assert np.isfinite(gamma) and gamma >= 5


def test_composed_growth_bound(perturbed_run):
    G = perturbed_run.data.G
    beta, _ = growth_constants(G, 1000)
    z = sphere_points(2, 1000, 1.0, seed=3)
    for n in range(1, len(G) + 1):
        z = G[n - 1](z)
        assert np.linalg.norm(z, axis=1).max() <= beta ** n


def test_psi_identity_for_linear():
    F = JetMap.from_linear(np.diag([0.5, 0.5]), 2)
    data = build_conjugacy([F] * 10, 2)
    z = ball_points(2, 50, 0.5, seed=0)
    for n in (1, 5, 10):
        np.testing.assert_allclose(fatou_bieberbach_eval(data, [F] * 10, z, n), z, atol=1e-14)


def test_psi_jacobian_identity(perturbed_run):
    r = perturbed_run
    for n in (1, 5, 10):
        assert np.abs(psi_jacobian(r.data, r.norm, n) - np.eye(2)).max() < 1e-4


def test_psi_self_consistency(shear_run):
    r = shear_run
    z = np.array([0.1, 0.1])
    a = fatou_bieberbach_eval(r.data, r.norm, z, 20, original=True)
    b = fatou_bieberbach_eval(r.data, r.norm, z, 40, original=True)
    assert np.abs(a - b).max() < 1e-8


def test_original_coordinates_transport(perturbed_run):
    r = perturbed_run
    z = ball_points(2, 20, 0.3, seed=1)
    direct = fatou_bieberbach_eval(r.data, r.norm, r.norm.to_normalized(z, 0), 6)
    np.testing.assert_array_equal(fatou_bieberbach_eval(r.data, r.norm, z, 6, original=True),
                                  direct)


def test_telescoping(perturbed_run):
    r = perturbed_run
    jets, G, X = r.norm.jets, r.data.G, r.data.X
    z = ball_points(2, 50, 1.0, seed=2)
    for n in (3, 8):
        w = forward_orbit(jets, z, n)[-1]
        direct = (fatou_bieberbach_eval(r.data, r.norm, z, n + 1)
                  - fatou_bieberbach_eval(r.data, r.norm, z, n))
        tele = (apply_inverse_chain(G, G[n].inverse_evaluate(X[n + 1](jets[n](w))), n)
                - apply_inverse_chain(G, X[n](w), n))
        assert np.abs(direct - tele).max() < 1e-10


def test_chain_inverse(perturbed_run):
    G = perturbed_run.data.G
    z = ball_points(2, 30, 1.0, seed=4)
    back = apply_inverse_chain(G, apply_chain(G, z, 6, 2), 6, 2)
    np.testing.assert_allclose(back, z, atol=1e-12)


def test_forward_overflow():
    F = JetMap.from_terms(2, 2, {(1, (1, 0)): 0.5, (2, (0, 1)): 0.2, (2, (2, 0)): 1.0})
    with pytest.raises(NotInBasinError):
        forward_orbit([F] * 30, np.array([[1e80, 0]]), 30)


def test_convergence_linear_zero_deltas():
    F = JetMap.from_linear(np.diag([0.5, 0.3]), 2)
    data = build_conjugacy([F] * 20, 2)
    rep = convergence_report(data, [F] * 20, grid_points(2, 0.3, 4))
    assert all(d <= 1e-15 for _, d, _ in rep.rows)
    assert rep.passed


def test_convergence_perturbed(perturbed_run):
    r = perturbed_run
    grid = r.norm.to_normalized(grid_points(2, 0.3, 6), 0)
    rep = convergence_report(r.data, r.norm, grid, params=r.params)
    assert rep.ratio < 1 and rep.ratio <= 1.2 * r.params.alpha_rate
    assert rep.jacobian_error < 1e-4 and rep.injectivity >= 0.1
    csv = rep.to_csv().splitlines()
    assert csv[0] == "n,sup_delta,ratio" and csv[-1] == "pass,,1"


def test_basin_origin_and_linear():
    F = JetMap.from_linear(np.eye(3) / 2, 1)
    assert str(basin_membership([F], np.zeros(3))) == "attracted(0)"
    pts = ball_points(3, 200, 1e6, seed=0)
    codes, _ = classify_points([F], pts, max_iter=200, rho_out=1e9)
    assert np.all(codes == 1)


def test_basin_shear_points(shear):
    assert basin_membership([shear], (0.01, 0.01)).verdict == "attracted"
    v = basin_membership([shear], (1e6, 1e6), max_iter=10_000)
    assert v.verdict in ("attracted", "escaped", "undecided")
    assert v.step <= 10_000


def test_attracted_stable_under_more_iterations(shear):
    pts = ball_points(2, 300, 3.0, seed=6)
    c1, s1 = classify_points([shear], pts, max_iter=20)
    c2, s2 = classify_points([shear], pts, max_iter=200)
    att = c1 == 1
    assert np.all(c2[att] == 1) and np.array_equal(s1[att], s2[att])


def test_basin_openness(shear):
    pts = ball_points(2, 200, 3.0, seed=7)
    codes, steps = classify_points([shear], pts, max_iter=100)
    h = 1e-4
    dirs = np.vstack([np.eye(2), 1j * np.eye(2), -np.eye(2), -1j * np.eye(2)])
    for p in pts[(codes == 1) & (steps >= 2)]:
        nc, _ = classify_points([shear], p + h * dirs, max_iter=100)
        assert np.all(nc == 1)


def test_surjectivity_linear(shear_run):
    r = shear_run
    cert = surjectivity_probe(r.data, r.norm, r.params, 1.0, n_samples=300)
    assert cert["pass"] and cert["max_displacement_ratio"] <= 0.5
    assert cert["sup_image"] < r.params.r / 2


def test_surjectivity_horizon_too_short(perturbed_run):
    r = perturbed_run
    with pytest.raises(HorizonTooShortError):
        surjectivity_probe(r.data, r.norm, r.params, 1e200, n_samples=50)


def test_slice_and_ppm(shear):
    codes, steps = slice_pixels(autonomous(shear, 5), (-1, 1, -1, 1), 8, max_iter=50)
    img = render_ppm(codes, steps)
    assert img.startswith(b"P6\n# fbdomain palette v1\n8 8\n255\n")
    assert len(img) == len(b"P6\n# fbdomain palette v1\n8 8\n255\n") + 8 * 8 * 3
    assert codes[4, 4] == 1
