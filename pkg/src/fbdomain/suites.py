"""Cross-module property suites.

Each suite mirrors one acceptance criterion and returns a ``SuiteResult``
with the measured quantities; the ``check`` subcommand and the acceptance
tests both call these functions.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .conjugacy import (
    ExpandingAffineSequence,
    bounded_affine_orbit,
    build_conjugacy,
    degree2_c2_oracle,
    oracle_slots,
)
from .fb_map import (
    clear_margin,
    convergence_report,
    pointwise_defect,
    fatou_bieberbach_eval,
    grid_points,
    surjectivity_probe,
    surjectivity_slope,
)
from .jets import (
    JetMap,
    TriangularPolyMap,
    basis,
    coeff_norm,
    compose,
    invert_jet,
    invert_triangular,
    monomials,
    triangular_identity_defect,
    truncate,
)
from .normal_form import (
    flag_horizon_rate,
    normalize_sequence,
    recenter_orbit,
    reference_frame,
)
from .pipeline import run_pipeline
from .sampling import ball_points, sphere_points
from .seq_gen import autonomous, perturb, random_uniformly_attracting


@dataclass
class SuiteResult:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0
    limit: float = None

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.metrics.items())
        return f"[{status}] {self.name} ({self.seconds:.1f}s / limit {self.limit:.0f}s): {shown}"

    def to_dict(self):
        return {"name": self.name, "pass": self.passed, "seconds": self.seconds,
                "limit": self.limit, "metrics": _plain(self.metrics)}


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.3g}"
    return str(v)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def quadratic_shear():
    """F(x, y) = (x/2, y/5 + x^2)."""
    return JetMap.from_terms(2, 2, {(1, (1, 0)): 0.5, (2, (0, 1)): 0.2, (2, (2, 0)): 1.0})


def double_shear():
    """diag(0.3, 0.25) o (x + y^2, y) o (x, y + x^2): non-triangular, small q."""
    low = JetMap.from_terms(2, 4, {(1, (1, 0)): 1, (2, (0, 1)): 1, (2, (2, 0)): 1})
    up = JetMap.from_terms(2, 4, {(1, (1, 0)): 1, (2, (0, 1)): 1, (1, (0, 2)): 1})
    return compose(JetMap.from_linear(np.diag([0.3, 0.25]), 4), compose(up, low, 4), 4)


def _random_jet(rng, k, d, cond_max=1e3):
    """Random jet whose nonlinear part is O(1) on the unit polydisk.

    Each degree stratum is divided by its number of monomials, so the sum of
    |c_{j,alpha}| per stratum stays near 1 regardless of k and d.
    """
    b = basis(k, d)
    coef = (rng.normal(size=(k, b.size)) + 1j * rng.normal(size=(k, b.size))) * 0.5
    coef[:, 0] = 0
    for s in range(2, d + 1):
        sl = b.stratum(s)
        coef[:, sl] /= sl.stop - sl.start
    while True:
        lin = np.eye(k) + 0.3 * (rng.normal(size=(k, k)) + 1j * rng.normal(size=(k, k)))
        if np.linalg.cond(lin) <= cond_max:
            break
    coef[:, 1:k + 1] = lin
    return JetMap(coef)


def _random_triangular(rng, k, degree):
    c = rng.uniform(0.1, 10, size=k) * np.exp(2j * np.pi * rng.random(k))
    terms = {}
    for j in range(2, k + 1):
        for alpha in monomials(j - 1, degree):
            if sum(alpha) >= 1:
                terms[(j, tuple(alpha) + (0,) * (k - j + 1))] = complex(
                    rng.normal(), rng.normal())
    return TriangularPolyMap.from_terms(c, terms)


def suite_jet_core(n_instances=200, seed=0):
    """Associativity, truncation idempotence, formal and triangular inverses."""
    rng = np.random.default_rng(seed)
    worst = {"associativity": 0.0, "truncation": 0.0, "inverse": 0.0,
             "inverse_relative": 0.0, "triangular": 0.0}
    for _ in range(n_instances):
        k = int(rng.integers(1, 5))
        d = int(rng.integers(1, 7))
        A, B, C = (_random_jet(rng, k, d) for _ in range(3))
        left = compose(compose(A, B, d), C, d)
        right = compose(A, compose(B, C, d), d)
        scale = max(1.0, coeff_norm(left))
        worst["associativity"] = max(worst["associativity"], coeff_norm(left - right) / scale)
        m = int(rng.integers(1, d + 1))
        t = truncate(A, m)
        worst["truncation"] = max(worst["truncation"],
                                  float(np.abs(truncate(t, m).coef - t.coef).max()))
        inv = invert_jet(A, d)
        res = coeff_norm(compose(A, inv, d) - JetMap.identity(k, d))
        worst["inverse"] = max(worst["inverse"], res)
        worst["inverse_relative"] = max(worst["inverse_relative"], res / coeff_norm(inv))
        g = _random_triangular(rng, k, int(rng.integers(1, 5)))
        defect, tscale = triangular_identity_defect(g, invert_triangular(g))
        worst["triangular"] = max(worst["triangular"], defect / tscale)
    passed = (worst["associativity"] <= 1e-12 and worst["truncation"] == 0
              and worst["inverse"] <= 1e-10 and worst["triangular"] <= 1e-12)
    return passed, worst


def suite_oracle(n_seeds=50, N=200):
    """Generic solver against the explicit k = 2 degree-2 recurrences."""
    worst = 0.0
    worst_zeta = 0.0
    for seed in range(n_seeds):
        seq = random_uniformly_attracting(2, 0.15, 0.55, 0.9, 2, seed, N)
        jets = [s.jet for s in seq.steps]
        data = build_conjugacy(jets, 2)
        oracle = degree2_c2_oracle(jets)
        slots = oracle_slots(data)
        worst = max(worst, max(float(np.abs(slots[k] - oracle[k]).max()) for k in oracle))
        worst_zeta = max(worst_zeta, float(np.abs(slots["zeta"]).max()))
    return worst <= 1e-10 and worst_zeta == 0, {"max_diff": worst, "max_zeta": worst_zeta}


def suite_residual(n_seqs=20, k=3, d=4, N=100):
    """Conjugacy residuals and boundedness on random uniformly attracting sequences."""
    worst = 0.0
    sup_norm = 0.0
    worst_slope = -np.inf
    for seed in range(n_seqs):
        seq = random_uniformly_attracting(k, 0.15, 0.55, 0.9, d, seed, N)
        data = build_conjugacy([s.jet for s in seq.steps], d)
        worst = max(worst, float(data.residuals.max()))
        sup, _ = data.boundedness()
        sup_norm = max(sup_norm, sup)
        nonlinear = np.array([coeff_norm(x - JetMap.identity(k, d)) for x in data.X])
        tail = nonlinear[-(len(nonlinear) // 4):]
        worst_slope = max(worst_slope, float(np.polyfit(np.arange(len(tail)), tail, 1)[0]))
    passed = worst <= 1e-9 and sup_norm <= 1e3 and worst_slope <= 0
    return passed, {"max_residual": worst, "sup_coeff_norm": sup_norm,
                    "max_tail_slope": worst_slope}


def suite_bounded_orbit(n_families=50, N=60, seed=0, xi_exp=1.05):
    """z -> 2z + 1 and horizon doubling on random expanding families."""
    fixed = bounded_affine_orbit(ExpandingAffineSequence(np.full(N, 2.0), np.ones(N)))
    err_fixed = abs(fixed.c0 + 1)
    rng = np.random.default_rng(seed)
    worst_ratio = 0.0
    for _ in range(n_families):
        a = rng.uniform(xi_exp, 3, 2 * N) * np.exp(2j * np.pi * rng.random(2 * N))
        b = rng.normal(size=2 * N) + 1j * rng.normal(size=2 * N)
        short = bounded_affine_orbit(ExpandingAffineSequence(a[:N], b[:N], xi_exp))
        long = bounded_affine_orbit(ExpandingAffineSequence(a, b, xi_exp))
        bound = xi_exp ** (-N) * short.radius
        worst_ratio = max(worst_ratio, abs(short.c0 - long.c0) / bound)
    passed = err_fixed <= 1e-14 and worst_ratio <= 1
    return passed, {"c0_error": err_fixed, "max_change_over_bound": worst_ratio}


def suite_autonomous_identity(N=40):
    """F = diag(0.5, 0.2): Psi_n is the identity on a grid in B(0.5)."""
    F = JetMap.from_linear(np.diag([0.5, 0.2]), 1)
    res = run_pipeline(autonomous(F, N))
    grid = res.norm.to_normalized(grid_points(2, 0.5, 20), 0)
    worst = 0.0
    for n in range(1, N + 1):
        psi = fatou_bieberbach_eval(res.data, res.norm, grid, n)
        worst = max(worst, float(np.abs(psi - grid).max()))
    return worst <= 1e-12, {"max_deviation": worst}


def suite_convergence(seeds=range(5), N=60, eps=0.01):
    """Fitted delta ratio < 1 and <= 1.2 alpha_rate; Psi'(0) = I."""
    F = quadratic_shear()
    cases = [("autonomous", autonomous(F, N))]
    cases += [(f"perturbed_{s}", perturb(F, eps, s, N)) for s in seeds]
    metrics = {}
    passed = True
    for name, seq in cases:
        res = run_pipeline(seq)
        grid = res.norm.to_normalized(grid_points(2, 0.3, 20), 0)
        rep = convergence_report(res.data, res.norm, grid, params=res.params)
        ok = rep.ratio < 1 and rep.ratio <= 1.2 * rep.alpha_rate and rep.jacobian_error <= 1e-4
        passed &= ok
        metrics[f"{name}_ratio"] = rep.ratio
        metrics[f"{name}_alpha"] = rep.alpha_rate
        metrics[f"{name}_jac"] = rep.jacobian_error
    return passed, metrics


def suite_normalization(seeds=range(3), N=120, eps=0.01, n_points=500):
    """Moduli (0.9, 0.3): flag rate near 1/3, triangular output, basin transport."""
    F = JetMap.from_linear(np.diag([0.9, 0.3]), 1)
    metrics = {"worst_rate_error": 0.0, "max_upper": 0.0, "agreement": 1.0,
               "clear_points": n_points}
    passed = True
    for seed in seeds:
        seq = perturb(F, eps, seed, N)
        data, _ = normalize_sequence(seq)
        metrics["max_upper"] = max(metrics["max_upper"], data.max_upper)
        _, rec, _ = recenter_orbit(seq, N)
        W = reference_frame(seq.reference.linear)
        W_inv = np.linalg.inv(W)
        mats = np.array([W_inv @ j.linear @ W for j in rec])
        rate = flag_horizon_rate(mats, 1)[0]
        metrics["worst_rate_error"] = max(metrics["worst_rate_error"], abs(rate * 3 - 1))
        pts = ball_points(2, 4 * n_points, 1000.0, seed=seed)
        c1, _, ok1 = clear_margin(seq, pts, 100, 0.5, 1e4)
        norm_pts = data.to_normalized(pts, 0)
        s = data.dilation
        c2, _, ok2 = clear_margin(data.jets, norm_pts, 100, 0.5 / s, 1e4 / s)
        both = np.nonzero(ok1 & ok2)[0][:n_points]
        agree = float(np.mean(c1[both] == c2[both])) if len(both) else 0.0
        metrics["agreement"] = min(metrics["agreement"], agree)
        metrics["clear_points"] = min(metrics["clear_points"], len(both))
        passed &= len(both) == n_points
    passed &= (metrics["worst_rate_error"] <= 0.25 and metrics["max_upper"] <= 1e-10
               and metrics["agreement"] == 1.0)
    return passed, metrics


def suite_surjectivity(N=60, eps=0.01, seed=0, radii=(1, 10, 100)):
    """m with B(R) inside G(m)^-1 B(r/2), half-ball displacement, growth of m."""
    res = run_pipeline(perturb(quadratic_shear(), eps, seed, N))
    certs = [surjectivity_probe(res.data, res.norm, res.params, R) for R in radii]
    slope, predicted = surjectivity_slope(certs, res.params.b)
    rel = abs(slope - predicted) / predicted
    metrics = {f"m_R{R}": c["m"] for R, c in zip(radii, certs)}
    metrics["max_displacement"] = max(c["max_displacement_ratio"] for c in certs)
    metrics["slope"] = slope
    metrics["predicted"] = predicted
    passed = all(c["pass"] for c in certs) and rel <= 0.3
    return passed, metrics


def suite_scaling(N=40, n_points=200):
    """Residual exponent >= q + 1.8 on ||z|| in [1e-3, 1e-1] after extension."""
    res = run_pipeline(autonomous(double_shear(), N))
    radii = np.logspace(-3, -1, 9)
    sups = []
    for r in radii:
        pts = sphere_points(2, n_points, r, seed=1)
        sups.append(max(float(np.linalg.norm(pointwise_defect(res.data, res.norm, pts, n),
                                             axis=1).max()) for n in range(1, N + 1)))
    slope = float(np.polyfit(np.log(radii), np.log(sups), 1)[0])
    return slope >= res.q + 1.8, {"q": res.q, "exponent": slope}


SUITES = {
    "jet_core": (suite_jet_core, 30),
    "oracle": (suite_oracle, 60),
    "residual": (suite_residual, 300),
    "bounded_orbit": (suite_bounded_orbit, 5),
    "autonomous_identity": (suite_autonomous_identity, 5),
    "convergence": (suite_convergence, 600),
    "normalization": (suite_normalization, 120),
    "surjectivity": (suite_surjectivity, 300),
    "scaling": (suite_scaling, 60),
}


def run_suite(name):
    fn, limit = SUITES[name]
    start = time.perf_counter()
    passed, metrics = fn()
    seconds = time.perf_counter() - start
    return SuiteResult(name, bool(passed) and seconds < limit, metrics, seconds, limit)


def run_all(names=None):
    return [run_suite(n) for n in (names or SUITES)]
