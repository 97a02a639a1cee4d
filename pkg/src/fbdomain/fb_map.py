"""The maps Psi_n = G(n)^-1 o X_n o F(n) and the convergence, injectivity
and surjectivity diagnostics around them.

Everything here works in the normalized frame produced by
``normalize_sequence``.  G(n) = G_n o ... o G_1 is never expanded as a
polynomial; its inverse is applied as the chain of exact single-step
triangular inverses G_1^-1 o ... o G_n^-1.
"""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import HorizonTooShortError, NoConvergenceError, NotInBasinError
from .sampling import ball_points, sphere_points

OVERFLOW = 1e150
EPS = 4 * np.finfo(float).eps
RAMP_STEPS = 64
PALETTE_VERSION = "v1"


@dataclass
class ConvergenceParams:
    r: float
    b: float
    gamma: float
    beta: float
    q: int
    alpha_rate: float
    C: float
    m: int = 0
    n_samples: int = 0

    def smallness(self):
        """r^q sum_n C alpha^n, required below 1/2."""
        a = self.alpha_rate
        return self.r ** self.q * self.C * a / (1 - a)

    def to_dict(self):
        return {"r": self.r, "b": self.b, "gamma": self.gamma, "beta": self.beta,
                "q": self.q, "alpha_rate": self.alpha_rate, "C": self.C, "m": self.m,
                "smallness": self.smallness(), "n_samples": self.n_samples}


@dataclass
class BasinVerdict:
    point: np.ndarray
    verdict: str
    step: int

    def __str__(self):
        return f"{self.verdict}({self.step})"


def _jets(norm):
    return list(getattr(norm, "jets", norm))


def _points(z, k):
    z = np.asarray(z, dtype=complex)
    single = z.ndim == 1
    return np.atleast_2d(z).reshape(-1, k), single


def apply_chain(Gs, z, hi, lo=0):
    """G(lo, hi)(z) = G_hi o ... o G_{lo+1}(z) (1-based step indices)."""
    for n in range(lo + 1, hi + 1):
        z = Gs[n - 1](z)
    return z


def apply_inverse_chain(Gs, w, hi, lo=0):
    """G(lo, hi)^-1(w) = G_{lo+1}^-1 o ... o G_hi^-1(w)."""
    for n in range(hi, lo, -1):
        w = Gs[n - 1].inverse_evaluate(w)
    return w


def forward_orbit(jets, z, n, lo=0):
    """Points F(lo, t)(z) for t = lo..n; raises when an orbit blows up."""
    out = [z]
    for t in range(lo + 1, n + 1):
        with np.errstate(all="ignore"):
            z = jets[t - 1](z)
        bad = ~np.isfinite(z).all(axis=-1) | (np.abs(z).max(axis=-1) > OVERFLOW)
        if np.any(bad):
            raise NotInBasinError(
                "forward orbit overflows", stage="fb_map.forward",
                details={"step": t, "points": int(np.sum(bad))})
        out.append(z)
    return out


def fatou_bieberbach_eval(data, norm, z, n, original=False):
    """Psi_n(z); ``original=True`` reads z in the original coordinates."""
    k = data.k
    pts, single = _points(z, k)
    if original:
        pts = norm.to_normalized(pts, 0)
    jets = _jets(norm)
    w = forward_orbit(jets, pts, n)[-1]
    out = apply_inverse_chain(data.G, data.X[n](w), n)
    return out[0] if single else out


def inverse_chain_floor(Gs, w, hi, lo=0, unit=EPS):
    """G(lo, hi)^-1(w) together with a per-point round-off bound.

    Each single-step inverse solves for z_j by cancellation, so rounding
    made at one step is amplified by the Jacobian of the later inverses.
    The bound follows e <- ||J_{G_t^-1}|| e + unit ||z|| along the chain,
    starting from ``unit ||w||``.
    """
    err = unit * np.linalg.norm(w, axis=1)
    for n in range(hi, lo, -1):
        z = Gs[n - 1].inverse_evaluate(w)
        jac = np.linalg.inv(Gs[n - 1].jacobian(z))
        err = np.linalg.norm(jac, 2, axis=(1, 2)) * err + unit * np.linalg.norm(z, axis=1)
        w = z
    return w, err


def psi_values(data, norm, pts, ns, with_floor=False):
    """``{n: Psi_n(pts)}`` sharing one forward orbit.

    With ``with_floor`` also returns ``{n: round-off bound per point}``.
    """
    jets = _jets(norm)
    orbit = forward_orbit(jets, pts, max(ns))
    if not with_floor:
        return {n: apply_inverse_chain(data.G, data.X[n](orbit[n]), n) for n in ns}
    vals, floors = {}, {}
    for n in ns:
        vals[n], floors[n] = inverse_chain_floor(data.G, data.X[n](orbit[n]), n)
    return vals, floors


def psi_jacobian(data, norm, n, h=1e-6):
    """Central finite-difference Jacobian of Psi_n at the origin."""
    k = data.k
    E = np.eye(k, dtype=complex) * h
    plus = fatou_bieberbach_eval(data, norm, E, n)
    minus = fatou_bieberbach_eval(data, norm, -E, n)
    return ((plus - minus) / (2 * h)).T


def growth_constants(Gs, n_samples=2_000, seed=0):
    """(beta, gamma): forward growth of G(n) and Lipschitz bound of G_n^-1."""
    k = Gs[0].k
    sphere = sphere_points(k, n_samples, 1.0, seed=seed)
    ball = np.vstack([ball_points(k, n_samples, 1.0, seed=seed), sphere])
    beta = 0.0
    z = sphere
    for n, g in enumerate(Gs, start=1):
        z = g(z)
        sup = float(np.linalg.norm(z, axis=1).max())
        beta = max(beta, sup ** (1.0 / n))
    gamma = 0.0
    for g in Gs:
        jac = g.jacobian(g.inverse_evaluate(ball))
        gamma = max(gamma, float(np.linalg.norm(np.linalg.inv(jac), 2, axis=(1, 2)).max()))
    return 1.05 * beta, gamma


def pointwise_defect(data, norm, pts, n):
    """G_n^-1 X_n F_n(z) - X_{n-1}(z) at the given points."""
    f = _jets(norm)[n - 1]
    return data.G[n - 1].inverse_evaluate(data.X[n](f(pts))) - data.X[n - 1](pts)


def _nonlinear_sum(x, r):
    degs = x.basis.degrees
    w = np.where(degs >= 2, r ** np.maximum(degs - 1, 0), 0.0)
    return float((np.abs(x.coef) * w).sum(axis=1).max())


def convergence_params(data, norm, b, gamma, beta, n_samples=500, seed=0):
    """r, C and the rates of the convergence argument.

    r is the largest 2^-i with sum_{|alpha|>=2} |c_{j,alpha}| r^{|alpha|-1}
    <= 1/2 for every X_n and component, further halved until
    r^q sum C alpha^n < 1/2.  C is the sampled sup over n and the sphere of
    radius r of ||G_n^-1 X_n F_n(z) - X_{n-1}(z)|| / ||z||^{q+1}; by the
    maximum principle this bounds the quotient on the whole ball B(r).
    """
    q = data.q if data.q is not None else data.degree - 1
    alpha = gamma * b ** q
    r = 1.0
    while max(_nonlinear_sum(x, r) for x in data.X) > 0.5:
        r *= 0.5
    k = data.k
    for _ in range(60):
        pts = sphere_points(k, n_samples, r, seed=seed)
        C = 0.0
        for n in range(1, data.horizon + 1):
            res = np.linalg.norm(pointwise_defect(data, norm, pts, n), axis=1)
            C = max(C, float(res.max()) / r ** (q + 1))
        params = ConvergenceParams(r, b, gamma, beta, q, alpha, C, n_samples=n_samples)
        if alpha >= 1 or params.smallness() < 0.5:
            return params
        r *= 0.5
    return params


def grid_points(k, radius, n):
    """n x n lattice on a complex 2-plane slice, contained in B(radius)."""
    s, t = np.meshgrid(np.linspace(-1, 1, n), np.linspace(-1, 1, n), indexing="ij")
    s, t = s.ravel(), t.ravel()
    pts = np.zeros((n * n, k), dtype=complex)
    if k == 1:
        pts[:, 0] = radius * (s + 1j * t) / np.sqrt(2)
    else:
        pts[:, 0] = radius * (s + 1j * t) / 2
        pts[:, 1] = radius * (t - 1j * s) / 2
    return pts


def burn_in(norm, pts, r, max_n):
    """First m with F(m)(pts) inside B(r)."""
    jets = _jets(norm)
    z = pts
    for m in range(0, max_n + 1):
        if np.linalg.norm(z, axis=1).max() < r:
            return m
        if m < max_n:
            z = forward_orbit(jets, z, m + 1, lo=m)[-1]
    return None


def fit_ratio(ns, deltas, floor):
    """Least-squares geometric ratio of deltas above the round-off floor."""
    ns = np.asarray(ns, dtype=float)
    d = np.asarray(deltas, dtype=float)
    keep = d > floor
    if keep.sum() < 2:
        return 0.0
    return float(np.exp(np.polyfit(ns[keep], np.log(d[keep]), 1)[0]))


@dataclass
class ConvergenceReport:
    rows: list
    ratio: float
    alpha_rate: float
    burn_in: int
    jacobian_error: float
    injectivity: float
    c_tilde: float
    passed: bool = False
    details: dict = field(default_factory=dict)

    def to_csv(self):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["n", "sup_delta", "ratio"])
        for n, delta, step_ratio in self.rows:
            w.writerow([n, repr(delta), "" if step_ratio is None else repr(step_ratio)])
        w.writerow(["fit", "", repr(self.ratio)])
        w.writerow(["pass", "", int(self.passed)])
        return out.getvalue()

    def to_dict(self):
        return {"ratio": self.ratio, "alpha_rate": self.alpha_rate, "burn_in": self.burn_in,
                "jacobian_error": self.jacobian_error, "injectivity": self.injectivity,
                "c_tilde": self.c_tilde, "pass": self.passed,
                "rows": [[n, d, s] for n, d, s in self.rows]}


def convergence_report(data, norm, grid, n_range=None, params=None, slack=1.2,
                       floor=1e-13, noise_factor=10.0, eval_tol=1e-8):
    """sup-grid ||Psi_{n+1} - Psi_n|| over n_range with a fitted ratio.

    Passes when the fitted ratio is below 1 and at most ``slack`` times
    alpha_rate, Psi_n'(0) = I within 1e-4 and the grid images stay separated
    by at least 0.1 times the input separation.
    """
    N = data.horizon
    n_range = list(range(1, N)) if n_range is None else [n for n in n_range if n < N]
    ns = sorted(set(n_range) | {n + 1 for n in n_range})
    vals, floors = psi_values(data, norm, grid, ns, with_floor=True)
    deltas = [float(np.linalg.norm(vals[n + 1] - vals[n], axis=1).max()) for n in n_range]
    noise = [float((floors[n] + floors[n + 1]).max()) for n in n_range]
    scale = max(1.0, float(np.linalg.norm(grid, axis=1).max()))
    r = params.r if params is not None else 0.5
    m = burn_in(norm, grid, r, N)
    m = 0 if m is None else m
    # only deltas well above both the absolute floor and the propagated
    # round-off bound carry information about the true convergence rate
    window = [(n, d) for n, d, e in zip(n_range, deltas, noise)
              if n >= m and d > max(floor * scale, noise_factor * e)]
    ratio = fit_ratio([n for n, _ in window], [d for _, d in window], 0.0)
    rows = []
    for i, (n, d) in enumerate(zip(n_range, deltas)):
        prev = deltas[i - 1] if i else None
        rows.append((n, d, d / prev if prev else None))
    # Jacobian and injectivity are read at the deepest step whose round-off
    # bound is still negligible
    usable = [n for n in ns if floors[n].max() <= eval_tol * scale]
    n_eval = usable[-1] if usable else ns[0]
    final = vals[n_eval]
    diff_in = np.linalg.norm(grid[:, None, :] - grid[None, :, :], axis=2)
    diff_out = np.linalg.norm(final[:, None, :] - final[None, :, :], axis=2)
    iu = np.triu_indices(len(grid), 1)
    injectivity = float((diff_out[iu] / diff_in[iu]).min()) if len(iu[0]) else 1.0
    jac = psi_jacobian(data, norm, n_eval)
    jac_err = float(np.abs(jac - np.eye(data.k)).max())
    alpha = params.alpha_rate if params is not None else float("nan")
    q = params.q if params is not None else data.degree - 1
    fm = forward_orbit(_jets(norm), grid, m)[-1]
    size = float(np.linalg.norm(fm, axis=1).max()) ** (q + 1)
    c_tilde = max((d / (alpha ** n * size) for n, d in window if size > 0 and d > 0),
                  default=0.0) if params is not None else float("nan")
    report = ConvergenceReport(rows, ratio, alpha, m, jac_err, injectivity, c_tilde,
                               details={"fit_points": len(window), "n_eval": n_eval,
                                        "max_roundoff_bound": max(noise, default=0.0)})
    if ratio >= 1:
        raise NoConvergenceError(
            f"fitted delta ratio {ratio:.4g} is not below 1", stage="fb_map.convergence",
            details={"table": report.to_dict()["rows"], "ratio": ratio})
    report.passed = bool(
        (params is None or ratio <= slack * alpha) and jac_err <= 1e-4 and injectivity >= 0.1)
    return report


def _step_maps(seq):
    if hasattr(seq, "step"):
        return seq.step
    jets = list(seq)
    return lambda n: jets[min(n, len(jets)) - 1]


def classify_points(seq, pts, max_iter=1000, rho_in=0.5, rho_out=1e3):
    """Vectorized basin verdicts: codes 1 attracted, -1 escaped, 0 undecided.

    Returns ``(codes, steps)``; for undecided points the step is max_iter.
    """
    if not rho_in < rho_out:
        raise ValueError("need rho_in < rho_out")
    step_fn = _step_maps(seq)
    z = np.array(pts, dtype=complex)
    P = z.shape[0]
    codes = np.zeros(P, dtype=int)
    steps = np.full(P, max_iter, dtype=int)
    active = np.ones(P, dtype=bool)
    for n in range(0, max_iter + 1):
        with np.errstate(all="ignore"):
            norms = np.linalg.norm(z, axis=1)
        norms = np.where(np.isfinite(norms), norms, np.inf)
        inn = active & (norms < rho_in)
        out = active & (norms > rho_out)
        codes[inn], steps[inn] = 1, n
        codes[out], steps[out] = -1, n
        active &= ~(inn | out)
        if n == max_iter or not active.any():
            break
        idx = np.nonzero(active)[0]
        with np.errstate(all="ignore"):
            z[idx] = step_fn(n + 1)(z[idx])
    return codes, steps


def basin_membership(seq, z, max_iter=1000, rho_in=0.5, rho_out=1e3):
    """Verdict for one point: attracted, escaped or undecided."""
    pt = np.asarray(z, dtype=complex).reshape(1, -1)
    codes, steps = classify_points(seq, pt, max_iter, rho_in, rho_out)
    name = {1: "attracted", -1: "escaped", 0: "undecided"}[int(codes[0])]
    return BasinVerdict(pt[0], name, int(steps[0]))


def clear_margin(seq, pts, max_iter=1000, rho_in=0.5, rho_out=1e3):
    """Verdicts plus a mask of points whose verdict is the same at
    (rho_in/2, 2 rho_out) and is not undecided."""
    codes, steps = classify_points(seq, pts, max_iter, rho_in, rho_out)
    codes2, _ = classify_points(seq, pts, max_iter, rho_in / 2, 2 * rho_out)
    return codes, steps, (codes == codes2) & (codes != 0)


def surjectivity_probe(data, norm, params, R, n_samples=1_000, seed=0, verify_tol=1e-3):
    """Smallest m with sup ||G(m)(dB(R))|| < r/2, plus the displacement check.

    The displacement ||G(m,n)^-1 X_n F(m,n)(z) - z|| / ||z|| is sampled on
    B(r) for n = m+1, m+2, ... where G(m,n) = G_n o ... o G_{m+1} and
    F(m,n) likewise.  Testing stops at the first n whose propagated round-off
    bound exceeds ``verify_tol`` ||z||, since beyond that depth the double
    precision value no longer decides the inequality.
    """
    k, N = data.k, data.horizon
    r = params.r
    z = sphere_points(k, n_samples, R, seed=seed)
    m = None
    sups = []
    for t in range(0, N + 1):
        with np.errstate(all="ignore"):
            if t:
                z = data.G[t - 1](z)
            sup = float(np.linalg.norm(z, axis=1).max())
        if not np.isfinite(sup):
            sup = float("inf")
        sups.append(sup)
        if sup < r / 2:
            m = t
            break
    if m is None or m >= N:
        raise HorizonTooShortError(
            f"no m < N brings the sphere of radius {R} inside B(r/2)",
            stage="fb_map.surjectivity", details={"R": R, "N": N, "r": r, "last_sup": sups[-1]})
    jets = _jets(norm)
    pts = ball_points(k, n_samples, r, seed=seed + 1)
    norms = np.linalg.norm(pts, axis=1)
    orbit = forward_orbit(jets, pts, N, lo=m)
    worst = 0.0
    tested = []
    for n in range(m + 1, N + 1):
        back, err = inverse_chain_floor(data.G, data.X[n](orbit[n - m]), n, lo=m)
        if tested and (err / norms).max() > verify_tol:
            break
        tested.append(n)
        worst = max(worst, float((np.linalg.norm(back - pts, axis=1) / norms).max()))
    return {"R": R, "m": m, "r": r, "sup_image": sups[-1],
            "tested_n": [tested[0], tested[-1]], "max_displacement_ratio": worst,
            "pass": bool(worst <= 0.5)}


def surjectivity_slope(certs, b):
    """Fitted dm / dlog R against the predicted 1 / log(1/b)."""
    Rs = np.array([c["R"] for c in certs], dtype=float)
    ms = np.array([c["m"] for c in certs], dtype=float)
    slope = float(np.polyfit(np.log(Rs), ms, 1)[0])
    predicted = 1.0 / np.log(1.0 / b)
    return slope, predicted


def heat_color(t):
    """Palette v1 attracted color for t in [0, 1] (0 = immediate entry)."""
    t = min(max(t, 0.0), 1.0)
    return (255, int(round(255 * (1 - t))), int(round(96 * (1 - t) ** 2)))


def slice_pixels(seq, window, px, max_iter=200, rho_in=0.5, rho_out=1e3):
    """Verdict codes and steps on the real slice (Re z_1, Re z_2) of C^k."""
    x0, x1, y0, y1 = window
    k = seq.k if hasattr(seq, "k") else _jets(seq)[0].k
    xs = np.linspace(x0, x1, px)
    ys = np.linspace(y1, y0, px)
    X, Y = np.meshgrid(xs, ys)
    pts = np.zeros((px * px, k), dtype=complex)
    pts[:, 0] = X.ravel()
    if k > 1:
        pts[:, 1] = Y.ravel()
    codes, steps = classify_points(seq, pts, max_iter, rho_in, rho_out)
    return codes.reshape(px, px), steps.reshape(px, px)


def render_ppm(codes, steps, ramp=RAMP_STEPS):
    """Binary P6 image: escaped black, undecided gray, attracted heat ramp."""
    h, w = codes.shape
    img = np.zeros((h, w, 3), dtype=np.uint8)
    img[codes == 0] = (128, 128, 128)
    att = codes == 1
    for value in np.unique(steps[att]):
        img[att & (steps == value)] = heat_color(min(int(value), ramp) / ramp)
    header = f"P6\n# fbdomain palette {PALETTE_VERSION}\n{w} {h}\n255\n".encode()
    return header + img.tobytes()


def certificate_json(certs, b):
    slope, predicted = surjectivity_slope(certs, b) if len(certs) > 1 else (None, None)
    return json.dumps({"certificates": certs, "slope": slope, "predicted_slope": predicted},
                      sort_keys=True, indent=1)
