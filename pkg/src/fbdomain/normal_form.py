"""Reduction of an attracting sequence to lower triangular, correctly ordered
normal form.

The pipeline recenters the orbit of the origin, fixes a reference frame in
which the reference linear part is lower triangular with non-increasing
moduli, follows invariant subspaces of the linear cocycle by backward
iteration (one split per modulus gap, smallest cluster first), and finishes
with sequential QR steps inside each cluster.  All coordinate changes are
recorded so points can be moved between the original and normalized frames.
"""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack, schur

from .errors import (
    DomainError,
    InvariantFailure,
    NoSplitError,
    NotCorrectlyOrderedError,
    NotUniformlyAttractingError,
    PerturbationTooLargeError,
    RankError,
)
from .jets import JetMap, compose, jet_from_dict, jet_to_dict, substitute
from .sampling import sphere_points


def is_correctly_ordered(moduli, xi):
    """Check ``|l_j| |l_i| <= xi |l_l|`` for all ``l <= j`` and all ``i``.

    Returns ``(ok, worst)`` where ``worst`` is the largest ratio
    ``|l_j| |l_i| / |l_l|`` over the inequality family.
    """
    m = np.abs(np.asarray(moduli, dtype=complex)).astype(float)
    if np.any(m <= 0) or np.any(m >= 1):
        raise DomainError("moduli must lie in (0, 1)", details={"moduli": m.tolist()})
    if not 0 < xi < 1:
        raise DomainError("slack xi must lie in (0, 1)")
    # for fixed j the worst l <= j is the smallest modulus among m_1..m_j
    prefix_min = np.minimum.accumulate(m)
    worst = float(np.max(m * m.max() / prefix_min))
    return worst <= xi, worst


def qr_lower_triangularize(A, phase="diag_l"):
    """Unitary ``U`` and lower triangular ``L`` with ``U @ A == L``.

    ``phase="diag_l"`` makes the diagonal of ``L`` real and non-negative;
    ``phase="near_identity"`` instead makes the diagonal of ``U`` real and
    non-negative, which keeps ``U = I`` when ``A`` is already lower triangular.
    """
    A = np.asarray(A, dtype=complex)
    k = A.shape[0]
    if A.shape != (k, k):
        raise DomainError("matrix must be square")
    J = np.eye(k)[::-1]
    Q, R = np.linalg.qr(J @ A @ J)
    U = J @ Q.conj().T @ J
    L = J @ R @ J
    scale = max(np.abs(A).max(), np.finfo(float).tiny)
    if np.any(np.abs(np.diag(L)) <= 1e-13 * scale):
        raise RankError("matrix is singular", details={"diag": np.abs(np.diag(L)).tolist()})
    if phase == "diag_l":
        ref = np.diag(L)
    elif phase == "near_identity":
        ref = np.diag(U)
    else:
        raise ValueError(f"unknown phase convention {phase!r}")
    mag = np.abs(ref)
    rot = np.where(mag > 0, ref.conj() / np.where(mag > 0, mag, 1), 1.0)
    U = rot[:, None] * U
    L = rot[:, None] * L
    L[np.triu_indices(k, 1)] = 0
    return U, L


def strict_upper(A):
    A = np.asarray(A)
    return float(np.abs(np.triu(A, 1)).max()) if A.shape[0] > 1 else 0.0


def subspace_sine(Q1, Q2):
    """Largest principal-angle sine between the column spans of Q1 and Q2."""
    Q1, _ = np.linalg.qr(Q1)
    Q2, _ = np.linalg.qr(Q2)
    resid = Q1 - Q2 @ (Q2.conj().T @ Q1)
    return float(np.linalg.norm(resid, 2)) if resid.size else 0.0


def chart_distance(Q, l):
    """Chart metric max|E| with the subspace written as ``z_top = E z_bottom``."""
    top, bot = Q[:l], Q[l:]
    E = top @ np.linalg.inv(bot)
    return float(np.abs(E).max()) if E.size else 0.0


def nearest_unitary(Q, l):
    """Unitary closest to I sending span(Q) onto span(e_{l+1}, ..., e_m)."""
    m = Q.shape[0]
    P = Q @ Q.conj().T
    S = np.zeros((m, m))
    S[l:, l:] = np.eye(m - l)
    if np.array_equal(P, S):
        return np.eye(m, dtype=complex)
    I = np.eye(m)
    M = S @ P + (I - S) @ (I - P)
    W, _, Vh = np.linalg.svd(M)
    return W @ Vh


def relative_gap(moduli, l):
    """Relative gap between the first l moduli and the remaining ones."""
    top = float(np.min(moduli[:l]))
    bot = float(np.max(moduli[l:]))
    return (top - bot) / top


def cluster_splits(moduli, gap_spec):
    """Split indices l (1 <= l < k, descending) with relative gap >= gap_spec."""
    moduli = np.asarray(moduli, dtype=float)
    k = len(moduli)
    return [l for l in range(k - 1, 0, -1) if relative_gap(moduli, l) >= gap_spec]


@dataclass
class FlagResult:
    split: int
    bases: list
    unitaries: np.ndarray
    chart: np.ndarray
    invariance: np.ndarray
    unitary_dev: np.ndarray

    def rows(self):
        for n in range(len(self.bases)):
            yield n, float(self.chart[n]), float(self.invariance[n]), float(self.unitary_dev[n])


def _backward_subspaces(mats, l):
    m = mats.shape[1]
    Q = np.eye(m, dtype=complex)[:, l:]
    bases = [Q]
    for A in mats[::-1]:
        Q, _ = np.linalg.qr(np.linalg.solve(A, Q))
        bases.append(Q)
    return bases[::-1]


def track_invariant_flag(mats, l, gap_spec=0.05, delta=0.25, tol=1e-10, reference=None):
    """Orbit of (m-l)-dimensional subspaces L_0..L_N with A_n L_{n-1} = L_n.

    ``mats`` holds A_1..A_N (shape (N, m, m)).  The orbit is obtained by
    pulling the coordinate subspace ``{z_1 = ... = z_l = 0}`` back from the
    horizon; the pull-back contracts at rate about |l_{l+1}| / |l_l|.
    """
    mats = np.asarray(mats, dtype=complex)
    N, m, _ = mats.shape
    ref = mats[0] if reference is None else np.asarray(reference)
    moduli = np.abs(np.diag(ref))
    gap = relative_gap(moduli, l)
    if gap < gap_spec:
        raise NoSplitError(
            f"relative modulus gap {gap:.3g} at split {l} is below {gap_spec}",
            stage="normal_form.flag", details={"split": l, "gap": gap})
    bases = _backward_subspaces(mats, l)
    chart = np.array([chart_distance(Q, l) for Q in bases])
    if chart.max() > delta:
        raise PerturbationTooLargeError(
            "invariant subspaces leave the chart neighborhood",
            stage="normal_form.flag",
            details={"split": l, "max_chart_distance": float(chart.max()), "delta": delta})
    invariance = np.zeros(N + 1)
    for n in range(1, N + 1):
        invariance[n] = subspace_sine(mats[n - 1] @ bases[n - 1], bases[n])
    if invariance.max() > tol:
        raise PerturbationTooLargeError(
            "subspace orbit is not invariant within tolerance",
            stage="normal_form.flag",
            details={"split": l, "max_invariance_error": float(invariance.max())})
    unitaries = np.array([nearest_unitary(Q, l) for Q in bases])
    dev = np.array([np.linalg.norm(U - np.eye(m), 2) for U in unitaries])
    return FlagResult(l, bases, unitaries, chart, invariance, dev)


def flag_horizon_rate(mats, l, step=5, horizons=None):
    """Per-step decay rate of the horizon error of L_0.

    Fits ``log d(L_0^(h), L_0^(h+step))`` against h and returns
    ``(rate, horizons, distances)``; distances at round-off level are dropped.
    """
    mats = np.asarray(mats, dtype=complex)
    if horizons is None:
        horizons = list(range(step, mats.shape[0] - step + 1, step))
    dists = []
    for h in horizons:
        a = _backward_subspaces(mats[:h], l)[0]
        b = _backward_subspaces(mats[:h + step], l)[0]
        dists.append(subspace_sine(a, b))
    hs = np.array(horizons, dtype=float)
    ds = np.array(dists)
    keep = ds > 1e-13
    if keep.sum() < 2:
        return 0.0, horizons, dists
    slope = np.polyfit(hs[keep], np.log(ds[keep]), 1)[0]
    return float(np.exp(slope)), horizons, dists


def lemma_containment(A, l, delta, slack=0.05, n_samples=500, seed=0):
    """Check that A maps the chart neighborhood N_delta over N_{rho delta (1-slack)}.

    ``rho = |l_l| / |l_{l+1}|`` is read off the diagonal.  Samples subspaces
    Y with chart distance below ``rho delta (1-slack)`` and verifies that their
    preimages lie in N_delta.  Returns ``(ok, worst)`` with ``worst`` the
    largest preimage chart distance divided by delta.
    """
    A = np.asarray(A, dtype=complex)
    m = A.shape[0]
    d = np.abs(np.diag(A))
    rho = d[l - 1] / d[l]
    rng = np.random.default_rng(seed)
    radius = rho * delta * (1 - slack)
    worst = 0.0
    for _ in range(n_samples):
        E = rng.uniform(-1, 1, (l, m - l)) + 1j * rng.uniform(-1, 1, (l, m - l))
        E *= radius / max(np.abs(E).max(), 1e-300) * rng.uniform(0, 1)
        Y = np.vstack([E, np.eye(m - l)])
        X = np.linalg.solve(A, Y)
        worst = max(worst, chart_distance(X, l) / delta)
    return worst < 1.0, worst


@dataclass
class AttractionProfile:
    a: float
    b: float
    xi_order: float
    moduli: np.ndarray
    radii: tuple = (0.1, 0.5, 1.0)
    n_samples: int = 0

    def check(self):
        if not 0 < self.a < self.b < 1:
            raise NotUniformlyAttractingError(
                "sampled contraction bounds violate 0 < a < b < 1",
                stage="normal_form.profile", details={"a": self.a, "b": self.b})
        return self

    def to_dict(self):
        return {"a": self.a, "b": self.b, "xi_order": self.xi_order,
                "radii": list(self.radii), "n_samples": self.n_samples,
                "moduli": np.asarray(self.moduli).tolist()}


@dataclass
class NormalizationParams:
    rho: float = 0.5
    gap_spec: float = 0.05
    delta: float = 0.25
    xi_order: float = 0.95
    offdiag_scale: float = 1.0
    dilation: float = None
    profile_radii: tuple = (0.1, 0.5, 1.0)
    n_samples: int = 10_000
    flag_tol: float = 1e-10
    triangular_tol: float = 1e-10
    seed: int = 0


@dataclass
class NormalizationData:
    horizon: int
    translations: np.ndarray
    frame: np.ndarray
    dilation: float
    unitaries: np.ndarray
    jets: list
    flags: list = field(default_factory=list)
    clusters: list = field(default_factory=list)
    containment_violations: list = field(default_factory=list)
    max_upper: float = 0.0

    @property
    def k(self):
        return self.frame.shape[0]

    def step(self, n):
        return self.jets[n - 1]

    def linear(self, n):
        return self.jets[n - 1].linear

    def to_normalized(self, z, n=0):
        """Original point near step n mapped to normalized coordinates."""
        z = np.asarray(z, dtype=complex)
        M = self.unitaries[n] @ np.linalg.inv(self.frame)
        return (z - self.translations[n]) @ M.T

    def to_original(self, w, n=0):
        w = np.asarray(w, dtype=complex)
        M = self.frame @ self.unitaries[n].conj().T
        return w @ M.T + self.translations[n]

    def unitary_deviation(self):
        k = self.k
        return float(max(np.linalg.norm(U - np.eye(k), 2) for U in self.unitaries))

    def to_dict(self):
        def mat(A):
            return [[[float(v.real), float(v.imag)] for v in row] for row in np.atleast_2d(A)]

        return {
            "horizon": self.horizon,
            "k": self.k,
            "dilation": self.dilation,
            "frame": mat(self.frame),
            "translations": mat(self.translations),
            "unitaries": [mat(U) for U in self.unitaries],
            "jets": [jet_to_dict(j) for j in self.jets],
            "clusters": [list(c) for c in self.clusters],
            "containment_violations": list(self.containment_violations),
            "max_upper": self.max_upper,
        }

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        def mat(rows):
            return np.array([[complex(r, i) for r, i in row] for row in rows])

        return cls(
            horizon=int(data["horizon"]),
            translations=mat(data["translations"]),
            frame=mat(data["frame"]),
            dilation=float(data["dilation"]),
            unitaries=np.array([mat(U) for U in data["unitaries"]]),
            jets=[jet_from_dict(j) for j in data["jets"]],
            clusters=[tuple(c) for c in data.get("clusters", [])],
            containment_violations=list(data.get("containment_violations", [])),
            max_upper=float(data.get("max_upper", 0.0)),
        )

    def flag_csv(self, split):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["n", "chart_distance", "invariance_sine", "unitary_deviation"])
        for fl in self.flags:
            if fl.split == split:
                for row in fl.rows():
                    w.writerow([row[0]] + [repr(v) for v in row[1:]])
        return out.getvalue()


def _shift_jet(jet, shift):
    """Coefficients of ``z -> jet(z + shift)`` including the constant column."""
    k, d = jet.k, jet.d
    inner = JetMap.identity(k, d).coef.copy()
    inner[:, 0] = shift
    return substitute(jet.coef, inner, k, d)


def recenter_orbit(seq, horizon=None, rho=0.5, n_samples=2_000, seed=0):
    """Translate so that every step fixes the origin.

    Returns ``(x, jets, violations)``: the orbit x_0 = 0, x_n = f_n(x_{n-1}),
    the recentered maps ``z -> f_n(z + x_{n-1}) - x_n`` and the steps whose
    sampled image of the sphere of radius rho is not inside B(rho).
    """
    N = seq.horizon if horizon is None else horizon
    k = seq.k
    xs = np.zeros((N + 1, k), dtype=complex)
    jets = []
    violations = []
    boundary = sphere_points(k, n_samples, rho, seed=seed)
    for n in range(1, N + 1):
        f = seq.step(n)
        xs[n] = f(xs[n - 1])
        if np.linalg.norm(xs[n]) >= rho:
            raise NotUniformlyAttractingError(
                "orbit of the origin leaves the neighborhood",
                stage="normal_form.recenter", details={"step": n, "rho": rho})
        if f.fixes_origin() and not np.any(xs[n - 1]):
            coef = np.array(f.jet.coef)
        else:
            coef = _shift_jet(f.jet, xs[n - 1])
        coef[:, 0] = 0.0
        jets.append(JetMap(coef))
        if np.linalg.norm(f(boundary), axis=1).max() >= rho:
            violations.append(n)
    return xs, jets, violations


def reference_frame(lin, xi_order=0.95, offdiag_scale=1.0):
    """Matrix W with W^-1 lin W lower triangular, non-increasing moduli.

    An already lower triangular, correctly ordered ``lin`` keeps W = I.
    ``offdiag_scale`` > 1 additionally conjugates by a diagonal scaling that
    shrinks the sub-diagonal entries.
    """
    lin = np.asarray(lin, dtype=complex)
    k = lin.shape[0]
    moduli = np.abs(np.diag(lin))
    keep = strict_upper(lin) == 0 and np.all(moduli > 0) and np.all(moduli < 1) and \
        is_correctly_ordered(moduli, xi_order)[0]
    if keep:
        W = np.eye(k, dtype=complex)
    else:
        T, Z = schur(lin, output="complex")
        # bubble eigenvalues into increasing modulus along the upper Schur form
        for i in range(k):
            for j in range(k - 1, i, -1):
                if abs(T[j, j]) < abs(T[j - 1, j - 1]):
                    T, Z, info = lapack.ztrexc(T, Z, j + 1, j)
                    if info != 0:
                        raise RankError("Schur reordering failed", details={"info": info})
        W = Z @ np.eye(k)[::-1]
    if offdiag_scale != 1.0:
        W = W @ np.diag(float(offdiag_scale) ** np.arange(k))
    return W


def _conjugate(jet, out_mat, in_mat):
    """Jet of ``w -> out_mat @ jet(in_mat @ w)``."""
    inner = JetMap.from_linear(in_mat, jet.d)
    c = compose(jet, inner, jet.d)
    return JetMap(out_mat @ c.coef, check=False)


def _clear_upper(jet):
    """Set the round-off sized strictly-upper linear entries to exact zeros."""
    k = jet.k
    coef = np.array(jet.coef)
    lin = coef[:, 1:k + 1]
    lin[np.triu_indices(k, 1)] = 0
    return JetMap(coef, check=False)


def _profile(jets, radii, n_samples, seed):
    k = jets[0].k
    lo, hi = np.inf, 0.0
    for r in radii:
        pts = sphere_points(k, n_samples, r, seed=seed)
        for jet in jets:
            ratio = np.linalg.norm(jet(pts), axis=1) / r
            lo = min(lo, float(ratio.min()))
            hi = max(hi, float(ratio.max()))
    return 0.95 * lo, 1.05 * hi


def normalize_sequence(seq, params=None, horizon=None):
    """Full reduction pipeline; returns ``(NormalizationData, AttractionProfile)``."""
    p = params or NormalizationParams()
    N = seq.horizon if horizon is None else horizon
    k = seq.k
    xs, rec, violations = recenter_orbit(seq, N, p.rho, min(p.n_samples, 2000), p.seed)

    W = reference_frame(seq.reference.linear, p.xi_order, p.offdiag_scale)
    W_inv = np.linalg.inv(W)
    mats = np.array([W_inv @ j.linear @ W for j in rec])
    ref_moduli = np.abs(np.diag(W_inv @ seq.reference.linear @ W))
    splits = cluster_splits(ref_moduli, p.gap_spec)

    U = np.array([np.eye(k, dtype=complex) for _ in range(N + 1)])
    flags = []
    block = k
    ref = W_inv @ seq.reference.linear @ W
    for l in splits:
        fl = track_invariant_flag(mats[:, :block, :block], l, p.gap_spec, p.delta,
                                  p.flag_tol, reference=ref[:block, :block])
        flags.append(fl)
        E = np.array([np.eye(k, dtype=complex) for _ in range(N + 1)])
        E[:, :block, :block] = fl.unitaries
        mats = np.array([E[n + 1] @ mats[n] @ E[n].conj().T for n in range(N)])
        U = np.array([E[n] @ U[n] for n in range(N + 1)])
        block = l

    bounds = [0] + sorted(splits) + [k]
    clusters = list(zip(bounds[:-1], bounds[1:]))
    for s, e in clusters:
        blocks = mats[:, s:e, s:e]
        scale = max(np.abs(blocks).max(), 1e-300)
        if e - s == 1 or max(strict_upper(B) for B in blocks) <= 1e-15 * scale:
            continue
        V = np.array([np.eye(k, dtype=complex) for _ in range(N + 1)])
        for n in range(N):
            C = mats[n, s:e, s:e] @ V[n, s:e, s:e].conj().T
            V[n + 1, s:e, s:e] = qr_lower_triangularize(C, phase="near_identity")[0]
        mats = np.array([V[n + 1] @ mats[n] @ V[n].conj().T for n in range(N)])
        U = np.array([V[n] @ U[n] for n in range(N + 1)])

    def build(s):
        Ws = s * W
        Ws_inv = np.linalg.inv(Ws)
        return [_conjugate(rec[n], U[n + 1] @ Ws_inv, Ws @ U[n].conj().T) for n in range(N)]

    lin_norm = max(np.linalg.norm(m_, 2) for m_ in mats)
    if p.dilation is not None:
        dilation = float(p.dilation)
        jets = build(dilation)
    else:
        b_lin = 1.05 * lin_norm
        if b_lin >= 1:
            raise NotUniformlyAttractingError(
                "linear parts are not contracting", stage="normal_form.profile",
                details={"linear_norm": lin_norm})
        for i in range(16):
            dilation = 0.5 ** i
            jets = build(dilation)
            _, b = _profile(jets, p.profile_radii, min(p.n_samples, 1000), p.seed)
            if b < 1 and b <= 1.1 * b_lin:
                break

    upper = max(strict_upper(j.linear) for j in jets)
    if upper > p.triangular_tol:
        raise InvariantFailure(
            "normalized linear parts are not lower triangular",
            stage="normal_form.triangularize", details={"max_upper": upper})
    jets = [_clear_upper(j) for j in jets]
    moduli = np.array([np.abs(np.diag(j.linear)) for j in jets])
    worst = max(is_correctly_ordered(row, 0.999999)[1] if np.all(row < 1) else np.inf
                for row in moduli)
    if not worst <= p.xi_order:
        raise NotCorrectlyOrderedError(
            "normalized sequence is not correctly ordered",
            stage="normal_form.order", details={"worst_ratio": worst, "xi": p.xi_order})
    a, b = _profile(jets, p.profile_radii, p.n_samples, p.seed)
    profile = AttractionProfile(a, b, worst, moduli, tuple(p.profile_radii), p.n_samples)
    profile.check()
    data = NormalizationData(
        horizon=N, translations=xs, frame=dilation * W, dilation=dilation, unitaries=U,
        jets=jets, flags=flags, clusters=clusters, containment_violations=violations,
        max_upper=upper)
    return data, profile


def conjugation_defect(seq, data, n):
    """Max coefficient gap between f~_n and M_n o f_n o M_{n-1}^-1.

    M_n(z) = U_n W^-1 (z - x_n) is the recorded frame map; the comparison
    includes the constant term, so it also checks that f~_n fixes 0.
    """
    f = seq.step(n)
    k, d = f.jet.k, f.jet.d
    inner = JetMap.identity(k, d).coef.copy()
    inner[:, 1:k + 1] = data.frame @ data.unitaries[n - 1].conj().T
    inner[:, 0] = data.translations[n - 1]
    val = substitute(f.jet.coef, inner, k, d)
    val[:, 0] += f.offset - data.translations[n]
    out = data.unitaries[n] @ np.linalg.inv(data.frame) @ val
    target = data.jets[n - 1].padded(d).coef if data.jets[n - 1].d < d else data.jets[n - 1].coef
    return float(np.abs(out - target).max())
