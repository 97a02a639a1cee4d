"""Bounded conjugating sequences X_n, G_n with X_n = [G_n o X_{n-1} o F_n^-1]_d.

Coefficients are fixed by induction on the degree, then on the component
index, then by reverse induction on the power.  For a term with index j and
power alpha the coefficient sequence satisfies

    c_n = lam_{n,j} lam_n^-alpha c_{n-1} + g_n lam_n^-alpha + C_n,

where C_n only involves terms fixed earlier.  Lower triangular terms are
absorbed into G_n (c = 0); every other term is the bounded orbit of a
sequence of expanding affine maps, obtained by backward iteration.
"""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AttractionHypothesisError,
    DomainError,
    InvariantFailure,
    NotExpandingError,
    PTooSmallError,
    ShapeError,
)
from .jets import (
    JetMap,
    MultiIndex,
    TriangularPolyMap,
    basis,
    coeff_norm,
    compose,
    invert_jet,
    jet_from_dict,
    jet_to_dict,
    truncate,
)

XI_EXP = 1.05


@dataclass
class ExpandingAffineSequence:
    """Maps ``c -> a_n c + b_n`` for n = 1..N with |a_n| > 1."""

    a: np.ndarray
    b: np.ndarray
    xi_exp: float = XI_EXP

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=complex).reshape(-1)
        self.b = np.asarray(self.b, dtype=complex).reshape(-1)
        if self.a.shape != self.b.shape:
            raise ShapeError("multipliers and offsets must have equal length")
        if self.xi_exp <= 1:
            raise DomainError("expansion margin xi_exp must exceed 1")
        if self.a.size and np.min(np.abs(self.a)) <= 1:
            n = int(np.argmin(np.abs(self.a)))
            raise NotExpandingError(
                "affine sequence is not expanding",
                details={"step": n + 1, "modulus": float(abs(self.a[n]))})

    @property
    def horizon(self):
        return len(self.a)

    def ill_conditioned(self):
        """Steps whose multiplier modulus lies in (1, xi_exp)."""
        return [int(n) + 1 for n in np.nonzero(np.abs(self.a) < self.xi_exp)[0]]


@dataclass
class AffineOrbit:
    orbit: np.ndarray
    radius: float
    horizon_error: float

    @property
    def c0(self):
        return complex(self.orbit[0])


def bounded_affine_orbit(seq):
    """Bounded orbit c_0..c_N of an expanding affine sequence.

    Backward iteration from y_N = 0 gives y_{n-1} = (y_n - b_n) / a_n; the
    backward values are returned as the orbit.  They satisfy the forward
    relation c_n = a_n c_{n-1} + b_n up to one rounding per step, whereas
    re-running the forward recursion from c_0 would amplify the rounding of
    c_0 by the product of the |a_n|.  The horizon error of c_0 is bounded by
    ``R prod |a_n|^-1`` with ``R = sup|b_n| / (xi - 1) + 1``.
    """
    if not isinstance(seq, ExpandingAffineSequence):
        raise TypeError("expected an ExpandingAffineSequence")
    N = seq.horizon
    y = np.zeros(N + 1, dtype=complex)
    for n in range(N, 0, -1):
        y[n - 1] = (y[n] - seq.b[n - 1]) / seq.a[n - 1]
    xi = min(seq.xi_exp, float(np.min(np.abs(seq.a)))) if N else seq.xi_exp
    R = float(np.max(np.abs(seq.b), initial=0.0)) / (xi - 1) + 1
    err = R * float(np.exp(-np.sum(np.log(np.abs(seq.a)))))
    return AffineOrbit(y, R, err)


@dataclass(frozen=True)
class TermAddress:
    j: int
    alpha: MultiIndex

    @property
    def lower_triangular(self):
        """True when alpha_i = 0 for i >= j (z^alpha only uses z_1..z_{j-1})."""
        return not any(self.alpha[self.j - 1:])

    def __str__(self):
        return f"j={self.j}, alpha={tuple(self.alpha)}"


def select_degrees(profile, gamma, b=None, xi_exp=XI_EXP):
    """Degrees (p, q) and the rate alpha_rate = gamma b^q.

    ``profile`` may be an AttractionProfile or an array of diagonal moduli.
    p is the smallest integer with xi_exp max|lam|^p < min|lam| and q the
    smallest with gamma b^q < 1.
    """
    moduli = np.abs(np.asarray(getattr(profile, "moduli", profile), dtype=complex))
    b = getattr(profile, "b", None) if b is None else b
    if gamma < 1:
        raise DomainError("gamma must be at least 1")
    if b is None or not 0 < b < 1:
        raise DomainError("upper contraction bound b must lie in (0, 1)")
    hi, lo = float(moduli.max()), float(moduli.min())
    if not 0 < lo <= hi < 1:
        raise DomainError("moduli must lie in (0, 1)")
    p = 1
    while xi_exp * hi ** p >= lo:
        p += 1
    q = 1
    while gamma * b ** q >= 1:
        q += 1
    return p, q, gamma * b ** q


def _jets_of(seq):
    jets = getattr(seq, "jets", seq)
    jets = list(jets)
    if not jets:
        raise ShapeError("empty sequence")
    for f in jets:
        lin = f.linear
        if np.any(np.triu(lin, 1) != 0):
            raise DomainError("linear parts must be lower triangular")
    return jets


class ConjugacyState:
    """Working storage: one coefficient array per degree stratum.

    ``X[s]`` has shape (N+1, k, M_s) and holds x_{n,j,alpha} for n = 0..N;
    ``G[s]`` has shape (N, k, M_s) and holds g_{n,j,alpha} for n = 1..N.
    """

    def __init__(self, jets, degree, xi_exp=XI_EXP):
        self.jets = jets
        self.k = jets[0].k
        self.N = len(jets)
        self.xi_exp = xi_exp
        self.degree = degree
        self.lin = np.array([f.linear for f in jets])
        self.lam = np.array([np.diag(L) for L in self.lin])
        self.inv = [None] * self.N
        self.X = {}
        self.G = {}
        self.flags = []
        self.bounds = {}
        self._ensure_inverses(degree)

    def _ensure_inverses(self, d):
        for n, f in enumerate(self.jets):
            if self.inv[n] is None or self.inv[n].d < d:
                src = f.padded(d) if f.d < d else truncate(f, d)
                self.inv[n] = invert_jet(src, d)

    def exps(self, s):
        b = basis(self.k, s)
        return b.exps[b.stratum(s)]

    def add_stratum(self, s):
        M = self.exps(s).shape[0]
        self.X[s] = np.zeros((self.N + 1, self.k, M), dtype=complex)
        self.G[s] = np.zeros((self.N, self.k, M), dtype=complex)

    def x_jet(self, n, d):
        b = basis(self.k, d)
        coef = np.zeros((self.k, b.size), dtype=complex)
        coef[:, 1:self.k + 1] = np.eye(self.k)
        for s in range(2, d + 1):
            if s in self.X:
                coef[:, b.stratum(s)] = self.X[s][n]
        return JetMap(coef, check=False)

    def g_jet(self, n, d):
        """Jet of G_{n+1} (0-based n) truncated at degree d."""
        b = basis(self.k, d)
        coef = np.zeros((self.k, b.size), dtype=complex)
        coef[:, 1:self.k + 1] = self.lin[n]
        for s in range(2, d + 1):
            if s in self.G:
                coef[:, b.stratum(s)] = self.G[s][n]
        return JetMap(coef, check=False)

    def prepare(self, s):
        """Frozen parts of the degree-s equation for every step.

        Returns ``(Pw, R)``: Pw[n] is the degree-s block of the power table of
        the linear part of F_n^-1 (lower triangular in the monomial order,
        diagonal lam_n^-alpha) and R[n] the degree-s part of
        G_n o X_{n-1} o F_n^-1 computed with all degree-s strata zeroed.
        """
        self._ensure_inverses(s)
        b = basis(self.k, s)
        sl = b.stratum(s)
        M = sl.stop - sl.start
        Pw = np.empty((self.N, M, M), dtype=complex)
        R = np.empty((self.N, self.k, M), dtype=complex)
        for n in range(self.N):
            finv = truncate(self.inv[n], s)
            lin_inv = JetMap.from_linear(finv.linear, s)
            Pw[n] = b.powers(lin_inv.coef)[sl, sl]
            inner = compose(self.x_jet(n, s - 1).padded(s), finv, s)
            outer = self.g_jet(n, s - 1).padded(s)
            R[n] = compose(outer, inner, s).coef[:, sl]
        return Pw, R


def solve_term(state, addr, Pw, R, extension=False):
    """Fix the coefficient sequences of one term; returns ``(c, g)``.

    ``c`` has length N+1 (n = 0..N) and ``g`` length N (n = 1..N).  Both are
    written into ``state``.  All earlier terms must already be fixed and the
    current one must still be zero.
    """
    j = addr.j - 1
    alpha = np.asarray(addr.alpha)
    s = int(alpha.sum())
    exps = state.exps(s)
    col = int(np.nonzero((exps == alpha).all(axis=1))[0][0])
    X, G = state.X[s], state.G[s]
    # C_n = sum_i L_n[j,i] X_{n-1}[i,:] Pw_n[:,col] + G_n[j,:] Pw_n[:,col] + R_n[j,col]
    lx = np.einsum("ni,nim->nm", state.lin[:, j, :], X[:-1])
    C = np.einsum("nm,nm->n", lx + G[:, j, :], Pw[:, :, col]) + R[:, j, col]
    lam_alpha = np.prod(state.lam ** alpha, axis=1)
    diag = Pw[:, col, col]
    mult = state.lam[:, j] * diag
    if addr.lower_triangular and not extension:
        g = -C * lam_alpha
        G[:, j, col] = g
        X[:, j, col] = 0
        return X[:, j, col].copy(), g
    mods = np.abs(mult)
    if mods.min() <= 1:
        n = int(np.argmin(mods))
        err = PTooSmallError if extension else AttractionHypothesisError
        raise err(
            f"multiplier |lam_j lam^-alpha| = {mods[n]:.4g} <= 1 at {addr}, step {n + 1}",
            stage="conjugacy.solve_term",
            details={"j": addr.j, "alpha": [int(a) for a in alpha], "step": n + 1,
                     "modulus": float(mods[n]),
                     "inequality": "|lam_{n,j}| > |lam_n^alpha|"})
    orbit = bounded_affine_orbit(ExpandingAffineSequence(mult, C, state.xi_exp))
    if mods.min() < state.xi_exp:
        state.flags.append({"j": addr.j, "alpha": [int(a) for a in alpha],
                            "min_multiplier": float(mods.min())})
    state.bounds[(addr.j, tuple(int(a) for a in alpha))] = orbit.horizon_error
    X[:, j, col] = orbit.orbit
    return orbit.orbit.copy(), np.zeros(state.N, dtype=complex)


def _solve_degree(state, s, extension=False):
    state.add_stratum(s)
    Pw, R = state.prepare(s)
    exps = state.exps(s)
    for j in range(1, state.k + 1):
        # stratum columns run in ascending monomial order; powers go descending
        for col in range(exps.shape[0] - 1, -1, -1):
            solve_term(state, TermAddress(j, MultiIndex(exps[col])), Pw, R, extension)


@dataclass
class ConjugacyData:
    horizon: int
    X: list
    G: list
    p: int
    q: int = None
    flags: list = field(default_factory=list)
    horizon_errors: dict = field(default_factory=dict)
    residuals: np.ndarray = None

    @property
    def k(self):
        return self.X[0].k

    @property
    def degree(self):
        return self.X[0].d

    def x_norms(self):
        return np.array([coeff_norm(x) for x in self.X])

    def boundedness(self):
        """``(sup_n coeff_norm(X_n), slope over the final quarter)``."""
        norms = self.x_norms()
        tail = norms[-max(2, len(norms) // 4):]
        slope = float(np.polyfit(np.arange(len(tail)), tail, 1)[0])
        return float(norms.max()), slope

    def to_dict(self):
        return {
            "N": self.horizon,
            "k": self.k,
            "p": self.p,
            "q": self.q,
            "degree": self.degree,
            "X": [jet_to_dict(x) for x in self.X],
            "G": [jet_to_dict(g.to_jet(max(self.p, 1))) for g in self.G],
            "flags": self.flags,
            "residuals": None if self.residuals is None else [float(r) for r in self.residuals],
        }

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        X = [jet_from_dict(x) for x in data["X"]]
        G = [TriangularPolyMap.from_jet(jet_from_dict(g)) for g in data["G"]]
        res = data.get("residuals")
        return cls(int(data["N"]), X, G, int(data["p"]), data.get("q"),
                   flags=list(data.get("flags", [])),
                   residuals=None if res is None else np.array(res))

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))

    def boundedness_csv(self):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["n", "coeff_norm_X", "residual"])
        norms = self.x_norms()
        for n in range(self.horizon + 1):
            res = "" if n == 0 or self.residuals is None else repr(float(self.residuals[n - 1]))
            w.writerow([n, repr(float(norms[n])), res])
        return out.getvalue()


def _finish(state, p, q=None):
    d = state.degree
    X = [state.x_jet(n, d) for n in range(state.N + 1)]
    G = [TriangularPolyMap.from_jet(state.g_jet(n, max(p, 1)))
         for n in range(state.N)]
    data = ConjugacyData(state.N, X, G, p, q, flags=list(state.flags),
                         horizon_errors=dict(state.bounds))
    data.residuals = conjugacy_residuals(data, state.jets, inverses=state.inv)
    return data


def conjugacy_residuals(data, seq, inverses=None):
    """coeff_norm([G_n o X_{n-1} o F_n^-1]_d - X_n) for n = 1..N."""
    jets = _jets_of(seq)
    d = data.degree
    out = np.empty(data.horizon)
    for n in range(1, data.horizon + 1):
        if inverses is not None and inverses[n - 1].d >= d:
            finv = truncate(inverses[n - 1], d)
        else:
            f = jets[n - 1]
            finv = invert_jet(f.padded(d) if f.d < d else truncate(f, d), d)
        inner = compose(data.X[n - 1], finv, d)
        lhs = compose(data.G[n - 1].to_jet(d), inner, d)
        out[n - 1] = coeff_norm(lhs - data.X[n])
    return out


def build_conjugacy(seq, p, xi_exp=XI_EXP, _state=False):
    """Solve for X_n (n = 0..N) and G_n (n = 1..N) up to degree p."""
    jets = _jets_of(seq)
    if p < 1:
        raise DomainError("degree p must be at least 1")
    state = ConjugacyState(jets, p, xi_exp)
    for s in range(2, p + 1):
        _solve_degree(state, s)
    data = _finish(state, p)
    return (data, state) if _state else data


def extend_to_degree(data, seq, q_plus_1, xi_exp=XI_EXP, state=None):
    """Add degree p+1..q+1 terms to every X_n, keeping G_n fixed."""
    jets = _jets_of(seq)
    p = data.p
    if q_plus_1 <= p:
        raise DomainError("extension degree must exceed p")
    if state is None:
        state = ConjugacyState(jets, p, xi_exp)
        for s in range(2, p + 1):
            state.add_stratum(s)
            b = basis(state.k, s)
            sl = b.stratum(s)
            state.X[s][:] = np.array([x.coef[:, sl] for x in data.X])
            state.G[s][:] = np.array([g.to_jet(s).coef[:, sl] for g in data.G])
        state.flags = list(data.flags)
    state.degree = q_plus_1
    for s in range(p + 1, q_plus_1 + 1):
        _solve_degree(state, s, extension=True)
    return _finish(state, p, q_plus_1 - 1)


def degree2_c2_oracle(seq, xi_exp=XI_EXP):
    """Explicit k = 2, degree 2 recurrences.

    X_n(x, y) = (x + al y^2 + be xy + ga x^2, y + de y^2 + ep xy + ze x^2) and
    G_n(x, y) = (lam x, mu y + a x + d x^2).  Returns a dict of arrays
    ``alpha .. zeta`` (n = 0..N) and ``d`` (n = 1..N).
    """
    jets = _jets_of(seq)
    if jets[0].k != 2:
        raise ShapeError("the explicit recurrences are for k = 2 only")
    N = len(jets)
    lam = np.array([f.coefficient(1, (1, 0)) for f in jets])
    mu = np.array([f.coefficient(2, (0, 1)) for f in jets])
    a = np.array([f.coefficient(2, (1, 0)) for f in jets])
    bb = -a / (lam * mu)
    # quadratic part of F_n^-1 = -L^-1 H(L^-1 w)
    H = np.array([[[f.coefficient(i, m) for m in ((2, 0), (1, 1), (0, 2))]
                   for i in (1, 2)] for f in jets])
    u11 = np.stack([1 / lam ** 2, 0 * lam, 0 * lam], axis=1)
    u12 = np.stack([bb / lam, 1 / (lam * mu), 0 * lam], axis=1)
    u22 = np.stack([bb ** 2, 2 * bb / mu, 1 / mu ** 2], axis=1)
    hw = (H[:, :, 0:1] * u11[:, None, :] + H[:, :, 1:2] * u12[:, None, :]
          + H[:, :, 2:3] * u22[:, None, :])
    P = -hw[:, 0, :] / lam[:, None]
    Q = -(bb[:, None] * hw[:, 0, :] + hw[:, 1, :] / mu[:, None])
    p20, p11, p02 = P.T
    q20, q11, q02 = Q.T

    def orbit(mult, offset):
        return bounded_affine_orbit(ExpandingAffineSequence(mult, offset, xi_exp)).orbit

    def prev(x):
        return x[:-1]

    al = orbit(lam / mu ** 2, lam * p02)
    be = orbit(1 / mu, lam * (p11 + 2 * prev(al) * bb / mu))
    ga = orbit(1 / lam, lam * (p20 + prev(al) * bb ** 2 + prev(be) * bb / lam))
    de = orbit(1 / mu, mu * q02 + a * p02 + a * prev(al) / mu ** 2)
    ep = orbit(1 / lam, mu * q11 + 2 * prev(de) * bb + a * p11
               + 2 * a * prev(al) * bb / mu + a * prev(be) / (lam * mu))
    rest = (mu * q20 + mu * prev(de) * bb ** 2 + mu * prev(ep) * bb / lam
            + a * (p20 + prev(al) * bb ** 2 + prev(be) * bb / lam + prev(ga) / lam ** 2))
    d = -lam ** 2 * rest
    ze = np.zeros(N + 1, dtype=complex)
    return {"alpha": al, "beta": be, "gamma": ga, "delta": de, "epsilon": ep,
            "zeta": ze, "d": d}


def oracle_slots(data):
    """The six degree-2 slots of a generic k = 2 solution, in oracle layout."""
    if data.k != 2:
        raise ShapeError("slot layout is defined for k = 2")
    slots = {"alpha": (1, (0, 2)), "beta": (1, (1, 1)), "gamma": (1, (2, 0)),
             "delta": (2, (0, 2)), "epsilon": (2, (1, 1)), "zeta": (2, (2, 0))}
    out = {name: np.array([x.coefficient(j, a) for x in data.X])
           for name, (j, a) in slots.items()}
    out["d"] = np.array([g.to_jet(2).coefficient(2, (2, 0)) for g in data.G])
    return out


def check_structure(data, seq, tol=1e-12):
    """Linear part of X_n is I, G_n'(0) = F_n'(0); raises on violation."""
    jets = _jets_of(seq)
    k = data.k
    lin_x = max(float(np.abs(x.linear - np.eye(k)).max()) for x in data.X)
    lin_g = max(float(np.abs(g.linear - f.linear).max()) for g, f in zip(data.G, jets))
    if lin_x > tol or lin_g > tol:
        raise InvariantFailure("linear parts of X_n or G_n are off",
                               stage="conjugacy.structure",
                               details={"x_linear": lin_x, "g_linear": lin_g})
    return lin_x, lin_g
