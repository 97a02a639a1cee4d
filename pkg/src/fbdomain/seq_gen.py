"""Input families: autonomous maps, epsilon-perturbations and random
uniformly attracting triangular sequences.

Every generated map is built inside the automorphism group, as a composition
of invertible affine maps and triangular shears, so each step has a known
polynomial inverse.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DomainError,
    InfeasibleParametersError,
    PerturbationUnrealizableError,
    ShapeError,
)
from .jets import (
    JetMap,
    TriangularPolyMap,
    compose,
    invert_jet,
    invert_triangular,
    jet_from_dict,
    jet_to_dict,
    monomials,
)
from .normal_form import is_correctly_ordered
from .sampling import ball_points, sphere_points

TAIL_POLICIES = ("freeze", "cycle")
PERTURB_MODELS = ("linear", "shear", "both")


@dataclass(frozen=True)
class PolyStep:
    """One step ``z -> offset + jet(z)``; ``jet`` is the full polynomial."""

    jet: JetMap
    offset: np.ndarray = None
    inverse: JetMap = None  # origin-fixing part inverted, when known exactly

    def __post_init__(self):
        off = np.zeros(self.jet.k, dtype=complex) if self.offset is None else np.asarray(
            self.offset, dtype=complex)
        if off.shape != (self.jet.k,):
            raise ShapeError("offset must be a vector in C^k")
        object.__setattr__(self, "offset", off)

    @property
    def k(self):
        return self.jet.k

    def __call__(self, z):
        return self.jet(z) + self.offset

    def fixes_origin(self):
        return not np.any(self.offset)


@dataclass
class AutomorphismSequence:
    k: int
    reference: JetMap
    steps: list
    tail: str = "freeze"
    epsilon: float = 0.0
    seed: int = 0
    kind: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tail not in TAIL_POLICIES:
            raise ConfigError(f"unknown tail policy {self.tail!r}")
        for s in self.steps:
            if s.k != self.k:
                raise ShapeError("step dimension does not match k")

    @property
    def horizon(self):
        return len(self.steps)

    def step(self, n):
        """The n-th map (1-based), extended past the horizon by the tail policy."""
        if n < 1:
            raise ValueError("steps are numbered from 1")
        N = self.horizon
        if n <= N:
            return self.steps[n - 1]
        if self.tail == "freeze" or N == 0:
            return PolyStep(self.reference)
        return self.steps[(n - 1) % N]

    def to_dict(self):
        steps = []
        for s in self.steps:
            d = jet_to_dict(s.jet)
            d["offset"] = [[float(v.real), float(v.imag)] for v in s.offset]
            steps.append(d)
        return {
            "k": self.k,
            "N": self.horizon,
            "epsilon": float(self.epsilon),
            "seed": int(self.seed),
            "tail": self.tail,
            "kind": self.kind,
            "reference": jet_to_dict(self.reference),
            "steps": steps,
        }

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        steps = []
        for entry in data["steps"]:
            off = entry.get("offset")
            offset = None if off is None else np.array([complex(r, i) for r, i in off])
            steps.append(PolyStep(jet_from_dict(entry), offset))
        if len(steps) != int(data.get("N", len(steps))):
            raise ConfigError("N does not match the number of steps")
        return cls(
            k=int(data["k"]),
            reference=jet_from_dict(data["reference"]),
            steps=steps,
            tail=data.get("tail", "freeze"),
            epsilon=float(data.get("epsilon", 0.0)),
            seed=int(data.get("seed", 0)),
            kind=data.get("kind", "file"),
        )

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


def _as_jet(F):
    if isinstance(F, TriangularPolyMap):
        return F.to_jet(F.degree)
    if isinstance(F, JetMap):
        return F
    raise TypeError("reference map must be a JetMap or TriangularPolyMap")


def _spectral_radius(m):
    return float(np.max(np.abs(np.linalg.eigvals(m.linear))))


def autonomous(F, N):
    """Constant sequence f_n = F for n = 1..N."""
    F = _as_jet(F)
    rho = _spectral_radius(F)
    if rho >= 1:
        raise DomainError(
            "reference map is not attracting at the origin",
            details={"spectral_radius": rho})
    inv = invert_triangular(TriangularPolyMap.from_jet(F)).to_jet(F.d) if _is_triangular(F) else None
    step = PolyStep(F, inverse=inv)
    return AutomorphismSequence(k=F.k, reference=F, steps=[step] * N, kind="autonomous")


def _is_triangular(m):
    try:
        TriangularPolyMap.from_jet(m)
    except DomainError:
        return False
    return True


def _random_shear(rng, k, degree, upper=False):
    """Raw near-identity triangular shear coefficients (unscaled)."""
    terms = {}
    for j in range(2, k + 1):
        for s in range(2, degree + 1):
            for a in monomials(j - 1, s):
                if sum(a) != s:
                    continue
                alpha = tuple(a) + (0,) * (k - j + 1)
                terms[(j, alpha)] = complex(rng.normal(), rng.normal())
    return terms


def _shear_map(terms, k, scale, upper):
    g = TriangularPolyMap.from_terms(np.ones(k), {key: v * scale for key, v in terms.items()})
    return g, upper


def _factor_jets(factor, k, d):
    """(jet, inverse jet) of one elementary factor, both exact up to degree d."""
    kind, obj = factor
    if kind == "linear":
        return JetMap.from_linear(obj, d), JetMap.from_linear(np.linalg.inv(obj), d)
    g, upper = obj
    fwd = g.to_jet(d)
    inv = invert_triangular(g).to_jet(d)
    if upper:
        perm = JetMap.from_linear(np.eye(k)[::-1], d)
        fwd = compose(perm, compose(fwd, perm, d), d)
        inv = compose(perm, compose(inv, perm, d), d)
    return fwd, inv


def _chain_jets(factors, k, d):
    """Compose factors (applied left to right) and their inverses exactly."""
    fwd = JetMap.identity(k, d)
    inv = JetMap.identity(k, d)
    for f in factors:
        fj, ij = _factor_jets(f, k, d)
        fwd = compose(fj, fwd, d)
        inv = compose(inv, ij, d)
    return fwd, inv


def perturb(F, epsilon, seed, N, model="both", n_samples=10_000, tail="freeze",
            shear_degree=2, translate=True):
    """Sequence f_n = E_n o F with E_n a random near-identity automorphism.

    ``E_n`` is an affine jitter (linear map plus translation) and/or a pair of
    quadratic shears (one lower, one upper triangular).  The jitter amplitude
    is rescaled until the sampled sup over the unit ball of ``||f_n - F||``,
    inflated by 5%, is at most ``epsilon``.
    """
    F = _as_jet(F)
    if model not in PERTURB_MODELS:
        raise ConfigError(f"unknown perturbation model {model!r}")
    if epsilon < 0:
        raise DomainError("epsilon must be non-negative")
    base = autonomous(F, N)
    if epsilon == 0:
        base.tail = tail
        return base
    k = F.k
    rng = np.random.default_rng(seed)
    use_linear = model in ("linear", "both")
    use_shear = model in ("shear", "both") and k > 1
    deg = F.d * (shear_degree ** 2 if use_shear else 1)
    F_fwd = F.padded(deg)
    F_inv = invert_jet(F, deg) if _is_triangular(F) else None
    pts = sphere_points(k, n_samples, 1.0, seed=seed)
    F_pts = F(pts)
    steps = []
    for n in range(N):
        raw_lin = rng.normal(size=(k, k)) + 1j * rng.normal(size=(k, k))
        raw_t = rng.normal(size=k) + 1j * rng.normal(size=k)
        raw_lo = _random_shear(rng, k, shear_degree)
        raw_up = _random_shear(rng, k, shear_degree)
        amp = epsilon / 2
        for _attempt in range(10):
            factors = []
            if use_shear:
                factors.append(("shear", _shear_map(raw_lo, k, amp / 4, False)))
                factors.append(("shear", _shear_map(raw_up, k, amp / 4, True)))
            offset = np.zeros(k, dtype=complex)
            if use_linear:
                factors.append(("linear", np.eye(k) + amp / (2 * k) * raw_lin))
                if translate:
                    offset = amp / (4 * np.sqrt(k)) * raw_t
            E_fwd, E_inv = _chain_jets(factors, k, deg)
            jet = compose(E_fwd, F_fwd, deg)
            dist = float(np.linalg.norm(jet(pts) + offset - F_pts, axis=1).max())
            if 1.05 * dist <= epsilon:
                break
            amp *= 0.9 * epsilon / (1.05 * dist)
        else:
            raise PerturbationUnrealizableError(
                "could not scale the perturbation below epsilon",
                details={"epsilon": epsilon, "step": n + 1})
        inverse = compose(F_inv, E_inv, deg) if F_inv is not None else None
        steps.append(PolyStep(jet, offset, inverse))
    return AutomorphismSequence(
        k=k, reference=F, steps=steps, tail=tail, epsilon=float(epsilon), seed=seed,
        kind="perturb", meta={"model": model})


def random_uniformly_attracting(k, a, b, xi_order, d, seed, N, n_samples=2_000,
                                tail="freeze"):
    """Random lower triangular sequence in the uniformly attracting class.

    Diagonal moduli are drawn from the inner 80% of ``[a, b]`` and kept only
    when they are correctly ordered with slack ``xi_order``; sub-diagonal and
    shear terms are shrunk until the sampled ratio ``||f(z)|| / ||z||`` on the
    unit ball lies in ``[a, b]``.
    """
    if not 0 < a < b < 1:
        raise DomainError("need 0 < a < b < 1", details={"a": a, "b": b})
    if not 0 < xi_order < 1:
        raise DomainError("xi_order must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    lo, hi = a + 0.1 * (b - a), b - 0.1 * (b - a)
    pts = np.vstack([ball_points(k, n_samples, 1.0, seed=seed),
                     sphere_points(k, n_samples // 4, 1.0, seed=seed + 1)])
    norms = np.linalg.norm(pts, axis=1)
    steps = []
    lo_seen, hi_seen = np.inf, 0.0
    for n in range(N):
        for _ in range(1000):
            moduli = rng.uniform(lo, hi, size=k)
            if is_correctly_ordered(moduli, xi_order)[0]:
                break
        else:
            raise InfeasibleParametersError(
                "no correctly ordered moduli found", details={"a": a, "b": b, "xi": xi_order})
        diag = moduli * np.exp(2j * np.pi * rng.random(k))
        raw = {}
        for j in range(2, k + 1):
            for s in range(1, d + 1):
                for alpha in monomials(j - 1, s):
                    if sum(alpha) == s:
                        raw[(j, tuple(alpha) + (0,) * (k - j + 1))] = complex(
                            rng.normal(), rng.normal())
        amp = 0.2
        for _attempt in range(40):
            g = TriangularPolyMap.from_terms(diag, {key: amp * v for key, v in raw.items()})
            ratio = np.linalg.norm(g(pts), axis=1) / norms
            if ratio.min() >= a and ratio.max() <= b:
                break
            amp *= 0.5
        else:
            raise InfeasibleParametersError(
                "could not fit the contraction bounds", details={"step": n + 1})
        lo_seen = min(lo_seen, float(ratio.min()))
        hi_seen = max(hi_seen, float(ratio.max()))
        steps.append(PolyStep(g.to_jet(d), inverse=invert_triangular(g).to_jet(d)))
    return AutomorphismSequence(
        k=k, reference=steps[0].jet, steps=steps, tail=tail, seed=seed,
        kind="random_uniformly_attracting",
        meta={"a": a, "b": b, "xi_order": xi_order,
              "a_cert": 0.95 * lo_seen, "b_cert": 1.05 * hi_seen})
