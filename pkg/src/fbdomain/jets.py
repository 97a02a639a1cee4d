"""Truncated multivariate power series on C^k.

A :class:`JetMap` is a polynomial self-map of C^k without constant term,
stored densely: one row per component, one column per monomial of degree
0..d (the degree-0 column is always zero).  Columns are ordered by degree and,
inside a degree, ascending in the monomial order of :func:`order_compare`,
so ``z_1^s`` comes first and ``z_k^s`` last.  Because the ordering inside a
degree does not depend on ``d``, the monomials of degree <= d form a prefix of
those of degree <= d' for any d' > d and truncation is a column slice.

:class:`TriangularPolyMap` stores lower triangular automorphisms
``g_j(z) = c_j z_j + h_j(z_1, ..., z_{j-1})`` sparsely, since exact inverses
of such maps have degrees that grow like ``deg^(k-1)``.
"""

import functools
import json

import numpy as np
import scipy.sparse as sp

from .errors import (
    DomainError,
    InvalidComparisonError,
    InvalidDegreeError,
    NonInvertibleError,
    ShapeError,
)

__all__ = [
    "MultiIndex",
    "JetMap",
    "TriangularPolyMap",
    "order_compare",
    "monomials",
    "truncate",
    "compose",
    "invert_jet",
    "invert_triangular",
    "compose_triangular",
    "evaluate",
    "coeff_norm",
    "jet_to_dict",
    "jet_from_dict",
]

# Linear parts with a larger condition number are treated as singular.
MAX_CONDITION = 1e13


class MultiIndex(tuple):
    """Exponent tuple ``(a_1, ..., a_k)`` addressing the monomial ``z^a``."""

    def __new__(cls, exponents):
        t = tuple(int(e) for e in exponents)
        if not t:
            raise ShapeError("a multi-index needs k >= 1 entries")
        if any(e < 0 for e in t):
            raise DomainError(f"negative exponent in {t}")
        return super().__new__(cls, t)

    @property
    def degree(self):
        return sum(self)

    @property
    def k(self):
        return len(self)

    def is_lower_triangular_for(self, j):
        """True when z^a involves only z_1..z_{j-1} (j is 1-based)."""
        return all(e == 0 for e in self[j - 1:])


def order_compare(alpha, beta):
    """Compare two multi-indices of equal degree.

    Returns 1 if ``alpha > beta``, 0 if equal and -1 if ``alpha < beta``,
    where ``alpha > beta`` iff at the first position where they differ
    ``alpha`` has the smaller exponent.  ``z_k^d`` is therefore maximal and
    ``z_1^d`` minimal in each degree.
    """
    if len(alpha) != len(beta):
        raise ShapeError("multi-indices of different length")
    if sum(alpha) != sum(beta):
        raise InvalidComparisonError(
            f"cannot compare {tuple(alpha)} and {tuple(beta)}: degrees differ")
    for a, b in zip(alpha, beta):
        if a != b:
            return 1 if a < b else -1
    return 0


def _compositions(s, k):
    if k == 1:
        return [(s,)]
    out = []
    for first in range(s, -1, -1):
        for rest in _compositions(s - first, k - 1):
            out.append((first,) + rest)
    return out


@functools.lru_cache(maxsize=None)
def monomials(k, d):
    """All exponent tuples of degree 0..d in storage order."""
    out = []
    for s in range(d + 1):
        # lexicographically descending == ascending in the monomial order
        out.extend(sorted(_compositions(s, k), reverse=True))
    return tuple(out)


class _Basis:
    """Index tables for the dense monomial basis of degree <= d in k variables."""

    def __init__(self, k, d):
        self.k = k
        self.d = d
        exps = monomials(k, d)
        self.exps = np.array(exps, dtype=np.int64).reshape(len(exps), k)
        self.size = len(exps)
        self.index = {e: i for i, e in enumerate(exps)}
        deg = self.exps.sum(axis=1)
        self.degrees = deg
        self.offsets = [int(np.searchsorted(deg, s)) for s in range(d + 2)]
        parent = np.zeros(self.size, dtype=np.int64)
        var = np.zeros(self.size, dtype=np.int64)
        for i, e in enumerate(exps[1:], start=1):
            v = next(t for t, x in enumerate(e) if x)
            p = list(e)
            p[v] -= 1
            parent[i] = self.index[tuple(p)]
            var[i] = v
        self.parent = parent
        self.var = var
        self._mult = None

    def stratum(self, s):
        return slice(self.offsets[s], self.offsets[s + 1])

    @property
    def mult(self):
        if self._mult is None:
            base = self.d + 1
            weights = base ** np.arange(self.k, dtype=np.int64)
            code = self.exps @ weights
            lookup = {int(c): i for i, c in enumerate(code)}
            ia, ib, it = [], [], []
            deg = self.degrees
            for a in range(self.size):
                room = self.d - deg[a]
                bs = np.nonzero(deg <= room)[0]
                tc = code[a] + code[bs]
                ia.extend([a] * len(bs))
                ib.extend(bs.tolist())
                it.extend(lookup[int(c)] for c in tc)
            ia = np.array(ia, dtype=np.int64)
            ib = np.array(ib, dtype=np.int64)
            it = np.array(it, dtype=np.int64)
            scatter = sp.csr_matrix(
                (np.ones(len(it)), (np.arange(len(it)), it)),
                shape=(len(it), self.size))
            # stored transposed, so each product is one CSR times dense
            self._mult = (ia, ib, scatter.T.tocsr())
        return self._mult

    def mul(self, p, q):
        """Row-wise truncated product of coefficient arrays of shape (n, M)."""
        ia, ib, gather = self.mult
        contrib = p[:, ia] * q[:, ib]
        return np.asarray(gather @ contrib.T).T

    def powers(self, inner):
        """Table whose row ``a`` holds the coefficients of ``inner^a``.

        ``inner`` has shape (k, M) and may carry a constant column; products
        are truncated at degree d.
        """
        table = np.zeros((self.size, self.size), dtype=complex)
        table[0, 0] = 1.0
        for s in range(1, self.d + 1):
            rows = np.arange(self.offsets[s], self.offsets[s + 1])
            table[rows] = self.mul(table[self.parent[rows]], inner[self.var[rows]])
        return table

    def monomial_values(self, z):
        """Values of every basis monomial at the points ``z`` (shape (P, k))."""
        vals = np.empty((z.shape[0], self.size), dtype=complex)
        vals[:, 0] = 1.0
        for s in range(1, self.d + 1):
            rows = np.arange(self.offsets[s], self.offsets[s + 1])
            vals[:, rows] = vals[:, self.parent[rows]] * z[:, self.var[rows]]
        return vals


@functools.lru_cache(maxsize=64)
def basis(k, d):
    return _Basis(k, d)


def _as_points(z, k):
    arr = np.asarray(z, dtype=complex)
    single = arr.ndim == 1
    pts = arr.reshape(1, -1) if single else arr
    if pts.ndim != 2 or pts.shape[1] != k:
        raise ShapeError(f"expected points in C^{k}, got shape {arr.shape}")
    return pts, single


class JetMap:
    """Degree-d truncated polynomial self-map of C^k fixing the origin."""

    __slots__ = ("k", "d", "coef")

    def __init__(self, coef, *, check=True):
        coef = np.array(coef, dtype=complex)
        if coef.ndim != 2:
            raise ShapeError("coefficient table must be 2-d (k, M)")
        k, size = coef.shape
        if k < 1:
            raise ShapeError("dimension k must be >= 1")
        d = _degree_for_size(k, size)
        if d < 1:
            raise InvalidDegreeError(f"truncation degree must be >= 1, got {d}")
        if check and np.any(coef[:, 0] != 0):
            raise DomainError("jets must fix the origin (no constant term)")
        coef.setflags(write=False)
        self.k = k
        self.d = d
        self.coef = coef

    # constructors

    @classmethod
    def zero(cls, k, d):
        return cls(np.zeros((k, basis(k, d).size), dtype=complex))

    @classmethod
    def identity(cls, k, d):
        return cls.from_linear(np.eye(k), d)

    @classmethod
    def from_linear(cls, matrix, d=1):
        matrix = np.asarray(matrix, dtype=complex)
        k = matrix.shape[0]
        if matrix.shape != (k, k):
            raise ShapeError("linear part must be square")
        coef = np.zeros((k, basis(k, d).size), dtype=complex)
        coef[:, 1:k + 1] = matrix
        return cls(coef)

    @classmethod
    def from_terms(cls, k, d, terms):
        """Build from ``{(j, alpha): value}`` with 1-based component index j."""
        b = basis(k, d)
        coef = np.zeros((k, b.size), dtype=complex)
        for (j, alpha), value in terms.items():
            alpha = tuple(alpha)
            if len(alpha) != k:
                raise ShapeError(f"multi-index {alpha} is not in C^{k}")
            if sum(alpha) > d:
                continue
            coef[j - 1, b.index[alpha]] += value
        return cls(coef)

    # accessors

    @property
    def basis(self):
        return basis(self.k, self.d)

    @property
    def linear(self):
        return np.array(self.coef[:, 1:self.k + 1])

    def stratum(self, s):
        return np.array(self.coef[:, self.basis.stratum(s)])

    def coefficient(self, j, alpha):
        alpha = tuple(alpha)
        if sum(alpha) > self.d:
            return 0j
        return complex(self.coef[j - 1, self.basis.index[alpha]])

    def terms(self):
        """Iterate ``(j, alpha, value)`` over every stored coefficient."""
        exps = monomials(self.k, self.d)
        for j in range(self.k):
            for i in range(1, len(exps)):
                yield j + 1, exps[i], complex(self.coef[j, i])

    def padded(self, d):
        """Same polynomial viewed as a jet of degree d >= self.d."""
        if d < self.d:
            raise InvalidDegreeError("padding cannot lower the degree")
        out = np.zeros((self.k, basis(self.k, d).size), dtype=complex)
        out[:, :self.coef.shape[1]] = self.coef
        return JetMap(out, check=False)

    def with_stratum(self, s, values):
        coef = np.array(self.coef)
        coef[:, self.basis.stratum(s)] = values
        return JetMap(coef, check=False)

    def linear_condition(self):
        return float(np.linalg.cond(self.linear))

    # arithmetic

    def _binary(self, other, op):
        if not isinstance(other, JetMap):
            return NotImplemented
        if other.k != self.k:
            raise ShapeError("dimension mismatch")
        d = max(self.d, other.d)
        a = self.padded(d).coef if self.d < d else self.coef
        b = other.padded(d).coef if other.d < d else other.coef
        return JetMap(op(a, b), check=False)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, scalar):
        return JetMap(self.coef * scalar, check=False)

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, JetMap):
            return NotImplemented
        return (self.k, self.d) == (other.k, other.d) and np.array_equal(
            self.coef, other.coef)

    __hash__ = None

    def __call__(self, z):
        return evaluate(self, z)

    def __repr__(self):
        return f"JetMap(k={self.k}, d={self.d}, norm={coeff_norm(self):.3g})"


def _degree_for_size(k, size):
    d, total = 0, 1
    count = 1
    while total < size:
        d += 1
        count = count * (d + k - 1) // d
        total += count
    if total != size:
        raise ShapeError(f"{size} columns is not a full monomial basis in {k} variables")
    return d


def truncate(m, d):
    """Drop every term of degree > d; lower terms are copied bit-exactly."""
    if d < 1:
        raise InvalidDegreeError(f"truncation degree must be >= 1, got {d}")
    if d >= m.d:
        return m.padded(d) if d > m.d else m
    return JetMap(m.coef[:, :basis(m.k, d).size], check=False)


def compose(outer, inner, d):
    """``[outer o inner]_d`` for origin-fixing jets.

    Strata missing from either argument are treated as zero.
    """
    if outer.k != inner.k:
        raise ShapeError(f"cannot compose maps of C^{outer.k} and C^{inner.k}")
    if d < 1:
        raise InvalidDegreeError(f"truncation degree must be >= 1, got {d}")
    b = basis(outer.k, d)
    table = b.powers(truncate(inner, d).coef)
    return JetMap(truncate(outer, d).coef @ table, check=False)


def substitute(outer_coef, inner_coef, k, d):
    """Exact composition of coefficient tables in the degree-d basis.

    ``inner_coef`` may have a constant column; ``outer_coef`` (any number of
    rows, may also have a constant column) must have degree <= d for the
    result to be exact.
    """
    b = basis(k, d)
    return outer_coef @ b.powers(inner_coef)


def invert_jet(m, d):
    """Formal inverse of ``m`` truncated at degree d, solved stratum by stratum."""
    if d < 1:
        raise InvalidDegreeError(f"truncation degree must be >= 1, got {d}")
    lin = m.linear
    cond = np.linalg.cond(lin)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise NonInvertibleError(
            "linear part is singular", details={"condition": float(cond)})
    lin_inv = np.linalg.inv(lin)
    result = JetMap.from_linear(lin_inv, d)
    for s in range(2, d + 1):
        defect = compose(m, result, s).stratum(s)
        result = result.with_stratum(s, -lin_inv @ defect)
    return result


def coeff_norm(m):
    """Largest coefficient modulus (0 for an empty table)."""
    if isinstance(m, TriangularPolyMap):
        vals = [np.abs(m.c)] + [np.abs(h.coef) for h in m.h]
        flat = np.concatenate([v.ravel() for v in vals])
        return float(flat.max()) if flat.size else 0.0
    if m.coef.size == 0:
        return 0.0
    return float(np.abs(m.coef).max())


def evaluate(m, z):
    """Evaluate a jet or triangular map at one point or an array of points."""
    if isinstance(m, TriangularPolyMap):
        return m.evaluate(z)
    pts, single = _as_points(z, m.k)
    out = m.basis.monomial_values(pts) @ m.coef.T
    return out[0] if single else out


def jet_to_dict(m):
    exps = monomials(m.k, m.d)[1:]
    return {
        "k": m.k,
        "d": m.d,
        "components": [
            [[list(a), float(v.real), float(v.imag)] for a, v in zip(exps, m.coef[j, 1:])]
            for j in range(m.k)
        ],
    }


def jet_from_dict(data):
    k, d = int(data["k"]), int(data["d"])
    comps = data["components"]
    if len(comps) != k:
        raise ShapeError("component count does not match k")
    b = basis(k, d)
    coef = np.zeros((k, b.size), dtype=complex)
    for j, entries in enumerate(comps):
        for alpha, re, im in entries:
            alpha = tuple(alpha)
            if alpha not in b.index or sum(alpha) < 1:
                raise ShapeError(f"monomial {alpha} is not valid for k={k}, d={d}")
            coef[j, b.index[alpha]] = complex(re, im)
    return JetMap(coef)


def jet_dumps(m):
    return json.dumps(jet_to_dict(m))


def jet_loads(text):
    return jet_from_dict(json.loads(text))


# --- sparse polynomials -----------------------------------------------------


class _SPoly:
    """Sparse scalar polynomial: exponent rows and matching coefficients."""

    __slots__ = ("k", "exps", "coef")

    def __init__(self, k, exps, coef):
        self.k = k
        self.exps = np.asarray(exps, dtype=np.int64).reshape(-1, k)
        self.coef = np.asarray(coef, dtype=complex).reshape(-1)

    @classmethod
    def zero(cls, k):
        return cls(k, np.zeros((0, k), dtype=np.int64), np.zeros(0))

    @classmethod
    def variable(cls, k, i, scale=1.0):
        e = np.zeros((1, k), dtype=np.int64)
        e[0, i] = 1
        return cls(k, e, [scale])

    @classmethod
    def constant(cls, k, value):
        return cls(k, np.zeros((1, k), dtype=np.int64), [value])

    @property
    def degree(self):
        return int(self.exps.sum(axis=1).max()) if len(self.coef) else 0

    def _collect(self, exps, coef):
        if len(coef) == 0:
            return _SPoly.zero(self.k)
        deg = exps.sum(axis=1)
        # sort: degree ascending, then lexicographically descending exponents
        keys = [-exps[:, i] for i in range(self.k - 1, -1, -1)] + [deg]
        order = np.lexsort(keys)
        exps, coef = exps[order], coef[order]
        new = np.ones(len(coef), dtype=bool)
        new[1:] = np.any(exps[1:] != exps[:-1], axis=1)
        group = np.cumsum(new) - 1
        summed = np.zeros(group[-1] + 1, dtype=complex)
        np.add.at(summed, group, coef)
        return _SPoly(self.k, exps[new], summed)

    def __add__(self, other):
        return self._collect(np.vstack([self.exps, other.exps]),
                             np.concatenate([self.coef, other.coef]))

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, s):
        return _SPoly(self.k, self.exps, self.coef * s)

    def __mul__(self, other):
        if len(self.coef) == 0 or len(other.coef) == 0:
            return _SPoly.zero(self.k)
        exps = (self.exps[:, None, :] + other.exps[None, :, :]).reshape(-1, self.k)
        coef = (self.coef[:, None] * other.coef[None, :]).reshape(-1)
        return self._collect(exps, coef)

    def evaluate(self, pts):
        out = np.zeros(pts.shape[0], dtype=complex)
        for start in range(0, len(self.coef), 256):
            e = self.exps[start:start + 256]
            mono = np.prod(pts[:, None, :] ** e[None, :, :], axis=2)
            out += mono @ self.coef[start:start + 256]
        return out

    def derivative(self, i):
        mask = self.exps[:, i] > 0
        exps = self.exps[mask].copy()
        coef = self.coef[mask] * exps[:, i]
        exps[:, i] -= 1
        return _SPoly(self.k, exps, coef)

    def uses_only_first(self, j):
        """True when only variables z_1..z_j (1-based count j) occur."""
        return not np.any(self.exps[:, j:] != 0)

    def substitute(self, values, cache):
        """Compose with the polynomials ``values[i]`` replacing z_{i+1}."""
        result = _SPoly.zero(values[0].k if values else self.k)
        k_out = result.k
        for e, c in zip(self.exps, self.coef):
            term = _SPoly.constant(k_out, c)
            for i, power in enumerate(e):
                if power:
                    term = term * _power(values, i, int(power), cache)
            result = result + term
        return result

    def to_dense(self, k, d):
        b = basis(k, d)
        row = np.zeros(b.size, dtype=complex)
        for e, c in zip(self.exps, self.coef):
            if e.sum() <= d:
                row[b.index[tuple(int(x) for x in e)]] += c
        return row


def _power(values, i, power, cache):
    key = (i, power)
    if key not in cache:
        if power == 1:
            cache[key] = values[i]
        else:
            half = _power(values, i, power // 2, cache)
            sq = half * half
            cache[key] = sq * values[i] if power % 2 else sq
    return cache[key]


class TriangularPolyMap:
    """Lower triangular automorphism ``g_j = c_j z_j + h_j(z_1..z_{j-1})``.

    ``c`` holds the diagonal coefficients; ``h[j]`` is a sparse polynomial in
    the first j variables (0-based component index).
    """

    def __init__(self, c, h):
        c = np.array(c, dtype=complex).reshape(-1)
        k = len(c)
        if len(h) != k:
            raise ShapeError("need one polynomial h_j per component")
        if np.any(c == 0):
            raise NonInvertibleError("diagonal coefficient c_j = 0")
        for j, hj in enumerate(h):
            if hj.k != k:
                raise ShapeError("h_j lives in the wrong number of variables")
            if not hj.uses_only_first(j):
                raise DomainError(f"h_{j + 1} depends on z_{j + 1} or later variables")
            if len(hj.coef) and np.any(hj.exps.sum(axis=1) == 0) and np.any(
                    hj.coef[hj.exps.sum(axis=1) == 0] != 0):
                raise DomainError("triangular maps must fix the origin")
        self.k = k
        self.c = c
        self.h = list(h)

    @classmethod
    def identity(cls, k):
        return cls(np.ones(k), [_SPoly.zero(k) for _ in range(k)])

    @classmethod
    def from_terms(cls, c, terms):
        """``terms`` maps ``(j, alpha)`` (1-based j) to the coefficient of h_j."""
        k = len(c)
        rows = [[] for _ in range(k)]
        for (j, alpha), value in terms.items():
            rows[j - 1].append((tuple(alpha), value))
        h = []
        for j in range(k):
            if rows[j]:
                exps = np.array([a for a, _ in rows[j]], dtype=np.int64).reshape(-1, k)
                coef = np.array([v for _, v in rows[j]], dtype=complex)
                h.append(_SPoly.zero(k)._collect(exps, coef))
            else:
                h.append(_SPoly.zero(k))
        return cls(c, h)

    @classmethod
    def from_jet(cls, m, tol=0.0):
        """Read a jet whose structure is lower triangular."""
        lin = m.linear
        k = m.k
        exps = monomials(k, m.d)
        terms = {}
        for j in range(k):
            for i in range(1, len(exps)):
                v = m.coef[j, i]
                if v == 0:
                    continue
                a = exps[i]
                if sum(a) == 1 and a[j] == 1:
                    continue
                if any(a[j:]):
                    if abs(v) > tol:
                        raise DomainError(
                            f"component {j + 1} has a non-triangular term {a}")
                    continue
                terms[(j + 1, a)] = v
        return cls.from_terms(np.diag(lin), terms)

    @property
    def degree(self):
        return max([1] + [hj.degree for hj in self.h])

    @property
    def linear(self):
        lin = np.diag(self.c).astype(complex)
        for j, hj in enumerate(self.h):
            deg1 = hj.exps.sum(axis=1) == 1
            for e, v in zip(hj.exps[deg1], hj.coef[deg1]):
                lin[j, int(np.argmax(e))] += v
        return lin

    def to_jet(self, d):
        b = basis(self.k, d)
        coef = np.zeros((self.k, b.size), dtype=complex)
        for j, hj in enumerate(self.h):
            coef[j] = hj.to_dense(self.k, d)
            coef[j, 1 + j] += self.c[j]
        return JetMap(coef, check=False)

    def evaluate(self, z):
        pts, single = _as_points(z, self.k)
        out = np.empty_like(pts)
        for j in range(self.k):
            out[:, j] = self.c[j] * pts[:, j] + self.h[j].evaluate(pts)
        return out[0] if single else out

    __call__ = evaluate

    def inverse_evaluate(self, w):
        """Pointwise inverse by back-substitution."""
        pts, single = _as_points(w, self.k)
        z = np.zeros_like(pts)
        for j in range(self.k):
            z[:, j] = (pts[:, j] - self.h[j].evaluate(z)) / self.c[j]
        return z[0] if single else z

    def jacobian(self, z):
        """Jacobian matrices at the points ``z``; shape (P, k, k)."""
        pts, single = _as_points(z, self.k)
        jac = np.zeros((pts.shape[0], self.k, self.k), dtype=complex)
        for j in range(self.k):
            jac[:, j, j] = self.c[j]
            for i in range(j):
                jac[:, j, i] = self.h[j].derivative(i).evaluate(pts)
        return jac[0] if single else jac

    def __repr__(self):
        return f"TriangularPolyMap(k={self.k}, degree={self.degree})"


def invert_triangular(g):
    """Exact polynomial inverse of a lower triangular map."""
    if np.any(g.c == 0):
        raise NonInvertibleError("diagonal coefficient c_j = 0")
    k = g.k
    inv_c = 1.0 / g.c
    comps = []
    new_h = []
    cache = {}
    for j in range(k):
        hj = g.h[j]
        if len(hj.coef):
            sub = hj.substitute(comps, cache) if j else hj
            hinv = sub.scale(-inv_c[j])
        else:
            hinv = _SPoly.zero(k)
        new_h.append(hinv)
        comps.append(_SPoly.variable(k, j, inv_c[j]) + hinv)
    return TriangularPolyMap(inv_c, new_h)


def compose_triangular(outer, inner):
    """Exact composition ``outer o inner`` of two lower triangular maps.

    Also returns the largest coefficient modulus among the expanded
    ``h_j(inner)`` polynomials, the scale against which round-off in the
    result should be judged.
    """
    if outer.k != inner.k:
        raise ShapeError("dimension mismatch")
    k = outer.k
    comps = [_SPoly.variable(k, j, inner.c[j]) + inner.h[j] for j in range(k)]
    cache = {}
    new_h = []
    scale = 0.0
    for j in range(k):
        sub = outer.h[j].substitute(comps, cache) if len(outer.h[j].coef) else _SPoly.zero(k)
        if len(sub.coef):
            scale = max(scale, float(np.abs(sub.coef).max()))
        inner_h = inner.h[j].scale(outer.c[j])
        if len(inner_h.coef):
            scale = max(scale, float(np.abs(inner_h.coef).max()))
        new_h.append(inner_h + sub)
    return TriangularPolyMap(outer.c * inner.c, new_h), scale


def triangular_identity_defect(g, h):
    """``(defect, scale)`` for the polynomial ``g o h - id``."""
    comp, scale = compose_triangular(g, h)
    parts = [np.abs(comp.c - 1.0)] + [np.abs(p.coef) for p in comp.h]
    flat = np.concatenate([p.ravel() for p in parts])
    return float(flat.max()) if flat.size else 0.0, max(scale, 1.0)


def all_multi_indices(k, s):
    """Multi-indices of degree s in ascending monomial order."""
    return [MultiIndex(a) for a in sorted(_compositions(s, k), reverse=True)]
