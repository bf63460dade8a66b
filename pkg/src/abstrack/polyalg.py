"""Sparse multivariate polynomials over named variables.

A monomial is a tuple of ``(name, exponent)`` pairs sorted by variable name,
with no zero exponents.  Polynomials are immutable maps from monomials to
float coefficients; every operation drops coefficients below ``DROP_TOL``.
"""
from __future__ import annotations

import itertools
import json
import math
from functools import lru_cache
from typing import Iterable, Iterator, Mapping, Sequence, Union

import numpy as np

DROP_TOL = 1e-14
MAX_DEGREE = 20

Monomial = tuple  # tuple[tuple[str, int], ...]
ONE: Monomial = ()


class PolyError(ValueError):
    pass


class VarSet(tuple):
    """Ordered tuple of distinct variable names."""

    def __new__(cls, names: Iterable[str] = ()):
        names = tuple(names)
        if len(set(names)) != len(names):
            raise PolyError(f"duplicate variable names in {names}")
        for n in names:
            if not isinstance(n, str) or not n:
                raise PolyError(f"invalid variable name {n!r}")
        return super().__new__(cls, names)

    def union(self, other: Iterable[str]) -> "VarSet":
        seen = set(self)
        extra = [n for n in other if n not in seen]
        if not extra:
            return self
        return VarSet(tuple(self) + tuple(extra))

    def __repr__(self) -> str:
        return f"VarSet({list(self)!r})"


def monomial(exps: Mapping[str, int] | None = None, **kw: int) -> Monomial:
    """Build a canonical monomial from a name -> exponent map."""
    d = dict(exps or {})
    d.update(kw)
    for name, k in d.items():
        if int(k) != k or k < 0:
            raise PolyError(f"exponent of {name} must be a non-negative integer, got {k}")
    return tuple(sorted((n, int(k)) for n, k in d.items() if k))


def mono_degree(m: Monomial) -> int:
    return sum(k for _, k in m)


@lru_cache(maxsize=1 << 18)
def mono_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        va, ka = a[i]
        vb, kb = b[j]
        if va == vb:
            out.append((va, ka + kb))
            i += 1
            j += 1
        elif va < vb:
            out.append(a[i])
            i += 1
        else:
            out.append(b[j])
            j += 1
    out.extend(a[i:])
    out.extend(b[j:])
    return tuple(out)


def mono_vars(m: Monomial) -> tuple[str, ...]:
    return tuple(v for v, _ in m)


def mono_str(m: Monomial) -> str:
    if not m:
        return "1"
    return "*".join(v if k == 1 else f"{v}^{k}" for v, k in m)


def grlex_key(m: Monomial, order: Sequence[str]):
    """Sort key for graded-lex order relative to ``order``."""
    d = dict(m)
    return (mono_degree(m), tuple(-d.get(v, 0) for v in order))


Number = Union[int, float, np.floating, np.integer]


class Polynomial:
    __slots__ = ("_terms", "_vars")

    def __init__(self, terms: Mapping[Monomial, float] | None = None,
                 vars: Iterable[str] = ()):
        clean: dict[Monomial, float] = {}
        if terms:
            for m, c in terms.items():
                c = float(c)
                if not math.isfinite(c):
                    raise PolyError(f"non-finite coefficient {c} on {mono_str(m)}")
                if abs(c) < DROP_TOL:
                    continue
                if mono_degree(m) > MAX_DEGREE:
                    raise PolyError(
                        f"total degree {mono_degree(m)} exceeds limit {MAX_DEGREE}")
                clean[m] = c
        vs = VarSet(vars)
        present = sorted({v for m in clean for v, _ in m} - set(vs))
        self._terms = clean
        self._vars = vs.union(present)

    # construction helpers -------------------------------------------------
    @classmethod
    def const(cls, c: float, vars: Iterable[str] = ()) -> "Polynomial":
        return cls({ONE: c}, vars)

    @classmethod
    def var(cls, name: str) -> "Polynomial":
        return cls({((name, 1),): 1.0}, (name,))

    @classmethod
    def zero(cls, vars: Iterable[str] = ()) -> "Polynomial":
        return cls({}, vars)

    @staticmethod
    def vars_of(*names: str) -> tuple["Polynomial", ...]:
        return tuple(Polynomial.var(n) for n in names)

    # basic accessors --------------------------------------------------------
    @property
    def terms(self) -> Mapping[Monomial, float]:
        return self._terms

    @property
    def vars(self) -> VarSet:
        return self._vars

    def variables(self) -> set[str]:
        """Variables that actually occur in some term."""
        return {v for m in self._terms for v, _ in m}

    def degree(self) -> int:
        """Total degree; the zero polynomial has degree -1."""
        return max((mono_degree(m) for m in self._terms), default=-1)

    def degree_in(self, names: Iterable[str]) -> int:
        names = set(names)
        return max((sum(k for v, k in m if v in names) for m in self._terms), default=-1)

    def coeff(self, m: Monomial) -> float:
        return self._terms.get(m, 0.0)

    def constant_term(self) -> float:
        return self._terms.get(ONE, 0.0)

    def is_zero(self, tol: float = 0.0) -> bool:
        return all(abs(c) <= tol for c in self._terms.values())

    def is_constant(self) -> bool:
        return all(not m for m in self._terms)

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self) -> Iterator[tuple[Monomial, float]]:
        return iter(self._terms.items())

    # arithmetic ----------------------------------------------------------------
    @staticmethod
    def _coerce(x) -> "Polynomial":
        if isinstance(x, Polynomial):
            return x
        if isinstance(x, (int, float, np.floating, np.integer)):
            return Polynomial.const(float(x))
        raise TypeError(f"cannot combine Polynomial with {type(x).__name__}")

    def __add__(self, other) -> "Polynomial":
        try:
            other = self._coerce(other)
        except TypeError:
            return NotImplemented
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial(out, self._vars.union(other._vars))

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial({m: -c for m, c in self._terms.items()}, self._vars)

    def __sub__(self, other) -> "Polynomial":
        try:
            other = self._coerce(other)
        except TypeError:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other) -> "Polynomial":
        return (-self) + other

    def __mul__(self, other) -> "Polynomial":
        if isinstance(other, (int, float, np.floating, np.integer)):
            s = float(other)
            return Polynomial({m: s * c for m, c in self._terms.items()}, self._vars)
        if not isinstance(other, Polynomial):
            return NotImplemented
        out: dict[Monomial, float] = {}
        for ma, ca in self._terms.items():
            for mb, cb in other._terms.items():
                m = mono_mul(ma, mb)
                out[m] = out.get(m, 0.0) + ca * cb
        return Polynomial(out, self._vars.union(other._vars))

    __rmul__ = __mul__

    def __truediv__(self, s) -> "Polynomial":
        if isinstance(s, (int, float, np.floating, np.integer)):
            return self * (1.0 / float(s))
        return NotImplemented

    def __pow__(self, k: int) -> "Polynomial":
        if int(k) != k or k < 0:
            raise PolyError("only non-negative integer powers are supported")
        result = Polynomial.const(1.0, self._vars)
        base = self
        k = int(k)
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, float)):
            other = Polynomial.const(other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self) -> int:
        return hash(frozenset(self._terms.items()))

    def allclose(self, other, atol: float = 1e-12, rtol: float = 0.0) -> bool:
        diff = self - other
        scale = max(self.max_abs_coeff(), self._coerce(other).max_abs_coeff())
        return diff.is_zero(atol + rtol * scale)

    # calculus and composition ---------------------------------------------------
    def diff(self, v: str) -> "Polynomial":
        if v not in self._vars:
            raise PolyError(f"unknown variable {v!r}; polynomial vars are {list(self._vars)}")
        out: dict[Monomial, float] = {}
        for m, c in self._terms.items():
            d = dict(m)
            k = d.get(v, 0)
            if not k:
                continue
            d[v] = k - 1
            mm = monomial(d)
            out[mm] = out.get(mm, 0.0) + c * k
        return Polynomial(out, self._vars)

    def subs(self, bindings: Mapping[str, "Polynomial | float"]) -> "Polynomial":
        """Substitute polynomials (or numbers) for variables."""
        bind = {k: self._coerce(v) for k, v in bindings.items()}
        if not bind:
            return self
        keep = [v for v in self._vars if v not in bind]
        new_vars = VarSet(keep)
        for b in bind.values():
            new_vars = new_vars.union(b.vars)
        powers: dict[tuple[str, int], Polynomial] = {}

        def power(v: str, k: int) -> Polynomial:
            key = (v, k)
            if key not in powers:
                powers[key] = bind[v] if k == 1 else power(v, k - 1) * bind[v]
            return powers[key]

        acc: dict[Monomial, float] = {}
        for m, c in self._terms.items():
            rest = tuple((v, k) for v, k in m if v not in bind)
            factor = None
            for v, k in m:
                if v in bind:
                    factor = power(v, k) if factor is None else factor * power(v, k)
            if factor is None:
                acc[rest] = acc.get(rest, 0.0) + c
                continue
            for fm, fc in factor._terms.items():
                mm = mono_mul(rest, fm)
                acc[mm] = acc.get(mm, 0.0) + c * fc
        return Polynomial(acc, new_vars)

    def evaluate(self, point: Mapping[str, float]) -> float:
        missing = self.variables() - set(point)
        if missing:
            raise PolyError(f"missing values for variables {sorted(missing)}")
        total = 0.0
        for m, c in self._terms.items():
            t = c
            for v, k in m:
                t *= float(point[v]) ** k
            total += t
        return total

    __call__ = evaluate

    def evaluate_many(self, points: Mapping[str, np.ndarray]) -> np.ndarray:
        """Vectorized evaluation; ``points`` maps names to equal-length arrays."""
        missing = self.variables() - set(points)
        if missing:
            raise PolyError(f"missing values for variables {sorted(missing)}")
        n = len(next(iter(points.values()))) if points else 1
        out = np.zeros(n)
        cache: dict[tuple[str, int], np.ndarray] = {}
        for m, c in self._terms.items():
            t = np.full(n, c)
            for v, k in m:
                key = (v, k)
                if key not in cache:
                    cache[key] = np.asarray(points[v], dtype=float) ** k
                t = t * cache[key]
            out += t
        return out

    def with_vars(self, vars: Iterable[str]) -> "Polynomial":
        return Polynomial(self._terms, VarSet(vars).union(self._vars))

    # I/O -----------------------------------------------------------------------------
    def to_json(self) -> list:
        order = tuple(sorted(self._vars))  # canonical: independent of construction order
        items = sorted(self._terms.items(), key=lambda mc: grlex_key(mc[0], order))
        return [{"coeff": c, "exps": {v: k for v, k in m}} for m, c in items]

    @classmethod
    def from_json(cls, data: Sequence[Mapping], vars: Iterable[str] = ()) -> "Polynomial":
        if not isinstance(data, (list, tuple)):
            raise PolyError("polynomial JSON must be an array of terms")
        acc: dict[Monomial, float] = {}
        for term in data:
            if not isinstance(term, Mapping) or "coeff" not in term:
                raise PolyError(f"malformed polynomial term {term!r}")
            exps = term.get("exps", {})
            if not isinstance(exps, Mapping):
                raise PolyError(f"malformed exponent map {exps!r}")
            m = monomial(exps)
            acc[m] = acc.get(m, 0.0) + float(term["coeff"])
        return cls(acc, vars)

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        order = tuple(self._vars)
        items = sorted(self._terms.items(), key=lambda mc: grlex_key(mc[0], order),
                       reverse=True)
        parts = []
        for m, c in items:
            body = mono_str(m)
            mag = abs(c)
            txt = f"{mag:.6g}" if body == "1" else (body if mag == 1 else f"{mag:.6g}*{body}")
            parts.append(("- " if c < 0 else "+ ") + txt)
        s = " ".join(parts)
        return s[2:] if s.startswith("+ ") else "-" + s[2:]

    def __repr__(self) -> str:
        return f"Polynomial({self})"


Scalar = Union[Polynomial, float]


def arith(a: Polynomial, b, op: str) -> Polynomial:
    """Binary arithmetic by name: ``add``, ``sub``, ``mul`` or ``scale``."""
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "scale":
        return a * float(b)
    raise PolyError(f"unknown op {op!r}")


def differentiate(p: Polynomial, v: str) -> Polynomial:
    return p.diff(v)


def substitute(p: Polynomial, bindings: Mapping[str, Scalar]) -> Polynomial:
    return p.subs(bindings)


def evaluate(p: Polynomial, point: Mapping[str, float]) -> float:
    return p.evaluate(point)


def monomial_basis(vars: Sequence[str], max_degree: int,
                   min_degree: int = 0, even_only: bool = False) -> list[Monomial]:
    """All monomials in ``vars`` with degree in [min_degree, max_degree], grlex order."""
    if max_degree < 0:
        raise PolyError("max_degree must be non-negative")
    vars = tuple(vars)
    out: list[Monomial] = []
    for d in range(max(min_degree, 0), max_degree + 1):
        if even_only and d % 2:
            continue
        chunk = []
        for combo in itertools.combinations_with_replacement(range(len(vars)), d):
            exps: dict[str, int] = {}
            for i in combo:
                exps[vars[i]] = exps.get(vars[i], 0) + 1
            chunk.append(monomial(exps))
        chunk.sort(key=lambda m: grlex_key(m, vars))
        out.extend(chunk)
    return out


class PolyMatrix:
    """Rectangular matrix of polynomials sharing one variable set."""

    __slots__ = ("_rows", "_vars")
    __array_ufunc__ = None  # make ndarray @ PolyMatrix defer to __rmatmul__

    def __init__(self, rows: Sequence[Sequence[Scalar]]):
        rows = [[Polynomial._coerce(x) for x in r] for r in rows]
        if not rows or not rows[0]:
            raise PolyError("PolyMatrix needs at least one row and one column")
        ncol = len(rows[0])
        if any(len(r) != ncol for r in rows):
            raise PolyError("PolyMatrix rows must have equal length")
        vs = VarSet()
        for r in rows:
            for p in r:
                vs = vs.union(p.vars)
        self._rows = tuple(tuple(p.with_vars(vs) for p in r) for r in rows)
        self._vars = vs

    @classmethod
    def column(cls, entries: Sequence[Scalar]) -> "PolyMatrix":
        return cls([[e] for e in entries])

    @classmethod
    def from_numeric(cls, a) -> "PolyMatrix":
        a = np.atleast_2d(np.asarray(a, dtype=float))
        return cls([[Polynomial.const(x) for x in row] for row in a])

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "PolyMatrix":
        return cls([[Polynomial.zero()] * cols for _ in range(rows)])

    @property
    def shape(self) -> tuple[int, int]:
        return len(self._rows), len(self._rows[0])

    @property
    def rows(self) -> int:
        return len(self._rows)

    @property
    def cols(self) -> int:
        return len(self._rows[0])

    @property
    def vars(self) -> VarSet:
        return self._vars

    def __getitem__(self, idx) -> Polynomial:
        i, j = idx
        return self._rows[i][j]

    def entries(self) -> tuple[tuple[Polynomial, ...], ...]:
        return self._rows

    def col(self, j: int) -> list[Polynomial]:
        return [r[j] for r in self._rows]

    def flat(self) -> list[Polynomial]:
        return [p for r in self._rows for p in r]

    def variables(self) -> set[str]:
        out: set[str] = set()
        for p in self.flat():
            out |= p.variables()
        return out

    def degree(self) -> int:
        return max(p.degree() for p in self.flat())

    @property
    def T(self) -> "PolyMatrix":
        return PolyMatrix([list(c) for c in zip(*self._rows)])

    def _as_matrix(self, other) -> "PolyMatrix":
        if isinstance(other, PolyMatrix):
            return other
        return PolyMatrix.from_numeric(other)

    def __add__(self, other) -> "PolyMatrix":
        other = self._as_matrix(other)
        if other.shape != self.shape:
            raise PolyError(f"shape mismatch {self.shape} vs {other.shape}")
        return PolyMatrix([[a + b for a, b in zip(ra, rb)]
                           for ra, rb in zip(self._rows, other._rows)])

    def __sub__(self, other) -> "PolyMatrix":
        other = self._as_matrix(other)
        return self + other.scale(-1.0)

    def scale(self, s: Scalar) -> "PolyMatrix":
        return PolyMatrix([[p * s for p in r] for r in self._rows])

    def __matmul__(self, other) -> "PolyMatrix":
        other = self._as_matrix(other)
        if self.cols != other.rows:
            raise PolyError(f"cannot multiply {self.shape} by {other.shape}")
        out = []
        for r in self._rows:
            row = []
            for j in range(other.cols):
                acc = Polynomial.zero()
                for k, p in enumerate(r):
                    q = other._rows[k][j]
                    if p.terms and q.terms:
                        acc = acc + p * q
                row.append(acc)
            out.append(row)
        return PolyMatrix(out)

    def __rmatmul__(self, other) -> "PolyMatrix":
        return self._as_matrix(other) @ self

    def subs(self, bindings: Mapping[str, Scalar]) -> "PolyMatrix":
        return PolyMatrix([[p.subs(bindings) for p in r] for r in self._rows])

    def diff(self, v: str) -> "PolyMatrix":
        return PolyMatrix([[p.with_vars([v]).diff(v) for p in r] for r in self._rows])

    def evaluate(self, point: Mapping[str, float]) -> np.ndarray:
        return np.array([[p.evaluate(point) for p in r] for r in self._rows])

    def is_zero(self, tol: float = 0.0) -> bool:
        return all(p.is_zero(tol) for p in self.flat())

    def is_constant(self) -> bool:
        return all(p.is_constant() for p in self.flat())

    def to_numeric(self) -> np.ndarray:
        if not self.is_constant():
            raise PolyError("matrix has non-constant entries")
        return np.array([[p.constant_term() for p in r] for r in self._rows])

    def nonzero_rows(self) -> list[int]:
        return [i for i, r in enumerate(self._rows) if any(p.terms for p in r)]

    def to_json(self) -> list:
        return [[p.to_json() for p in r] for r in self._rows]

    @classmethod
    def from_json(cls, data) -> "PolyMatrix":
        return cls([[Polynomial.from_json(p) for p in r] for r in data])

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolyMatrix):
            return NotImplemented
        return self.shape == other.shape and all(
            a == b for a, b in zip(self.flat(), other.flat()))

    def __repr__(self) -> str:
        body = "; ".join(", ".join(str(p) for p in r) for r in self._rows)
        return f"PolyMatrix[{body}]"


class CompiledPolys:
    """Fast numeric evaluation of several polynomials over a fixed variable order.

    Calling with an array of shape ``(..., len(names))`` returns ``(..., k)``.
    """

    def __init__(self, polys: Sequence[Polynomial], names: Sequence[str]):
        self.names = tuple(names)
        index = {v: i for i, v in enumerate(self.names)}
        monos = sorted({m for p in polys for m in p.terms}, key=lambda m: grlex_key(m, self.names))
        missing = {v for m in monos for v, _ in m} - set(index)
        if missing:
            raise PolyError(f"variables {sorted(missing)} not in evaluation order")
        pos = {m: j for j, m in enumerate(monos)}
        self.exps = np.zeros((len(monos), len(self.names)), dtype=int)
        for j, m in enumerate(monos):
            for v, k in m:
                self.exps[j, index[v]] = k
        self.coeffs = np.zeros((len(polys), len(monos)))
        for i, p in enumerate(polys):
            for m, c in p.terms.items():
                self.coeffs[i, pos[m]] = c

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        mono = np.prod(X[..., None, :] ** self.exps, axis=-1)
        return mono @ self.coeffs.T


def compile_polys(polys: Iterable[Polynomial], names: Sequence[str]) -> CompiledPolys:
    return CompiledPolys(list(polys), names)
