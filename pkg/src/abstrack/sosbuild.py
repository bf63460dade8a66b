"""Compile sum-of-squares programs into block SDPs and decode the solutions.

Decision polynomials are either *free* (one free scalar per basis monomial) or
*sos* (parameterized directly by a PSD Gram block).  Constraint expressions
are :class:`PolyExpr` objects: polynomials whose coefficients are affine in
the unknowns.  Products of two unknown-carrying expressions are rejected.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .polyalg import (ONE, Monomial, PolyError, Polynomial, VarSet, grlex_key,
                      mono_degree, mono_mul, mono_str, monomial, monomial_basis)
from .sdpsolve import SdpProblem, SdpSolution, SolverOptions, Status, phase1_feasibility
from .sdpsolve import solve as sdp_solve

log = logging.getLogger(__name__)

CONST = -1  # key of the constant part inside a linear expression

EPS_1 = 1e-6
EPS_2 = 1e-6
EPS_3 = 1e-6

RESIDUAL_TOL = 1e-7
EIG_TOL = 1e-8


class BilinearError(PolyError):
    pass


class SosError(RuntimeError):
    pass


LinExpr = dict  # {unknown id or CONST: coefficient}


def _lin_add(dst: dict, src: Mapping, s: float = 1.0) -> None:
    for k, v in src.items():
        nv = dst.get(k, 0.0) + s * v
        if nv == 0.0:
            dst.pop(k, None)
        else:
            dst[k] = nv


class PolyExpr:
    """Polynomial whose coefficients are affine functions of program unknowns."""

    __slots__ = ("terms", "owners")

    def __init__(self, terms: Mapping[Monomial, LinExpr] | None = None,
                 owners: Mapping[int, str] | None = None):
        self.terms: dict[Monomial, LinExpr] = {m: dict(l) for m, l in (terms or {}).items() if l}
        self.owners: dict[int, str] = dict(owners or {})

    @classmethod
    def lift(cls, x) -> "PolyExpr":
        if isinstance(x, PolyExpr):
            return x
        if isinstance(x, (int, float, np.floating, np.integer)):
            x = Polynomial.const(float(x))
        if isinstance(x, Polynomial):
            return cls({m: {CONST: c} for m, c in x.terms.items()})
        raise TypeError(f"cannot lift {type(x).__name__} to PolyExpr")

    def unknowns(self) -> set[int]:
        return {k for l in self.terms.values() for k in l if k != CONST}

    def has_unknowns(self) -> bool:
        return any(k != CONST for l in self.terms.values() for k in l)

    def variables(self) -> set[str]:
        return {v for m in self.terms for v, _ in m}

    def degree(self) -> int:
        return max((mono_degree(m) for m in self.terms), default=-1)

    def __add__(self, other) -> "PolyExpr":
        other = PolyExpr.lift(other)
        out = {m: dict(l) for m, l in self.terms.items()}
        for m, l in other.terms.items():
            d = out.setdefault(m, {})
            _lin_add(d, l)
            if not d:
                del out[m]
        owners = {**self.owners, **other.owners}
        return PolyExpr(out, owners)

    __radd__ = __add__

    def __neg__(self) -> "PolyExpr":
        return self * -1.0

    def __sub__(self, other) -> "PolyExpr":
        return self + (PolyExpr.lift(other) * -1.0)

    def __rsub__(self, other) -> "PolyExpr":
        return PolyExpr.lift(other) + (self * -1.0)

    def __mul__(self, other) -> "PolyExpr":
        if isinstance(other, (int, float, np.floating, np.integer)):
            s = float(other)
            if s == 0.0:
                return PolyExpr({}, self.owners)
            return PolyExpr({m: {k: s * v for k, v in l.items()} for m, l in self.terms.items()},
                            self.owners)
        other = PolyExpr.lift(other)
        if self.has_unknowns() and other.has_unknowns():
            a = sorted({self.owners.get(k, "?") for k in self.unknowns()})
            b = sorted({other.owners.get(k, "?") for k in other.unknowns()})
            raise BilinearError(
                f"bilinear product of decision variables {a[0]!r} and {b[0]!r}")
        if other.has_unknowns():
            return other * self
        out: dict[Monomial, dict] = {}
        for mb, lb in other.terms.items():
            c = lb.get(CONST, 0.0)
            if c == 0.0:
                continue
            for ma, la_ in self.terms.items():
                m = mono_mul(ma, mb)
                d = out.setdefault(m, {})
                _lin_add(d, la_, c)
        out = {m: l for m, l in out.items() if l}
        return PolyExpr(out, self.owners)

    __rmul__ = __mul__

    def diff(self, v: str) -> "PolyExpr":
        out: dict[Monomial, dict] = {}
        for m, l in self.terms.items():
            d = dict(m)
            k = d.get(v, 0)
            if not k:
                continue
            d[v] = k - 1
            mm = monomial(d)
            dst = out.setdefault(mm, {})
            _lin_add(dst, l, float(k))
        return PolyExpr(out, self.owners)

    def value(self, values: Mapping[int, float] | np.ndarray) -> Polynomial:
        """Numeric polynomial obtained by fixing every unknown."""
        acc: dict[Monomial, float] = {}
        for m, l in self.terms.items():
            s = 0.0
            for k, v in l.items():
                s += v if k == CONST else v * values[k]
            acc[m] = s
        return Polynomial(acc)

    def constant_part(self) -> Polynomial:
        return Polynomial({m: l.get(CONST, 0.0) for m, l in self.terms.items()})

    def __repr__(self) -> str:
        return f"PolyExpr({len(self.terms)} terms, {len(self.unknowns())} unknowns)"


def lift_matrix(rows) -> list[list[PolyExpr]]:
    return [[PolyExpr.lift(x) for x in r] for r in rows]


@dataclass
class PolyDecisionVar:
    """Polynomial unknown: free coefficients or a PSD Gram parameterization."""

    name: str
    vars: VarSet
    basis: list[Monomial]
    kind: str                       # "free" or "sos"
    expr: PolyExpr
    unknown_ids: list[int]
    block: int | None = None        # PSD block index for kind == "sos"

    def __repr__(self) -> str:
        return f"PolyDecisionVar({self.name!r}, {self.kind}, {len(self.unknown_ids)} unknowns)"


@dataclass
class GramCertificate:
    constraint_id: int
    label: str
    half_basis: list[Monomial]
    gram: np.ndarray
    residual: float
    min_eig: float
    max_coeff: float

    @property
    def valid(self) -> bool:
        return (self.residual <= RESIDUAL_TOL * (1.0 + self.max_coeff)
                and self.min_eig >= -EIG_TOL)


@dataclass
class SosResult:
    status: str                     # "Feasible", "Optimal", "Infeasible", "MaxIter", "NumErr"
    values: dict[str, Polynomial]
    certificates: list[GramCertificate]
    slack: float | None = None
    objective: float | None = None
    solver: SdpSolution | None = None
    unknown_values: np.ndarray | None = None
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.status in ("Feasible", "Optimal")

    @property
    def strict(self) -> bool:
        return self.slack is not None and self.slack > 1e-9

    def worst_residual(self) -> float:
        return max((c.residual / (1.0 + c.max_coeff) for c in self.certificates), default=0.0)


@dataclass
class _SosConstraint:
    expr: PolyExpr
    label: str


@dataclass
class _Compiled:
    problem: SdpProblem
    # unknown id -> ("free", column) or ("psd", block, r, c)
    free_map: np.ndarray            # free unknown id -> column in the original free vector
    x0: np.ndarray                  # particular solution of pure-free rows
    N: np.ndarray                   # null-space basis (orig free -> reduced)
    keep: np.ndarray                # reduced columns kept after rank reduction
    gram_blocks: list[int]          # SDP block index of each SOS constraint's Gram (-1 if none)
    half_bases: list[list[Monomial]]
    structurally_infeasible: str = ""


class SosProgram:
    """A set of polynomial decision variables and SOS / linear constraints."""

    def __init__(self, name: str = "sosprog"):
        self.name = name
        self.decision_vars: dict[str, PolyDecisionVar] = {}
        self.constraints: list[_SosConstraint] = []
        self.linear: list[tuple[LinExpr, float]] = []
        self.objective: LinExpr = {}
        self._unknown_kind: list[tuple] = []   # ("free", k) or ("psd", block, r, c)
        self._owners: dict[int, str] = {}
        self._nfree = 0
        self._mult_blocks: list[int] = []      # size of each multiplier PSD block
        self._order = VarSet()

    # declarations ------------------------------------------------------------------
    def _new_unknown(self, kind: tuple, owner: str) -> int:
        uid = len(self._unknown_kind)
        self._unknown_kind.append(kind)
        self._owners[uid] = owner
        return uid

    def declare_poly(self, name: str, vars: Sequence[str], degree: int, parity: str = "any",
                     min_degree: int = 0, basis: Sequence[Monomial] | None = None
                     ) -> PolyDecisionVar:
        """Free polynomial with one unknown coefficient per basis monomial."""
        if name in self.decision_vars:
            raise SosError(f"decision variable {name!r} already declared")
        if degree < 0:
            raise SosError("degree must be non-negative")
        vs = VarSet(vars)
        self._order = self._order.union(vs)
        if basis is None:
            basis = monomial_basis(vs, degree, min_degree=min_degree,
                                   even_only=(parity == "even"))
        terms, ids = {}, []
        for m in basis:
            uid = self._new_unknown(("free", self._nfree), name)
            self._nfree += 1
            ids.append(uid)
            terms[m] = {uid: 1.0}
        expr = PolyExpr(terms, {u: name for u in ids})
        dv = PolyDecisionVar(name, vs, list(basis), "free", expr, ids)
        self.decision_vars[name] = dv
        return dv

    def declare_sos(self, name: str, vars: Sequence[str], degree: int,
                    half_basis: Sequence[Monomial] | None = None) -> PolyDecisionVar:
        """SOS polynomial z' G z with G a PSD block (``degree`` must be even)."""
        if name in self.decision_vars:
            raise SosError(f"decision variable {name!r} already declared")
        if degree < 0 or degree % 2:
            raise SosError("SOS multipliers need a non-negative even degree")
        vs = VarSet(vars)
        self._order = self._order.union(vs)
        z = list(half_basis) if half_basis is not None else monomial_basis(vs, degree // 2)
        blk = len(self._mult_blocks)
        self._mult_blocks.append(len(z))
        terms: dict[Monomial, dict] = {}
        ids = []
        for r in range(len(z)):
            for c in range(r, len(z)):
                uid = self._new_unknown(("psd", blk, r, c), name)
                ids.append(uid)
                m = mono_mul(z[r], z[c])
                terms.setdefault(m, {})[uid] = 1.0 if r == c else 2.0
        expr = PolyExpr(terms, {u: name for u in ids})
        dv = PolyDecisionVar(name, vs, z, "sos", expr, ids, blk)
        self.decision_vars[name] = dv
        return dv

    # constraints -------------------------------------------------------------------
    def add_sos(self, expr, label: str = "") -> int:
        expr = PolyExpr.lift(expr)
        self._owners.update(expr.owners)
        self._order = self._order.union(sorted(expr.variables() - set(self._order)))
        cid = len(self.constraints)
        self.constraints.append(_SosConstraint(expr, label or f"sos{cid}"))
        return cid

    def s_procedure(self, target, constraints: Sequence[tuple], label: str = "",
                    mult_degree: int = 2, mult_vars: Sequence[str] | None = None) -> int:
        """Certify ``target >= 0`` on a semi-algebraic set.

        ``constraints`` holds ``(multiplier, g, kind)`` tuples where ``kind`` is
        ``"le"`` for ``{g <= 0}``, ``"ge"`` for ``{g >= 0}`` or ``"eq"`` for
        ``{g = 0}``.  ``multiplier`` is a declared variable, a fixed polynomial,
        or ``None`` to auto-declare (SOS for inequalities, free for equalities).
        Emits ``target + sum(sign * s_i * g_i)`` in Sigma.
        """
        expr = PolyExpr.lift(target)
        tvars = sorted(expr.variables())
        for idx, item in enumerate(constraints):
            mult, g, kind = (item + ("le",))[:3] if len(item) == 2 else item
            g = PolyExpr.lift(g)
            if mult is None:
                mv = list(mult_vars) if mult_vars is not None else \
                    sorted(set(tvars) | g.variables())
                nm = f"{label or 'sproc'}_s{len(self.decision_vars)}_{idx}"
                if kind == "eq":
                    mult = self.declare_poly(nm, mv, mult_degree)
                else:
                    mult = self.declare_sos(nm, mv, mult_degree)
            sexpr = mult.expr if isinstance(mult, PolyDecisionVar) else PolyExpr.lift(mult)
            if kind == "le":
                expr = expr + sexpr * g
            elif kind == "ge":
                expr = expr - sexpr * g
            elif kind == "eq":
                expr = expr + sexpr * g
            else:
                raise SosError(f"unknown set convention {kind!r}")
        return self.add_sos(expr, label)

    def add_linear(self, lin: Mapping[int, float], rhs: float = 0.0) -> None:
        """Affine relation ``sum(coeff * unknown) = rhs`` among coefficients."""
        self.linear.append((dict(lin), float(rhs)))

    def add_identity(self, expr) -> None:
        """Require a polynomial expression to vanish identically."""
        expr = PolyExpr.lift(expr)
        for m, l in expr.terms.items():
            lin = {k: v for k, v in l.items() if k != CONST}
            if not lin:
                if abs(l.get(CONST, 0.0)) > 0:
                    self.linear.append(({}, -l[CONST]))
                continue
            self.linear.append((lin, -l.get(CONST, 0.0)))

    def minimize(self, lin: Mapping[int, float] | PolyExpr) -> None:
        if isinstance(lin, PolyExpr):
            lin = {k: v for k, v in lin.terms.get(ONE, {}).items() if k != CONST}
        self.objective = dict(lin)

    # compilation ---------------------------------------------------------------------
    def _half_basis(self, expr: PolyExpr) -> list[Monomial]:
        vs = [v for v in self._order if v in expr.variables()]
        deg = expr.degree()
        if deg < 0:
            return []
        z = monomial_basis(vs, int(math.ceil(deg / 2)))
        # Drop z when z^2 has a single representation and a structurally zero coefficient.
        while True:
            zset = set(z)
            counts: dict[Monomial, int] = {}
            for i, a in enumerate(z):
                for b in z[i:]:
                    m = mono_mul(a, b)
                    counts[m] = counts.get(m, 0) + 1
            drop = []
            for a in z:
                sq = mono_mul(a, a)
                if counts.get(sq, 0) == 1:
                    l = expr.terms.get(sq)
                    if not l:
                        drop.append(a)
            if not drop:
                return z
            dset = set(drop)
            z = [a for a in z if a not in dset]

    def compile(self) -> _Compiled:
        nfree = self._nfree
        nmult = len(self._mult_blocks)
        rows_rhs: list[float] = []
        free_rows, free_cols, free_vals = [], [], []
        # block_entries[j] -> lists (con, r, c, v)
        blk_data: list[list[list]] = [[[], [], [], []] for _ in range(nmult)]
        gram_blocks: list[int] = []
        half_bases: list[list[Monomial]] = []
        gram_data: list[list[list]] = []
        bad = ""

        def emit_unknowns(row: int, lin: Mapping, sign: float) -> None:
            for k, v in lin.items():
                if k == CONST:
                    continue
                kind = self._unknown_kind[k]
                if kind[0] == "free":
                    free_rows.append(row)
                    free_cols.append(kind[1])
                    free_vals.append(sign * v)
                else:
                    _, j, r, c = kind
                    d = blk_data[j]
                    d[0].append(row)
                    d[1].append(r)
                    d[2].append(c)
                    d[3].append(sign * v if r == c else 0.5 * sign * v)

        for cid, con in enumerate(self.constraints):
            expr = con.expr
            z = self._half_basis(expr)
            half_bases.append(z)
            pos: dict[Monomial, list[tuple[int, int]]] = {}
            for a in range(len(z)):
                for b in range(a, len(z)):
                    pos.setdefault(mono_mul(z[a], z[b]), []).append((a, b))
            monos = set(expr.terms) | set(pos)
            order = tuple(self._order)
            gd = [[], [], [], []]
            for m in sorted(monos, key=lambda mm: grlex_key(mm, order)):
                row = len(rows_rhs)
                lin = expr.terms.get(m, {})
                rows_rhs.append(lin.get(CONST, 0.0))
                for a, b in pos.get(m, []):
                    gd[0].append(row)
                    gd[1].append(a)
                    gd[2].append(b)
                    gd[3].append(1.0)
                emit_unknowns(row, lin, -1.0)
            gram_data.append(gd)
            gram_blocks.append(nmult + len([g for g in gram_blocks if g >= 0]) if z else -1)

        for lin, rhs in self.linear:
            row = len(rows_rhs)
            rows_rhs.append(rhs)
            emit_unknowns(row, lin, 1.0)

        m = len(rows_rhs)
        b = np.array(rows_rhs, dtype=float)
        F = sp.csr_matrix((free_vals, (free_rows, free_cols)), shape=(m, nfree))
        dims = list(self._mult_blocks) + [len(z) for z in half_bases if z]
        coo = [tuple(np.array(x) for x in d) for d in blk_data]
        coo += [tuple(np.array(x) for x in gd) for gd, z in zip(gram_data, half_bases) if z]

        # Rows touching no PSD entry are pre-solved on the free variables.
        touched = np.zeros(m, dtype=bool)
        for con_idx, *_ in coo:
            if len(con_idx):
                touched[np.asarray(con_idx, dtype=int)] = True
        pure = np.flatnonzero(~touched)
        rest = np.flatnonzero(touched)
        Fd = F.toarray()
        x0 = np.zeros(nfree)
        N = np.eye(nfree)
        if pure.size:
            Fp, bp = Fd[pure], b[pure]
            if nfree:
                x0, *_ = la.lstsq(Fp, bp)
                resid = la.norm(Fp @ x0 - bp, np.inf)
                N = la.null_space(Fp) if Fp.any() else np.eye(nfree)
            else:
                resid = la.norm(bp, np.inf)
            if resid > 1e-9 * (1.0 + la.norm(bp, np.inf)):
                bad = "coefficient identities among unknowns are inconsistent"
        remap = -np.ones(m, dtype=int)
        remap[rest] = np.arange(rest.size)
        b_red = b[rest] - Fd[rest] @ x0
        F_red = Fd[rest] @ N
        keep = np.arange(F_red.shape[1])
        if F_red.shape[1]:
            _, R, piv = la.qr(F_red, mode="economic", pivoting=True)
            diag = np.abs(np.diag(R))
            rank = int((diag > 1e-10 * max(diag.max(initial=0.0), 1e-300)).sum()) if diag.size else 0
            keep = np.sort(piv[:rank])
        F_red = F_red[:, keep]
        new_coo = []
        for con_idx, r, c, v in coo:
            con_idx = np.asarray(con_idx, dtype=int)
            new_coo.append((remap[con_idx] if con_idx.size else con_idx, r, c, v))
        c_free = np.zeros(nfree)
        obj_blocks: list[np.ndarray | None] = [None] * len(dims)
        for k, v in self.objective.items():
            kind = self._unknown_kind[k]
            if kind[0] == "free":
                c_free[kind[1]] += v
            else:
                _, j, r, cc = kind
                if obj_blocks[j] is None:
                    obj_blocks[j] = np.zeros((dims[j], dims[j]))
                if r == cc:
                    obj_blocks[j][r, r] += v
                else:
                    obj_blocks[j][r, cc] += 0.5 * v
                    obj_blocks[j][cc, r] += 0.5 * v
        c_red = (N.T @ c_free)[keep] if nfree else np.zeros(0)
        if not dims:
            # No PSD block at all: a pure linear system.
            dims_use, coo_use = [1], [(np.zeros(0, int), np.zeros(0, int), np.zeros(0, int),
                                       np.zeros(0))]
            obj_blocks = [None]
        else:
            dims_use, coo_use = dims, new_coo
        prob = SdpProblem(dims_use, int(keep.size), b_red, coo_use, sp.csr_matrix(F_red),
                          obj_blocks, c_red)
        return _Compiled(prob, np.arange(nfree), x0, N, keep, gram_blocks, half_bases, bad)

    # solving ----------------------------------------------------------------------------
    def solve(self, mode: str = "auto", opts: SolverOptions | None = None) -> SosResult:
        """Compile, solve and decode.

        ``feasibility`` maximizes a uniform eigenvalue slack (phase I) and returns
        an interior point; ``optimize`` minimizes the objective.  A program is
        declared feasible exactly when every decoded Gram certificate verifies.
        """
        opts = opts or SolverOptions()
        if mode == "auto":
            mode = "optimize" if self.objective else "feasibility"
        comp = self.compile()
        if comp.structurally_infeasible:
            return SosResult("Infeasible", {}, [], message=comp.structurally_infeasible)
        if comp.problem.num_constraints == 0 and not self.decision_vars:
            return SosResult("Feasible", {}, [], slack=opts.t_max)
        if mode == "feasibility":
            sol = phase1_feasibility(comp.problem, opts)
        elif mode == "optimize":
            sol = sdp_solve(comp.problem, opts)
        else:
            raise SosError(f"unknown mode {mode!r}")
        return self.decode(comp, sol, mode)

    def unknown_values(self, comp: _Compiled, sol: SdpSolution,
                       project: bool = True) -> np.ndarray:
        w = np.zeros(comp.N.shape[1])
        if comp.keep.size:
            w[comp.keep] = sol.x_free[:comp.keep.size]
        xf = comp.x0 + comp.N @ w if comp.N.size else comp.x0
        blocks = []
        for j in range(len(self._mult_blocks)):
            G = sol.X[j]
            if project:
                G = _psd_project(G)
            blocks.append(G)
        vals = np.zeros(len(self._unknown_kind))
        for uid, kind in enumerate(self._unknown_kind):
            if kind[0] == "free":
                vals[uid] = xf[kind[1]]
            else:
                _, j, r, c = kind
                vals[uid] = blocks[j][r, c]
        return vals

    def decode(self, comp: _Compiled, sol: SdpSolution, mode: str = "feasibility") -> SosResult:
        if sol.status == Status.NUM_ERR and not np.all(np.isfinite(sol.x_free)):
            return SosResult("NumErr", {}, [], solver=sol, slack=sol.slack)
        vals = self.unknown_values(comp, sol)
        values = {name: dv.expr.value(vals).with_vars(dv.vars)
                  for name, dv in self.decision_vars.items()}
        certs = []
        nmult = len(self._mult_blocks)
        for cid, (con, z) in enumerate(zip(self.constraints, comp.half_bases)):
            p = con.expr.value(vals)
            bidx = comp.gram_blocks[cid]
            G = _psd_project(sol.X[bidx]) if bidx >= 0 else np.zeros((0, 0))
            certs.append(gram_certificate(cid, con.label, p, z, G))
        mult_ok = all(la.eigvalsh(_psd_project(sol.X[j]))[0] >= -EIG_TOL
                      for j in range(nmult)) if nmult else True
        lin_ok = all(abs(sum(v * vals[k] for k, v in lin.items()) - rhs)
                     <= RESIDUAL_TOL * (1.0 + abs(rhs)) for lin, rhs in self.linear)
        ok = all(c.valid for c in certs) and mult_ok and lin_ok
        if sol.status in (Status.NUM_ERR,) and not ok:
            status = "NumErr"
        elif ok:
            status = "Optimal" if (mode == "optimize" and sol.status == Status.OPTIMAL) \
                else "Feasible"
        elif sol.status == Status.MAX_ITER and mode == "optimize":
            status = "MaxIter"
        else:
            status = "Infeasible"
        obj = None
        if self.objective:
            obj = float(sum(v * vals[k] for k, v in self.objective.items()))
        return SosResult(status, values, certs, slack=sol.slack, objective=obj, solver=sol,
                         unknown_values=vals)

    def pretty(self) -> str:
        """Human-readable listing of declarations and constraints."""
        lines = [f"program {self.name}"]
        for dv in self.decision_vars.values():
            kind = "SOS" if dv.kind == "sos" else "free"
            lines.append(f"  {kind} {dv.name}({', '.join(dv.vars)}), "
                         f"{len(dv.basis)} basis monomials")
        for cid, con in enumerate(self.constraints):
            lines.append(f"  [{cid}] {con.label}: {_expr_str(con.expr, self._owners)} in SOS")
        for lin, rhs in self.linear:
            txt = " + ".join(f"{v:g}*{self._owners.get(k, '?')}#{k}" for k, v in lin.items())
            lines.append(f"  linear: {txt or '0'} = {rhs:g}")
        return "\n".join(lines)


def _expr_str(expr: PolyExpr, owners: Mapping[int, str], limit: int = 12) -> str:
    parts = []
    for m, l in list(expr.terms.items())[:limit]:
        coeff = []
        if CONST in l:
            coeff.append(f"{l[CONST]:.6g}")
        names = sorted({owners.get(k, "?") for k in l if k != CONST})
        coeff.extend(f"<{n}>" for n in names)
        parts.append(f"({' + '.join(coeff)})*{mono_str(m)}")
    more = "" if len(expr.terms) <= limit else f" + ... ({len(expr.terms) - limit} more terms)"
    return " + ".join(parts) + more


def _psd_project(G: np.ndarray) -> np.ndarray:
    G = 0.5 * (G + G.T)
    w, V = la.eigh(G)
    if w.size == 0 or w[0] >= 0:
        return G
    w = np.maximum(w, 0.0)
    return (V * w) @ V.T


def gram_certificate(cid: int, label: str, p: Polynomial, z: Sequence[Monomial],
                     G: np.ndarray) -> GramCertificate:
    """Compare ``p`` against ``z' G z`` coefficient-wise."""
    recon: dict[Monomial, float] = {}
    for a in range(len(z)):
        for b in range(len(z)):
            mm = mono_mul(z[a], z[b])
            recon[mm] = recon.get(mm, 0.0) + G[a, b]
    keys = set(recon) | set(p.terms)
    resid = max((abs(p.coeff(k) - recon.get(k, 0.0)) for k in keys), default=0.0)
    lam = float(la.eigvalsh(G)[0]) if len(z) else 0.0
    return GramCertificate(cid, label, list(z), G, float(resid), lam, p.max_abs_coeff())


def check_sos(p: Polynomial, label: str = "check", opts: SolverOptions | None = None
              ) -> SosResult:
    """Fresh Gram-matrix feasibility check of a numeric polynomial."""
    prog = SosProgram(label)
    prog._order = prog._order.union(p.vars)
    prog.add_sos(p, label)
    return prog.solve("feasibility", opts)
