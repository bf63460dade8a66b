"""Assembly of the certificate constraints as SOS program rows.

Every constraint is built from the same template whether its ingredients
are decision variables or fixed polynomials, so the gamma-step, the V-step
and the final re-verification share one code path.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

from ..errsys import Box, ErrorSystem
from ..polyalg import PolyMatrix, Polynomial, mono_vars, monomial_basis
from ..sosbuild import PolyExpr, SosProgram
from .config import SynthesisConfig

MultFactory = Callable[[str, int, str], "PolyExpr | Polynomial"]


def even_up(d: int) -> int:
    return max(0, d + (d % 2))


def mult_degree(cfg: SynthesisConfig, target_deg: int, g_deg: int) -> int:
    if cfg.mult_degree is not None:
        return cfg.mult_degree
    return even_up(target_deg - g_deg)


@dataclass
class Context:
    """Variables, constraint sets and fixed data shared by all subproblems."""

    err: ErrorSystem
    cfg: SynthesisConfig
    xbox: Box | None = None
    ubox: Box | None = None
    e: list[str] = field(init=False)
    xs: list[str] = field(init=False)
    us: list[str] = field(init=False)
    xpolys: list[Polynomial] = field(init=False)
    upolys: list[Polynomial] = field(init=False)

    def __post_init__(self):
        err = self.err
        self.e = list(err.error_vars)
        self.xs = err.active_xhat()
        self.us = err.active_uhat()
        self.xpolys = self._set_polys(err.xhat_set, err.xhat_box, self.xbox, err.xhat_vars, self.xs)
        self.upolys = self._set_polys(err.uhat_set, err.uhat_box, self.ubox, err.uhat_vars, self.us)

    @staticmethod
    def _set_polys(polys, full_box, box, names, active) -> list[Polynomial]:
        base = full_box.polys(names) if full_box is not None else []
        extra = [p for p in polys if not any(p == b for b in base)]
        use = (box.polys(names) if box is not None else base) + extra
        act = set(active)
        # Constraints touching an inactive variable carry no information here.
        return [p for p in use if p.variables() and p.variables() <= act]

    @property
    def xi(self) -> list[str]:
        return self.e + self.xs + self.us

    @property
    def kappa_vars(self) -> list[str]:
        return self.e if self.cfg.kappa_vars == "error" else self.xi

    def l1(self) -> Polynomial:
        return self.cfg.eps1 * sum((Polynomial.var(v) ** 2 for v in self.e), Polynomial.zero())

    def l2(self) -> Polynomial:
        return self.cfg.eps2 * sum((Polynomial.var(v) ** 2 for v in self.xi), Polynomial.zero())

    def kappa_basis(self):
        basis = monomial_basis(self.kappa_vars, self.cfg.kappa_degree)
        if self.cfg.kappa_zero_on_manifold:
            free = set(self.e) | set(self.us)
            basis = [m for m in basis if any(v in free for v in mono_vars(m))]
        return basis

    def bounds(self):
        box = self.err.input_box
        if box is None or not self.cfg.input_bounds:
            return []
        return list(zip(box.lower, box.upper))


@dataclass
class Assembled:
    constraints: list[tuple[str, PolyExpr]]
    mult_names: list[str]


def assemble(ctx: Context, V, gamma: float, kappa: Sequence, get_mult: MultFactory,
             include_v_terms: bool) -> Assembled:
    """Rows of the certificate program.

    ``V`` and the entries of ``kappa`` are Polynomials or PolyExprs; ``get_mult``
    returns the multiplier named ``name`` of the given degree and kind
    (``"sos"`` or ``"free"``).  ``include_v_terms`` adds ``V - L1`` in Sigma.
    """
    err, cfg = ctx.err, ctx.cfg
    V = PolyExpr.lift(V)
    kappa = [PolyExpr.lift(k) for k in kappa]
    out: list[tuple[str, PolyExpr]] = []
    names: list[str] = []

    def mult(name, deg, kind="sos"):
        names.append(name)
        return PolyExpr.lift(get_mult(name, deg, kind))

    if include_v_terms:
        out.append(("positive", V - ctx.l1()))

    vdot = PolyExpr.lift(0.0)
    for i, ev in enumerate(ctx.e):
        dV = V.diff(ev)
        if not dV.terms:
            continue
        rate = PolyExpr.lift(err.f_e[i, 0])
        for j, kj in enumerate(kappa):
            gij = err.g_e[i, j]
            if not gij.is_zero():
                rate = rate + kj * gij
        vdot = vdot + dV * rate
    level = V - gamma
    target = vdot * -1.0 - ctx.l2()
    tdeg = max(target.degree(), 2)
    expr = target
    for k, p in enumerate(ctx.xpolys):
        expr = expr + mult(f"s1_{k + 1}", mult_degree(cfg, tdeg, p.degree())) * p
    for k, p in enumerate(ctx.upolys):
        expr = expr + mult(f"s2_{k + 1}", mult_degree(cfg, tdeg, p.degree())) * p
    s3 = mult("s3", cfg.s3_degree, "free" if cfg.boundary_only else "sos")
    expr = expr - s3 * level
    out.append(("decrease", expr))

    for j, (lo, hi) in enumerate(ctx.bounds()):
        kj = kappa[j]
        for tag, base, mk in (("upper", kj * -1.0 + float(hi), (4, 5, 6)),
                              ("lower", kj - float(lo), (7, 8, 9))):
            bdeg = max(base.degree(), level.degree())
            e_ = base
            sV = mult(f"s{mk[0]}_{j + 1}", mult_degree(cfg, bdeg, level.degree()))
            e_ = e_ + sV * level
            for k, p in enumerate(ctx.xpolys):
                e_ = e_ + mult(f"s{mk[1]}_{j + 1}_{k + 1}", mult_degree(cfg, bdeg, p.degree())) * p
            for k, p in enumerate(ctx.upolys):
                e_ = e_ + mult(f"s{mk[2]}_{j + 1}_{k + 1}", mult_degree(cfg, bdeg, p.degree())) * p
            out.append((f"{tag}_{j + 1}", e_))
    return Assembled(out, names)


class DecisionMults:
    """Multiplier factory declaring decision variables, optionally with fixed values."""

    def __init__(self, prog: SosProgram, vars: Sequence[str], fixed: dict | None = None):
        self.prog = prog
        self.vars = list(vars)
        self.fixed = dict(fixed or {})
        self.declared: dict[str, object] = {}

    def __call__(self, name: str, deg: int, kind: str):
        if name in self.fixed:
            return self.fixed[name]
        if name not in self.declared:
            if kind == "free":
                self.declared[name] = self.prog.declare_poly(name, self.vars, deg)
            else:
                self.declared[name] = self.prog.declare_sos(name, self.vars, deg)
        return self.declared[name].expr


class FixedMults:
    def __init__(self, values: dict):
        self.values = values

    def __call__(self, name: str, deg: int, kind: str):
        return self.values.get(name, Polynomial.zero())


def kappa_matrix(values: Sequence[Polynomial], names: Sequence[str]) -> PolyMatrix:
    return PolyMatrix.column([p.with_vars(names) for p in values])
