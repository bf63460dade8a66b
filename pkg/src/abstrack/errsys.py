"""Error dynamics between a concrete system and an affine-manifold abstraction.

With ``x = P xh + Omega + e`` and applied input ``u = kappa + q(xh) + R uh`` the
error obeys ``de/dt = f_e(e, xh, uh) + g_e(e, xh) kappa`` where

    f_e = f(P xh + Omega + e) - P (fh(xh) + gh(xh) uh) + g_e (q(xh) + R uh)
    g_e = g(P xh + Omega + e).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .polyalg import PolyMatrix, Polynomial, VarSet

log = logging.getLogger(__name__)


class ModelError(ValueError):
    """Inconsistent or malformed model data."""


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ModelError("box needs lower <= upper with equal lengths")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def halfwidth(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def scaled(self, factor: float, clip: "Box | None" = None) -> "Box":
        c, h = self.center, self.halfwidth * factor
        lo, hi = c - h, c + h
        if clip is not None:
            lo, hi = np.maximum(lo, clip.lower), np.minimum(hi, clip.upper)
        return Box(lo, hi)

    def contains(self, other: "Box", tol: float = 1e-12) -> bool:
        return bool(np.all(other.lower >= self.lower - tol) and np.all(other.upper <= self.upper + tol))

    def contains_point(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def polys(self, names: Sequence[str]) -> list[Polynomial]:
        """One ``(v - c)^2 - h^2 <= 0`` constraint per coordinate."""
        out = []
        for v, c, h in zip(names, self.center, self.halfwidth):
            p = Polynomial.var(v)
            out.append((p - float(c)) ** 2 - float(h) ** 2)
        return out

    def to_json(self) -> dict:
        return {"lower": [float(x) for x in self.lower], "upper": [float(x) for x in self.upper]}

    @classmethod
    def from_json(cls, d: Mapping) -> "Box":
        return cls(d["lower"], d["upper"])


@dataclass
class SystemModel:
    state_vars: VarSet
    input_vars: VarSet
    f: PolyMatrix
    g: PolyMatrix
    input_box: Box | None = None
    name: str = ""

    def __post_init__(self):
        self.state_vars = VarSet(self.state_vars)
        self.input_vars = VarSet(self.input_vars)
        n, m = len(self.state_vars), len(self.input_vars)
        if self.f.shape != (n, 1):
            raise ModelError(f"f must be {n}x1, got {self.f.shape}")
        if self.g.shape != (n, m):
            raise ModelError(f"g must be {n}x{m}, got {self.g.shape}")
        extra = (self.f.variables() | self.g.variables()) - set(self.state_vars)
        if extra:
            raise ModelError(f"f, g may depend on state variables only; found {sorted(extra)}")
        if self.input_box is not None and self.input_box.lower.size != m:
            raise ModelError("input box dimension does not match the number of inputs")

    @property
    def n(self) -> int:
        return len(self.state_vars)

    @property
    def m(self) -> int:
        return len(self.input_vars)


@dataclass
class AbstractionSpec:
    state_vars: VarSet
    input_vars: VarSet
    f: PolyMatrix
    g: PolyMatrix
    P: np.ndarray
    Omega: np.ndarray | None = None
    xhat_box: Box | None = None
    uhat_box: Box | None = None
    xhat_polys: list[Polynomial] = field(default_factory=list)
    uhat_polys: list[Polynomial] = field(default_factory=list)

    def __post_init__(self):
        self.state_vars = VarSet(self.state_vars)
        self.input_vars = VarSet(self.input_vars)
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        nh, mh = len(self.state_vars), len(self.input_vars)
        if self.f.shape != (nh, 1):
            raise ModelError(f"abstract f must be {nh}x1, got {self.f.shape}")
        if self.g.shape != (nh, mh):
            raise ModelError(f"abstract g must be {nh}x{mh}, got {self.g.shape}")
        if self.P.shape[1] != nh:
            raise ModelError("P must have one column per abstract state")
        self.Omega = (np.zeros(self.P.shape[0]) if self.Omega is None
                      else np.asarray(self.Omega, dtype=float).reshape(-1))
        if self.Omega.size != self.P.shape[0]:
            raise ModelError("Omega must have one entry per concrete state")
        for p in self.xhat_polys:
            if p.variables() - set(self.state_vars):
                raise ModelError("state-set polynomials may depend on abstract states only")
        for p in self.uhat_polys:
            if p.variables() - set(self.input_vars):
                raise ModelError("input-set polynomials may depend on abstract inputs only")

    def state_set(self) -> list[Polynomial]:
        out = list(self.xhat_polys)
        if self.xhat_box is not None:
            out += self.xhat_box.polys(self.state_vars)
        return out

    def input_set(self) -> list[Polynomial]:
        out = list(self.uhat_polys)
        if self.uhat_box is not None:
            out += self.uhat_box.polys(self.input_vars)
        return out


@dataclass
class ManifoldCheck:
    holds: bool
    residual: PolyMatrix

    @property
    def rows(self) -> list[int]:
        return self.residual.nonzero_rows()

    def __str__(self) -> str:
        if self.holds:
            return "HOLDS"
        return f"FAILS (rows {','.join(str(i + 1) for i in self.rows)})"


@dataclass
class ErrorSystem:
    error_vars: VarSet
    xhat_vars: VarSet
    uhat_vars: VarSet
    f_e: PolyMatrix             # drift with q and R folded in
    g_e: PolyMatrix
    q: PolyMatrix               # m x 1 over xhat
    r: np.ndarray               # m x mhat
    P: np.ndarray
    Omega: np.ndarray
    xhat_set: list[Polynomial]
    uhat_set: list[Polynomial]
    xhat_box: Box | None = None
    uhat_box: Box | None = None
    input_box: Box | None = None
    disturbance: str = "semialgebraic"
    raw_drift: PolyMatrix | None = None  # f(pi + e) - P(fh + gh uh), without q and R

    @property
    def n(self) -> int:
        return len(self.error_vars)

    @property
    def m(self) -> int:
        return self.g_e.cols

    def active_xhat(self) -> list[str]:
        """Abstract states the error dynamics actually depend on."""
        used = self.f_e.variables() | self.g_e.variables()
        return [v for v in self.xhat_vars if v in used]

    def active_uhat(self) -> list[str]:
        used = self.f_e.variables() | self.g_e.variables()
        return [v for v in self.uhat_vars if v in used]

    def closed_loop_drift(self, kappa: PolyMatrix) -> PolyMatrix:
        return self.f_e + self.g_e @ kappa

    def linearization(self, xhat0: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """(A, B) of ``f_e + g_e kappa`` at e = 0, xh = xhat0, uh = 0."""
        if xhat0 is None:
            xhat0 = self.xhat_box.center if self.xhat_box is not None else np.zeros(len(self.xhat_vars))
        pt = {v: float(c) for v, c in zip(self.xhat_vars, xhat0)}
        pt.update({v: 0.0 for v in self.uhat_vars})
        pt.update({v: 0.0 for v in self.error_vars})
        A = np.array([[self.f_e[i, 0].diff(v).evaluate(pt) if v in self.f_e[i, 0].vars else 0.0
                       for v in self.error_vars] for i in range(self.n)])
        B = self.g_e.evaluate(pt)
        return A, B


def _pi(abs_: AbstractionSpec, e_vars: Sequence[str] | None = None) -> list[Polynomial]:
    """Components of ``P xh + Omega (+ e)``."""
    xh = [Polynomial.var(v) for v in abs_.state_vars]
    out = []
    for i in range(abs_.P.shape[0]):
        p = Polynomial.const(float(abs_.Omega[i]))
        for j, xv in enumerate(xh):
            if abs_.P[i, j] != 0.0:
                p = p + float(abs_.P[i, j]) * xv
        if e_vars is not None:
            p = p + Polynomial.var(e_vars[i])
        out.append(p)
    return out


def _check_dims(sys: SystemModel, abs_: AbstractionSpec) -> None:
    if abs_.P.shape[0] != sys.n:
        raise ModelError(f"P has {abs_.P.shape[0]} rows but the system has {sys.n} states")
    if len(abs_.state_vars) >= sys.n:
        log.warning("abstraction is not lower-dimensional (%d >= %d)", len(abs_.state_vars), sys.n)
    clash = set(sys.state_vars) & (set(abs_.state_vars) | set(abs_.input_vars))
    if clash:
        raise ModelError(f"abstract and concrete variable names overlap: {sorted(clash)}")


def manifold_residual(sys: SystemModel, abs_: AbstractionSpec) -> PolyMatrix:
    """``f(P xh + Omega) - P fh(xh)``."""
    _check_dims(sys, abs_)
    bind = dict(zip(sys.state_vars, _pi(abs_)))
    f_on = sys.f.subs(bind)
    return f_on - (abs_.P @ abs_.f)


def check_manifold_condition(sys: SystemModel, abs_: AbstractionSpec) -> ManifoldCheck:
    res = manifold_residual(sys, abs_)
    return ManifoldCheck(res.is_zero(), res)


def _g_on_manifold(sys: SystemModel, abs_: AbstractionSpec) -> PolyMatrix:
    return sys.g.subs(dict(zip(sys.state_vars, _pi(abs_))))


def choose_q(sys: SystemModel, abs_: AbstractionSpec) -> PolyMatrix:
    """Least-squares cancellation of the manifold residual through a constant g."""
    if not sys.g.is_constant():
        raise ModelError("q synthesis needs a constant input matrix g; "
                         "use q_mode='zero' and treat the residual as disturbance")
    res = manifold_residual(sys, abs_)
    if res.is_zero():
        return PolyMatrix.zeros(sys.m, 1)
    G = sys.g.to_numeric()
    Gp = np.linalg.pinv(G)
    q = PolyMatrix.from_numeric(-Gp) @ res
    left = res + PolyMatrix.from_numeric(G) @ q
    if not left.is_zero(1e-12):
        log.warning("manifold residual is not in range(g); %d rows remain after q",
                    len(left.nonzero_rows()))
    return q


def choose_r(sys: SystemModel, abs_: AbstractionSpec, xhat0: np.ndarray | None = None) -> np.ndarray:
    """R minimizing ``||g(pi(xhat0)) R - P gh(xhat0)||_F`` (normal equations)."""
    _check_dims(sys, abs_)
    if xhat0 is None:
        xhat0 = abs_.xhat_box.center if abs_.xhat_box is not None else np.zeros(len(abs_.state_vars))
    pt = dict(zip(abs_.state_vars, map(float, xhat0)))
    G = _g_on_manifold(sys, abs_).evaluate(pt)
    target = abs_.P @ abs_.g.evaluate(pt)
    GtG = G.T @ G
    if np.linalg.matrix_rank(GtG) < G.shape[1]:
        raise ModelError("g(pi(xhat0)) is rank deficient; supply an explicit r")
    return np.linalg.solve(GtG, G.T @ target)


def _chop(M: PolyMatrix, rel: float = 1e-12) -> PolyMatrix:
    """Drop round-off terms far below the largest coefficient of their entry."""
    rows = []
    for row in M.entries():
        out = []
        for p in row:
            tol = rel * max(1.0, p.max_abs_coeff())
            out.append(Polynomial({m: c for m, c in p.terms.items() if abs(c) > tol}, p.vars))
        rows.append(out)
    return PolyMatrix(rows)


def build_error_system(sys: SystemModel, abs_: AbstractionSpec, q_mode: str = "auto",
                       r_mode: str = "auto", q: PolyMatrix | None = None,
                       r: np.ndarray | None = None, error_vars: Sequence[str] | None = None,
                       disturbance: str = "semialgebraic",
                       disturbance_scale: np.ndarray | None = None) -> ErrorSystem:
    """Substitute ``x = e + P xh + Omega`` and fold the refinement maps into f_e."""
    _check_dims(sys, abs_)
    n, m, mh = sys.n, sys.m, len(abs_.input_vars)
    e_vars = VarSet(error_vars or [f"e{i + 1}" for i in range(n)])
    if len(e_vars) != n:
        raise ModelError("need one error variable per concrete state")

    if q_mode == "explicit":
        if q is None or q.shape != (m, 1):
            raise ModelError(f"explicit q must be an {m}x1 PolyMatrix")
    elif q_mode == "zero":
        q = PolyMatrix.zeros(m, 1)
    elif q_mode == "auto":
        q = PolyMatrix.zeros(m, 1) if check_manifold_condition(sys, abs_).holds \
            else choose_q(sys, abs_)
    else:
        raise ModelError(f"unknown q_mode {q_mode!r}")
    if q.variables() - set(abs_.state_vars):
        raise ModelError("q may depend on abstract states only")

    if r_mode == "explicit":
        r = np.atleast_2d(np.asarray(r, dtype=float)) if r is not None else None
        if r is None or r.shape != (m, mh):
            raise ModelError(f"explicit r must be {m}x{mh}")
    elif r_mode == "auto":
        r = choose_r(sys, abs_)
    elif r_mode == "identity-like":
        r = np.eye(m, mh)
    else:
        raise ModelError(f"unknown r_mode {r_mode!r}")

    bind = dict(zip(sys.state_vars, _pi(abs_, e_vars)))
    f_sub = sys.f.subs(bind)
    g_e = sys.g.subs(bind)
    uh = PolyMatrix.column([Polynomial.var(v) for v in abs_.input_vars])
    abs_rate = abs_.f + abs_.g @ uh
    raw = f_sub - abs_.P @ abs_rate
    f_e = _chop(raw + g_e @ (q + PolyMatrix.from_numeric(r) @ uh))

    xset, uset = abs_.state_set(), abs_.input_set()
    if disturbance == "unit_peak":
        # d = W^-1 [Delta(xh); uh] with Delta the post-q manifold residual.
        delta = manifold_residual(sys, abs_) + _g_on_manifold(sys, abs_) @ q
        d = [p for p in delta.flat() if not p.is_zero()] + list(uh.flat())
        W = np.eye(len(d)) if disturbance_scale is None else np.atleast_2d(disturbance_scale)
        if W.shape != (len(d), len(d)):
            raise ModelError(f"disturbance scale must be {len(d)}x{len(d)}")
        Wi = np.linalg.inv(W)
        dv = PolyMatrix.from_numeric(Wi) @ PolyMatrix.column(d)
        ball = sum((p * p for p in dv.flat()), Polynomial.zero()) - 1.0
        xset, uset = [], [ball]
    elif disturbance != "semialgebraic":
        raise ModelError(f"unknown disturbance mode {disturbance!r}")
    return ErrorSystem(e_vars, abs_.state_vars, abs_.input_vars, f_e, g_e, q, r, abs_.P,
                       abs_.Omega, xset, uset, abs_.xhat_box, abs_.uhat_box, sys.input_box,
                       disturbance, raw)


def reconstruction_residual(err: ErrorSystem, sys: SystemModel, abs_: AbstractionSpec) -> float:
    """Max |coefficient| of ``f_e + P(fh + gh uh) - f(x) - g(x)(q + R uh)`` after e -> x - pi(xh).

    The same check on ``g_e - g(x)`` covers the kappa term, which enters both sides linearly.
    """
    back = {}
    for i, ev in enumerate(err.error_vars):
        p = Polynomial.var(sys.state_vars[i]) - float(abs_.Omega[i])
        for j, xv in enumerate(abs_.state_vars):
            if abs_.P[i, j] != 0.0:
                p = p - float(abs_.P[i, j]) * Polynomial.var(xv)
        back[ev] = p
    uh = PolyMatrix.column([Polynomial.var(v) for v in abs_.input_vars])
    lhs = err.f_e.subs(back) + abs_.P @ (abs_.f + abs_.g @ uh)
    rhs = sys.f + sys.g @ (err.q + PolyMatrix.from_numeric(err.r) @ uh)
    d1 = lhs - rhs
    d2 = err.g_e.subs(back) - sys.g
    return max([p.max_abs_coeff() for p in d1.flat() + d2.flat()] + [0.0])


# -- model files ------------------------------------------------------------------------

def _poly(obj, vars: Sequence[str], where: str) -> Polynomial:
    if isinstance(obj, (int, float)):
        return Polynomial.const(float(obj))
    if not isinstance(obj, list):
        raise ModelError(f"{where}: polynomial must be a list of terms or a number")
    try:
        p = Polynomial.from_json(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"{where}: {exc}") from exc
    extra = p.variables() - set(vars)
    if extra:
        raise ModelError(f"{where}: unknown variables {sorted(extra)}")
    return p


def _column(objs, vars, where) -> PolyMatrix:
    if not isinstance(objs, list):
        raise ModelError(f"{where}: expected a list")
    return PolyMatrix.column([_poly(o, vars, f"{where}[{i}]") for i, o in enumerate(objs)])


def _matrix(rows, vars, where) -> PolyMatrix:
    if not isinstance(rows, list) or not rows or not all(isinstance(r, list) for r in rows):
        raise ModelError(f"{where}: expected a list of rows")
    return PolyMatrix([[_poly(o, vars, f"{where}[{i}][{j}]") for j, o in enumerate(r)]
                       for i, r in enumerate(rows)])


@dataclass
class Model:
    """A concrete system, its abstraction and the refinement choices."""

    name: str
    system: SystemModel
    abstraction: AbstractionSpec
    q_mode: str = "auto"
    r_mode: str = "auto"
    q: PolyMatrix | None = None
    r: np.ndarray | None = None
    defaults: dict = field(default_factory=dict)

    def error_system(self) -> ErrorSystem:
        return build_error_system(self.system, self.abstraction, self.q_mode, self.r_mode,
                                  self.q, self.r)


def model_from_dict(d: Mapping, name: str = "") -> Model:
    try:
        xs, us = list(d["state_vars"]), list(d["input_vars"])
        f = _column(d["f"], xs, "f")
        g = _matrix(d["g"], xs, "g")
        ub = Box.from_json(d["input_box"]) if d.get("input_box") else None
        sys = SystemModel(xs, us, f, g, ub, name or d.get("name", ""))
        a = d["abstraction"]
        xh, uh = list(a["state_vars"]), list(a["input_vars"])
        fh = _column(a["f"], xh, "abstraction.f")
        gh = _matrix(a["g"], xh, "abstraction.g")
        P = np.asarray(a["P"], dtype=float).reshape(len(xs), len(xh))
        Om = a.get("Omega")
        xset, uset = a.get("xhat_set") or {}, a.get("uhat_set") or {}
        if isinstance(xset, list):
            xset = {"polys": [xset]}
        if isinstance(uset, list):
            uset = {"polys": [uset]}
        abs_ = AbstractionSpec(
            xh, uh, fh, gh, P, Om,
            Box.from_json(xset["box"]) if "box" in xset else None,
            Box.from_json(uset["box"]) if "box" in uset else None,
            [_poly(p, xh, "xhat_set") for p in xset.get("polys", [])],
            [_poly(p, uh, "uhat_set") for p in uset.get("polys", [])])
        ref = d.get("refinement") or {}
        q = r = None
        q_mode = r_mode = "auto"
        if "q" in ref:
            q, q_mode = _column(ref["q"], xh, "refinement.q"), "explicit"
        if "r" in ref:
            r, r_mode = np.atleast_2d(np.asarray(ref["r"], dtype=float)), "explicit"
        return Model(name or d.get("name", ""), sys, abs_, q_mode, r_mode, q, r,
                     dict(d.get("defaults") or {}))
    except KeyError as exc:
        raise ModelError(f"missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(str(exc)) from exc


def model_to_dict(model: Model) -> dict:
    s, a = model.system, model.abstraction
    d = {
        "name": model.name,
        "state_vars": list(s.state_vars),
        "input_vars": list(s.input_vars),
        "f": [p.to_json() for p in s.f.flat()],
        "g": [[p.to_json() for p in row] for row in s.g.entries()],
        "abstraction": {
            "state_vars": list(a.state_vars),
            "input_vars": list(a.input_vars),
            "f": [p.to_json() for p in a.f.flat()],
            "g": [[p.to_json() for p in row] for row in a.g.entries()],
            "P": a.P.reshape(-1).tolist(),
            "Omega": a.Omega.tolist(),
            "xhat_set": {"polys": [p.to_json() for p in a.xhat_polys]},
            "uhat_set": {"polys": [p.to_json() for p in a.uhat_polys]},
        },
    }
    if s.input_box is not None:
        d["input_box"] = s.input_box.to_json()
    if a.xhat_box is not None:
        d["abstraction"]["xhat_set"]["box"] = a.xhat_box.to_json()
    if a.uhat_box is not None:
        d["abstraction"]["uhat_set"]["box"] = a.uhat_box.to_json()
    ref = {}
    if model.q_mode == "explicit":
        ref["q"] = [p.to_json() for p in model.q.flat()]
    if model.r_mode == "explicit":
        ref["r"] = model.r.tolist()
    if ref:
        d["refinement"] = ref
    if model.defaults:
        d["defaults"] = model.defaults
    return d


def load_model(path: str | Path) -> Model:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelError(f"{path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ModelError(f"{path}: top level must be an object")
    return model_from_dict(data, data.get("name") or path.stem)


def save_model(model: Model, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")
