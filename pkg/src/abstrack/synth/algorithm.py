"""Gamma-step / V-step alternation, V0 initialization and LQR seeding."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errsys import Box, ErrorSystem
from ..polyalg import PolyMatrix, Polynomial
from ..sosbuild import PolyExpr, SosProgram, SosResult, check_sos
from .certificate import Certificate, log_volume
from .config import SynthesisConfig
from .lqr import gram_of_quadratic, lqr, lyapunov_seed, quadratic_form
from .program import Context, DecisionMults, FixedMults, assemble, kappa_matrix

log = logging.getLogger(__name__)

SCAN_STEP = math.sqrt(10.0)

TIGHTEN_HINT = ("enlarge the gamma bracket or tighten the abstract state/input sets "
                "(shrink X-hat and U-hat) and retry")


class SynthesisInfeasible(RuntimeError):
    pass


@dataclass
class GammaStep:
    gamma: float
    kappa: list[Polynomial]
    mults: dict[str, Polynomial]
    result: SosResult
    trials: list[tuple[float, bool]] = field(default_factory=list)


def lqr_seed(err: ErrorSystem, xhat0: np.ndarray | None = None) -> tuple[Polynomial, np.ndarray]:
    """Quadratic Lyapunov function of the LQR-closed linearized error dynamics."""
    A, B = err.linearization(xhat0)
    K, _ = lqr(A, B)
    S = lyapunov_seed(A, B, K)
    return quadratic_form(S, err.error_vars), K


def _gamma_program(ctx: Context, V0: Polynomial, gamma: float,
                   kappa_fixed: Sequence[Polynomial] | None):
    prog = SosProgram("gamma-step")
    if kappa_fixed is None:
        basis = ctx.kappa_basis()
        kappa = [prog.declare_poly(f"kappa{j + 1}", ctx.kappa_vars, ctx.cfg.kappa_degree,
                                   basis=basis).expr for j in range(ctx.err.m)]
    else:
        kappa = list(kappa_fixed)
    mults = DecisionMults(prog, ctx.xi)
    asm = assemble(ctx, V0, gamma, kappa, mults, include_v_terms=False)
    for label, expr in asm.constraints:
        prog.add_sos(expr, label)
    return prog, mults


def _try_gamma(ctx, V0, gamma, kappa_fixed) -> tuple[bool, GammaStep | None]:
    prog, mults = _gamma_program(ctx, V0, gamma, kappa_fixed)
    res = prog.solve("feasibility", ctx.cfg.solver)
    log.debug("gamma %.6g -> %s (slack %s)", gamma, res.status, res.slack)
    # Positive phase-I slack is required: a certificate that only verifies within
    # the coefficient tolerance can hide a real violation when variables are large.
    if not res.feasible or (res.slack is not None and res.slack <= 0.0):
        return False, None
    names = ctx.err.error_vars + ctx.err.xhat_vars + ctx.err.uhat_vars
    if kappa_fixed is None:
        kappa = [res.values[f"kappa{j + 1}"].with_vars(names) for j in range(ctx.err.m)]
    else:
        kappa = [Polynomial._coerce(k).with_vars(names) for k in kappa_fixed]
    m = {n: res.values[n] for n in mults.declared}
    return True, GammaStep(gamma, kappa, m, res)


def _check_bracket(cfg: SynthesisConfig) -> None:
    lo, hi = cfg.bracket
    if not lo < hi:
        raise SynthesisInfeasible(f"degenerate gamma bracket [{lo:g}, {hi:g}]; {TIGHTEN_HINT}")


def gamma_step(V0: Polynomial, err: ErrorSystem, cfg: SynthesisConfig,
               kappa_fixed: Sequence[Polynomial] | None = None,
               bracket: tuple[float, float] | None = None,
               xbox: Box | None = None, ubox: Box | None = None) -> GammaStep:
    """Smallest feasible gamma (log-space bisection) with V fixed to ``V0``."""
    ctx = Context(err, cfg, xbox, ubox)
    if bracket is None:
        _check_bracket(cfg)
    lo, hi = bracket or cfg.bracket
    if lo > hi:
        raise SynthesisInfeasible(f"empty gamma bracket [{lo:g}, {hi:g}]; {TIGHTEN_HINT}")
    trials = []
    ok, best = _try_gamma(ctx, V0, hi, kappa_fixed)
    trials.append((hi, ok))
    # Input bounds (and badly scaled programs) can make large gamma infeasible
    # too; walk the top down by half-decades before giving up.
    top = hi
    while not ok and top / SCAN_STEP > lo:
        top /= SCAN_STEP
        ok, best = _try_gamma(ctx, V0, top, kappa_fixed)
        trials.append((top, ok))
    if not ok:
        raise SynthesisInfeasible(f"infeasible at gamma = {top:g} (bracket top); {TIGHTEN_HINT}")
    hi = top
    if hi <= lo:
        best.trials = trials
        return best
    ok, at_lo = _try_gamma(ctx, V0, lo, kappa_fixed)
    trials.append((lo, ok))
    if ok:
        at_lo.trials = trials
        return at_lo
    while hi / lo > 1.0 + cfg.gamma_rtol:
        mid = math.sqrt(lo * hi)
        ok, step = _try_gamma(ctx, V0, mid, kappa_fixed)
        trials.append((mid, ok))
        if ok:
            hi, best = mid, step
        else:
            lo = mid
    best.trials = trials
    return best


def _v_program(ctx: Context, V0: Polynomial, gs: GammaStep, fixed_names: Sequence[str]):
    cfg = ctx.cfg
    prog = SosProgram("V-step")
    V = prog.declare_poly("V", ctx.e, cfg.v_degree, min_degree=2)
    s10 = prog.declare_poly("s10", ctx.e, cfg.s10_degree)
    prog.add_sos(s10.expr - cfg.eps3, "s10")
    prog.add_sos(s10.expr * (V0 - gs.gamma) * -1.0 + (V.expr - gs.gamma), "shape")
    fixed = {n: gs.mults[n] for n in fixed_names if n in gs.mults}
    mults = DecisionMults(prog, ctx.xi, fixed)
    asm = assemble(ctx, V.expr, gs.gamma, gs.kappa, mults, include_v_terms=True)
    for label, expr in asm.constraints:
        prog.add_sos(expr, label)
    return prog, mults


def _fixed_in_v_step(names: Sequence[str]) -> list[str]:
    return [n for n in names if n == "s3" or n.startswith("s4_") or n.startswith("s7_")]


def v_step(V0: Polynomial, gs: GammaStep, err: ErrorSystem, cfg: SynthesisConfig,
           xbox: Box | None = None, ubox: Box | None = None) -> tuple[Polynomial, SosResult] | None:
    """Interior feasible V with kappa, s3, s4, s7 frozen; None when infeasible."""
    ctx = Context(err, cfg, xbox, ubox)
    prog, _ = _v_program(ctx, V0, gs, _fixed_in_v_step(gs.mults))
    res = prog.solve("feasibility", cfg.solver)
    log.debug("V-step -> %s (slack %s)", res.status, res.slack)
    if not res.feasible:
        return None
    return res.values["V"].with_vars(err.error_vars), res


def constraint_polys(err: ErrorSystem, cfg: SynthesisConfig, V: Polynomial, gamma: float,
                     kappa: Sequence[Polynomial], mults: dict[str, Polynomial],
                     xbox: Box | None = None, ubox: Box | None = None) -> list[tuple[str, Polynomial]]:
    """Numeric constraint polynomials of a candidate certificate."""
    ctx = Context(err, cfg, xbox, ubox)
    asm = assemble(ctx, V, gamma, kappa, FixedMults(mults), include_v_terms=True)
    return [(label, expr.value([])) for label, expr in asm.constraints]


def reverify(err: ErrorSystem, cfg: SynthesisConfig, V: Polynomial, gamma: float,
             kappa: Sequence[Polynomial], mults: dict[str, Polynomial]) -> dict[str, float]:
    """Fresh Gram solve of every constraint; returns relative residual per label.

    A label that fails the fresh check maps to ``inf``.  Multipliers must be SOS
    too; those are checked under their own names.
    """
    out = {}
    for label, p in constraint_polys(err, cfg, V, gamma, kappa, mults):
        res = check_sos(p, label)
        out[label] = res.worst_residual() if res.feasible else math.inf
    for name, s in mults.items():
        if name == "s3" and cfg.boundary_only:
            continue
        if s.is_zero():
            out[name] = 0.0
            continue
        res = check_sos(s, name)
        out[name] = res.worst_residual() if res.feasible else math.inf
    return out


def iterate(err: ErrorSystem, cfg: SynthesisConfig, V0: Polynomial,
            kappa_fixed: Sequence[Polynomial] | None = None, model: str = "",
            first_step: GammaStep | None = None) -> Certificate:
    """Alternate gamma-steps and V-steps; gamma history is non-increasing.

    ``first_step`` is a gamma-step already taken with ``V0`` over the full
    sets and the configured bracket; it stands in for the first iteration.
    """
    _check_bracket(cfg)
    if cfg.freeze_kappa and kappa_fixed is None:
        kappa_fixed = [Polynomial.zero()] * err.m
    V = V0.with_vars(err.error_vars)
    history: list[float] = []
    volumes: list[float | None] = []
    accepted: tuple[Polynomial, GammaStep] | None = None
    stop = "max-iterations"
    for k in range(cfg.max_iters):
        if accepted is None:
            bracket = cfg.bracket
        else:
            bracket = (max(cfg.bracket[0], 0.25 * history[-1]), history[-1])
        try:
            if k == 0 and first_step is not None:
                gs = first_step
            else:
                gs = gamma_step(V, err, cfg, kappa_fixed, bracket)
        except SynthesisInfeasible:
            if accepted is None:
                raise
            stop = "gamma-step-infeasible"
            break
        if accepted is not None and gs.gamma <= bracket[0] and bracket[0] > cfg.bracket[0]:
            # Feasible at the warm lower end: redo over the full lower range.
            gs = gamma_step(V, err, cfg, kappa_fixed, (cfg.bracket[0], bracket[0]))
        prev = history[-1] if history else None
        accepted = (V, gs)
        history.append(gs.gamma)
        volumes.append(log_volume(V, gs.gamma, err.error_vars))
        log.info("iteration %d: gamma = %.6g", k + 1, gs.gamma)
        if (prev is not None and prev - gs.gamma < cfg.stop_rtol * prev
                and len(history) >= cfg.min_iters):
            stop = "converged"
            break
        if k + 1 == cfg.max_iters:
            break
        vs = v_step(V, gs, err, cfg)
        if vs is None:
            stop = "v-step-infeasible"
            break
        V = vs[0]
    V, gs = accepted
    residuals = reverify(err, cfg, V, gs.gamma, gs.kappa, gs.mults)
    names = err.error_vars + err.xhat_vars + err.uhat_vars
    return Certificate(V=V, kappa=kappa_matrix(gs.kappa, names), gamma=gs.gamma,
                       multipliers=dict(sorted(gs.mults.items())), residuals=residuals,
                       history=history, log_volumes=volumes, config=cfg.to_json(),
                       error_vars=list(err.error_vars), xhat_vars=list(err.xhat_vars),
                       uhat_vars=list(err.uhat_vars), model=model, stop_reason=stop)


@dataclass
class ExpansionSchedule:
    xhat_box: Box | None
    uhat_box: Box | None
    growth: float = 1.5
    max_steps: int = 30

    @classmethod
    def default(cls, err: ErrorSystem, cfg: SynthesisConfig) -> "ExpansionSchedule":
        f = cfg.initial_fraction
        xb = err.xhat_box.scaled(f) if err.xhat_box is not None else None
        ub = err.uhat_box.scaled(f) if err.uhat_box is not None else None
        return cls(xb, ub, cfg.growth, cfg.max_stages)


def _covers(full: Box | None, part: Box | None) -> bool:
    return full is None or part is None or part.contains(full)


def _grow(box: Box | None, full: Box | None, factor: float) -> Box | None:
    if box is None or full is None:
        return box
    return box.scaled(factor, clip=full)


def _unit_scale(V: Polynomial, names) -> Polynomial:
    """Quadratic form rescaled to unit smallest eigenvalue: {V <= gamma} lies in |e|^2 <= gamma."""
    low = float(np.linalg.eigvalsh(gram_of_quadratic(V, names))[0])
    return V / low if low > 0 else V


@dataclass
class InitResult:
    V: Polynomial
    stages: int
    boxes: list[tuple[Box | None, Box | None]]
    step: GammaStep | None = None   # gamma-step of the last stage, taken with V


def init_v0(err: ErrorSystem, cfg: SynthesisConfig, schedule: ExpansionSchedule | None = None,
            V_seed: Polynomial | None = None,
            kappa_fixed: Sequence[Polynomial] | None = None) -> InitResult:
    """Grow the abstract sets from small boxes, alternating kappa and V solves."""
    schedule = schedule or ExpansionSchedule.default(err, cfg)
    if cfg.freeze_kappa and kappa_fixed is None:
        kappa_fixed = [Polynomial.zero()] * err.m
    V = V_seed if V_seed is not None else _unit_scale(lqr_seed(err)[0], err.error_vars)
    xb, ub = schedule.xhat_box, schedule.uhat_box
    growth = schedule.growth
    last_ok: tuple[Box | None, Box | None] | None = None
    boxes = []
    for stage in range(1, schedule.max_steps + 1):
        boxes.append((xb, ub))
        try:
            gs = gamma_step(V, err, cfg, kappa_fixed, xbox=xb, ubox=ub)
        except SynthesisInfeasible:
            if last_ok is None or growth <= 1.0 + 1e-3:
                raise SynthesisInfeasible(
                    f"V0 initialization stalled at stage {stage}; largest feasible sets: "
                    f"{_box_str(last_ok)}; {TIGHTEN_HINT}") from None
            growth = math.sqrt(growth) if growth > 1 else growth
            xb = _grow(last_ok[0], err.xhat_box, growth)
            ub = _grow(last_ok[1], err.uhat_box, growth)
            log.info("stage %d infeasible; retrying with growth %.4g", stage, growth)
            continue
        last_ok = (xb, ub)
        if _covers(err.xhat_box, xb) and _covers(err.uhat_box, ub):
            return InitResult(V, stage, boxes, gs)
        vs = v_step(V, gs, err, cfg, xbox=xb, ubox=ub)
        if vs is not None:
            V = vs[0]
        xb = _grow(xb, err.xhat_box, growth)
        ub = _grow(ub, err.uhat_box, growth)
    raise SynthesisInfeasible(f"V0 initialization did not reach the full sets in "
                              f"{schedule.max_steps} stages; {TIGHTEN_HINT}")


def _box_str(boxes) -> str:
    if boxes is None:
        return "none"
    parts = []
    for tag, b in zip(("xhat", "uhat"), boxes):
        if b is not None:
            parts.append(f"{tag} in [{', '.join(f'{x:.4g}' for x in b.lower)}] .. "
                         f"[{', '.join(f'{x:.4g}' for x in b.upper)}]")
    return "; ".join(parts) or "unbounded"


def synthesize(err: ErrorSystem, cfg: SynthesisConfig, V0: Polynomial | None = None,
               model: str = "") -> Certificate:
    """Initialization (unless ``V0`` is given) followed by the iteration."""
    first = None
    if V0 is None:
        init = init_v0(err, cfg)
        V0, first = init.V, init.step
    return iterate(err, cfg, V0, model=model, first_step=first)
