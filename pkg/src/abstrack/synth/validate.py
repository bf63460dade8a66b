"""Sampling-based check of a certificate against the error dynamics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errsys import Box, ErrorSystem, ModelError
from ..polyalg import Polynomial
from .certificate import Certificate

VDOT_TOL = 1e-6
INPUT_TOL = 1e-6


@dataclass
class ValidationReport:
    passed: bool
    n_band: int
    n_interior: int
    worst_vdot: float
    worst_input: float | None
    violations: int
    witness: dict[str, float] | None = None
    witness_kind: str = ""
    notes: list[str] = field(default_factory=list)

    def lines(self) -> list[str]:
        out = [f"result: {'PASS' if self.passed else 'FAIL'}",
               f"band samples: {self.n_band}",
               f"worst Vdot on band: {self.worst_vdot:.6e} (tolerance {VDOT_TOL:g})"]
        if self.worst_input is not None:
            out += [f"interior samples: {self.n_interior}",
                    f"worst input-bound excess: {self.worst_input:.6e} (tolerance {INPUT_TOL:g})"]
        out.append(f"violations: {self.violations}")
        if self.witness is not None:
            pt = ", ".join(f"{k}={v:.6g}" for k, v in self.witness.items())
            out.append(f"witness ({self.witness_kind}): {pt}")
        out += self.notes
        return out

    def __str__(self) -> str:
        return "\n".join(self.lines())


def _homogeneous_degree(V: Polynomial) -> int | None:
    degs = {sum(k for _, k in m) for m in V.terms}
    return degs.pop() if len(degs) == 1 else None


def ray_radius(V: Polynomial, names: list[str], dirs: np.ndarray, level: np.ndarray) -> np.ndarray:
    """Radius ``r`` with ``V(r d) = level`` along each unit direction ``d``."""
    def at(r):
        return V.evaluate_many({v: r * dirs[:, i] for i, v in enumerate(names)})

    k = _homogeneous_degree(V)
    if k:
        vd = at(np.ones(len(dirs)))
        if np.any(vd <= 0):
            raise ValueError("V is not positive along every direction")
        return (level / vd) ** (1.0 / k)
    hi = np.ones(len(dirs))
    for _ in range(200):
        short = at(hi) < level
        if not short.any():
            break
        hi[short] *= 2.0
    else:
        raise ValueError("sublevel set of V is unbounded")
    lo = np.zeros(len(dirs))
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        below = at(mid) < level
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def _sample_set(rng, names, box: Box | None, polys, n, what) -> np.ndarray:
    if not names:
        return np.zeros((n, 0))
    if box is None:
        if not any(p.variables() & set(names) for p in polys):
            return np.zeros((n, len(names)))  # unconstrained and unused by the dynamics
        raise ModelError(f"{what} set needs a bounding box for sampling")
    out, got = [], 0
    for _ in range(1000):
        cand = rng.uniform(box.lower, box.upper, size=(2 * n, len(names)))
        ok = np.ones(len(cand), dtype=bool)
        pts = {v: cand[:, i] for i, v in enumerate(names)}
        for p in polys:
            if p.variables() <= set(names):
                ok &= p.evaluate_many(pts) <= 0.0
        out.append(cand[ok])
        got += int(ok.sum())
        if got >= n:
            return np.concatenate(out)[:n]
    raise ModelError(f"rejection sampling of the {what} set accepted too few points")


def _joint_ok(polys, pts, names) -> np.ndarray:
    n = len(next(iter(pts.values())))
    ok = np.ones(n, dtype=bool)
    for p in polys:
        if not p.variables() <= set(names):
            ok &= p.evaluate_many(pts) <= 0.0
    return ok


def _points(rng, cert: Certificate, err: ErrorSystem, n: int, band: tuple[float, float]):
    """Points with ``e`` uniform (by volume) in a V-shell and abstract variables in their sets."""
    e = cert.error_vars
    ne = len(e)
    dirs = rng.standard_normal((n, ne))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r_in = ray_radius(cert.V, e, dirs, np.full(n, band[0])) if band[0] > 0 else np.zeros(n)
    r_out = ray_radius(cert.V, e, dirs, np.full(n, band[1]))
    u = rng.uniform(size=n)
    r = (r_in ** ne + u * (r_out ** ne - r_in ** ne)) ** (1.0 / ne)
    E = dirs * r[:, None]
    polys = list(err.xhat_set) + list(err.uhat_set)
    X = _sample_set(rng, err.xhat_vars, err.xhat_box, polys, n, "abstract state")
    U = _sample_set(rng, err.uhat_vars, err.uhat_box, polys, n, "abstract input")
    pts = {v: E[:, i] for i, v in enumerate(e)}
    pts.update({v: X[:, i] for i, v in enumerate(err.xhat_vars)})
    pts.update({v: U[:, i] for i, v in enumerate(err.uhat_vars)})
    # Sets coupling abstract state and input (unit-peak balls) are enforced jointly.
    keep = _joint_ok(polys, pts, err.xhat_vars) & _joint_ok(polys, pts, err.uhat_vars)
    return {k: v[keep] for k, v in pts.items()}


def _witness(pts, idx) -> dict[str, float]:
    return {k: float(v[idx]) for k, v in pts.items()}


def validate_certificate(cert: Certificate, err: ErrorSystem, n_samples: int = 100_000,
                         seed: int = 0, delta: float = 0.1,
                         check_inputs: bool | None = None) -> ValidationReport:
    """Sample the band ``gamma <= V <= (1+delta) gamma`` and the sublevel set.

    On the band the closed-loop ``dV/dt`` must be at most ``VDOT_TOL``; inside
    the sublevel set every feedback channel must respect the input box.
    """
    rng = np.random.default_rng(seed)
    g = cert.gamma
    kappa = cert.kappa
    drift = err.closed_loop_drift(kappa)
    vdot = Polynomial.zero()
    for i, ev in enumerate(cert.error_vars):
        dV = cert.V.diff(ev)
        if not dV.is_zero():
            vdot = vdot + dV * drift[i, 0]

    band = _points(rng, cert, err, n_samples, (g, (1.0 + delta) * g))
    vals = vdot.evaluate_many(band) if vdot.variables() else np.full(
        len(next(iter(band.values()))), vdot.constant_term())
    n_band = len(vals)
    bad = vals > VDOT_TOL
    violations = int(bad.sum())
    worst = float(vals.max()) if n_band else -np.inf
    witness, kind = None, ""
    if violations:
        witness, kind = _witness(band, int(np.argmax(vals))), "Vdot"

    if check_inputs is None:
        check_inputs = bool(cert.config.get("input_bounds", True)) and err.input_box is not None
    worst_in, n_in = None, 0
    if check_inputs:
        inner = _points(rng, cert, err, n_samples, (0.0, g))
        n_in = len(next(iter(inner.values())))
        excess = np.full(n_in, -np.inf)
        for j, (lo, hi) in enumerate(zip(err.input_box.lower, err.input_box.upper)):
            k = kappa[j, 0]
            kv = k.evaluate_many(inner) if k.variables() else np.full(n_in, k.constant_term())
            excess = np.maximum(excess, np.maximum(kv - hi, lo - kv))
        worst_in = float(excess.max()) if n_in else -np.inf
        bad_in = excess > INPUT_TOL
        if bad_in.any():
            violations += int(bad_in.sum())
            if witness is None:
                witness, kind = _witness(inner, int(np.argmax(excess))), "input bound"
    return ValidationReport(violations == 0, n_band, n_in, worst, worst_in, violations,
                            witness, kind)
