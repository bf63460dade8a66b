"""Fixed-step simulation of the concrete and abstract systems under the interface law."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errsys import AbstractionSpec, Box, ErrorSystem, SystemModel
from .polyalg import PolyMatrix, Polynomial, compile_polys
from .synth.certificate import Certificate
from .synth.lqr import lqr
from .synth.validate import ray_radius

log = logging.getLogger(__name__)

EXIT_SLACK = 1e-3


class SimulationError(RuntimeError):
    pass


def rk4_step(field: Callable, t: float, x: np.ndarray, dt: float) -> np.ndarray:
    k1 = field(t, x)
    k2 = field(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = field(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = field(t + dt, x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _steps(t_span: tuple[float, float], dt: float) -> int:
    if dt <= 0:
        raise ValueError("dt must be positive")
    t0, t1 = t_span
    if t1 < t0:
        raise ValueError("t_span must be increasing")
    return int(round((t1 - t0) / dt))


def rk4(field: Callable, x0, t_span: tuple[float, float], dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Classical RK4; returns sample times and states (one row per step)."""
    n = _steps(t_span, dt)
    x = np.array(x0, dtype=float)
    ts = t_span[0] + dt * np.arange(n + 1)
    out = np.empty((n + 1,) + x.shape)
    out[0] = x
    for k in range(n):
        x = rk4_step(field, ts[k], x, dt)
        if not np.all(np.isfinite(x)):
            raise SimulationError(f"state blew up at t = {ts[k + 1]:.6g}")
        out[k + 1] = x
    return ts, out


# -- abstract input sources --------------------------------------------------

@dataclass
class Signal:
    """Zero-order-hold signal: ``values[i]`` holds on ``[times[i], times[i+1])``."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if len(self.times) == 0 or len(self.times) != len(self.values):
            raise ValueError("signal needs one value row per sample time")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("signal sample times must be strictly increasing")

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def __call__(self, t: float, xhat=None) -> np.ndarray:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.values[max(i, 0)]

    @classmethod
    def constant(cls, value) -> "Signal":
        return cls([0.0], [np.atleast_1d(np.asarray(value, dtype=float))])

    @classmethod
    def step(cls, t_step: float, before, after) -> "Signal":
        return cls([0.0, t_step], [np.atleast_1d(before), np.atleast_1d(after)])

    @classmethod
    def ramp(cls, t0: float, t1: float, v0, v1, samples: int = 100) -> "Signal":
        v0, v1 = np.atleast_1d(v0).astype(float), np.atleast_1d(v1).astype(float)
        ts = np.linspace(t0, t1, samples + 1)
        vals = v0 + np.outer((ts - t0) / (t1 - t0), v1 - v0)
        if t0 > 0:
            ts, vals = np.concatenate([[0.0], ts]), np.vstack([v0, vals])
        return cls(ts, vals)

    @classmethod
    def random_box(cls, box: Box, t_end: float, hold: float, seed: int,
                   polys: Sequence[Polynomial] = (), names: Sequence[str] = ()) -> "Signal":
        """Piecewise-constant values drawn uniformly from ``box`` (rejecting ``polys > 0``)."""
        rng = np.random.default_rng(seed)
        ts = np.arange(0.0, t_end, hold)
        vals = np.empty((len(ts), len(box.lower)))
        for i in range(len(ts)):
            for _ in range(10_000):
                v = rng.uniform(box.lower, box.upper)
                pt = dict(zip(names, v))
                if all(p.evaluate(pt) <= 0 for p in polys if p.variables() <= set(names)):
                    break
            else:
                raise ValueError("could not draw an admissible input value")
            vals[i] = v
        return cls(ts, vals)

    @classmethod
    def load_csv(cls, path: str | Path) -> "Signal":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1:])


@dataclass
class TrackingController:
    """``uh = u_eq(target) - K (xh - target)`` clipped to a box.

    ``targets`` is a zero-order-hold signal of abstract equilibria; the
    feedforward ``u_eq`` is precomputed for each of its rows.
    """

    targets: Signal
    u_eq: np.ndarray
    K: np.ndarray
    box: Box | None = None

    def __call__(self, t: float, xhat: np.ndarray) -> np.ndarray:
        i = max(int(np.searchsorted(self.targets.times, t, side="right")) - 1, 0)
        u = self.u_eq[i] - self.K @ (np.asarray(xhat) - self.targets.values[i])
        if self.box is not None:
            u = np.clip(u, self.box.lower, self.box.upper)
        return u


def _equilibrium_input(abs_: AbstractionSpec, target: np.ndarray) -> np.ndarray:
    pt = dict(zip(abs_.state_vars, target))
    G = abs_.g.evaluate(pt)
    drift = abs_.f.evaluate(pt)[:, 0]
    u = -np.linalg.lstsq(G, drift, rcond=None)[0]
    if np.linalg.norm(drift + G @ u) > 1e-8 * (1 + np.linalg.norm(drift)):
        raise ValueError(f"target {list(target)} is not an equilibrium of the abstract system")
    return u


def tracking_controller(abs_: AbstractionSpec, target, box: Box | None = None,
                        Q=None, R=None) -> TrackingController:
    """LQR tracking law for the abstract system.

    ``target`` is a single equilibrium or a :class:`Signal` of them; the gain
    comes from the linearization at the first one.
    """
    targets = target if isinstance(target, Signal) else Signal.constant(target)
    names = list(abs_.state_vars)
    u_eq = np.array([_equilibrium_input(abs_, row) for row in targets.values])
    pt = dict(zip(names, targets.values[0]))
    A = np.array([[abs_.f[i, 0].diff(v).evaluate(pt) if v in abs_.f[i, 0].vars else 0.0
                   for v in names] for i in range(len(names))])
    K, _ = lqr(A, abs_.g.evaluate(pt), Q, R)
    return TrackingController(targets, u_eq, K, box)


# -- closed loop ------------------------------------------------------------

@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    xhat: np.ndarray
    e: np.ndarray
    V: np.ndarray
    u: np.ndarray
    uhat: np.ndarray
    gamma: float | None = None
    exit_time: float | None = None

    def header(self) -> list[str]:
        n, nh, m = self.x.shape[1], self.xhat.shape[1], self.u.shape[1]
        return (["t"] + [f"x{i + 1}" for i in range(n)] + [f"xhat{i + 1}" for i in range(nh)]
                + [f"e{i + 1}" for i in range(n)] + ["V"] + [f"u{i + 1}" for i in range(m)])

    def rows(self) -> np.ndarray:
        return np.column_stack([self.t, self.x, self.xhat, self.e, self.V, self.u])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for row in self.rows():
                w.writerow([f"{v:.17g}" for v in row])


@dataclass
class InvarianceReport:
    max_ratio: float
    exit_time: float | None
    delta: float

    @property
    def passed(self) -> bool:
        return self.exit_time is None

    def __str__(self) -> str:
        s = f"max V/gamma = {self.max_ratio:.6g}"
        if self.exit_time is not None:
            s += f"; left the sublevel set at t = {self.exit_time:.6g}"
        return s


def check_invariance(traj: Trajectory, cert: Certificate | float,
                     delta: float = EXIT_SLACK) -> InvarianceReport:
    gamma = cert.gamma if isinstance(cert, Certificate) else float(cert)
    ratio = traj.V / gamma
    over = np.nonzero(ratio > 1.0 + delta)[0]
    return InvarianceReport(float(ratio.max()) if len(ratio) else 0.0,
                            float(traj.t[over[0]]) if len(over) else None, delta)


def boundary_points(cert: Certificate, n: int, seed: int) -> np.ndarray:
    """Error states on the level set ``V = gamma`` along uniformly random rays."""
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n, len(cert.error_vars)))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = ray_radius(cert.V, list(cert.error_vars), d, np.full(n, cert.gamma))
    return d * r[:, None]


class _Plant:
    """Compiled right-hand sides shared by all runs of a batch."""

    def __init__(self, sys: SystemModel, abs_: AbstractionSpec, err: ErrorSystem,
                 kappa: PolyMatrix | None, V: Polynomial | None):
        self.n, self.nh = len(sys.state_vars), len(abs_.state_vars)
        self.m, self.mh = len(sys.input_vars), len(abs_.input_vars)
        self.P, self.Om = np.asarray(abs_.P, float), np.asarray(abs_.Omega, float)
        self.f = compile_polys(sys.f.flat(), sys.state_vars)
        self.g = compile_polys(sys.g.flat(), sys.state_vars)
        self.fh = compile_polys(abs_.f.flat(), abs_.state_vars)
        self.gh = compile_polys(abs_.g.flat(), abs_.state_vars)
        self.q = compile_polys(err.q.flat(), err.xhat_vars)
        self.r = np.asarray(err.r, float)
        kvars = list(err.error_vars) + list(err.xhat_vars) + list(err.uhat_vars)
        kap = kappa.flat() if kappa is not None else [Polynomial.zero()] * self.m
        self.kappa = compile_polys(kap, kvars)
        self.V = compile_polys([V], err.error_vars) if V is not None else None
        self.uhat_box, self.uhat_set = err.uhat_box, list(err.uhat_set)
        self.uhat_names = list(err.uhat_vars)

    def error(self, x, xh):
        return x - xh @ self.P.T - self.Om

    def control(self, x, xh, uh):
        e = self.error(x, xh)
        return (self.kappa(np.concatenate([e, xh, uh], axis=-1)) + self.q(xh)
                + uh @ self.r.T)

    def field(self, z, uh):
        x, xh = z[:, :self.n], z[:, self.n:]
        u = self.control(x, xh, uh)
        G = self.g(x).reshape(len(z), self.n, self.m)
        Gh = self.gh(xh).reshape(len(z), self.nh, self.mh)
        dx = self.f(x) + np.einsum("bij,bj->bi", G, u)
        dxh = self.fh(xh) + np.einsum("bij,bj->bi", Gh, uh)
        return np.concatenate([dx, dxh], axis=1)

    def admissible(self, uh: np.ndarray) -> bool:
        if self.uhat_box is not None and not self.uhat_box.contains_point(uh):
            return False
        pt = dict(zip(self.uhat_names, uh))
        return all(p.evaluate(pt) <= 1e-12 for p in self.uhat_set
                   if p.variables() <= set(self.uhat_names))


def closed_loop_batch(sys: SystemModel, abs_: AbstractionSpec, err: ErrorSystem,
                      sources: Sequence[Callable], xhat0, e0, t_span=(0.0, 10.0),
                      dt: float = 1e-3, cert: Certificate | None = None,
                      kappa: PolyMatrix | None = None,
                      delta: float = EXIT_SLACK) -> list[Trajectory]:
    """Integrate several runs at once; ``xhat0``/``e0`` have one row per source."""
    if kappa is None and cert is not None:
        kappa = cert.kappa
    plant = _Plant(sys, abs_, err, kappa, cert.V if cert is not None else None)
    B = len(sources)
    xh0 = np.broadcast_to(np.asarray(xhat0, float), (B, plant.nh))
    e0 = np.broadcast_to(np.asarray(e0 if e0 is not None else np.zeros(plant.n), float),
                         (B, plant.n))
    z = np.concatenate([xh0 @ plant.P.T + plant.Om + e0, xh0], axis=1)
    N = _steps(t_span, dt)
    ts = t_span[0] + dt * np.arange(N + 1)
    Z = np.empty((N + 1, B, plant.n + plant.nh))
    UH = np.empty((N + 1, B, plant.mh))
    warned = [False] * B
    for k in range(N + 1):
        Z[k] = z
        uh = np.array([src(ts[k], z[b, plant.n:]) for b, src in enumerate(sources)],
                      dtype=float).reshape(B, plant.mh)
        UH[k] = uh
        for b in range(B):
            if not warned[b] and not plant.admissible(uh[b]):
                log.warning("run %d: abstract input leaves the admissible set at t = %.6g",
                            b, ts[k])
                warned[b] = True
        if k == N:
            break
        z = rk4_step(lambda t, s: plant.field(s, uh), ts[k], z, dt)
        if not np.all(np.isfinite(z)):
            raise SimulationError(f"state blew up at t = {ts[k + 1]:.6g}")
    out = []
    for b in range(B):
        x, xh, uh = Z[:, b, :plant.n], Z[:, b, plant.n:], UH[:, b]
        e = plant.error(x, xh)
        u = plant.control(x, xh, uh)
        V = plant.V(e)[:, 0] if plant.V is not None else np.full(N + 1, np.nan)
        traj = Trajectory(ts.copy(), x, xh, e, V, u, uh,
                          gamma=cert.gamma if cert is not None else None)
        if cert is not None:
            traj.exit_time = check_invariance(traj, cert, delta).exit_time
        out.append(traj)
    return out


def closed_loop(sys: SystemModel, abs_: AbstractionSpec, err: ErrorSystem, source: Callable,
                xhat0, e0=None, t_span=(0.0, 10.0), dt: float = 1e-3,
                cert: Certificate | None = None, kappa: PolyMatrix | None = None,
                delta: float = EXIT_SLACK) -> Trajectory:
    """One closed-loop run with ``u = kappa(e, xh, uh) + q(xh) + R uh``."""
    return closed_loop_batch(sys, abs_, err, [source], np.atleast_2d(xhat0),
                             None if e0 is None else np.atleast_2d(e0), t_span, dt,
                             cert, kappa, delta)[0]
