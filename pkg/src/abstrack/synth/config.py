"""Synthesis configuration."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Any, Mapping

from ..sdpsolve import SolverOptions
from ..sosbuild import EPS_1, EPS_2, EPS_3


class ConfigError(ValueError):
    pass


@dataclass
class SynthesisConfig:
    v_degree: int = 2
    kappa_degree: int = 2
    mult_degree: int | None = None       # None: smallest even degree matching the target
    s3_degree: int = 0
    s10_degree: int = 0
    bracket: tuple[float, float] = (1e-4, 1e4)
    gamma_rtol: float = 1e-2
    max_iters: int = 20
    min_iters: int = 1
    stop_rtol: float = 1e-2
    eps1: float = EPS_1
    eps2: float = EPS_2
    eps3: float = EPS_3
    boundary_only: bool = False
    input_bounds: bool = True
    freeze_kappa: bool = False
    kappa_vars: str = "full"             # "full": (e, xh, uh); "error": e only
    kappa_zero_on_manifold: bool = True  # drop kappa monomials purely in xh
    growth: float = 1.5
    initial_fraction: float = 0.2
    max_stages: int = 30
    seed: int = 0
    solver_max_iter: int = 100

    def __post_init__(self):
        self.bracket = (float(self.bracket[0]), float(self.bracket[1]))
        if self.v_degree < 2 or self.v_degree % 2:
            raise ConfigError("V degree must be even and at least 2")
        if self.kappa_degree < 0:
            raise ConfigError("kappa degree must be non-negative")
        for name in ("s3_degree", "s10_degree"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.s10_degree % 2:
            raise ConfigError("s10 degree must be even")
        if self.s3_degree % 2 and not self.boundary_only:
            raise ConfigError("s3 must have even degree unless boundary_only is set")
        if self.mult_degree is not None and (self.mult_degree < 0 or self.mult_degree % 2):
            raise ConfigError("multiplier degree must be even")
        if not self.bracket[0] > 0 or not self.bracket[1] > 0:
            raise ConfigError("gamma bracket must be positive")
        if self.kappa_vars not in ("full", "error"):
            raise ConfigError("kappa_vars must be 'full' or 'error'")
        if self.growth <= 1.0:
            raise ConfigError("growth factor must exceed 1")

    @property
    def solver(self) -> SolverOptions:
        return SolverOptions(max_iter=self.solver_max_iter)

    def to_json(self) -> dict:
        d = asdict(self)
        d["bracket"] = list(self.bracket)
        return d

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "SynthesisConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**dict(d))

    def replace(self, **kw) -> "SynthesisConfig":
        d = self.to_json()
        d.update(kw)
        return SynthesisConfig.from_json(d)
