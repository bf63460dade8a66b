"""Certificate container and its JSON form."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..polyalg import PolyMatrix, Polynomial
from .lqr import gram_of_quadratic


def log_volume(V: Polynomial, gamma: float, names) -> float | None:
    """``(n/2) ln gamma - (1/2) ln det Q`` for quadratic V, up to the unit-ball constant."""
    if V.degree() != 2 or any(sum(k for _, k in m) != 2 for m in V.terms):
        return None
    Q = gram_of_quadratic(V, names)
    sign, logdet = np.linalg.slogdet(Q)
    if sign <= 0:
        return None
    return float(0.5 * len(names) * math.log(gamma) - 0.5 * logdet)


@dataclass
class Certificate:
    V: Polynomial
    kappa: PolyMatrix
    gamma: float
    multipliers: dict[str, Polynomial]
    residuals: dict[str, float]
    history: list[float]
    config: dict
    error_vars: list[str]
    xhat_vars: list[str]
    uhat_vars: list[str]
    model: str = ""
    stop_reason: str = ""
    log_volumes: list[float | None] = field(default_factory=list)

    @property
    def verified(self) -> bool:
        return all(r <= 1e-7 for r in self.residuals.values())

    def variables(self) -> list[str]:
        return self.error_vars + self.xhat_vars + self.uhat_vars

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "error_vars": self.error_vars,
            "xhat_vars": self.xhat_vars,
            "uhat_vars": self.uhat_vars,
            "gamma": self.gamma,
            "V": self.V.to_json(),
            "kappa": [p.to_json() for p in self.kappa.flat()],
            "multipliers": {k: v.to_json() for k, v in self.multipliers.items()},
            "gram_residuals": {k: (v if math.isfinite(v) else None)
                               for k, v in self.residuals.items()},
            "gamma_history": self.history,
            "log_volume_history": self.log_volumes,
            "stop_reason": self.stop_reason,
            "config": self.config,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1) + "\n"

    @classmethod
    def from_json(cls, d: dict) -> "Certificate":
        names = list(d["error_vars"]) + list(d["xhat_vars"]) + list(d["uhat_vars"])
        kappa = PolyMatrix.column([Polynomial.from_json(p, names) for p in d["kappa"]])
        return cls(
            V=Polynomial.from_json(d["V"], d["error_vars"]),
            kappa=kappa,
            gamma=float(d["gamma"]),
            multipliers={k: Polynomial.from_json(v) for k, v in d.get("multipliers", {}).items()},
            residuals={k: (math.inf if v is None else float(v))
                       for k, v in d.get("gram_residuals", {}).items()},
            history=[float(x) for x in d.get("gamma_history", [])],
            config=dict(d.get("config", {})),
            error_vars=list(d["error_vars"]),
            xhat_vars=list(d["xhat_vars"]),
            uhat_vars=list(d["uhat_vars"]),
            model=d.get("model", ""),
            stop_reason=d.get("stop_reason", ""),
            log_volumes=list(d.get("log_volume_history", [])),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Certificate":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
