"""Bundled example models and their builders."""
from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .errsys import (AbstractionSpec, Box, Model, ModelError, SystemModel, model_from_dict,
                     model_to_dict)
from .polyalg import PolyMatrix, Polynomial

# Platoon parameters (not published; chosen to give highway-like numbers).
V0 = 28.0          # nominal speed [m/s]
DRAG = 3.6e-4      # rho / M [1/m]
SPACING = 10.0     # nominal inter-vehicle distance [m]
SPRING = 1.0       # linear spring constant [1/s^2]


def scalar_demo() -> Model:
    x, xh = Polynomial.vars_of("x", "xh")
    sys = SystemModel(["x"], ["u"], PolyMatrix.column([-x]), PolyMatrix([[1.0]]))
    abs_ = AbstractionSpec(["xh"], ["uh"], PolyMatrix.column([-xh]), PolyMatrix([[1.0]]),
                           [[1.0]], [0.0], uhat_box=Box([-1.0], [1.0]))
    # r = 0 leaves uh as an unmatched disturbance: de/dt = -e - uh + kappa.
    return Model("scalar-demo", sys, abs_, r_mode="explicit", r=np.zeros((1, 1)),
                 defaults={"v_degree": 2, "kappa_degree": 1, "input_bounds": False})


def _drag(v: Polynomial) -> Polynomial:
    return V0 - v - DRAG * v * v


def platoon_cubic() -> Model:
    xa, va, x1, v1, x2, v2, xha, vha = Polynomial.vars_of("xa", "va", "x1", "v1", "x2", "v2",
                                                          "xha", "vha")
    spring = lambda s: (s - SPACING) ** 3  # noqa: E731
    f = PolyMatrix.column([va, _drag(va), v1, _drag(v1) + spring(xa - x1),
                           v2, _drag(v2) + spring(x1 - x2)])
    g = PolyMatrix.from_numeric([[0], [1], [0], [0], [0], [0]])
    sys = SystemModel(["xa", "va", "x1", "v1", "x2", "v2"], ["ua"], f, g, Box([-20.0], [20.0]))
    P = np.array([[1, 0], [0, 1], [1, 0], [0, 1], [1, 0], [0, 1]], dtype=float)
    Om = np.array([0, 0, -SPACING, 0, -2 * SPACING, 0])
    abs_ = AbstractionSpec(["xha", "vha"], ["uha"], PolyMatrix.column([vha, _drag(vha)]),
                           PolyMatrix.from_numeric([[0], [1]]), P, Om,
                           xhat_box=Box([-1e3, V0 - 5], [1e3, V0 + 5]),
                           uhat_box=Box([-8.0], [8.0]))
    return Model("platoon-cubic", sys, abs_, defaults={"kappa_degree": 1})


def platoon_two_leader() -> Model:
    names = ["xa", "va", "x1", "v1", "xb", "vb", "x2", "v2"]
    xa, va, x1, v1, xb, vb, x2, v2 = Polynomial.vars_of(*names)
    xha, vha, xhb, vhb = Polynomial.vars_of("xha", "vha", "xhb", "vhb")
    spring = lambda s: SPRING * (s - SPACING)  # noqa: E731
    f = PolyMatrix.column([va, _drag(va), v1, _drag(v1) + spring(xa - x1),
                           vb, _drag(vb) + spring(x1 - xb), v2, _drag(v2) + spring(xb - x2)])
    g = PolyMatrix.from_numeric([[0, 0], [1, 0], [0, 0], [0, 0],
                                 [0, 0], [0, 1], [0, 0], [0, 0]])
    sys = SystemModel(names, ["ua", "ub"], f, g, Box([-20.0, -20.0], [20.0, 20.0]))
    P = np.zeros((8, 4))
    P[[0, 2], 0] = 1.0
    P[[1, 3], 1] = 1.0
    P[[4, 6], 2] = 1.0
    P[[5, 7], 3] = 1.0
    Om = np.array([0, 0, -SPACING, 0, 0, 0, -SPACING, 0])
    gap = (xha - xhb - 20.0) ** 2 - 400.0
    abs_ = AbstractionSpec(["xha", "vha", "xhb", "vhb"], ["uha", "uhb"],
                           PolyMatrix.column([vha, _drag(vha), vhb, _drag(vhb)]),
                           PolyMatrix.from_numeric([[0, 0], [1, 0], [0, 0], [0, 1]]), P, Om,
                           xhat_box=Box([-1e3, V0 - 5, -1e3, V0 - 5], [1e3, V0 + 5, 1e3, V0 + 5]),
                           uhat_box=Box([-8.0, -8.0], [8.0, 8.0]), xhat_polys=[gap])
    return Model("platoon-two-leader", sys, abs_,
                 defaults={"boundary_only": True, "kappa_degree": 1, "s3_degree": 2,
                           "input_bounds": False, "initial_fraction": 1.0,
                           "gamma_rtol": 0.05, "max_iters": 2, "bracket": [1e3, 1e5]})


def double_pendulum() -> Model:
    x1, x2, x3, x4, xh1, xh2 = Polynomial.vars_of("x1", "x2", "x3", "x4", "xh1", "xh2")
    f2 = (-3.447 * x1**3 + 2.350 * x1**2 * x3 + 1.303 * x1 * x3**2 + 3.939 * x3**3
          + 21.520 * x1 - 5.000 * x3)
    f4 = (4.023 * x1**3 - 36.551 * x1**2 * x3 - 4.131 * x2**2 * x3 - 27.060 * x3**3
          - 25.115 * x1 + 77.700 * x3)
    f = PolyMatrix.column([x2, f2, x4, f4])
    g = PolyMatrix.from_numeric([[0, 0], [8, -31.2], [0, 0], [-31.2, 391.2]])
    sys = SystemModel(["x1", "x2", "x3", "x4"], ["u1", "u2"], f, g,
                      Box([-20.0, -20.0], [20.0, 20.0]))
    fh = PolyMatrix.column([xh2, -5.131 * xh1**3 + 32.1 * xh1])
    gh = PolyMatrix.from_numeric([[0], [9.1]])
    P = np.vstack([np.eye(2), np.zeros((2, 2))])
    abs_ = AbstractionSpec(["xh1", "xh2"], ["uh"], fh, gh, P, None,
                           xhat_box=Box([-0.6, -1.3], [0.6, 1.3]), uhat_box=Box([-5.0], [5.0]))
    return Model("double-pendulum", sys, abs_,
                 defaults={"kappa_degree": 2, "boundary_only": True, "s3_degree": 2,
                           "min_iters": 3, "bracket": [1e-8, 1e4]})


BUILDERS = {
    "scalar-demo": scalar_demo,
    "platoon-cubic": platoon_cubic,
    "platoon-two-leader": platoon_two_leader,
    "double-pendulum": double_pendulum,
}


def bundled_names() -> list[str]:
    return list(BUILDERS)


def bundled_text(name: str) -> str:
    try:
        return resources.files("abstrack.data").joinpath(f"{name}.json").read_text("utf-8")
    except FileNotFoundError as exc:
        raise ModelError(f"no bundled model {name!r}") from exc


def load_bundled(name: str) -> Model:
    if name not in BUILDERS:
        raise ModelError(f"no bundled model {name!r}; choose from {', '.join(BUILDERS)}")
    return model_from_dict(json.loads(bundled_text(name)), name)


def render(name: str) -> str:
    """JSON text of a bundled model as produced by its builder."""
    return json.dumps(model_to_dict(BUILDERS[name]()), indent=1) + "\n"
