"""Command-line interface: check | synthesize | validate | simulate."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errsys import Model, ModelError, check_manifold_condition, load_model, reconstruction_residual
from .models import bundled_names, load_bundled
from .polyalg import PolyError, Polynomial
from .simrun import (Signal, SimulationError, boundary_points, check_invariance, closed_loop,
                     tracking_controller)
from .synth import (Certificate, ConfigError, StabilizabilityError, SynthesisConfig,
                    SynthesisInfeasible, init_v0, iterate, validate_certificate)

EXIT_OK, EXIT_INFO, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2, 3

log = logging.getLogger("abstrack")


class UsageError(Exception):
    pass


def _model(arg: str) -> Model:
    if arg in bundled_names():
        return load_bundled(arg)
    if not Path(arg).exists():
        raise UsageError(f"no such model file or bundled model: {arg!r} "
                         f"(bundled: {', '.join(bundled_names())})")
    return load_model(arg)


def _floats(text: str, what: str, sep: str = ",") -> list[float]:
    try:
        return [float(t) for t in text.split(sep)]
    except ValueError:
        raise UsageError(f"{what}: expected numbers separated by '{sep}', got {text!r}") from None


def _config(model: Model, args) -> SynthesisConfig:
    data = dict(model.defaults)
    if getattr(args, "config", None):
        try:
            data.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except OSError as exc:
            raise UsageError(f"{args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    cfg = SynthesisConfig.from_json(data)
    kw = {}
    if args.freeze_kappa:
        kw["freeze_kappa"] = True
    if args.boundary_only:
        kw["boundary_only"] = True
    if args.degrees:
        parts = args.degrees.split(":")
        if len(parts) != 3:
            raise UsageError(f"--degrees expects V:K:S, got {args.degrees!r}")
        for key, part in zip(("v_degree", "kappa_degree", "mult_degree"), parts):
            if part:
                try:
                    kw[key] = int(part)
                except ValueError:
                    raise UsageError(f"--degrees: {part!r} is not an integer") from None
    if args.bracket:
        lo, hi = _floats(args.bracket, "--bracket", ":") if ":" in args.bracket else (None, None)
        if lo is None:
            raise UsageError(f"--bracket expects LO:HI, got {args.bracket!r}")
        kw["bracket"] = (lo, hi)
    if args.max_iters is not None:
        kw["max_iters"] = args.max_iters
    if args.seed is not None:
        kw["seed"] = args.seed
    return cfg.replace(**kw) if kw else cfg


def _load_v0(path: str, names) -> Polynomial:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if isinstance(data, dict) and "V" in data and "gamma" in data:
        data = data["V"]
    V = Polynomial.from_json(data)
    extra = V.variables() - set(names)
    if extra:
        raise UsageError(f"{path}: V uses variables {sorted(extra)} outside the error state")
    return V.with_vars(names)


def _matching(cert: Certificate, err) -> None:
    for what, a, b in (("error", cert.error_vars, err.error_vars),
                       ("abstract state", cert.xhat_vars, err.xhat_vars),
                       ("abstract input", cert.uhat_vars, err.uhat_vars)):
        if list(a) != list(b):
            raise UsageError(f"certificate and model disagree on {what} variables: "
                             f"{list(a)} vs {list(b)}")


def _certificate(path: str) -> Certificate:
    try:
        return Certificate.load(path)
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: not a certificate file ({exc})") from None


def _fmt_matrix(a: np.ndarray) -> str:
    return "[" + "; ".join(", ".join(f"{v:.6g}" for v in row) for row in np.atleast_2d(a)) + "]"


# -- commands ---------------------------------------------------------------

def cmd_check(args) -> int:
    model = _model(args.model)
    sys_, abs_ = model.system, model.abstraction
    chk = check_manifold_condition(sys_, abs_)
    err = model.error_system()
    print(f"model: {model.name}")
    print(f"dimensions: n={len(sys_.state_vars)} m={len(sys_.input_vars)} "
          f"nhat={len(abs_.state_vars)} mhat={len(abs_.input_vars)}")
    if chk.holds:
        print("condition: HOLDS, q = 0")
    else:
        print(f"condition: {chk}")
        for i in chk.rows:
            print(f"  residual row {i + 1}: {chk.residual[i, 0]}")
        for j, p in enumerate(err.q.flat()):
            print(f"  q{j + 1} = {p}")
    print(f"R = {_fmt_matrix(err.r)}")
    rec = reconstruction_residual(err, sys_, abs_)
    print(f"reconstruction: {'exact' if rec <= 1e-9 else f'MISMATCH ({rec:.3e})'}")
    print(f"active abstract variables: {', '.join(err.active_xhat() + err.active_uhat()) or 'none'}")
    return EXIT_OK if chk.holds else EXIT_INFO


def cmd_synthesize(args) -> int:
    model = _model(args.model)
    cfg = _config(model, args)
    err = model.error_system()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"model: {model.name}", f"seed: {cfg.seed}"]
    first = None
    if args.v0:
        V0 = _load_v0(args.v0, err.error_vars)
        lines.append("V0: supplied")
    else:
        init = init_v0(err, cfg)
        V0, first = init.V, init.step
        lines.append(f"V0: initialized in {init.stages} stage(s)")
    cert = iterate(err, cfg, V0, model=model.name, first_step=first)
    for k, (g, lv) in enumerate(zip(cert.history, cert.log_volumes)):
        vol = f", log-volume {lv:.6f}" if lv is not None else ""
        lines.append(f"iteration {k + 1}: gamma = {g!r}{vol}")
    lines.append(f"stop: {cert.stop_reason}")
    worst = max(cert.residuals.values(), default=0.0)
    lines.append(f"re-verification: {'PASS' if cert.verified else 'FAIL'} "
                 f"(worst residual {worst:.3e})")
    cert.save(out / "certificate.json")
    (out / "synthesis.log").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    print(f"wrote {out / 'certificate.json'}")
    return EXIT_OK


def cmd_validate(args) -> int:
    model = _model(args.model)
    cert = _certificate(args.certificate)
    err = model.error_system()
    _matching(cert, err)
    seed = 0 if args.seed is None else args.seed
    rep = validate_certificate(cert, err, args.samples, seed)
    print(f"model: {model.name}")
    print(f"gamma: {cert.gamma!r}")
    print(f"samples: {args.samples}, seed: {seed}")
    print(rep)
    return EXIT_OK if rep.passed else EXIT_INFO


def cmd_simulate(args) -> int:
    model = _model(args.model)
    cert = _certificate(args.certificate)
    err = model.error_system()
    _matching(cert, err)
    abs_ = model.abstraction
    seed = 0 if args.seed is None else args.seed
    nh = len(abs_.state_vars)
    if args.xhat0:
        xh0 = np.array(_floats(args.xhat0, "--xhat0"))
    elif err.xhat_box is not None:
        xh0 = err.xhat_box.center
    else:
        xh0 = np.zeros(nh)
    if len(xh0) != nh:
        raise UsageError(f"--xhat0 needs {nh} values")
    if args.e0 == "zero":
        e0 = np.zeros(err.n)
    elif args.e0 == "boundary":
        e0 = boundary_points(cert, 1, seed)[0]
    else:
        e0 = np.array(_floats(args.e0, "--e0"))
        if len(e0) != err.n:
            raise UsageError(f"--e0 needs {err.n} values")
    if args.signal:
        try:
            source = Signal.load_csv(args.signal)
        except (OSError, ValueError) as exc:
            raise UsageError(f"{args.signal}: {exc}") from None
    elif args.target:
        Q = np.diag(_floats(args.track_weights, "--track-weights")) if args.track_weights else None
        source = tracking_controller(abs_, _floats(args.target, "--target"), err.uhat_box, Q=Q)
    elif args.random:
        if err.uhat_box is None:
            raise UsageError("--random needs an abstract input box in the model")
        source = Signal.random_box(err.uhat_box, args.t_end, args.hold, seed,
                                   err.uhat_set, list(err.uhat_vars))
    else:
        source = Signal.constant(np.zeros(len(abs_.input_vars)))
    traj = closed_loop(model.system, abs_, err, source, xh0, e0, (0.0, args.t_end), args.dt,
                       cert=cert)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj.write_csv(out / "trajectory.csv")
    meta = {"model": model.name, "certificate": str(args.certificate), "seed": seed,
            "dt": args.dt, "t_end": args.t_end, "xhat0": [float(v) for v in xh0],
            "e0": [float(v) for v in e0]}
    (out / "trajectory.json").write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    rep = check_invariance(traj, cert)
    print(f"model: {model.name}")
    print(f"steps: {len(traj.t) - 1}, dt: {args.dt}")
    print(f"invariance: {'PASS' if rep.passed else 'FAIL'}; {rep}")
    print(f"wrote {out / 'trajectory.csv'}")
    return EXIT_OK if rep.passed else EXIT_INFO


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="abstrack",
                                description="Interface controllers for polynomial abstractions.")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="check the manifold condition of a model")
    c.add_argument("model", help="bundled model name or JSON path")
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("synthesize", help="synthesize a certificate")
    s.add_argument("model")
    s.add_argument("--config", metavar="PATH", help="JSON synthesis options")
    s.add_argument("--v0", metavar="PATH", help="initial V (polynomial JSON or certificate)")
    s.add_argument("--freeze-kappa", action="store_true", help="fix kappa to zero")
    s.add_argument("--boundary-only", action="store_true",
                   help="require decrease only on the level set")
    s.add_argument("--degrees", metavar="V:K:S", help="degrees of V, kappa and multipliers")
    s.add_argument("--bracket", metavar="LO:HI", help="gamma bisection bracket")
    s.add_argument("--max-iters", type=int, metavar="N")
    s.add_argument("--seed", type=int, metavar="S")
    s.add_argument("--out", metavar="DIR", default="out")
    s.set_defaults(func=cmd_synthesize)

    v = sub.add_parser("validate", help="sample-check a certificate")
    v.add_argument("certificate")
    v.add_argument("model")
    v.add_argument("--samples", type=int, default=100_000, metavar="N")
    v.add_argument("--seed", type=int, metavar="S")
    v.set_defaults(func=cmd_validate)

    m = sub.add_parser("simulate", help="closed-loop simulation to CSV")
    m.add_argument("certificate")
    m.add_argument("model")
    src = m.add_mutually_exclusive_group()
    src.add_argument("--signal", metavar="CSV", help="abstract input samples: t,uh1,...")
    src.add_argument("--target", metavar="X1,X2,..", help="track an abstract equilibrium")
    src.add_argument("--random", action="store_true", help="random admissible hold signal")
    m.add_argument("--track-weights", metavar="Q1,Q2,..", help="state weights for --target")
    m.add_argument("--hold", type=float, default=0.5, help="hold time of --random values")
    m.add_argument("--xhat0", metavar="X1,X2,..")
    m.add_argument("--e0", default="boundary", metavar="zero|boundary|E1,E2,..")
    m.add_argument("--t-end", type=float, default=10.0)
    m.add_argument("--dt", type=float, default=1e-3)
    m.add_argument("--seed", type=int, metavar="S")
    m.add_argument("--out", metavar="DIR", default="out")
    m.set_defaults(func=cmd_simulate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ModelError, ConfigError, PolyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SynthesisInfeasible, StabilizabilityError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SimulationError as exc:
        print(f"simulation failed: {exc}; high-gain controllers need a smaller --dt",
              file=sys.stderr)
        return EXIT_INFO


if __name__ == "__main__":
    sys.exit(main())
