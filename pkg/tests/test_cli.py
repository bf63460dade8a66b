from __future__ import annotations

import json

import numpy as np
import pytest

from abstrack.cli import main
from abstrack.errsys import save_model
from abstrack.models import load_bundled
from abstrack.polyalg import PolyMatrix, Polynomial
from abstrack.synth import Certificate


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def scalar_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("scalar")
    assert main(["synthesize", "scalar-demo", "--freeze-kappa", "--out", str(d)]) == 0
    return d


def write_cert(path, model, gamma, V=None):
    err = load_bundled(model).error_system()
    V = V or sum((Polynomial.var(v) ** 2 for v in err.error_vars), Polynomial.zero())
    cert = Certificate(V=V.with_vars(err.error_vars), kappa=PolyMatrix.zeros(err.m, 1),
                       gamma=gamma, multipliers={}, residuals={}, history=[gamma], config={},
                       error_vars=list(err.error_vars), xhat_vars=list(err.xhat_vars),
                       uhat_vars=list(err.uhat_vars), model=model)
    cert.save(path)
    return path


def test_check_reports(capsys):
    code, out, _ = run(capsys, "check", "platoon-cubic")
    assert code == 0 and "condition: HOLDS, q = 0" in out
    code, out, _ = run(capsys, "check", "double-pendulum")
    assert code == 1 and "condition: FAILS (rows 2,4)" in out
    assert "1.684*xh1^3 - 10.58*xh1" in out and "reconstruction: exact" in out


def test_check_bad_inputs(capsys, tmp_path):
    bad = tmp_path / "m.json"
    bad.write_text('{"state_vars": ["x"],\n "f": [}')
    code, _, err = run(capsys, "check", bad)
    assert code == 2 and "line 2" in err
    code, _, err = run(capsys, "check", tmp_path / "missing.json")
    assert code == 2 and "no such model" in err
    bad.write_text('{"state_vars": ["x"], "input_vars": ["u"]}')
    code, _, err = run(capsys, "check", bad)
    assert code == 2


def test_check_model_file(capsys, tmp_path):
    path = tmp_path / "pend.json"
    save_model(load_bundled("double-pendulum"), path)
    code, out, _ = run(capsys, "check", path)
    assert code == 1 and "FAILS (rows 2,4)" in out


def test_synthesize_scalar_frozen(scalar_dir):
    cert = Certificate.load(scalar_dir / "certificate.json")
    assert abs(cert.gamma - 1.0) <= 2e-2 and cert.verified
    assert cert.config["freeze_kappa"] and cert.config["seed"] == 0
    log = (scalar_dir / "synthesis.log").read_text()
    assert "iteration 1: gamma =" in log and "re-verification: PASS" in log
    hist = [float(line.split("gamma = ")[1].split(",")[0]) for line in log.splitlines()
            if line.startswith("iteration")]
    assert hist == cert.history


def test_synthesize_deterministic(scalar_dir, tmp_path):
    assert main(["synthesize", "scalar-demo", "--freeze-kappa", "--out", str(tmp_path)]) == 0
    for name in ("certificate.json", "synthesis.log"):
        assert (tmp_path / name).read_bytes() == (scalar_dir / name).read_bytes()


def test_synthesize_degenerate_bracket(capsys, tmp_path):
    code, _, err = run(capsys, "synthesize", "scalar-demo", "--bracket", "1e-4:1e-4",
                       "--out", tmp_path)
    assert code == 3 and "tighten" in err


def test_synthesize_flag_errors(capsys, tmp_path):
    assert run(capsys, "synthesize", "scalar-demo", "--degrees", "2:1", "--out", tmp_path)[0] == 2
    assert run(capsys, "synthesize", "scalar-demo", "--degrees", "3:1:2", "--out", tmp_path)[0] == 2
    assert run(capsys, "synthesize", "scalar-demo", "--bracket", "1", "--out", tmp_path)[0] == 2
    cfg = tmp_path / "c.json"
    cfg.write_text('{"no_such_key": 1}')
    assert run(capsys, "synthesize", "scalar-demo", "--config", cfg, "--out", tmp_path)[0] == 2


def test_config_precedence(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"max_iters": 1, "kappa_degree": 0, "seed": 5}))
    v0 = tmp_path / "v0.json"
    v0.write_text(json.dumps((Polynomial.var("e1") ** 2).to_json()))
    code, out, _ = run(capsys, "synthesize", "scalar-demo", "--config", cfg, "--max-iters", 2,
                       "--freeze-kappa", "--v0", v0, "--out", tmp_path)
    assert code == 0 and "V0: supplied" in out
    c = Certificate.load(tmp_path / "certificate.json").config
    # model default < config file < flags
    assert c["max_iters"] == 2 and c["kappa_degree"] == 0 and c["seed"] == 5
    assert c["input_bounds"] is False


def test_validate_pass_and_fail(capsys, scalar_dir, tmp_path):
    code, out, _ = run(capsys, "validate", scalar_dir / "certificate.json", "scalar-demo",
                       "--samples", 20000, "--seed", 42)
    assert code == 0 and "result: PASS" in out and "seed: 42" in out
    bad = write_cert(tmp_path / "bad.json", "scalar-demo", 0.25)
    code, out, _ = run(capsys, "validate", bad, "scalar-demo", "--samples", 20000)
    assert code == 1 and "result: FAIL" in out and "witness (Vdot): e1=" in out


def test_validate_variable_mismatch(capsys, scalar_dir):
    code, _, err = run(capsys, "validate", scalar_dir / "certificate.json", "platoon-cubic")
    assert code == 2 and "disagree" in err


def test_validate_not_a_certificate(capsys, tmp_path):
    p = tmp_path / "x.json"
    p.write_text("[1, 2]")
    assert run(capsys, "validate", p, "scalar-demo")[0] == 2


def test_simulate_platoon_on_manifold(capsys, tmp_path):
    cert = write_cert(tmp_path / "c.json", "platoon-cubic", 1.0)
    code, out, _ = run(capsys, "simulate", cert, "platoon-cubic", "--e0", "zero",
                       "--xhat0", "0,20", "--t-end", 2, "--seed", 4, "--out", tmp_path)
    assert code == 0 and "invariance: PASS" in out
    data = np.loadtxt(tmp_path / "trajectory.csv", delimiter=",", skiprows=1)
    header = (tmp_path / "trajectory.csv").read_text().splitlines()[0].split(",")
    assert np.abs(data[:, header.index("V")]).max() <= 1e-12
    meta = json.loads((tmp_path / "trajectory.json").read_text())
    assert meta["seed"] == 4 and meta["dt"] == 1e-3


def test_simulate_random_and_target(capsys, scalar_dir, tmp_path):
    cert = scalar_dir / "certificate.json"
    code, out, _ = run(capsys, "simulate", cert, "scalar-demo", "--random", "--t-end", 1,
                       "--seed", 2, "--out", tmp_path / "a")
    assert code == 0 and "invariance: PASS" in out
    code, _, _ = run(capsys, "simulate", cert, "scalar-demo", "--random", "--t-end", 1,
                     "--seed", 2, "--out", tmp_path / "b")
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == \
        (tmp_path / "b" / "trajectory.csv").read_bytes()
    code, _, err = run(capsys, "simulate", cert, "scalar-demo", "--e0", "1,2", "--out", tmp_path)
    assert code == 2 and "--e0" in err


def test_simulate_signal_file(capsys, scalar_dir, tmp_path):
    sig = tmp_path / "u.csv"
    sig.write_text("t,uh1\n0,1\n0.5,-1\n")
    code, out, _ = run(capsys, "simulate", scalar_dir / "certificate.json", "scalar-demo",
                       "--signal", sig, "--t-end", 1, "--out", tmp_path)
    assert code == 0
    data = np.loadtxt(tmp_path / "trajectory.csv", delimiter=",", skiprows=1)
    assert data.shape == (1001, 6)


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
