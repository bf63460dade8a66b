from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.linalg as la

from abstrack.errsys import Box
from abstrack.models import load_bundled
from abstrack.polyalg import PolyMatrix, Polynomial
from abstrack.simrun import (Signal, SimulationError, Trajectory, boundary_points, check_invariance,
                             closed_loop, closed_loop_batch, rk4, tracking_controller)
from abstrack.synth import Certificate

e1 = Polynomial.var("e1")


def scalar_cert(err, gamma=1.0) -> Certificate:
    return Certificate(V=(e1 * e1).with_vars(err.error_vars), kappa=PolyMatrix.column([0.0]),
                       gamma=gamma, multipliers={}, residuals={}, history=[gamma], config={},
                       error_vars=list(err.error_vars), xhat_vars=list(err.xhat_vars),
                       uhat_vars=list(err.uhat_vars))


# -- integrator ---------------------------------------------------------------------------

def test_rk4_decay():
    ts, xs = rk4(lambda t, x: -x, [1.0], (0.0, 1.0), 1e-3)
    assert len(ts) == 1001 and ts[-1] == pytest.approx(1.0)
    assert abs(xs[-1, 0] - math.exp(-1.0)) <= 1e-8


def test_rk4_zero_field():
    _, xs = rk4(lambda t, x: np.zeros_like(x), [1.5, -2.0], (0.0, 3.0), 0.1)
    assert np.all(xs == np.array([1.5, -2.0]))


def test_rk4_rotation_period():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    T = 2 * math.pi
    _, xs = rk4(lambda t, x: A @ x, [1.0, 0.5], (0.0, T), T / 6000)
    np.testing.assert_allclose(xs[-1], la.expm(A * T) @ [1.0, 0.5], atol=1e-6)
    np.testing.assert_allclose(xs[-1], [1.0, 0.5], atol=1e-6)


def test_rk4_fourth_order():
    exact = math.exp(-2.0)
    errs = [abs(rk4(lambda t, x: -x, [1.0], (0.0, 2.0), dt)[1][-1, 0] - exact) for dt in (0.2, 0.1)]
    # the dt^4 model predicts a factor of 16 per halving
    assert 16 / 1.5 <= errs[0] / errs[1] <= 16 * 1.5


def test_rk4_blow_up_reports_time():
    # x' = x^2 from 1 escapes at t = 1
    with pytest.raises(SimulationError, match=r"t = 1\.0"), np.errstate(all="ignore"):
        rk4(lambda t, x: x * x, [1.0], (0.0, 2.0), 1e-2)


def test_rk4_rejects_bad_step():
    with pytest.raises(ValueError):
        rk4(lambda t, x: x, [1.0], (0.0, 1.0), 0.0)


# -- signals ------------------------------------------------------------------------------

def test_signal_zero_order_hold():
    s = Signal([0.0, 1.0, 2.5], [[1.0], [2.0], [3.0]])
    assert s(0.0)[0] == 1.0 and s(0.999)[0] == 1.0 and s(1.0)[0] == 2.0 and s(9.0)[0] == 3.0
    assert s(-1.0)[0] == 1.0
    with pytest.raises(ValueError):
        Signal([0.0, 0.0], [[1.0], [2.0]])
    r = Signal.ramp(1.0, 2.0, 0.0, 4.0, samples=4)
    assert r(0.5)[0] == 0.0 and r(1.5)[0] == 2.0 and r(5.0)[0] == 4.0
    assert Signal.step(2.0, 20.0, 35.0)(2.0)[0] == 35.0


def test_signal_random_box_admissible_and_seeded():
    box = Box([-1.0, -2.0], [1.0, 2.0])
    disc = Polynomial.var("a") ** 2 + Polynomial.var("b") ** 2 - 1.0
    s = Signal.random_box(box, 5.0, 0.5, seed=3, polys=[disc], names=["a", "b"])
    assert len(s.times) == 10
    assert np.all(np.sum(s.values ** 2, axis=1) <= 1.0)
    again = Signal.random_box(box, 5.0, 0.5, seed=3, polys=[disc], names=["a", "b"])
    np.testing.assert_array_equal(s.values, again.values)


def test_signal_csv(tmp_path):
    p = tmp_path / "u.csv"
    p.write_text("t,uh1\n0,0.5\n1,-0.5\n")
    s = Signal.load_csv(p)
    assert s(0.5)[0] == 0.5 and s(1.5)[0] == -0.5


def test_tracking_controller_needs_equilibrium():
    abs_ = load_bundled("double-pendulum").abstraction
    with pytest.raises(ValueError, match="equilibrium"):
        tracking_controller(abs_, [0.3, 1.0])
    ctl = tracking_controller(abs_, [0.3, 0.0])
    # the feedforward balances the drift at the target
    fh = abs_.f.evaluate({"xh1": 0.3, "xh2": 0.0})[:, 0]
    gh = abs_.g.evaluate({"xh1": 0.3, "xh2": 0.0})
    np.testing.assert_allclose(fh + gh @ ctl(0.0, np.array([0.3, 0.0])), 0.0, atol=1e-12)


# -- invariance monitoring -----------------------------------------------------------------

def _synthetic(V):
    n = len(V)
    z = np.zeros((n, 1))
    return Trajectory(np.arange(n) * 0.1, z, z, z, np.asarray(V, float), z, z)


def test_check_invariance_synthetic():
    rep = check_invariance(_synthetic([0.5, 1.0, 2.0, 0.3]), 1.0)
    assert not rep.passed and rep.exit_time == pytest.approx(0.2) and rep.max_ratio == 2.0
    assert check_invariance(_synthetic([0.0, 0.0]), 1.0).max_ratio == 0.0
    # excursions within the slack are tolerated
    assert check_invariance(_synthetic([1.0005]), 1.0).passed


def test_boundary_points_on_level_set():
    err = load_bundled("scalar-demo").error_system()
    pts = boundary_points(scalar_cert(err, 0.49), 10, seed=0)
    np.testing.assert_allclose(np.abs(pts[:, 0]), 0.7, rtol=1e-12)


# -- closed loop --------------------------------------------------------------------------

def test_platoon_on_manifold_stays_on_manifold():
    m = load_bundled("platoon-cubic")
    err = m.error_system()
    # with uh = 0 nothing pushes the followers off the manifold (q = 0 exactness)
    traj = closed_loop(m.system, m.abstraction, err, Signal.constant([0.0]), [0.0, 20.0], None, (0.0, 10.0), 1e-3,
                       kappa=PolyMatrix.column([0.0]))
    assert np.abs(traj.e).max() <= 1e-9
    np.testing.assert_allclose(traj.e, traj.x - traj.xhat @ m.abstraction.P.T - m.abstraction.Omega,
                               atol=1e-9)


def test_error_identity_and_scalar_invariance():
    m = load_bundled("scalar-demo")
    err = m.error_system()
    cert = scalar_cert(err)
    sources = [Signal.random_box(err.uhat_box, 5.0, 0.25, seed=s) for s in range(5)]
    e0 = boundary_points(cert, 5, seed=1)
    runs = closed_loop_batch(m.system, m.abstraction, err, sources, np.zeros((5, 1)), e0,
                             (0.0, 5.0), 1e-3, cert=cert)
    for tr in runs:
        assert tr.exit_time is None
        assert check_invariance(tr, cert).max_ratio <= 1.0 + 1e-3
        np.testing.assert_allclose(tr.e, tr.x - tr.xhat, atol=1e-9)
        np.testing.assert_allclose(tr.V, tr.e[:, 0] ** 2, rtol=1e-12)
    # a certificate that claims too much is caught
    small = scalar_cert(err, 0.25)
    bad = closed_loop(m.system, m.abstraction, err, Signal.constant([1.0]), [0.0], [0.5],
                      (0.0, 5.0), 1e-3, cert=small)
    assert bad.exit_time is not None


def test_inadmissible_input_warns(caplog):
    m = load_bundled("scalar-demo")
    err = m.error_system()
    closed_loop(m.system, m.abstraction, err, Signal.constant([3.0]), [0.0], [0.0], (0.0, 0.01),
                1e-3, cert=scalar_cert(err))
    assert any("admissible" in r.message for r in caplog.records)


def test_csv_output_deterministic(tmp_path):
    m = load_bundled("scalar-demo")
    err = m.error_system()
    cert = scalar_cert(err)
    paths = []
    for k in range(2):
        src = Signal.random_box(err.uhat_box, 1.0, 0.1, seed=9)
        tr = closed_loop(m.system, m.abstraction, err, src, [0.0], [0.3], (0.0, 1.0), 1e-2,
                         cert=cert)
        p = tmp_path / f"run{k}.csv"
        tr.write_csv(p)
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    head, *rows = paths[0].read_text().splitlines()
    assert head == "t,x1,xhat1,e1,V,u1" and len(rows) == 101
    data = np.loadtxt(paths[0], delimiter=",", skiprows=1)
    np.testing.assert_allclose(data[:, 3], data[:, 1] - data[:, 2], atol=1e-12)
