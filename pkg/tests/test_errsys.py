from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from abstrack.errsys import (AbstractionSpec, Box, ModelError, SystemModel, build_error_system,
                             check_manifold_condition, choose_q, choose_r, load_model,
                             model_to_dict, reconstruction_residual, save_model)
from abstrack.models import bundled_names, load_bundled, render
from abstrack.polyalg import PolyMatrix, Polynomial

x1, x2, xh, xh1 = Polynomial.vars_of("x1", "x2", "xh", "xh1")


def _at_zero_error(err, pt):
    z = {v: 0.0 for v in err.error_vars}
    z.update({v: 0.0 for v in err.uhat_vars})
    z.update(pt)
    return err.f_e.evaluate(z)[:, 0]


def test_platoon_cubic_holds_exactly():
    m = load_bundled("platoon-cubic")
    chk = check_manifold_condition(m.system, m.abstraction)
    assert chk.holds and chk.residual.is_zero() and str(chk) == "HOLDS"
    err = m.error_system()
    assert err.q.is_zero()
    np.testing.assert_allclose(err.r, [[1.0]])
    # only the abstract input enters as disturbance
    assert err.f_e.subs({v: 0.0 for v in err.error_vars}).variables() <= set(err.uhat_vars)


def test_pendulum_residual_rows_match_direct_subtraction():
    m = load_bundled("double-pendulum")
    sys, abs_ = m.system, m.abstraction
    chk = check_manifold_condition(sys, abs_)
    assert not chk.holds and chk.rows == [1, 3]
    assert str(chk) == "FAILS (rows 2,4)"
    for s in np.linspace(-0.6, 0.6, 7):
        # x = P xh puts (xh1, xh2, 0, 0) on the manifold
        fx = sys.f.evaluate({"x1": s, "x2": 0.3, "x3": 0.0, "x4": 0.0})[:, 0]
        fh = abs_.f.evaluate({"xh1": s, "xh2": 0.3})[:, 0]
        direct = fx - abs_.P @ fh
        got = chk.residual.evaluate({"xh1": s, "xh2": 0.3})[:, 0]
        np.testing.assert_allclose(got, direct, atol=1e-12)
        np.testing.assert_allclose(got[1], 1.684 * s**3 - 10.58 * s, atol=1e-12)
        np.testing.assert_allclose(got[3], 4.023 * s**3 - 25.115 * s, atol=1e-12)


def test_pendulum_error_system():
    m = load_bundled("double-pendulum")
    err = m.error_system()
    assert err.g_e.is_constant()
    np.testing.assert_array_equal(err.g_e.to_numeric(),
                                  [[0, 0], [8, -31.2], [0, 0], [-31.2, 391.2]])
    assert err.f_e.degree() == 3
    # q cancels the residual: f_e(0, xh, 0) vanishes identically
    assert err.f_e.subs({v: 0.0 for v in list(err.error_vars) + list(err.uhat_vars)}).is_zero(1e-12)
    G = err.g_e.to_numeric()
    R_ls, *_ = np.linalg.lstsq(G, np.array([[0.0], [9.1], [0.0], [0.0]]), rcond=None)
    np.testing.assert_allclose(err.r, R_ls, rtol=1e-10)


def test_choose_r_normal_equations():
    m = load_bundled("double-pendulum")
    R = choose_r(m.system, m.abstraction)
    G = m.system.g.to_numeric()
    T = m.abstraction.P @ m.abstraction.g.to_numeric()
    assert np.abs(G.T @ (G @ R - T)).max() <= 1e-10


def test_choose_r_identity_when_ranges_agree():
    sys = SystemModel(["x1", "x2"], ["u"], PolyMatrix.column([x2, -x1]),
                      PolyMatrix.from_numeric([[0], [2]]))
    abs_ = AbstractionSpec(["xh"], ["uh"], PolyMatrix.column([0.0]),
                           PolyMatrix.from_numeric([[2]]), [[0], [1]])
    np.testing.assert_allclose(choose_r(sys, abs_), [[1.0]], atol=1e-14)


def test_scalar_demo_exact_cancellation():
    sys = SystemModel(["x"], ["u"], PolyMatrix.column([-Polynomial.var("x")]), PolyMatrix([[1.0]]))
    abs_ = AbstractionSpec(["xh"], ["uh"], PolyMatrix.column([-xh]), PolyMatrix([[1.0]]), [[1.0]])
    err = build_error_system(sys, abs_, r_mode="identity-like")
    assert err.f_e[0, 0] == -Polynomial.var("e1")
    assert reconstruction_residual(err, sys, abs_) == 0.0


def test_omega_shift_only_gives_zero_q():
    # f(x) = -(x - 3), abstraction xh' = -xh with x = xh + 3
    sys = SystemModel(["x"], ["u"], PolyMatrix.column([3.0 - Polynomial.var("x")]), PolyMatrix([[1.0]]))
    abs_ = AbstractionSpec(["xh"], ["uh"], PolyMatrix.column([-xh]), PolyMatrix([[1.0]]),
                           [[1.0]], [3.0])
    assert check_manifold_condition(sys, abs_).holds
    assert choose_q(sys, abs_).is_zero()


def test_explicit_refinement_dimension_errors():
    m = load_bundled("double-pendulum")
    with pytest.raises(ModelError, match="explicit q"):
        build_error_system(m.system, m.abstraction, q_mode="explicit", q=PolyMatrix.zeros(1, 1))
    with pytest.raises(ModelError, match="explicit r"):
        build_error_system(m.system, m.abstraction, r_mode="explicit", r=np.zeros((1, 1)))


def test_state_dependent_g_rejects_q_synthesis():
    sys = SystemModel(["x1", "x2"], ["u"], PolyMatrix.column([x2, x1**3]),
                      PolyMatrix([[0.0], [1.0 + x1 * x1]]))
    abs_ = AbstractionSpec(["xh1"], ["uh"], PolyMatrix.column([0.0]), PolyMatrix([[1.0]]),
                           [[1.0], [0.0]])
    with pytest.raises(ModelError, match="constant input matrix"):
        choose_q(sys, abs_)


def test_box_and_model_validation():
    with pytest.raises(ModelError):
        Box([1.0], [0.0])
    with pytest.raises(ModelError, match="state variables only"):
        SystemModel(["x1"], ["u"], PolyMatrix.column([x2]), PolyMatrix([[1.0]]))
    with pytest.raises(ModelError, match="abstract inputs only"):
        AbstractionSpec(["xh"], ["uh"], PolyMatrix.column([0.0]), PolyMatrix([[1.0]]), [[1.0]],
                        uhat_polys=[xh])
    b = Box([-1.0, 0.0], [1.0, 2.0])
    assert b.contains_point([0.5, 2.0]) and not b.contains_point([0.5, 2.1])
    assert b.contains(b.scaled(0.5)) and not b.scaled(0.5).contains(b)


@pytest.mark.parametrize("name", bundled_names())
def test_bundled_reconstruction_exact(name):
    m = load_bundled(name)
    err = m.error_system()
    assert reconstruction_residual(err, m.system, m.abstraction) <= 1e-9


@pytest.mark.parametrize("name", bundled_names())
def test_bundled_json_roundtrip(name, tmp_path):
    m = load_bundled(name)
    path = tmp_path / "m.json"
    save_model(m, path)
    again = load_model(path)
    assert model_to_dict(again) == model_to_dict(m)
    assert path.read_text() == render(name)


def test_load_model_reports_json_location(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"state_vars": [}')
    with pytest.raises(ModelError, match="line 1 column"):
        load_model(bad)


coef = st.floats(-3, 3, allow_nan=False).map(lambda c: round(c, 3))


@given(st.lists(coef, min_size=8, max_size=8), st.lists(coef, min_size=2, max_size=2),
       st.floats(-2, 2).map(lambda c: round(c, 2)))
def test_reconstruction_random_systems(c, gvec, omega):
    # two-state cubic system, one-state abstraction along a random direction
    f = PolyMatrix.column([c[0] * x1 + c[1] * x2 + c[2] * x1**3, c[3] * x2 + c[4] * x1 * x2
                           + c[5] * x2**3 + c[6]])
    g = PolyMatrix.from_numeric([[gvec[0]], [gvec[1] + 5.0]])
    sys = SystemModel(["x1", "x2"], ["u"], f, g)
    abs_ = AbstractionSpec(["xh1"], ["uh"], PolyMatrix.column([c[7] * xh1 - xh1**3]),
                           PolyMatrix([[1.0]]), [[1.0], [0.5]], [omega, 0.0])
    err = build_error_system(sys, abs_)
    assert reconstruction_residual(err, sys, abs_) <= 1e-9
    # with q from the constant-g solve the residual is left only outside range(g)
    left = err.f_e.subs({"e1": 0.0, "e2": 0.0, "uh": 0.0})
    G = g.to_numeric()
    proj = np.eye(2) - G @ np.linalg.pinv(G)
    for s in (-1.0, 0.3, 2.0):
        r = left.evaluate({"xh1": s})[:, 0]
        np.testing.assert_allclose(r, proj @ r, atol=1e-8)


@given(st.lists(coef, min_size=4, max_size=4))
def test_holds_implies_zero_drift_on_manifold(c):
    f = PolyMatrix.column([c[0] * x1 + c[1] * x2**2, c[2] * x1 * x2 + c[3] * x1**3])
    sys = SystemModel(["x1", "x2"], ["u"], f, PolyMatrix.from_numeric([[0], [1]]))
    fh = f.subs({"x1": Polynomial.var("a"), "x2": Polynomial.var("b")})
    abs_ = AbstractionSpec(["a", "b"], ["w"], fh, PolyMatrix.from_numeric([[0], [1]]), np.eye(2))
    assert check_manifold_condition(sys, abs_).holds
    err = build_error_system(sys, abs_)
    assert err.q.is_zero()
    assert err.f_e.subs({"e1": 0.0, "e2": 0.0, "w": 0.0}).is_zero()
