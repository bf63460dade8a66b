from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from abstrack.errsys import Box
from abstrack.models import load_bundled
from abstrack.polyalg import PolyMatrix, Polynomial
from abstrack.synth import Certificate, validate_certificate
from abstrack.synth.validate import _points, ray_radius

e1, e2 = Polynomial.vars_of("e1", "e2")


@pytest.fixture(scope="module")
def scalar():
    return load_bundled("scalar-demo").error_system()


def make_cert(err, V, gamma, kappa=None, **config) -> Certificate:
    kappa = kappa if kappa is not None else [Polynomial.zero()] * err.m
    return Certificate(V=V.with_vars(err.error_vars), kappa=PolyMatrix.column(kappa), gamma=gamma,
                       multipliers={}, residuals={}, history=[gamma], config=config,
                       error_vars=list(err.error_vars), xhat_vars=list(err.xhat_vars),
                       uhat_vars=list(err.uhat_vars))


def test_scalar_oracle_passes_with_margin_near_zero(scalar):
    rep = validate_certificate(make_cert(scalar, e1 * e1, 1.0), scalar, 100_000, seed=1)
    assert rep.passed and rep.violations == 0 and rep.n_band == 100_000
    # Vdot = 2e(-e - uh) is largest near |e| = 1 with uh = -sign(e)
    assert -0.05 < rep.worst_vdot < 0.0
    assert "result: PASS" in str(rep)


def test_corrupted_gamma_fails_with_witness(scalar):
    rep = validate_certificate(make_cert(scalar, e1 * e1, 0.25), scalar, 20_000, seed=2)
    assert not rep.passed and rep.violations > 0 and rep.witness_kind == "Vdot"
    e, uh = rep.witness["e1"], rep.witness["uh"]
    assert 0.5 <= abs(e) <= 0.5 * np.sqrt(1.1) + 1e-12
    assert 2 * e * (-e - uh) > 1e-6
    assert "witness (Vdot)" in str(rep)


def test_validation_is_seeded(scalar):
    cert = make_cert(scalar, e1 * e1, 0.25)
    a = validate_certificate(cert, scalar, 5_000, seed=7)
    b = validate_certificate(cert, scalar, 5_000, seed=7)
    assert a == b


def test_input_bound_check():
    err = load_bundled("platoon-cubic").error_system()
    V = sum((Polynomial.var(v) ** 2 for v in err.error_vars), Polynomial.zero())
    # kappa = -30 e2: |kappa| <= 30 sqrt(gamma) on the sublevel set, bound is 20
    kappa = [-30.0 * Polynomial.var("e2")]
    loose = validate_certificate(make_cert(err, V, 1.0, kappa, input_bounds=True), err, 20_000,
                                 seed=3)
    assert loose.worst_input is not None and loose.worst_input > 1e-6
    assert loose.n_interior > 0 and loose.violations > 0
    tight = make_cert(err, V, 0.25, kappa, input_bounds=True)
    rep = validate_certificate(tight, err, 20_000, seed=3, check_inputs=True)
    assert rep.worst_input <= 0.0


@given(st.floats(0.1, 10.0), st.integers(0, 2**31 - 1))
def test_ray_radius_homogeneous(level, seed):
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((20, 2))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    V = e1 * e1 + 3.0 * e2 * e2 + e1 * e2
    r = ray_radius(V, ["e1", "e2"], d, np.full(20, level))
    got = V.evaluate_many({"e1": r * d[:, 0], "e2": r * d[:, 1]})
    np.testing.assert_allclose(got, level, rtol=1e-12)


def test_ray_radius_mixed_degree():
    V = e1 * e1 + e1**4
    d = np.array([[1.0], [-1.0]])
    r = ray_radius(V, ["e1"], d, np.array([2.0, 2.0]))
    # r^2 + r^4 = 2 has r = 1
    np.testing.assert_allclose(r, [1.0, 1.0], atol=1e-12)


def test_band_samples_lie_in_band(scalar):
    rng = np.random.default_rng(0)
    pts = _points(rng, make_cert(scalar, 2.0 * e1 * e1, 1.0), scalar, 2000, (1.0, 1.1))
    v = 2.0 * pts["e1"] ** 2
    assert v.min() >= 1.0 - 1e-12 and v.max() <= 1.1 + 1e-12
    assert np.all(np.abs(pts["uh"]) <= 1.0)
    # volume-uniform in the shell: |e| uniform on [sqrt(1/2), sqrt(1.1/2)] in one dimension
    a, b = np.sqrt(0.5), np.sqrt(0.55)
    assert abs(np.mean(np.abs(pts["e1"])) - 0.5 * (a + b)) < 2e-3


def test_box_constrained_abstract_state_sampled_in_box():
    err = load_bundled("double-pendulum").error_system()
    V = sum((Polynomial.var(v) ** 2 for v in err.error_vars), Polynomial.zero())
    pts = _points(np.random.default_rng(1), make_cert(err, V, 1.0), err, 1000, (1.0, 1.1))
    box = Box([-0.6, -1.3], [0.6, 1.3])
    X = np.column_stack([pts["xh1"], pts["xh2"]])
    assert all(box.contains_point(p) for p in X)
