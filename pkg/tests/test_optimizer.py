import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conflap.instances import random_smooth_field
from conflap.manifold import build_circle, with_potential
from conflap.optimizer import (
    ClusterError,
    F2,
    F2eps,
    OptimizerSettings,
    continuation,
    euler_certificate,
    f_inverse,
    floor_truncate,
    harmonic_map_residual,
    lipschitz_proxy,
    maximize_F2eps,
    read_checkpoint,
    reg_params,
    spectraplex_lstsq,
)
from conflap.speclib import generalized_spectrum


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.1, 3.0, 10.0]))
@settings(max_examples=10, deadline=None)
def test_F2_scale_invariant(seed, s):
    m = with_potential(build_circle(1.0, 32, dim=3), -2.0)
    u = np.exp(0.5 * random_smooth_field(m, np.random.default_rng(seed)))
    a, b = F2(m, u), F2(m, s * u)
    assert abs(a - b) <= 1e-10 * abs(a)


def test_F2eps_validation(small_product):
    with pytest.raises(ValueError):
        F2eps(small_product, np.ones(512), 0.0)
    u = np.ones(512)
    u[0] = 0
    with pytest.raises(ValueError):
        F2eps(small_product, u, 0.1)


def test_F2eps_at_constant(small_product):
    # normalized u = 1 gives F2 - 1
    assert F2eps(small_product, np.ones(512), 0.1) == pytest.approx(F2(small_product, np.ones(512)) - 1.0)


def test_reg_params_closed_form(small_product):
    lam2 = -1.25
    p = reg_params(small_product, np.ones(512), 0.01, lam2)
    N = small_product.N
    assert p.gamma1 == pytest.approx(1 - 0.01 / ((N - 2) * lam2))
    assert p.gamma2 == pytest.approx(0.01 / ((N - 2) * 1.25))
    assert p.beta == pytest.approx(2 / (0.01 + N))
    assert p.exponent == pytest.approx(N - 2 + 0.01)
    with pytest.raises(ClusterError):
        reg_params(small_product, np.ones(512), 0.01, 0.5)


@given(st.floats(-5.0, 50.0), st.floats(0.5, 2.0), st.floats(1e-4, 0.5), st.floats(1.0, 6.0))
@settings(max_examples=200, deadline=None)
def test_f_inverse_inverts(phi, g1, g2, p):
    t = f_inverse(np.array([phi]), g1, g2, p)[0]
    assert t > 0
    val = g1 * t * t - g2 * t ** (-p)
    assert abs(val - phi) <= 1e-9 * (abs(phi) + g1 * t * t + g2 * t ** (-p))


def test_f_inverse_monotone():
    phi = np.linspace(-3, 10, 200)
    t = f_inverse(phi, 1.1, 0.05, 4.01)
    assert np.all(np.diff(t) > 0)
    with pytest.raises(ValueError):
        f_inverse(phi, 1.0, 0.0, 4.0)


def test_spectraplex_recovers_exact_mixture(rng):
    P = rng.standard_normal((60, 3))
    B = rng.standard_normal((3, 3))
    A = B @ B.T
    A /= np.trace(A)
    b = np.einsum("ia,ab,ib->i", P, A, P)
    fit = spectraplex_lstsq(P, b, np.ones(60))
    assert np.allclose(fit, A, atol=1e-7)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_spectraplex_output_feasible(seed):
    r = np.random.default_rng(seed)
    P = r.standard_normal((30, 3))
    fit = spectraplex_lstsq(P, r.standard_normal(30), r.uniform(0.1, 1, 30))
    assert np.trace(fit) == pytest.approx(1.0, abs=1e-10)
    assert np.linalg.eigvalsh(fit).min() >= -1e-10


def test_constant_is_critical_for_every_eps(small_product):
    # gamma1 - gamma2 = 1 at u = 1 and cos^2 + sin^2 = 1
    for eps in (0.0, 0.1, 1e-3):
        cert = euler_certificate(small_product, np.ones(512), eps)
        assert cert.residual_l2 < 1e-10
        assert np.allclose(cert.c, [0.5, 0.5], atol=1e-8)
        assert cert.k_effective == 2


def test_certificate_cluster_errors(small_product):
    spec = generalized_spectrum(small_product, np.ones(512), count=6)
    with pytest.raises(ClusterError):
        euler_certificate(small_product, np.ones(512), 0.1, spec, cluster=[0, 1])
    with pytest.raises(ClusterError):
        euler_certificate(small_product, np.ones(512), 0.1, spec, cluster=[1, 2, 3])
    with pytest.raises(ClusterError):
        euler_certificate(small_product, np.ones(512), 0.1, spec, cluster=[])


def test_ascent_is_monotone(small_product, rng):
    u0 = 1 + 0.3 * random_smooth_field(small_product, rng)
    res = maximize_F2eps(small_product, u0, 0.1)
    obj = [h["objective"] for h in res.history]
    assert np.all(np.diff(obj) >= -1e-12)
    assert res.converged
    assert res.certificate.residual_l2 <= 1e-6


def test_maximize_validation(small_product):
    with pytest.raises(ValueError):
        maximize_F2eps(small_product, np.ones(512), 0.0)


def test_nodal_continuation_and_resume(small_nodal, tmp_path, rng):
    u0 = 1 + 0.2 * random_smooth_field(small_nodal, rng)
    a = continuation(small_nodal, u0, checkpoint_dir=tmp_path)
    assert a.classification == "Nodal" and a.k == 1
    assert a.checks["identity_error"] <= 1e-3
    assert a.checks["nodal_residual"] <= 1e-4
    assert a.checks["sign_change"]
    files = sorted(tmp_path.glob("checkpoint_eps_*.json"))
    assert len(files) == 5
    data = read_checkpoint(files[0])
    assert set(data) >= {"epsilon", "u", "lambda2", "c", "residual_l2"}
    b = continuation(small_nodal, u0, checkpoint_dir=tmp_path)
    assert all(p["resumed"] for p in b.per_epsilon)
    assert b.classification == "Nodal"
    assert np.allclose(b.u_final.values, a.u_final.values, atol=1e-8)


def test_single_stage_is_unresolved(small_nodal):
    r = continuation(small_nodal, np.ones(small_nodal.node_count), schedule=[5.0])
    assert r.classification == "Unresolved"


def test_schedule_validation(small_nodal):
    with pytest.raises(ValueError):
        continuation(small_nodal, np.ones(small_nodal.node_count), schedule=[1e-2, 1e-1])
    with pytest.raises(ValueError):
        continuation(small_nodal, np.ones(small_nodal.node_count), schedule=[])


def test_nu_one_is_rejected():
    m = with_potential(build_circle(1.0, 32, dim=3), -0.5)
    with pytest.raises(ClusterError):
        maximize_F2eps(m, np.ones(32), 0.1)


def test_harmonic_residual_of_circle_map(small_product):
    t = small_product.coords[:, 0]
    psi = np.column_stack([np.cos(t), np.sin(t)])
    assert harmonic_map_residual(small_product, np.ones(512), psi) < 1e-12


def test_floor_and_lipschitz(small_product):
    u = np.linspace(0, 2, 512)
    assert floor_truncate(small_product, u, 0.5).values.min() == 0.5
    with pytest.raises(ValueError):
        floor_truncate(small_product, u, 0.0)
    assert lipschitz_proxy(small_product, np.ones(512)) == 0.0


def test_settings_roundtrip():
    s = OptimizerSettings(eul_tol=1e-7)
    assert json.loads(json.dumps(s.__dict__))["eul_tol"] == 1e-7
