import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from conflap.manifold import (
    DiscreteManifold,
    MeshFormatError,
    build_circle,
    normalize_volume,
    product,
    read_mesh,
    with_dim,
    with_potential,
    write_mesh,
)
from conflap.oracle import discrete_circle_spectrum


def _dense_eigs(m):
    K = m.operator.toarray()
    w = m.weights
    s = 1 / np.sqrt(w)
    return np.linalg.eigvalsh(K * s[:, None] * s[None, :])


@pytest.mark.parametrize("radius,nodes", [(1.0, 16), (0.5, 24), (2.0, 9)])
def test_circle_matches_exact_discrete_spectrum(radius, nodes):
    m = build_circle(radius, nodes, dim=3)
    assert np.allclose(_dense_eigs(m), discrete_circle_spectrum(radius, nodes), atol=1e-10)


def test_circle_is_volume_normalized_and_annihilates_constants():
    m = build_circle(1.0, 40)
    assert m.volume == pytest.approx(1.0, abs=1e-14)
    assert np.max(np.abs(m.stiffness @ np.ones(40))) < 1e-12
    assert abs(m.stiffness - m.stiffness.T).max() < 1e-14


def test_circle_rejects_bad_input():
    with pytest.raises(ValueError):
        build_circle(-1.0, 16)
    with pytest.raises(ValueError):
        build_circle(1.0, 4)


def test_conformal_exponents():
    m = build_circle(1.0, 16, dim=3)
    assert m.N == pytest.approx(6.0)
    assert m.conformal_constant == pytest.approx(1 / 8)
    assert with_dim(m, 4).N == pytest.approx(4.0)


def test_product_spectrum_is_pairwise_sum():
    a, b = build_circle(1.0, 10), build_circle(0.5, 8)
    lam = _dense_eigs(product(a, b))
    expect = np.sort(np.add.outer(discrete_circle_spectrum(1.0, 10),
                                  discrete_circle_spectrum(0.5, 8)).ravel())
    assert np.allclose(lam, expect, atol=1e-9)


def test_product_node_order_and_coords():
    a, b = build_circle(1.0, 10), build_circle(0.5, 8)
    p = product(a, b)
    assert p.node_count == 80
    assert p.dim == a.dim + b.dim
    assert np.allclose(p.coords[8 * 3 + 5], [a.coords[3, 0], b.coords[5, 0]])


def test_potential_shifts_every_eigenvalue():
    m = build_circle(1.0, 12)
    assert np.allclose(_dense_eigs(with_potential(m, -2.5)), _dense_eigs(m) - 2.5, atol=1e-10)
    with pytest.raises(ValueError):
        with_potential(m, np.inf)


def test_manifold_validation():
    S = sp.csr_matrix(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    with pytest.raises(ValueError):
        DiscreteManifold(dim=3, weights=np.array([1.0, 0.0]), stiffness=S, potential=0.0)
    with pytest.raises(ValueError):
        DiscreteManifold(dim=3, weights=np.ones(3), stiffness=S, potential=0.0)


@given(st.floats(0.3, 3.0), st.integers(8, 30))
@settings(max_examples=20, deadline=None)
def test_normalization_preserves_spectrum(radius, nodes):
    raw = build_circle(radius, nodes)
    scaled = DiscreteManifold(dim=raw.dim, weights=raw.weights * 7.0,
                              stiffness=raw.stiffness * 7.0, potential=raw.potential)
    assert np.allclose(_dense_eigs(normalize_volume(scaled)), _dense_eigs(raw), atol=1e-9)


def test_mesh_roundtrip(tmp_path):
    m = with_potential(product(build_circle(1.0, 8), build_circle(0.5, 8)), -1.5)
    path = tmp_path / "m.mesh"
    write_mesh(m, path)
    r = read_mesh(path)
    assert r.dim == m.dim
    assert np.array_equal(r.weights, m.weights)
    assert np.array_equal(r.potential, m.potential)
    assert abs(r.stiffness - m.stiffness).max() == 0.0


@pytest.mark.parametrize("text,match", [
    ("", "empty"),
    ("3 2 1\nw 0 0.5\nw 1 0.5\n", "declares 1"),
    ("3 2 0\nw 0 0.5\n", "missing weight"),
    ("3 2 1\nw 0 0.5\nw 1 0.5\nk 1 0 -1.0\n", "upper triangle"),
    ("3 2 0\nw 0 0.5\nq 1 0.5\n", "unrecognized"),
    ("3 2 0\nw 0 x\n", ":2:"),
])
def test_mesh_errors(tmp_path, text, match):
    path = tmp_path / "bad.mesh"
    path.write_text(text)
    with pytest.raises(MeshFormatError, match=match):
        read_mesh(path)
