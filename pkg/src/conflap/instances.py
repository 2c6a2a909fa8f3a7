"""Ready-made test manifolds."""

from __future__ import annotations

import numpy as np

from .manifold import DiscreteManifold, build_circle, product, with_potential
from .speclib import generalized_spectrum

__all__ = ["product_example", "nodal_example", "tune_offset", "random_smooth_field"]


def product_example(n_circle: int = 256, n_factor: int = 128, V: float = -2.0,
                    factor_radius: float = 0.5, factor_dim: int = 2) -> DiscreteManifold:
    """Unit circle times a small circle standing in for a negatively curved factor.

    The small circle (``lambda_1 = 1 / factor_radius^2 > 1``) carries the nominal
    dimension ``factor_dim`` so the product has ``m = factor_dim + 1``. The
    constant potential ``V < -1`` makes ``lambda_2 = 1 + V < 0`` double, with
    eigenfunctions ``cos t``, ``sin t`` of the unit-circle angle ``t`` (the first
    coordinate column).
    """
    a = build_circle(1.0, n_circle, dim=1)
    b = build_circle(factor_radius, n_factor, dim=factor_dim)
    return with_potential(product(a, b), V)


def tune_offset(m: DiscreteManifold, shape, target_nu: int) -> float:
    """Offset ``c`` making ``shape + c`` have exactly ``target_nu`` negative eigenvalues.

    At ``u = 1`` a constant potential shifts every generalized eigenvalue by
    exactly ``c``, so the admissible offsets form the open interval
    ``(-lambda_{nu+1}, -lambda_nu)`` of the ``shape`` spectrum; the midpoint
    keeps zero as far from the spectrum as possible.
    """
    base = with_potential(m, shape)
    spec = generalized_spectrum(base, np.ones(m.node_count), count=target_nu + 2, method="dense")
    lam = spec.eigenvalues
    if target_nu < 1 or lam[target_nu] - lam[target_nu - 1] <= 0:
        raise ValueError("cannot separate the requested number of eigenvalues")
    return float(-0.5 * (lam[target_nu - 1] + lam[target_nu]))


def nodal_example(nodes: int = 512, dim: int = 3, amplitude: float = 1.0) -> DiscreteManifold:
    """Circle with potential ``c + amplitude cos(2t)`` and exactly two negative eigenvalues.

    The ``cos(2t)`` term splits the double first-harmonic pair so that a
    negative count of two is possible; ``c`` is centered in the admissible
    interval by :func:`tune_offset`.
    """
    m = build_circle(1.0, nodes, dim=dim)
    t = m.coords[:, 0]
    shape = amplitude * np.cos(2.0 * t)
    c = tune_offset(m, shape, 2)
    return with_potential(m, shape + c)


def random_smooth_field(m: DiscreteManifold, rng: np.random.Generator, max_freq: int = 2) -> np.ndarray:
    """Low-frequency trigonometric polynomial in the node angles, scaled to ``max |g| = 1``.

    Frequencies run over integer vectors with entries in ``[-max_freq, max_freq]``
    (one representative of each ``+-`` pair, constant excluded), with standard
    normal coefficients.
    """
    if m.coords is None:
        raise ValueError("random fields need angular node coordinates")
    X = m.coords
    d = X.shape[1]
    grids = np.meshgrid(*([np.arange(-max_freq, max_freq + 1)] * d), indexing="ij")
    freqs = np.stack([g.ravel() for g in grids], axis=1)
    # keep the lexicographically positive half
    first = np.array([next((v for v in f if v != 0), 0) for f in freqs])
    freqs = freqs[first > 0]
    g = np.zeros(m.node_count)
    for k in freqs:
        arg = X @ k
        g += rng.standard_normal() * np.cos(arg) + rng.standard_normal() * np.sin(arg)
    return g / np.max(np.abs(g))
