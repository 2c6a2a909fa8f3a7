"""Discrete closed manifolds: lumped quadrature, weak-form stiffness, potential.

A :class:`DiscreteManifold` stores everything needed to assemble the discrete
conformal Laplacian ``K = S + diag(w * p)`` and its lumped mass ``diag(w)``.
Weights are normalized to total volume one when a manifold is built; the
stiffness is rescaled by the same factor so generalized eigenvalues are left
untouched (the measure is renormalized, not the metric).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DiscreteManifold",
    "MeshFormatError",
    "build_circle",
    "product",
    "with_potential",
    "normalize_volume",
    "with_dim",
    "read_mesh",
    "write_mesh",
]


class MeshFormatError(ValueError):
    """Raised for malformed mesh files."""


@dataclass(frozen=True, eq=False)
class DiscreteManifold:
    """Discrete ``(M, g, R_g)``.

    Parameters
    ----------
    dim : int
        Manifold dimension ``m``. Conformal exponents need ``m >= 3``; factors
        standing in for a higher-dimensional space may carry a nominal
        dimension larger than their grid dimension.
    weights : ndarray, shape (n,)
        Lumped quadrature weights (the volume element).
    stiffness : sparse matrix, shape (n, n)
        Weak-form ``-Delta``; symmetric, annihilates constants.
    potential : ndarray, shape (n,)
        Nodal values of ``c_m R_g``.
    coords : ndarray, shape (n, d), optional
        Angular coordinates of the nodes for the built-in generators.
    """

    dim: int
    weights: np.ndarray
    stiffness: sp.csr_matrix
    potential: np.ndarray
    coords: Optional[np.ndarray] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty vector")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("quadrature weights must be finite and strictly positive")
        S = sp.csr_matrix(self.stiffness, dtype=float)
        if S.shape != (w.size, w.size):
            raise ValueError("stiffness shape does not match the number of nodes")
        p = np.broadcast_to(np.asarray(self.potential, dtype=float), w.shape).copy()
        if np.any(~np.isfinite(p)):
            raise ValueError("potential must be finite everywhere")
        w.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "stiffness", S)
        object.__setattr__(self, "potential", p)
        if self.coords is not None:
            c = np.asarray(self.coords, dtype=float)
            if c.ndim == 1:
                c = c[:, None]
            c.setflags(write=False)
            object.__setattr__(self, "coords", c)

    @property
    def node_count(self) -> int:
        return self.weights.size

    @property
    def volume(self) -> float:
        return float(self.weights.sum())

    @property
    def N(self) -> float:
        """Critical Sobolev exponent ``2m / (m - 2)``."""
        if self.dim <= 2:
            raise ValueError(f"conformal exponents need dim >= 3, got dim={self.dim}")
        return 2.0 * self.dim / (self.dim - 2.0)

    @property
    def weight_exponent(self) -> float:
        """``N - 2 = 4 / (m - 2)``."""
        return self.N - 2.0

    @property
    def conformal_constant(self) -> float:
        """``c_m = (m - 2) / (4 (m - 1))``."""
        return (self.dim - 2.0) / (4.0 * (self.dim - 1.0))

    @property
    def operator(self) -> sp.csr_matrix:
        """``K = S + diag(w p)``, the weak-form conformal Laplacian."""
        if "K" not in self._cache:
            K = self.stiffness + sp.diags(self.weights * self.potential)
            self._cache["K"] = sp.csr_matrix(K)
        return self._cache["K"]

    @property
    def adjacency(self) -> sp.csr_matrix:
        """Boolean node graph taken from the stiffness sparsity pattern."""
        if "adj" not in self._cache:
            A = sp.csr_matrix(self.stiffness, copy=True)
            A.setdiag(0)
            A.eliminate_zeros()
            A = (abs(A) > 0).astype(np.int8)
            self._cache["adj"] = sp.csr_matrix(A)
        return self._cache["adj"]

    def edges(self):
        """Return ``(i, j, conductance, length)`` arrays for each edge ``i < j``.

        The conductance is ``-S_ij``. Lengths use ``sqrt(mean(w_i, w_j) / k_ij)``,
        which is exact for the uniform tensor grids built here.
        """
        if "edges" not in self._cache:
            C = sp.triu(self.stiffness, k=1).tocoo()
            keep = C.data != 0
            i, j, k = C.row[keep], C.col[keep], -C.data[keep]
            with np.errstate(divide="ignore", invalid="ignore"):
                length = np.sqrt(0.5 * (self.weights[i] + self.weights[j]) / np.abs(k))
            self._cache["edges"] = (i, j, k, length)
        return self._cache["edges"]

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, f))


def build_circle(radius: float, nodes: int, dim: int = 1) -> DiscreteManifold:
    """Uniform periodic grid on a circle of the given radius.

    Second-order centered differences; the eigenvalues of ``-Delta`` approach
    ``k^2 / radius^2``, each nonzero one double. ``dim`` is the nominal
    dimension used for conformal exponents (see :func:`with_dim`).
    """
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if nodes < 8:
        raise ValueError(f"need at least 8 nodes on a circle, got {nodes}")
    n = int(nodes)
    h = 2.0 * np.pi * radius / n
    idx = np.arange(n)
    rows = np.concatenate([idx, idx, idx])
    cols = np.concatenate([idx, (idx + 1) % n, (idx - 1) % n])
    vals = np.concatenate([np.full(n, 2.0 / h), np.full(n, -1.0 / h), np.full(n, -1.0 / h)])
    S = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    theta = 2.0 * np.pi * idx / n
    m = DiscreteManifold(dim=dim, weights=np.full(n, h), stiffness=S,
                         potential=np.zeros(n), coords=theta[:, None])
    return normalize_volume(m)


def product(a: DiscreteManifold, b: DiscreteManifold) -> DiscreteManifold:
    """Tensor-sum product ``K_a (x) M_b + M_a (x) K_b``.

    Node ``(i, j)`` has index ``i * b.node_count + j``. Potentials add, so a
    product of factors with potentials ``p_a``, ``p_b`` carries ``p_a + p_b``.
    """
    Ma = sp.diags(a.weights)
    Mb = sp.diags(b.weights)
    S = sp.kron(a.stiffness, Mb) + sp.kron(Ma, b.stiffness)
    w = np.kron(a.weights, b.weights)
    p = (a.potential[:, None] + b.potential[None, :]).ravel()
    coords = None
    if a.coords is not None and b.coords is not None:
        na, nb = a.node_count, b.node_count
        coords = np.hstack([np.repeat(a.coords, nb, axis=0), np.tile(b.coords, (na, 1))])
    return DiscreteManifold(dim=a.dim + b.dim, weights=w, stiffness=sp.csr_matrix(S),
                            potential=p, coords=coords)


def with_potential(m: DiscreteManifold, v: Union[float, np.ndarray]) -> DiscreteManifold:
    """Replace the potential by ``v`` (a constant or one value per node)."""
    v = np.broadcast_to(np.asarray(v, dtype=float), m.weights.shape)
    if np.any(~np.isfinite(v)):
        raise ValueError("potential must be finite everywhere")
    return replace(m, potential=v.copy(), _cache={})


def with_dim(m: DiscreteManifold, dim: int) -> DiscreteManifold:
    """Same discrete data with a different nominal dimension."""
    return replace(m, dim=int(dim), _cache={})


def normalize_volume(m: DiscreteManifold) -> DiscreteManifold:
    """Rescale weights to total one; stiffness scales alike, eigenvalues do not."""
    vol = m.weights.sum()
    if vol == 1.0:
        return m
    return replace(m, weights=m.weights / vol, stiffness=m.stiffness / vol, _cache={})


def read_mesh(path: Union[str, Path]) -> DiscreteManifold:
    """Read the plain-text mesh format.

    Header ``dim n_nodes n_entries``; then ``w i weight``, ``p i value`` and
    ``k i j value`` lines (upper-triangle stiffness entries, 0-based). Lines
    starting with ``#`` are ignored. The result is volume-normalized.
    """
    path = Path(path)
    header = None
    w = p = None
    ri, rj, rv = [], [], []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        try:
            if header is None:
                if len(tok) != 3:
                    raise MeshFormatError("header must be 'dim n_nodes n_entries'")
                header = (int(tok[0]), int(tok[1]), int(tok[2]))
                w = np.full(header[1], np.nan)
                p = np.zeros(header[1])
            elif tok[0] == "w" and len(tok) == 3:
                w[int(tok[1])] = float(tok[2])
            elif tok[0] == "p" and len(tok) == 3:
                p[int(tok[1])] = float(tok[2])
            elif tok[0] == "k" and len(tok) == 4:
                i, j = int(tok[1]), int(tok[2])
                if j < i:
                    raise MeshFormatError("stiffness entries must be upper triangle (i <= j)")
                ri.append(i)
                rj.append(j)
                rv.append(float(tok[3]))
            else:
                raise MeshFormatError(f"unrecognized record {tok[0]!r}")
        except (ValueError, IndexError) as exc:
            raise MeshFormatError(f"{path}:{lineno}: {exc}") from None
    if header is None:
        raise MeshFormatError(f"{path}: empty mesh file")
    dim, n, n_entries = header
    if len(rv) != n_entries:
        raise MeshFormatError(f"{path}: header declares {n_entries} stiffness entries, found {len(rv)}")
    if np.any(np.isnan(w)):
        raise MeshFormatError(f"{path}: missing weight for node {int(np.flatnonzero(np.isnan(w))[0])}")
    ri, rj, rv = np.array(ri, dtype=int), np.array(rj, dtype=int), np.array(rv)
    off = ri != rj
    rows = np.concatenate([ri, rj[off]])
    cols = np.concatenate([rj, ri[off]])
    vals = np.concatenate([rv, rv[off]])
    S = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return normalize_volume(DiscreteManifold(dim=dim, weights=w, stiffness=S, potential=p))


def write_mesh(m: DiscreteManifold, path: Union[str, Path]) -> None:
    """Write ``m`` in the format read by :func:`read_mesh`."""
    U = sp.triu(m.stiffness).tocoo()
    lines = [f"{m.dim} {m.node_count} {U.nnz}"]
    lines += [f"w {i} {float(x)!r}" for i, x in enumerate(m.weights)]
    lines += [f"p {i} {float(x)!r}" for i, x in enumerate(m.potential)]
    order = np.lexsort((U.col, U.row))
    lines += [f"k {U.row[t]} {U.col[t]} {float(U.data[t])!r}" for t in order]
    Path(path).write_text("\n".join(lines) + "\n")
