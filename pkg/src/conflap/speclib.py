"""Generalized eigenproblems ``K phi = lambda diag(w u^(N-2)) phi``.

Nodes whose weight ``w_i u_i^(N-2)`` falls below ``DEFLATION_THRESHOLD`` times
the largest one are *dead*: they carry no mass, so test functions are free
there. They are eliminated by a Schur complement (the energy is minimized over
their values), which is the discrete form of restricting the min-max to planes
that stay independent after multiplication by ``u^((N-2)/2)``.

Both solver paths use the spectral transformation ``M x = mu (K - sigma M) x``
with ``sigma`` strictly below ``lambda_1``. This keeps the computation well
conditioned when ``u`` is tiny on part of the manifold (the reciprocal mass
blows up there, the transformed pencil does not).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .manifold import DiscreteManifold

__all__ = [
    "DEFLATION_THRESHOLD",
    "DENSE_LIMIT",
    "ConformalFactor",
    "SpectrumSlice",
    "SolverError",
    "ZeroConformalFactorError",
    "MultipleGroundStateError",
    "KernelWarning",
    "as_factor",
    "weighted_mass",
    "generalized_spectrum",
    "negative_count",
    "lambda2_orthogonal",
    "first_eigen_sign",
    "reduced_pencil",
]

DEFLATION_THRESHOLD = 1e-14
DENSE_LIMIT = 2000


class SolverError(RuntimeError):
    """Eigensolver failure (non-convergence or residual above tolerance)."""


class ZeroConformalFactorError(ValueError):
    """The conformal factor has no node above the deflation threshold."""


class MultipleGroundStateError(RuntimeError):
    """``lambda_1`` is numerically multiple (disconnected support)."""


class KernelWarning(UserWarning):
    """An eigenvalue sits within ``null_tol`` of zero."""


@dataclass(frozen=True, eq=False)
class ConformalFactor:
    """Nonnegative nodal conformal factor.

    ``N`` is fixed by the manifold dimension; ``support_mask`` marks nodes whose
    weighted mass exceeds the deflation threshold.
    """

    values: np.ndarray
    N: float
    support_mask: np.ndarray

    @classmethod
    def from_values(cls, m: DiscreteManifold, values, normalize: bool = False) -> "ConformalFactor":
        u = np.broadcast_to(np.asarray(values, dtype=float), m.weights.shape).copy()
        if np.any(~np.isfinite(u)):
            raise ValueError("conformal factor must be finite")
        if np.any(u < 0):
            raise ValueError("conformal factor must be nonnegative")
        if not np.any(u > 0):
            raise ZeroConformalFactorError("zero conformal factor")
        N = m.N
        if normalize:
            u = u / m.integrate(u**N) ** (1.0 / N)
        mass = m.weights * u ** (N - 2.0)
        mask = mass > DEFLATION_THRESHOLD * mass.max()
        u.setflags(write=False)
        mask.setflags(write=False)
        return cls(values=u, N=N, support_mask=mask)

    @property
    def has_dead_nodes(self) -> bool:
        return not bool(self.support_mask.all())

    def volume(self, m: DiscreteManifold) -> float:
        """Conformal volume ``sum w u^N``."""
        return m.integrate(self.values**self.N)


def as_factor(m: DiscreteManifold, u) -> ConformalFactor:
    if isinstance(u, ConformalFactor):
        return u
    return ConformalFactor.from_values(m, u)


def weighted_mass(m: DiscreteManifold, u) -> sp.dia_matrix:
    """``diag(w u^(N-2))`` with dead entries set to exactly zero."""
    u = as_factor(m, u)
    d = m.weights * u.values ** (u.N - 2.0)
    d = np.where(u.support_mask, d, 0.0)
    return sp.diags(d)


@dataclass(eq=False)
class SpectrumSlice:
    """The lowest generalized eigenpairs of ``(K, M_u)``.

    Eigenvectors are columns over all nodes, ``M_u``-orthonormal; off the
    support they are zero-filled unless a harmonic extension was requested.
    ``cluster2`` holds the (0-based) indices of eigenvalues within
    ``cluster_tol * |lambda_2|`` of ``lambda_2``. ``nu`` counts negative
    eigenvalues and is exact: the slice always reaches a nonnegative one.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    cluster2: np.ndarray
    nu: int
    residuals: np.ndarray
    method: str
    sigma: float
    support_mask: np.ndarray
    singular_extension: bool = False
    cluster_tol: float = 1e-6
    info: dict = field(default_factory=dict)

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda2(self) -> float:
        return float(self.eigenvalues[1])

    @property
    def cluster_vectors(self) -> np.ndarray:
        return self.eigenvectors[:, self.cluster2]


# ---------------------------------------------------------------------------
# reduced pencil on the support


def reduced_pencil(m: DiscreteManifold, u: ConformalFactor, dense: bool):
    """Eliminate dead nodes from ``(K, M_u)``.

    Returns ``(K_S, mass_S, extend, singular)`` where ``extend`` maps support
    vectors to the harmonic extension on all nodes (``None`` when nothing was
    eliminated) and ``singular`` flags a singular dead block, in which case the
    dead values are pinned to zero instead of eliminated.
    """
    K = m.operator
    mask = u.support_mask
    mass = (m.weights * u.values ** (u.N - 2.0))[mask]
    if not u.has_dead_nodes:
        return (K.toarray() if dense else K), mass, None, False
    S_idx = np.flatnonzero(mask)
    D_idx = np.flatnonzero(~mask)
    K = K.tocsr()
    KSS = K[S_idx][:, S_idx]
    KSD = K[S_idx][:, D_idx]
    KDD = K[D_idx][:, D_idx]
    try:
        lu = spla.splu(sp.csc_matrix(KDD))
        X = lu.solve(KSD.T.toarray())
        if not np.all(np.isfinite(X)) or np.linalg.cond(KDD.toarray()) > 1e13:
            raise RuntimeError
    except RuntimeError:
        Ks = KSS.toarray() if dense else KSS
        return Ks, mass, None, True
    Ks = KSS.toarray() - KSD @ X
    Ks = 0.5 * (Ks + Ks.T)
    if not dense:
        Ks = sp.csr_matrix(Ks)

    def extend(V):
        V = np.atleast_2d(V.T).T
        out = np.zeros((m.node_count, V.shape[1]))
        out[S_idx] = V
        out[D_idx] = -(X @ V)
        return out

    return Ks, mass, extend, False


def _gershgorin_floor(Ks, mass) -> float:
    """Lower bound on the smallest eigenvalue of ``(Ks, diag(mass))``."""
    s = 1.0 / np.sqrt(mass)
    if sp.issparse(Ks):
        C = sp.diags(s) @ Ks @ sp.diags(s)
        diag = C.diagonal()
        off = np.asarray(abs(C).sum(axis=1)).ravel() - np.abs(diag)
    else:
        C = Ks * s[:, None] * s[None, :]
        diag = np.diag(C)
        off = np.abs(C).sum(axis=1) - np.abs(diag)
    return float(np.min(diag - off))


def _dense_shifted(Ks, mass, count, sigma):
    B = Ks - sigma * np.diag(mass)
    n = mass.size
    mu, X = sla.eigh(np.diag(mass), B, subset_by_index=[n - count, n - 1], driver="gvx")
    order = np.argsort(mu)[::-1]
    mu, X = mu[order], X[:, order]
    return sigma + 1.0 / mu, X


def _is_pd(A) -> bool:
    try:
        sla.cholesky(A, lower=True, check_finite=False)
        return True
    except sla.LinAlgError:
        return False


def _solve_dense(Ks, mass, count):
    lb = _gershgorin_floor(Ks, mass)
    sigma = lb - 1e-3 * (1.0 + abs(lb))
    for _ in range(60):
        if _is_pd(Ks - sigma * np.diag(mass)):
            break
        sigma -= 2.0 * (1.0 + abs(sigma))
    else:
        raise SolverError("could not place a shift below lambda_1")
    lam, X = _dense_shifted(Ks, mass, count, sigma)
    # pull the shift close to lambda_1 for accuracy
    target = lam[0] - max(1.0, 0.5 * abs(lam[0]))
    if target > sigma + 1e-12 and _is_pd(Ks - target * np.diag(mass)):
        sigma = target
        lam, X = _dense_shifted(Ks, mass, count, sigma)
    return lam, X, sigma, {}


def _solve_sparse(Ks, mass, count, tol):
    lb = _gershgorin_floor(Ks, mass)
    sigma = lb - 0.1 * (1.0 + abs(lb))
    M = sp.diags(mass).tocsc()
    A = sp.csc_matrix(Ks)
    info = {}
    for attempt in range(2):
        try:
            lam, X = spla.eigsh(A, k=count, M=M, sigma=sigma, which="LM", tol=tol * 1e-3,
                                maxiter=max(2000, 50 * count))
        except spla.ArpackNoConvergence as exc:
            raise SolverError(f"shift-invert Lanczos did not converge "
                              f"({len(exc.eigenvalues)} of {count} pairs)") from None
        order = np.argsort(lam)
        lam, X = lam[order], X[:, order]
        info[f"sigma_{attempt}"] = sigma
        target = lam[0] - max(1.0, 0.5 * abs(lam[0]))
        if target <= sigma + 1e-12 or attempt == 1:
            break
        sigma = target
    return lam, X, sigma, info


def generalized_spectrum(
    m: DiscreteManifold,
    u,
    count: int = 6,
    cluster_tol: float = 1e-6,
    solver_tol: float = 1e-8,
    method: str = "auto",
    extension: str = "zero",
) -> SpectrumSlice:
    """Lowest generalized eigenvalues of ``(K, M_u)`` on the support of ``u``.

    At least ``count`` pairs are returned; more when needed to reach the first
    nonnegative eigenvalue (so ``nu`` is exact) or to close the ``lambda_2``
    cluster.

    Parameters
    ----------
    method : {"auto", "dense", "sparse"}
        ``auto`` uses the dense pencil below ``DENSE_LIMIT`` support nodes.
    extension : {"zero", "harmonic"}
        How eigenvectors are continued onto dead nodes.
    """
    u = as_factor(m, u)
    n_support = int(u.support_mask.sum())
    if n_support < 2:
        raise ZeroConformalFactorError("support has fewer than two nodes")
    if method == "auto":
        method = "dense" if n_support <= DENSE_LIMIT else "sparse"
    if method not in ("dense", "sparse"):
        raise ValueError(f"unknown method {method!r}")
    dense = method == "dense"
    Ks, mass, extend, singular = reduced_pencil(m, u, dense=dense)

    count = max(2, min(int(count), n_support - (0 if dense else 1)))
    cap = n_support if dense else n_support - 1
    while True:
        if dense:
            lam, X, sigma, info = _solve_dense(Ks, mass, count)
        else:
            lam, X, sigma, info = _solve_sparse(Ks, mass, count, solver_tol)
        need_more = lam[-1] < 0 or abs(lam[-1] - lam[1]) <= cluster_tol * abs(lam[1])
        if not need_more or count >= cap:
            break
        count = min(cap, 2 * count)

    # M-normalize, fix signs for reproducibility
    norms = np.sqrt(np.einsum("ij,i,ij->j", X, mass, X))
    X = X / norms
    piv = np.argmax(np.abs(X), axis=0)
    X = X * np.sign(X[piv, np.arange(X.shape[1])])

    R = Ks @ X - (mass[:, None] * X) * lam[None, :]
    residuals = np.linalg.norm(R, axis=0) / np.linalg.norm(X, axis=0)
    if np.any(residuals > solver_tol):
        raise SolverError(f"{method} eigensolve residual {residuals.max():.3e} exceeds "
                          f"solver_tol={solver_tol:.1e}")

    if extension == "harmonic" and extend is not None:
        V = extend(X)
    elif extension in ("zero", "harmonic"):
        V = np.zeros((m.node_count, X.shape[1]))
        V[u.support_mask] = X
    else:
        raise ValueError(f"unknown extension {extension!r}")

    lam2 = lam[1]
    cluster = np.flatnonzero(np.abs(lam - lam2) <= cluster_tol * abs(lam2))
    cluster = cluster[cluster >= 1]
    nu = int(np.sum(lam < 0))
    info["n_support"] = n_support
    return SpectrumSlice(eigenvalues=lam, eigenvectors=V, cluster2=cluster, nu=nu,
                         residuals=residuals, method=method, sigma=float(sigma),
                         support_mask=u.support_mask, singular_extension=singular,
                         cluster_tol=cluster_tol, info=info)


def negative_count(m: DiscreteManifold, u=None, null_tol: float = 1e-8, **kw) -> int:
    """Number of negative generalized eigenvalues (``nu``).

    By Sylvester's law of inertia this does not depend on a strictly positive
    ``u``. Emits :class:`KernelWarning` if an eigenvalue is within ``null_tol``
    of zero.
    """
    u = as_factor(m, np.ones(m.node_count) if u is None else u)
    if np.any(u.values <= 0):
        raise ValueError("negative_count needs a strictly positive conformal factor")
    spec = generalized_spectrum(m, u, **kw)
    if np.min(np.abs(spec.eigenvalues)) < null_tol:
        warnings.warn(f"eigenvalue within {null_tol:g} of zero: 0 may belong to the spectrum",
                      KernelWarning, stacklevel=2)
    return spec.nu


def lambda2_orthogonal(m: DiscreteManifold, u, cluster_tol: float = 1e-6,
                       spectrum: Optional[SpectrumSlice] = None) -> float:
    """``lambda_2`` as the minimum Rayleigh quotient on the ``M_u``-complement of ``phi_1``.

    Dense projected solve: a Householder basis of ``{x : x^T M_u phi_1 = 0}``
    reduces the pencil by one dimension; its lowest eigenvalue is ``lambda_2``.
    """
    u = as_factor(m, u)
    if spectrum is None:
        spectrum = generalized_spectrum(m, u, count=3, cluster_tol=cluster_tol)
    lam = spectrum.eigenvalues
    if lam[1] - lam[0] <= cluster_tol * max(abs(lam[0]), 1e-300):
        raise MultipleGroundStateError("lambda_1 is numerically multiple; support may be disconnected")
    Ks, mass, _, _ = reduced_pencil(m, u, dense=True)
    phi1 = spectrum.eigenvectors[u.support_mask, 0]
    v = mass * phi1
    Q, _ = np.linalg.qr(v[:, None], mode="complete")
    Q = Q[:, 1:]
    A = Q.T @ Ks @ Q
    B = (Q.T * mass) @ Q
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    return float(sla.eigh(A, B, eigvals_only=True, subset_by_index=[0, 0])[0])


def first_eigen_sign(m: DiscreteManifold, u, cluster_tol: float = 1e-6,
                     spectrum: Optional[SpectrumSlice] = None) -> dict:
    """Report whether ``phi_1`` has one sign on the support and ``lambda_1`` is simple."""
    u = as_factor(m, u)
    if spectrum is None:
        spectrum = generalized_spectrum(m, u, count=3, cluster_tol=cluster_tol)
    phi = spectrum.eigenvectors[u.support_mask, 0]
    tol = 1e-10 * np.max(np.abs(phi))
    constant_sign = bool(np.all(phi >= -tol) or np.all(phi <= tol))
    lam = spectrum.eigenvalues
    simple = bool(lam[1] - lam[0] > cluster_tol * max(abs(lam[0]), 1e-300))
    return {"constant_sign": constant_sign, "simple": simple,
            "gap": float(lam[1] - lam[0])}
