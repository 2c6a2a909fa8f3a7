"""Regularized second-eigenvalue maximization.

The regularized functional is

    F2eps(u) = lambda_2(u) V^((N-2)/N) - (sum w u^-eps) V^(eps/N),   V = sum w u^N.

Its maximizers satisfy ``gamma1 u^2 - gamma2 u^(2-N-eps) = sum_i c_i phi_i^2``
with ``c`` in the simplex over an orthonormal basis of the ``lambda_2``
eigenspace. The optimizer iterates ``u <- f^-1(Phi)`` where
``f(t) = gamma1 t^2 - gamma2 t^-(N-2+eps)`` is strictly increasing and
``Phi`` is the best-fitting mixture of squared eigenfunctions, with a
monotone line search on ``F2eps``.

Mixtures are fitted over PSD trace-one matrices ``A`` (``Phi = x^T A x`` with
``x`` the cluster eigenvectors); the eigenvalues of ``A`` are the simplex
weights ``c`` in the eigenbasis of ``A``. This makes the fit independent of
the arbitrary basis chosen inside a degenerate eigenspace.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .manifold import DiscreteManifold
from .speclib import (
    ConformalFactor,
    SolverError,
    DENSE_LIMIT,
    SpectrumSlice,
    as_factor,
    generalized_spectrum,
    reduced_pencil,
)

__all__ = [
    "RegParams",
    "EulerCertificate",
    "OptimizerSettings",
    "MaximizeResult",
    "ExtremalReport",
    "ClusterError",
    "ConvergenceError",
    "F2",
    "F2eps",
    "reg_params",
    "spectraplex_lstsq",
    "euler_certificate",
    "f_inverse",
    "maximize_F2eps",
    "continuation",
    "classify",
    "floor_truncate",
    "lipschitz_proxy",
    "write_checkpoint",
    "read_checkpoint",
    "DEFAULT_SCHEDULE",
]

DEFAULT_SCHEDULE = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)


class ClusterError(RuntimeError):
    """The ``lambda_2`` cluster is inconsistent with the negative count or collides with ``lambda_1``."""


class ConvergenceError(RuntimeError):
    """A scalar root-finder or the fixed-point iteration failed."""


# ---------------------------------------------------------------------------
# functionals


def _positive_values(m: DiscreteManifold, u) -> np.ndarray:
    u = as_factor(m, u).values
    if np.any(u <= 0):
        raise ValueError("u has a zero node: not admissible for the regularized functional")
    return u


def F2(m: DiscreteManifold, u, spectrum: Optional[SpectrumSlice] = None, **solver_kw) -> float:
    """Scale-invariant ``lambda_2(u) (sum w u^N)^((N-2)/N)``."""
    u = as_factor(m, u)
    if spectrum is None:
        spectrum = generalized_spectrum(m, u, count=4, **solver_kw)
    N = m.N
    return float(spectrum.lambda2 * u.volume(m) ** ((N - 2.0) / N))


def F2eps(m: DiscreteManifold, u, eps: float, spectrum: Optional[SpectrumSlice] = None,
          **solver_kw) -> float:
    """Regularized functional; requires ``u > 0`` on every node."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    vals = _positive_values(m, u)
    N = m.N
    vol = m.integrate(vals**N)
    penalty = m.integrate(vals ** (-eps)) * vol ** (eps / N)
    return F2(m, u, spectrum=spectrum, **solver_kw) - float(penalty)


@dataclass(frozen=True)
class RegParams:
    """Euler-equation scalars at one iterate."""

    epsilon: float
    gamma1: float
    gamma2: float
    beta: float

    @property
    def exponent(self) -> float:
        """``p = N - 2 + eps`` in ``f(t) = gamma1 t^2 - gamma2 t^-p``."""
        return 2.0 / self.beta - 2.0


def reg_params(m: DiscreteManifold, u: np.ndarray, eps: float, lambda2: float) -> RegParams:
    """``gamma1``, ``gamma2`` and ``beta`` from the current iterate.

    ``u`` is assumed normalized to unit conformal volume.
    """
    if not lambda2 < 0:
        raise ClusterError(f"lambda_2 = {lambda2:.6g} is not negative; need at least two negative eigenvalues")
    N = m.N
    if eps == 0:
        return RegParams(epsilon=0.0, gamma1=1.0, gamma2=0.0, beta=2.0 / N)
    I = m.integrate(u ** (-eps))
    g1 = 1.0 - eps / ((N - 2.0) * lambda2) * I
    g2 = eps / ((N - 2.0) * abs(lambda2))
    return RegParams(epsilon=float(eps), gamma1=float(g1), gamma2=float(g2), beta=2.0 / (eps + N))


# ---------------------------------------------------------------------------
# mixture fit


def _project_spectraplex(X: np.ndarray) -> np.ndarray:
    """Frobenius projection onto ``{A : A PSD, trace A = 1}``."""
    X = 0.5 * (X + X.T)
    ev, V = np.linalg.eigh(X)
    s = np.sort(ev)[::-1]
    cs = np.cumsum(s) - 1.0
    k = np.arange(1, s.size + 1)
    rho = k[s - cs / k > 0][-1]
    theta = cs[rho - 1] / rho
    ev = np.maximum(ev - theta, 0.0)
    return (V * ev) @ V.T


def spectraplex_lstsq(P: np.ndarray, b: np.ndarray, weight: np.ndarray,
                      tie_break: float = 1e-12, max_iter: int = 20000,
                      tol: float = 1e-15, A0: Optional[np.ndarray] = None) -> np.ndarray:
    """Minimize ``sum weight (x^T A x - b)^2`` over PSD trace-one ``A``.

    ``x`` runs over the rows of ``P`` (shape ``(n, d)``). Accelerated projected
    gradient; a ``tie_break`` multiple of ``||A - I/d||^2`` selects the most
    uniform minimizer when the fit is degenerate.
    """
    n, d = P.shape
    if d == 1:
        return np.ones((1, 1))
    prods = np.einsum("ia,ib->iab", P, P).reshape(n, d * d)
    G = (prods.T * weight) @ prods
    r = (prods.T * weight) @ b
    scale = max(np.trace(G) / d, 1e-300)
    tau = tie_break * scale
    L = 2.0 * np.linalg.eigvalsh(G)[-1] + 2.0 * tau
    center = np.eye(d) / d
    A = center.copy() if A0 is None else _project_spectraplex(A0)
    Y, t = A.copy(), 1.0
    for _ in range(max_iter):
        grad = 2.0 * (G @ Y.ravel() - r).reshape(d, d) + 2.0 * tau * (Y - center)
        A_new = _project_spectraplex(Y - grad / L)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        step = np.max(np.abs(A_new - A))
        Y = A_new + ((t - 1.0) / t_new) * (A_new - A)
        A, t = A_new, t_new
        if step < tol:
            break
    return 0.5 * (A + A.T)


@dataclass
class EulerCertificate:
    """Fitted Euler identity at one iterate.

    ``c`` holds the simplex weights in decreasing order and ``modes`` the
    matching eigenfunctions (columns, ``M_u``-orthonormal): they diagonalize the
    fitted mixture, ``Phi = sum_i c_i modes_i^2``.
    """

    params: RegParams
    c: np.ndarray
    modes: np.ndarray
    cluster: np.ndarray
    residual_l2: float
    residual_sup: float
    k_effective: int
    lambda2: float
    mixture: np.ndarray = field(repr=False)

    def phi(self) -> np.ndarray:
        return self.modes**2 @ self.c

    def to_dict(self) -> dict:
        return {
            "epsilon": self.params.epsilon,
            "gamma1": self.params.gamma1,
            "gamma2": self.params.gamma2,
            "beta": self.params.beta,
            "c": self.c.tolist(),
            "cluster": [int(i) for i in self.cluster],
            "residual_l2": self.residual_l2,
            "residual_sup": self.residual_sup,
            "k_effective": self.k_effective,
            "lambda2": self.lambda2,
        }


def euler_certificate(m: DiscreteManifold, u, eps: float, spectrum: Optional[SpectrumSlice] = None,
                      cluster: Optional[Sequence[int]] = None, c_drop_tol: float = 1e-4,
                      fit_weight: Optional[np.ndarray] = None) -> EulerCertificate:
    """Best mixture of squared ``lambda_2`` eigenfunctions for the Euler identity.

    Fits ``gamma1 u^2 - gamma2 u^(2-N-eps) ~ sum c_i phi_i^2`` in the
    ``w``-weighted L2 norm (or ``fit_weight``). The residual is reported in the
    ``w``-weighted L2 and sup norms. ``u`` must be of unit conformal volume and
    strictly positive unless ``eps = 0``, where the target is the limit
    identity ``u^2 = sum c_i phi_i^2``.

    Raises
    ------
    ClusterError
        If the cluster is empty or larger than the number of negative
        eigenvalues minus one (``cluster_tol`` too loose).
    """
    vals = as_factor(m, u).values if eps == 0 else _positive_values(m, u)
    if spectrum is None:
        spectrum = generalized_spectrum(m, vals, count=4)
    idx = np.asarray(spectrum.cluster2 if cluster is None else cluster, dtype=int)
    if idx.size == 0:
        raise ClusterError("empty lambda_2 cluster")
    if idx.size > spectrum.nu - 1:
        raise ClusterError(f"cluster of dimension {idx.size} exceeds nu - 1 = {spectrum.nu - 1}; "
                           "cluster_tol is too loose")
    if np.any(idx < 1):
        raise ClusterError("the lambda_2 cluster may not contain lambda_1")
    params = reg_params(m, vals, eps, spectrum.lambda2)
    P = spectrum.eigenvectors[:, idx]
    b = params.gamma1 * vals**2
    if eps > 0:
        b = b - params.gamma2 * vals ** (-params.exponent)
    w = m.weights if fit_weight is None else fit_weight
    A = spectraplex_lstsq(P, b, w)
    ev, V = np.linalg.eigh(A)
    order = np.argsort(ev)[::-1]
    c = np.clip(ev[order], 0.0, None)
    c = c / c.sum()
    modes = P @ V[:, order]
    resid = b - modes**2 @ c
    return EulerCertificate(
        params=params, c=c, modes=modes, cluster=idx,
        residual_l2=float(math.sqrt(m.integrate(resid**2))),
        residual_sup=float(np.max(np.abs(resid))),
        k_effective=int(np.sum(c > c_drop_tol)),
        lambda2=float(spectrum.lambda2), mixture=A,
    )


# ---------------------------------------------------------------------------
# scalar inversion


def f_inverse(phi: np.ndarray, gamma1: float, gamma2: float, p: float,
              rtol: float = 1e-12) -> np.ndarray:
    """Solve ``gamma1 t^2 - gamma2 t^-p = phi`` for ``t > 0`` nodewise.

    The left side is strictly increasing in ``t``; bisection on ``log t``
    inside a guaranteed bracket, then a safeguarded Newton polish.
    """
    phi = np.asarray(phi, dtype=float)
    if gamma1 <= 0 or gamma2 <= 0:
        raise ValueError("f_inverse needs gamma1 > 0 and gamma2 > 0")

    def f(t):
        return gamma1 * t * t - gamma2 * t ** (-p)

    t0 = (gamma2 / gamma1) ** (1.0 / (p + 2.0))  # f(t0) = 0
    pos = np.maximum(phi, 0.0)
    lo = np.maximum(t0, np.sqrt(pos / gamma1))
    lo = np.where(phi < 0, t0, lo)
    # for phi < 0 shrink lo until f(lo) <= phi
    neg = phi < 0
    if np.any(neg):
        lo_n = lo[neg]
        for _ in range(200):
            bad = f(lo_n) > phi[neg]
            if not bad.any():
                break
            lo_n = np.where(bad, 0.5 * lo_n, lo_n)
        lo[neg] = lo_n
    hi = np.maximum(lo, np.sqrt((np.maximum(phi, 0.0) + gamma2 * lo ** (-p)) / gamma1))
    a, b = np.log(lo), np.log(hi)
    for _ in range(200):
        mid = 0.5 * (a + b)
        below = f(np.exp(mid)) < phi
        a = np.where(below, mid, a)
        b = np.where(below, b, mid)
        if np.max(b - a) < 1e-15:
            break
    t = np.exp(0.5 * (a + b))
    lo_b, hi_b = np.exp(a), np.exp(b)
    for _ in range(4):
        dt = (f(t) - phi) / (2.0 * gamma1 * t + p * gamma2 * t ** (-p - 1.0))
        t = np.clip(t - dt, lo_b, hi_b)
    err = np.abs(f(t) - phi)
    scale = np.abs(phi) + gamma1 * t * t + gamma2 * t ** (-p)
    if np.any(err > 1e3 * rtol * scale):
        raise ConvergenceError("f_inverse failed to converge")
    return t


# ---------------------------------------------------------------------------
# diagnostics


def lipschitz_proxy(m: DiscreteManifold, u: np.ndarray) -> float:
    """Largest edge difference quotient ``|u_i - u_j| / length_ij``."""
    i, j, _, length = m.edges()
    if i.size == 0:
        return 0.0
    return float(np.max(np.abs(u[i] - u[j]) / length))


def _diagnostics(m: DiscreteManifold, u: np.ndarray, eps: float) -> dict:
    N = m.N
    return {
        "sup_u": float(u.max()),
        "inf_u": float(u.min()),
        "lipschitz": lipschitz_proxy(m, u),
        "int_u_neg_eps": m.integrate(u ** (-eps)),
        "eps_int_u_neg_eps_N": eps * m.integrate(u ** (-eps - N)),
    }


# ---------------------------------------------------------------------------
# fixed-point maximization


@dataclass
class OptimizerSettings:
    """Tolerances of the fixed-point iteration.

    ``fit_window`` caps the relative width of the eigenvalue window whose
    eigenfunctions enter the mixture; inside the cap the window is
    ``window_gain`` times the last Euler residual, never below ``cluster_tol``.
    ``identity_tol``, ``residual_tol`` and ``harmonic_tol`` are the acceptance
    thresholds of :func:`classify`.
    """

    eul_tol: float = 1e-6
    max_iters: int = 400
    backtrack_tol: float = 1e-12
    c_drop_tol: float = 1e-4
    cluster_tol: float = 1e-6
    solver_tol: float = 1e-8
    fit_window: float = 0.1
    window_gain: float = 3.0
    min_step: float = 1e-10
    blowup_factor: float = 10.0
    method: str = "auto"
    identity_tol: float = 1e-3
    residual_tol: float = 1e-4
    harmonic_tol: float = 1e-2


@dataclass
class MaximizeResult:
    u: np.ndarray
    certificate: EulerCertificate
    spectrum: SpectrumSlice
    F: float
    converged: bool
    iterations: int
    history: list


def _normalize(m: DiscreteManifold, u: np.ndarray) -> np.ndarray:
    return u / m.integrate(u**m.N) ** (1.0 / m.N)


def _window(spectrum: SpectrumSlice, width: float) -> np.ndarray:
    lam = spectrum.eigenvalues
    l2 = lam[1]
    sel = (np.arange(lam.size) >= 1) & (lam < 0) & (lam - l2 <= width)
    return np.flatnonzero(sel)


def maximize_F2eps(m: DiscreteManifold, u0, eps: float,
                   settings: Optional[OptimizerSettings] = None,
                   callback: Optional[Callable[[dict], None]] = None) -> MaximizeResult:
    """Maximize ``F2eps`` by the damped Euler fixed-point iteration.

    Each step fits the mixture, maps ``u_new = f^-1(Phi)`` nodewise,
    renormalizes, and accepts ``u^(1-s) u_new^s`` for the largest tried
    ``s <= 1`` that does not lower ``F2eps`` by more than ``backtrack_tol``.
    The direction fit uses the weight ``w u^(N-3) / f'(u)``, in which the
    update is a first-order ascent direction for every eigenfunction in the
    window simultaneously.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    u0 = _positive_values(m, u0)
    return _ascent(m, u0, float(eps), settings or OptimizerSettings(), callback)


def _objective(m, u, eps, spec):
    return F2eps(m, u, eps, spectrum=spec) if eps > 0 else F2(m, u, spectrum=spec)


def _ascent(m: DiscreteManifold, u0: np.ndarray, eps: float, s_: OptimizerSettings,
            callback=None) -> MaximizeResult:
    """Shared loop; ``eps = 0`` maximizes ``F2`` itself with ``f(t) = t^2``."""
    N = m.N
    u = _normalize(m, np.asarray(u0, dtype=float))
    solve = dict(count=4, cluster_tol=s_.cluster_tol, solver_tol=s_.solver_tol, method=s_.method)

    spec = generalized_spectrum(m, u, **solve)
    F = _objective(m, u, eps, spec)
    history = []
    res_prev = math.inf
    step = 1.0
    converged = False
    cert = None
    best = None
    it = 0
    for it in range(s_.max_iters + 1):
        lam = spec.eigenvalues
        if spec.nu < 2:
            raise ClusterError(f"nu = {spec.nu}: need at least two negative eigenvalues")
        if lam[1] - lam[0] <= s_.cluster_tol * abs(lam[1]):
            raise ClusterError("lambda_2 collides with lambda_1: nu or connectivity violated")
        width = min(s_.fit_window, max(s_.cluster_tol, s_.window_gain * res_prev / abs(lam[1]))) * abs(lam[1])
        idx = _window(spec, width)
        cert = euler_certificate(m, u, eps, spec, cluster=idx, c_drop_tol=s_.c_drop_tol)
        rec = {"iter": it, "epsilon": eps, "objective": F,
               "lambda1": float(lam[0]), "lambda2": float(lam[1]),
               "residual_l2": cert.residual_l2, "residual_sup": cert.residual_sup,
               "gamma1": cert.params.gamma1, "gamma2": cert.params.gamma2,
               "cluster_size": int(idx.size), "step": step}
        if eps > 0:
            rec.update(_diagnostics(m, u, eps))
        history.append(rec)
        if callback is not None:
            callback(rec)
        res_prev = cert.residual_l2
        if eps == 0:
            # the limit identity is the target: stop once it stops improving
            if best is not None and cert.residual_l2 >= best[0]:
                break
            best = (cert.residual_l2, u, spec, cert, F)
        if cert.residual_l2 <= s_.eul_tol:
            converged = True
            break
        if it == s_.max_iters:
            break
        p = cert.params
        if eps > 0:
            fprime = 2.0 * p.gamma1 * u + p.exponent * p.gamma2 * u ** (-p.exponent - 1.0)
            weight = m.weights * u ** (N - 3.0) / fprime
        else:
            weight = 0.5 * m.weights * u ** (N - 4.0)
        direction = euler_certificate(m, u, eps, spec, cluster=idx, c_drop_tol=s_.c_drop_tol,
                                      fit_weight=weight)
        if eps > 0:
            u_new = f_inverse(direction.phi(), p.gamma1, p.gamma2, p.exponent)
        else:
            u_new = np.sqrt(np.maximum(direction.phi(), 0.0))
        u_new = _normalize(m, u_new)
        step = min(1.0, 2.0 * step)
        while True:
            cand = _normalize(m, u ** (1.0 - step) * u_new**step)
            try:
                spec_c = generalized_spectrum(m, cand, **solve)
                ok = spec_c.nu >= 2
            except SolverError:
                ok = False
            if ok:
                F_c = _objective(m, cand, eps, spec_c)
                if F_c >= F - s_.backtrack_tol:
                    break
            step *= 0.5
            if step < s_.min_step:
                break
        if step < s_.min_step:
            break
        u, F, spec = cand, F_c, spec_c
    if best is not None and best[0] < cert.residual_l2:
        _, u, spec, cert, F = best
    return MaximizeResult(u=u, certificate=cert, spectrum=spec, F=float(F), converged=converged,
                          iterations=it, history=history)


# ---------------------------------------------------------------------------
# classification


@dataclass
class ExtremalReport:
    """Outcome of a continuation run."""

    u_final: ConformalFactor
    lambda2: float
    F2: float
    classification: str
    k: int
    c: np.ndarray
    checks: dict
    history: list
    schedule: list
    per_epsilon: list
    notes: list = field(default_factory=list)

    @property
    def nodal_residual(self) -> Optional[float]:
        return self.checks.get("nodal_residual")

    @property
    def harmonic_residual(self) -> Optional[float]:
        return self.checks.get("harmonic_residual")


def floor_truncate(m: DiscreteManifold, u, delta: float) -> ConformalFactor:
    """Nodewise ``max(u, delta)``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    vals = as_factor(m, u).values
    return ConformalFactor.from_values(m, np.maximum(vals, delta))


def _sign_change(m: DiscreteManifold, phi: np.ndarray, support: np.ndarray) -> bool:
    """Adjacent support nodes of opposite strict sign.

    A dead node (outside the support) adjacent to both signs also counts: it
    is a zero of the limit function sitting exactly on a grid node.
    """
    i, j, _, _ = m.edges()
    a, b = phi[i], phi[j]
    both = support[i] & support[j]
    if np.any(both & (((a > 0) & (b < 0)) | ((a < 0) & (b > 0)))):
        return True
    pos = np.zeros(m.node_count, dtype=bool)
    neg = np.zeros(m.node_count, dtype=bool)
    for x, y in ((i, j), (j, i)):
        dead = ~support[x] & support[y]
        pos[x[dead & (phi[y] > 0)]] = True
        neg[x[dead & (phi[y] < 0)]] = True
    return bool(np.any(pos & neg))


def harmonic_map_residual(m: DiscreteManifold, u: np.ndarray, psi: np.ndarray,
                          support: Optional[np.ndarray] = None) -> float:
    """Weak-form residual of the sphere-valued harmonic map equation in the metric ``u^(N-2) g``.

    The Dirichlet energy of ``psi`` in the conformal metric is discretized with
    edge conductances ``k_ij u_i u_j``; the energy density is the usual
    per-node split of the edge energies divided by the node mass ``w u^2``.
    The residual is ``|| L_u psi_j - e psi_j M_u ||`` normalized by
    ``|| L_u psi ||`` (both over support nodes), where ``L_u`` is the
    weighted graph Laplacian.
    """
    i, j, k, _ = m.edges()
    if support is None:
        support = u > 0
    keep = support[i] & support[j]
    i, j, k = i[keep], j[keep], k[keep]
    ku = k * u[i] * u[j]
    n = m.node_count
    Lu = sp.coo_matrix((np.concatenate([-ku, -ku, ku, ku]),
                        (np.concatenate([i, j, i, j]), np.concatenate([j, i, i, j]))),
                       shape=(n, n)).tocsr()
    mass = m.weights * u**2
    d2 = np.sum((psi[i] - psi[j]) ** 2, axis=1)
    edge_e = 0.5 * ku * d2
    e = np.zeros(n)
    np.add.at(e, i, edge_e)
    np.add.at(e, j, edge_e)
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = np.where(support, e / np.where(mass > 0, mass, 1.0), 0.0)
    lhs = Lu @ psi
    rhs = (dens * mass)[:, None] * psi
    R = (lhs - rhs)[support]
    scale = np.linalg.norm(lhs[support])
    if scale == 0:
        return float(np.linalg.norm(R))
    return float(np.linalg.norm(R) / scale)


def classify(m: DiscreteManifold, u, spectrum: SpectrumSlice, certificate: EulerCertificate,
             c_drop_tol: float = 1e-4, identity_tol: float = 1e-3, residual_tol: float = 1e-4,
             harmonic_tol: float = 1e-2) -> tuple:
    """Nodal solution (``k = 1``) or harmonic map (``k >= 2``).

    Returns ``(classification, k, checks)``. A branch whose checks fail is
    reported as ``"Unresolved"``.
    """
    vals = as_factor(m, u).values
    support = vals > 0 if spectrum.support_mask is None else spectrum.support_mask
    c = certificate.c
    keep = c > c_drop_tol
    k = int(keep.sum())
    checks: dict = {"k": k, "c": c.tolist()}
    if k == 0:
        return "Unresolved", 0, checks
    cc = c[keep] / c[keep].sum()
    modes = certificate.modes[:, keep]
    factor = ConformalFactor.from_values(m, vals)
    if factor.has_dead_nodes:
        # continue the eigenfunctions onto dead nodes by energy minimization
        _, _, extend, singular = reduced_pencil(m, factor, dense=factor.support_mask.sum() <= DENSE_LIMIT)
        if extend is not None:
            modes = extend(modes[factor.support_mask])
        checks["singular_extension"] = bool(singular)
    N = m.N
    if k == 1:
        phi = modes[:, 0]
        # |phi| and u share the unit conformal volume normalization
        scale = math.sqrt(cc[0])
        phi = scale * phi
        rel = float(np.max(np.abs(vals - np.abs(phi))) / np.max(np.abs(vals)))
        lam2 = spectrum.lambda2
        R = m.operator @ phi - lam2 * m.weights * np.abs(phi) ** (N - 2.0) * phi
        nodal = float(np.linalg.norm(R) / max(np.linalg.norm(m.operator @ phi), 1e-300))
        sign_change = _sign_change(m, phi, support)
        checks.update({"identity_error": rel, "nodal_residual": nodal, "sign_change": sign_change})
        ok = rel <= identity_tol and nodal <= residual_tol and sign_change
        return ("Nodal" if ok else "Unresolved"), 1, checks
    psi = np.zeros((m.node_count, k))
    psi[support] = (np.sqrt(cc)[None, :] * modes[support]) / vals[support, None]
    sum_err = float(np.max(np.abs(np.sum(psi[support] ** 2, axis=1) - 1.0)))
    harm = harmonic_map_residual(m, vals, psi, support)
    checks.update({"sphere_error": sum_err, "harmonic_residual": harm,
                   "restricted_to_support": bool(not np.all(support))})
    ok = sum_err <= identity_tol and harm <= harmonic_tol
    return ("HarmonicMap" if ok else "Unresolved"), k, checks


# ---------------------------------------------------------------------------
# continuation


def write_checkpoint(path, eps: float, u: np.ndarray, certificate: EulerCertificate,
                     extra: Optional[dict] = None) -> None:
    """Per-epsilon state as JSON: ``eps``, ``u``, ``lambda2``, ``c``, residuals."""
    data = {"epsilon": float(eps), "u": [float(x) for x in u]}
    data.update(certificate.to_dict())
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data, sort_keys=True, indent=1))


def read_checkpoint(path) -> dict:
    data = json.loads(Path(path).read_text())
    for key in ("epsilon", "u", "lambda2", "c"):
        if key not in data:
            raise ValueError(f"{path}: checkpoint lacks {key!r}")
    data["u"] = np.asarray(data["u"], dtype=float)
    return data


def _checkpoint_name(eps: float) -> str:
    return f"checkpoint_eps_{eps:.6e}.json"


def _fit_slope(x, y) -> float:
    x, y = np.log(np.asarray(x)), np.log(np.asarray(y))
    if x.size < 2:
        return float("nan")
    return float(np.polyfit(x, y, 1)[0])


def continuation(m: DiscreteManifold, u0, schedule: Sequence[float] = DEFAULT_SCHEDULE,
                 settings: Optional[OptimizerSettings] = None,
                 checkpoint_dir=None, limit_polish: bool = True,
                 polish_iters: int = 60, polish_tol: float = 1e-10,
                 callback: Optional[Callable[[dict], None]] = None) -> ExtremalReport:
    """Warm-started maximization along a decreasing ``eps`` schedule.

    After the schedule, the limit identity ``u^2 = sum c_i phi_i^2`` is
    sharpened by the same ascent at ``eps = 0`` (``limit_polish``), which stops
    as soon as the identity residual no longer decreases. The report is
    ``Unresolved`` when a stage misses ``eul_tol``, when a diagnostic grows by
    more than ``blowup_factor``, or when the schedule has a single stage (no
    limit behavior can be observed).
    """
    s_ = settings or OptimizerSettings()
    schedule = [float(e) for e in schedule]
    if not schedule or any(e <= 0 for e in schedule):
        raise ValueError("schedule must be a nonempty list of positive values")
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be strictly decreasing")
    ckdir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckdir is not None:
        ckdir.mkdir(parents=True, exist_ok=True)

    u = _normalize(m, _positive_values(m, u0).astype(float))
    history: list = []
    per_eps: list = []
    notes: list = []
    result = None
    for eps in schedule:
        ck = ckdir / _checkpoint_name(eps) if ckdir is not None else None
        if ck is not None and ck.exists():
            data = read_checkpoint(ck)
            u = _normalize(m, data["u"])
            spec = generalized_spectrum(m, u, count=4, cluster_tol=s_.cluster_tol,
                                        solver_tol=s_.solver_tol, method=s_.method)
            cert = euler_certificate(m, u, eps, spec, cluster=data["cluster"], c_drop_tol=s_.c_drop_tol)
            summary = dict(data.get("summary", {}))
            summary["resumed"] = True
            per_eps.append(summary)
            notes.append(f"resumed eps={eps:g} from checkpoint")
            continue
        result = maximize_F2eps(m, u, eps, s_, callback=callback)
        u = result.u
        cert = result.certificate
        history.extend(result.history)
        limit_res = float(math.sqrt(m.integrate((u**2 - cert.phi()) ** 2)))
        summary = {"epsilon": eps, "converged": result.converged, "iterations": result.iterations,
                   "F2eps": result.F, "lambda2": result.spectrum.lambda2,
                   "residual_l2": cert.residual_l2, "residual_sup": cert.residual_sup,
                   "gamma1": cert.params.gamma1, "gamma2": cert.params.gamma2,
                   "beta": cert.params.beta, "limit_residual": limit_res,
                   "c": cert.c.tolist(), "cluster_size": int(cert.cluster.size),
                   "resumed": False}
        summary.update(_diagnostics(m, u, eps))
        per_eps.append(summary)
        if ck is not None:
            write_checkpoint(ck, eps, u, cert, extra={"summary": summary})

    # blow-up monitoring over the schedule
    unresolved = False
    fresh = [p for p in per_eps if "sup_u" in p]
    if fresh:
        first = fresh[0]
        for key in ("sup_u", "lipschitz", "int_u_neg_eps", "eps_int_u_neg_eps_N"):
            vals = np.array([p[key] for p in fresh])
            if first[key] > 0 and np.max(vals) > s_.blowup_factor * first[key]:
                unresolved = True
                notes.append(f"diagnostic {key} grew beyond blowup_factor={s_.blowup_factor:g}")
    if not all(p.get("converged", True) for p in per_eps):
        notes.append("some eps stages did not reach eul_tol")

    eps_min = schedule[-1]
    spec = generalized_spectrum(m, u, count=4, cluster_tol=s_.cluster_tol,
                                solver_tol=s_.solver_tol, method=s_.method)
    cert = euler_certificate(m, u, eps_min, spec,
                             cluster=(result.certificate.cluster if result is not None else None),
                             c_drop_tol=s_.c_drop_tol)
    final_u, final_spec, final_cert = u, spec, cert
    if limit_polish:
        final_u, final_spec, final_cert, pnotes = _limit_polish(m, u, s_, polish_iters, polish_tol)
        notes.extend(pnotes)

    label, k, checks = classify(m, final_u, final_spec, final_cert, c_drop_tol=s_.c_drop_tol,
                                identity_tol=s_.identity_tol, residual_tol=s_.residual_tol,
                                harmonic_tol=s_.harmonic_tol)
    if len(schedule) < 2:
        unresolved = True
        notes.append("single eps stage: the eps -> 0 behavior is not observed")
    if unresolved:
        label = "Unresolved"
    if not all(p.get("converged", True) for p in per_eps):
        label = "Unresolved"
    fit_eps = [p["epsilon"] for p in per_eps if p.get("limit_residual", 0) > 0]
    fit_res = [p["limit_residual"] for p in per_eps if p.get("limit_residual", 0) > 0]
    checks["limit_residual_slope"] = _fit_slope(fit_eps, fit_res)
    checks["beta_eps_min"] = 2.0 / (eps_min + m.N)
    return ExtremalReport(
        u_final=ConformalFactor.from_values(m, final_u),
        lambda2=float(final_spec.lambda2),
        F2=F2(m, final_u, spectrum=final_spec),
        classification=label, k=k, c=final_cert.c, checks=checks, history=history,
        schedule=schedule, per_epsilon=per_eps, notes=notes,
    )


def _limit_polish(m, u, s_: OptimizerSettings, iters: int, tol: float):
    """Run the ascent loop at ``eps = 0`` (``f(t) = t^2``) starting from ``u``."""
    pset = OptimizerSettings(**{**asdict(s_), "eul_tol": tol, "max_iters": iters})
    res = _ascent(m, u, 0.0, pset)
    first = res.history[0]["residual_l2"]
    note = (f"limit polish: {res.iterations} steps, identity residual "
            f"{first:.3e} -> {res.certificate.residual_l2:.3e}")
    return res.u, res.spectrum, res.certificate, [note]
