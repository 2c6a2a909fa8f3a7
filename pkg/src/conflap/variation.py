"""Multiplicative deformations ``u_t = u (1 + t h)`` and one-sided derivatives of ``lambda_2``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .manifold import DiscreteManifold
from .speclib import (
    DENSE_LIMIT,
    ConformalFactor,
    SpectrumSlice,
    as_factor,
    generalized_spectrum,
    reduced_pencil,
)

__all__ = [
    "Deformation",
    "DerivativePair",
    "FDReport",
    "SandwichReport",
    "deform",
    "L_h_value",
    "one_sided_derivatives",
    "fd_derivative_check",
    "continuity_sandwich_check",
    "default_t_list",
]


def default_t_list() -> np.ndarray:
    """``0.1 * 2^-k`` for ``k = 0..6``."""
    return 0.1 * 2.0 ** -np.arange(7)


@dataclass(frozen=True, eq=False)
class Deformation:
    """``u_t = u (1 + t h)`` for ``|t| <= t_max``.

    ``t_max * max|h| < 1`` keeps ``1 + t h`` strictly positive, so the support
    never changes.
    """

    base: ConformalFactor
    h: np.ndarray
    t_max: float

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if h.shape != self.base.values.shape:
            raise ValueError("h must have one value per node")
        if not np.all(np.isfinite(h)):
            raise ValueError("h must be bounded")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if self.t_max * np.max(np.abs(h)) >= 1.0:
            raise ValueError("t_max * max|h| must be < 1")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)


def deform(d: Deformation, t: float) -> ConformalFactor:
    """Nodewise ``u (1 + t h)`` with the base support mask."""
    if abs(t) > d.t_max:
        raise ValueError(f"|t| = {abs(t):g} exceeds t_max = {d.t_max:g}")
    vals = d.base.values * (1.0 + t * d.h)
    vals.setflags(write=False)
    return ConformalFactor(values=vals, N=d.base.N, support_mask=d.base.support_mask)


def _energy(m: DiscreteManifold, u: ConformalFactor, phi: np.ndarray) -> float:
    """``phi^T K phi``, minimized over dead-node values when there are any."""
    if not u.has_dead_nodes:
        return float(phi @ (m.operator @ phi))
    dense = int(u.support_mask.sum()) <= DENSE_LIMIT
    Ks, _, _, _ = reduced_pencil(m, u, dense=dense)
    x = phi[u.support_mask]
    return float(x @ (Ks @ x))


def L_h_value(m: DiscreteManifold, u, phi: np.ndarray, h: np.ndarray) -> float:
    """``-(N-2) R(phi) int h phi^2 u^(N-2) / int phi^2 u^(N-2)``."""
    u = as_factor(m, u)
    mass = np.where(u.support_mask, m.weights * u.values ** (u.N - 2.0), 0.0)
    denom = float(np.dot(mass, phi**2))
    if not denom > 0:
        raise ValueError("phi has zero weighted norm (it lives on the dead set)")
    R = _energy(m, u, phi) / denom
    return float(-(u.N - 2.0) * R * np.dot(mass * h, phi**2) / denom)


@dataclass
class DerivativePair:
    """Right and left derivatives of ``lambda_2(u_t)`` at ``t = 0``."""

    right: float
    left: float
    attaining_right: np.ndarray
    attaining_left: np.ndarray
    cluster_dim: int


def one_sided_derivatives(m: DiscreteManifold, u, h: np.ndarray,
                          spectrum: Optional[SpectrumSlice] = None,
                          cluster_tol: float = 1e-6) -> DerivativePair:
    """Extremes of ``L_h`` over the unit sphere of the ``lambda_2`` cluster.

    On an ``M_u``-orthonormal cluster basis ``L_h`` is ``-(N-2) lambda_2`` times
    the quadratic form ``Q_ab = int h phi_a phi_b u^(N-2)``, so the inf (right
    derivative) and sup (left derivative) come from the eigenvalues of ``Q``.
    """
    u = as_factor(m, u)
    h = np.asarray(h, dtype=float)
    if spectrum is None:
        spectrum = generalized_spectrum(m, u, count=4, cluster_tol=cluster_tol)
    idx = spectrum.cluster2
    if idx.size == 0:
        raise RuntimeError("empty lambda_2 cluster")
    P = spectrum.eigenvectors[:, idx]
    mass = np.where(u.support_mask, m.weights * u.values ** (u.N - 2.0), 0.0)
    Q = (P.T * (mass * h)) @ P
    Q = 0.5 * (Q + Q.T)
    q, V = np.linalg.eigh(Q)
    vals = -(u.N - 2.0) * spectrum.lambda2 * q
    i_min, i_max = int(np.argmin(vals)), int(np.argmax(vals))
    return DerivativePair(right=float(vals[i_min]), left=float(vals[i_max]),
                          attaining_right=P @ V[:, i_min], attaining_left=P @ V[:, i_max],
                          cluster_dim=int(idx.size))


def _fit_order(t: np.ndarray, dev: np.ndarray, floor: float) -> float:
    keep = dev > floor
    if keep.sum() < 2:
        return float("inf")
    return float(np.polyfit(np.log(t[keep]), np.log(dev[keep]), 1)[0])


@dataclass
class FDReport:
    """One-sided finite differences against the derivative formula.

    ``order_*`` is the log-log slope of the deviation against ``t`` over the
    whole sweep (``inf`` when the deviations sit at round-off);
    ``tail_order`` is the same slope over the three smallest ``t`` only. ``C``
    bounds ``deviation / t`` over the sweep.
    """

    t: np.ndarray
    fd_right: np.ndarray
    fd_left: np.ndarray
    right: float
    left: float
    dev_right: np.ndarray
    dev_left: np.ndarray
    order_right: float
    order_left: float
    C: float
    tail_order: float = float("nan")

    @property
    def max_deviation(self) -> float:
        return float(max(self.dev_right.max(), self.dev_left.max()))

    @property
    def order(self) -> float:
        return float(min(self.order_right, self.order_left))


def fd_derivative_check(m: DiscreteManifold, u, h: np.ndarray,
                        t_list: Optional[Sequence[float]] = None,
                        cluster_tol: float = 1e-6, floor: float = 1e-11) -> FDReport:
    """Compare ``(lambda_2(u_t) - lambda_2(u)) / t`` with the one-sided formulas.

    Positive ``t`` tests the right derivative, ``-t`` the left one. Only
    one-sided differences are used: ``lambda_2`` is not differentiable where
    the cluster is degenerate.
    """
    u = as_factor(m, u)
    h = np.asarray(h, dtype=float)
    t = np.sort(np.asarray(default_t_list() if t_list is None else t_list, dtype=float))[::-1]
    if np.any(t <= 0):
        raise ValueError("t_list must be positive")
    d = Deformation(base=u, h=h, t_max=float(t.max()) * (1.0 + 1e-12))
    base = generalized_spectrum(m, u, count=4, cluster_tol=cluster_tol)
    pair = one_sided_derivatives(m, u, h, spectrum=base)
    lam0 = base.lambda2

    def lam2(tt):
        return generalized_spectrum(m, deform(d, tt), count=4, cluster_tol=cluster_tol).lambda2

    fd_r = np.array([(lam2(tt) - lam0) / tt for tt in t])
    fd_l = np.array([(lam2(-tt) - lam0) / (-tt) for tt in t])
    dev_r = np.abs(fd_r - pair.right)
    dev_l = np.abs(fd_l - pair.left)
    C = float(np.max(np.maximum(dev_r, dev_l) / t))
    return FDReport(t=t, fd_right=fd_r, fd_left=fd_l, right=pair.right, left=pair.left,
                    dev_right=dev_r, dev_left=dev_l,
                    order_right=_fit_order(t, dev_r, floor), order_left=_fit_order(t, dev_l, floor),
                    C=C, tail_order=min(_fit_order(t[-3:], dev_r[-3:], floor),
                                        _fit_order(t[-3:], dev_l[-3:], floor)))


@dataclass
class SandwichReport:
    """Two-sided ``lambda_1`` bounds and ``lambda_2`` continuity along a sweep."""

    t: np.ndarray
    lambda1: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    lambda2: np.ndarray
    lambda2_base: float
    holds: bool
    strict: bool
    offending_t: list
    C2: float


def continuity_sandwich_check(m: DiscreteManifold, u, h: np.ndarray,
                              t_list: Optional[Sequence[float]] = None,
                              rtol: float = 1e-12) -> SandwichReport:
    """Check ``(1 - |t| |h|)^-(N-2) l1 <= l1(u_t) <= (1 + |t| |h|)^-(N-2) l1`` for ``l1 < 0``.

    Each ``t`` in ``t_list`` is tested with both signs. ``rtol`` absorbs
    eigensolver round-off in the comparison; ``strict`` reports whether every
    bound held with a margin above it. ``C2`` is the fitted
    ``max |lambda_2(u_t) - lambda_2(u)| / |t|``.
    """
    u = as_factor(m, u)
    h = np.asarray(h, dtype=float)
    t = np.asarray(default_t_list() if t_list is None else t_list, dtype=float)
    t = np.concatenate([t, -t])
    hn = float(np.max(np.abs(h)))
    d = Deformation(base=u, h=h, t_max=float(np.max(np.abs(t))) * (1.0 + 1e-12) if t.size else 1.0)
    base = generalized_spectrum(m, u, count=4)
    l1 = base.lambda1
    if not l1 < 0:
        raise ValueError("the sandwich bound needs lambda_1(u) < 0")
    lam1, lam2 = [], []
    for tt in t:
        s = generalized_spectrum(m, deform(d, tt), count=4)
        lam1.append(s.lambda1)
        lam2.append(s.lambda2)
    lam1, lam2 = np.array(lam1), np.array(lam2)
    N = u.N
    lower = (1.0 - np.abs(t) * hn) ** (-(N - 2.0)) * l1
    upper = (1.0 + np.abs(t) * hn) ** (-(N - 2.0)) * l1
    slack = rtol * np.abs(l1)
    ok = (lam1 >= lower - slack) & (lam1 <= upper + slack)
    strict_ok = (lam1 > lower + slack) & (lam1 < upper - slack)
    nz = np.abs(t) > 0
    C2 = float(np.max(np.abs(lam2[nz] - base.lambda2) / np.abs(t[nz]))) if nz.any() else 0.0
    return SandwichReport(t=t, lambda1=lam1, lower=lower, upper=upper, lambda2=lam2,
                          lambda2_base=base.lambda2, holds=bool(ok.all()),
                          strict=bool(strict_ok[nz].all()) if nz.any() else True,
                          offending_t=[float(x) for x in t[~ok]], C2=C2)
