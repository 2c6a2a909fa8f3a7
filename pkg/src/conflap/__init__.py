"""Conformal maximization of the second eigenvalue of the conformal Laplacian on
discrete manifolds."""

from .manifold import (
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
from .speclib import (
    ConformalFactor,
    KernelWarning,
    MultipleGroundStateError,
    SolverError,
    SpectrumSlice,
    ZeroConformalFactorError,
    first_eigen_sign,
    generalized_spectrum,
    lambda2_orthogonal,
    negative_count,
)
from .optimizer import (
    ClusterError,
    ConvergenceError,
    EulerCertificate,
    ExtremalReport,
    OptimizerSettings,
    F2,
    F2eps,
    classify,
    continuation,
    euler_certificate,
    maximize_F2eps,
)

__version__ = "0.1.0"
