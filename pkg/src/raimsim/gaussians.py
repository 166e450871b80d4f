"""Algebra of general (possibly degenerate) Gaussians and Gaussian mixtures.

A general Gaussian is allowed to have a rank-deficient covariance; its density
lives on the affine support mean + range(cov) and is written with the
pseudo-inverse and pseudo-determinant. Every ``GeneralGaussian`` carries both
the moment form (mean, cov) and the canonical form (info, info_matrix), plus
the log-domain quantity alpha = -1/2 m' V m that shows up in all scaling
factors.

Products of densities and inversion of linear mappings produce an extra
multiplicative prefactor; ``ScaledGaussian`` keeps that prefactor in log
domain so the returned pair is pointwise equal to the defining expression
(no constants dropped), which is what the tests pin down.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

LOG_2PI = math.log(2.0 * math.pi)

# Relative symmetry tolerance for PSD inputs.
SYM_TOL = 1e-8


def _as_matrix(mx, name):
    mx = np.asarray(mx, dtype=float)
    if mx.ndim != 2 or mx.shape[0] != mx.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {mx.shape}")
    return mx


def _require_symmetric(mx, name, tol=SYM_TOL):
    scale = max(1.0, float(np.max(np.abs(mx))))
    if float(np.max(np.abs(mx - mx.T))) > tol * scale:
        raise ValueError(f"{name} is not symmetric within tolerance")
    return 0.5 * (mx + mx.T)


def _eigh_psd(mx, name="matrix"):
    """Eigendecomposition of a symmetric PSD matrix with numerical-rank split.

    Returns (eigenvalues, eigenvectors, rank, threshold). An eigenvalue counts
    toward the rank iff it exceeds dim * eps * max(|eigenvalues|).
    """
    mx = _require_symmetric(_as_matrix(mx, name), name)
    w, q = np.linalg.eigh(mx)
    wmax = float(np.max(np.abs(w))) if w.size else 0.0
    thresh = mx.shape[0] * np.finfo(float).eps * wmax
    if w.size and float(w[0]) < -max(thresh, SYM_TOL * max(wmax, 1.0)):
        raise ValueError(f"{name} is not positive semidefinite "
                         f"(eigenvalue {w[0]:.3e})")
    rank = int(np.count_nonzero(w > thresh))
    return w, q, rank, thresh


def pseudo_inverse_pdet(mx):
    """Moore-Penrose pseudo-inverse, pseudo-determinant and rank of a PSD matrix.

    The pseudo-determinant is the product of the eigenvalues above the rank
    threshold; for a full-rank input the result equals the ordinary inverse
    and determinant. Raises ValueError for inputs that are not symmetric PSD
    within tolerance.
    """
    w, q, rank, thresh = _eigh_psd(mx, "input")
    keep = w > thresh
    inv_w = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    pinv = (q * inv_w) @ q.T
    pdet = float(np.prod(w[keep])) if rank else 1.0
    return 0.5 * (pinv + pinv.T), pdet, rank


@dataclass(frozen=True)
class GeneralGaussian:
    """Dual-form possibly-degenerate Gaussian.

    Fields keep both parameterizations in sync: info_matrix is the
    pseudo-inverse of cov, info = info_matrix @ mean, rank is their common
    rank, and alpha = -1/2 mean' info. ``support`` is an orthonormal basis of
    range(cov) (dim x rank) and ``log_pdet_cov`` is ln of the
    pseudo-determinant of cov; both are derived quantities cached at
    construction. Instances are immutable; build them with ``from_moment`` or
    ``from_canonical``.
    """

    mean: np.ndarray
    cov: np.ndarray
    info: np.ndarray
    info_matrix: np.ndarray
    rank: int
    alpha: float
    log_pdet_cov: float
    support: np.ndarray

    @property
    def dim(self):
        return self.mean.shape[0]

    @classmethod
    def from_moment(cls, mean, cov):
        mean = np.asarray(mean, dtype=float).reshape(-1)
        w, q, rank, thresh = _eigh_psd(cov, "cov")
        if mean.shape[0] != w.shape[0]:
            raise ValueError("mean and cov dimensions differ")
        keep = w > thresh
        support = q[:, keep]
        inv_w = 1.0 / w[keep]
        info_matrix = (support * inv_w) @ support.T
        info_matrix = 0.5 * (info_matrix + info_matrix.T)
        info = info_matrix @ mean
        alpha = -0.5 * float(mean @ info)
        log_pdet = float(np.sum(np.log(w[keep]))) if rank else 0.0
        cov = 0.5 * (np.asarray(cov, dtype=float) + np.asarray(cov, dtype=float).T)
        return cls(mean, cov, info, info_matrix, rank, alpha, log_pdet, support)

    @classmethod
    def from_canonical(cls, info, info_matrix):
        """Build from (u, V). Assumes u lies in range(V) (true for every
        message produced by the operations in this module); components of u
        outside the range would not correspond to a normalizable density on
        the support and are projected out."""
        info = np.asarray(info, dtype=float).reshape(-1)
        w, q, rank, thresh = _eigh_psd(info_matrix, "info_matrix")
        if info.shape[0] != w.shape[0]:
            raise ValueError("info and info_matrix dimensions differ")
        keep = w > thresh
        support = q[:, keep]
        inv_w = 1.0 / w[keep]
        cov = (support * inv_w) @ support.T
        cov = 0.5 * (cov + cov.T)
        mean = cov @ info
        alpha = -0.5 * float(mean @ info)
        log_pdet = -float(np.sum(np.log(w[keep]))) if rank else 0.0
        vmx = np.asarray(info_matrix, dtype=float)
        vmx = 0.5 * (vmx + vmx.T)
        return cls(mean, cov, info_matrix=vmx, info=info, rank=rank,
                   alpha=alpha, log_pdet_cov=log_pdet, support=support)


def density_moment(g, x):
    """Density of ``g`` at ``x`` in the pseudo-inverse/pseudo-determinant form.

    For a degenerate Gaussian the density is defined only on the affine
    support; points off the support (beyond tolerance) return 0.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != g.dim:
        raise ValueError(f"x has dimension {x.shape[0]}, expected {g.dim}")
    d = x - g.mean
    if g.rank < g.dim:
        resid = d - g.support @ (g.support.T @ d)
        if float(np.linalg.norm(resid)) > 1e-8 * max(1.0, float(np.linalg.norm(d))):
            return 0.0
    quad = float(d @ g.info_matrix @ d)
    return math.exp(-0.5 * quad - 0.5 * (g.rank * LOG_2PI + g.log_pdet_cov))


def density_canonical(g, x):
    """Canonical-form expression pdet(V)^(1/2) (2 pi)^(-k/2) exp(-x'Vx/2 + x'u + alpha).

    Agrees with :func:`density_moment` on the support but stays finite
    (constant) along null directions of V instead of dropping to zero; this
    is the object the product and inverse-mapping identities hold for at
    every x, which is what the scaled-Gaussian tests evaluate.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != g.dim:
        raise ValueError(f"x has dimension {x.shape[0]}, expected {g.dim}")
    expo = -0.5 * float(x @ g.info_matrix @ x) + float(x @ g.info) + g.alpha
    return math.exp(expo - 0.5 * (g.rank * LOG_2PI + g.log_pdet_cov))


@dataclass(frozen=True)
class ScaledGaussian:
    """A normalized GeneralGaussian times exp(log_scale).

    log_scale is the natural log of the multiplicative prefactor relative to
    the normalized density, so ``value(x)`` is pointwise exact on the support
    (and everywhere, in the canonical-expression sense used by the algebra).
    """

    log_scale: float
    gaussian: GeneralGaussian

    def value(self, x):
        return math.exp(self.log_scale) * density_canonical(self.gaussian, x)


def inverse_linear_map(msg, a):
    """Infer the message of X from a message of Y = A X.

    ``msg`` must be non-degenerate over R^m and ``a`` an m x n matrix of full
    row rank m <= n (rank-deficient mappings must be pre-factored by the
    caller, e.g. through a compact SVD). The result has

        u_X = A' u_Y,  V_X = A' V_Y A,  alpha_X = alpha_Y,

    and log_scale chosen so that exp(log_scale) * f(x) equals the input
    density evaluated at A x, i.e. the exact scaling factor
    (pdet(V_Y) / pdet(V_X))^(1/2).
    """
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    m, n = a.shape
    if m > n:
        raise ValueError("mapping must not increase dimension (m <= n)")
    if msg.rank != msg.dim or msg.dim != m:
        raise ValueError("message must be a non-degenerate Gaussian over R^m")
    if np.linalg.matrix_rank(a) < m:
        raise ValueError("mapping matrix must have full row rank; "
                         "pre-factor rank-deficient mappings")
    u_x = a.T @ msg.info
    v_x = a.T @ msg.info_matrix @ a
    g = GeneralGaussian.from_canonical(u_x, 0.5 * (v_x + v_x.T))
    if g.rank != m:
        raise ValueError("inferred message lost rank; mapping is numerically "
                         "rank-deficient")
    # ln pdet(V) = -log_pdet_cov
    log_scale = 0.5 * (g.log_pdet_cov - msg.log_pdet_cov)
    return ScaledGaussian(log_scale=log_scale, gaussian=g)


def product(gs):
    """Product of scaled Gaussian densities over a common space.

    Implements the canonical-form sum u = sum u_i, V = sum V_i with the exact
    scaling factor

        prod pdet(V_i)^(1/2) / ((2 pi)^((sum k_i - k)/2) pdet(V)^(1/2))
            * exp(-alpha + sum alpha_i),

    where k_i are the input ranks and k = rank(sum V_i) is computed, not
    assumed. Input log_scales accumulate. The (2 pi) constant is kept so the
    result stays pointwise equal to the product of the inputs.
    """
    gs = list(gs)
    if not gs:
        raise ValueError("product of zero densities is undefined")
    dim = gs[0].gaussian.dim
    if any(sg.gaussian.dim != dim for sg in gs):
        raise ValueError("all factors must share the same dimension")
    u = np.sum([sg.gaussian.info for sg in gs], axis=0)
    v = np.sum([sg.gaussian.info_matrix for sg in gs], axis=0)
    g = GeneralGaussian.from_canonical(u, 0.5 * (v + v.T))
    k_sum = sum(sg.gaussian.rank for sg in gs)
    log_scale = (
        sum(sg.log_scale for sg in gs)
        + 0.5 * sum(-sg.gaussian.log_pdet_cov for sg in gs)
        - 0.5 * (k_sum - g.rank) * LOG_2PI
        - 0.5 * (-g.log_pdet_cov)
        - g.alpha
        + sum(sg.gaussian.alpha for sg in gs)
    )
    return ScaledGaussian(log_scale=float(log_scale), gaussian=g)


@dataclass(frozen=True)
class GaussianMixture:
    """Weighted list of Gaussians sharing one dimension, stored as arrays.

    means is (L, dim), covs is (L, dim, dim) and log_weights is (L,). Array
    storage keeps mixture-level operations (projection, moments) cheap for
    L up to 2^12; ``term`` materializes a single component as a
    GeneralGaussian when the full dual form is needed.
    """

    means: np.ndarray
    covs: np.ndarray
    log_weights: np.ndarray

    def __post_init__(self):
        if self.means.ndim != 2 or self.covs.ndim != 3:
            raise ValueError("means must be (L, dim) and covs (L, dim, dim)")
        if not (len(self.means) == len(self.covs) == len(self.log_weights)):
            raise ValueError("terms and log_weights lengths differ")
        if self.covs.shape[1:] != (self.means.shape[1],) * 2:
            raise ValueError("covs shape does not match means dimension")

    @classmethod
    def from_terms(cls, terms, log_weights):
        terms = list(terms)
        means = np.stack([t.mean for t in terms])
        covs = np.stack([t.cov for t in terms])
        return cls(means, covs, np.asarray(log_weights, dtype=float))

    def __len__(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def weights(self):
        return np.exp(self.log_weights)

    def term(self, l):
        return GeneralGaussian.from_moment(self.means[l], self.covs[l])

    def normalized(self):
        return GaussianMixture(self.means, self.covs,
                               self.log_weights - logsumexp(self.log_weights))

    def density(self, x):
        w = self.weights
        return float(sum(w[l] * density_moment(self.term(l), x)
                         for l in range(len(self))))
