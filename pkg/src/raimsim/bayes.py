"""Exact Gaussian-mixture posterior of the 4D state via factor-graph message passing.

Each measurement branch contributes a two-term mixture over the state (one
term per fault hypothesis of that measurement); the forward pass fuses all
branches into a 2^M-term posterior with exactly tracked log-weights, and the
backward pass turns leave-one-out products into posterior fault
probabilities. The per-branch messages are built with the scaled-Gaussian
algebra from :mod:`raimsim.gaussians`; the fusion enumerates all branch-state
combinations with batched linear algebra, which is the same computation as
folding the scaled products pairwise, just vectorized.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ._linalg import block_inv_logdet4
from .gaussians import LOG_2PI, GaussianMixture, GeneralGaussian, inverse_linear_map

STATE_DIM = 4


class UnobservableStateError(ValueError):
    """The measurement geometry does not determine the 4D state."""


@dataclass(frozen=True)
class BranchMessage:
    """Two-term scaled-Gaussian message of one measurement branch.

    Both terms are rank-1 Gaussians over the 4D state with information matrix
    proportional to h h'; term 0 is the fault-free hypothesis, term 1 the
    faulty one. The raw branch data is kept for the backward pass.
    """

    index: int
    terms: tuple          # 2 ScaledGaussian
    y: float
    h: np.ndarray
    theta: float
    bias_mean: float
    bias_std: float
    noise_std: float


def branch_message(y_i, h_i, fault, sigma_n, index=0):
    """Forward message of branch i.

    The measurement's two fault hypotheses give a 1D mixture over the mapped
    scalar h_i' x with weights (1 - theta, theta), means (y, y - bias_mean)
    and variances (sigma_n^2, sigma_n^2 + bias_std^2); each component is then
    pulled back through the inverse of the linear mapping.
    """
    if sigma_n <= 0.0:
        raise ValueError("sigma_n must be positive")
    h_i = np.asarray(h_i, dtype=float).reshape(-1)
    a = h_i.reshape(1, -1)
    params = [
        (math.log1p(-fault.theta), y_i, sigma_n ** 2),
        (math.log(fault.theta), y_i - fault.bias_mean,
         sigma_n ** 2 + fault.bias_std ** 2),
    ]
    terms = []
    for log_pi, mean, var in params:
        src = GeneralGaussian.from_moment([mean], [[var]])
        sg = inverse_linear_map(src, a)
        terms.append(type(sg)(log_scale=sg.log_scale + log_pi,
                              gaussian=sg.gaussian))
    return BranchMessage(index=index, terms=tuple(terms), y=float(y_i), h=h_i,
                         theta=fault.theta, bias_mean=fault.bias_mean,
                         bias_std=fault.bias_std, noise_std=float(sigma_n))


def make_branches(model, draw, scenario):
    """Branch messages for every measurement of one epoch."""
    return [branch_message(draw.y[i], model.H[i], scenario.faults[i],
                           scenario.noise_std[i], index=i)
            for i in range(model.m)]


@dataclass(frozen=True)
class PosteriorResult:
    """Normalized posterior mixture plus point estimate and fault beliefs."""

    posterior: GaussianMixture   # L terms, dim 4, each full-rank
    x_hat: np.ndarray            # (3,) position estimate (weighted mean)
    theta_post: np.ndarray       # (M,) posterior fault probabilities
    log_evidence: float          # log of the unnormalized mixture mass


def _branch_tables(branches):
    """Stack per-branch, per-term quantities used by both passes.

    lw is the log-weight in the convention where each term is a normalized
    density: log_scale + 1/2 ln pdet(V); for branch terms this equals
    log(prior component probability) - log(source standard deviation).
    """
    m = len(branches)
    u = np.empty((m, 2, STATE_DIM))
    v = np.empty((m, 2, STATE_DIM, STATE_DIM))
    alpha = np.empty((m, 2))
    lw = np.empty((m, 2))
    ranks = np.empty((m, 2), dtype=int)
    for j, br in enumerate(branches):
        for t, sg in enumerate(br.terms):
            g = sg.gaussian
            u[j, t] = g.info
            v[j, t] = g.info_matrix
            alpha[j, t] = g.alpha
            lw[j, t] = sg.log_scale + 0.5 * (-g.log_pdet_cov)
            ranks[j, t] = g.rank
    return u, v, alpha, lw, ranks


def _combination_bits(m):
    """(2^m, m) array: bit j of row l is the term choice of branch j."""
    l = np.arange(1 << m)
    return ((l[:, None] >> np.arange(m)[None, :]) & 1).astype(np.int64)


def _inv_logdet_pd4(v):
    """Batched inverse + log-determinant of symmetric PD 4x4 matrices.

    Raises UnobservableStateError if any matrix is not positive definite.
    """
    inv, logdet, ok = block_inv_logdet4(v)
    if not np.all(ok):
        raise UnobservableStateError("a term's information matrix is singular")
    return inv, logdet


def fuse_posterior(branches, prior=None):
    """Product of all branch messages: the exact 2^M-term posterior.

    Term l corresponds to the branch-state combination encoded by the bits of
    l (bit j = fault hypothesis of measurement j). Log-weights follow the
    exact product scaling and are normalized once at the end; the position
    estimate is the weighted mean of the first three state components.
    An optional full-rank Gaussian ``prior`` over the state is multiplied in.
    Raises UnobservableStateError when the measurement matrix has rank < 4.
    """
    m = len(branches)
    h_mat = np.stack([br.h for br in branches])
    if np.linalg.matrix_rank(h_mat) < STATE_DIM:
        raise UnobservableStateError(
            f"measurement matrix rank {np.linalg.matrix_rank(h_mat)} < {STATE_DIM}")

    u, v, alpha, lw, ranks = _branch_tables(branches)
    bits = _combination_bits(m)
    bits_f = bits.astype(float)

    # base = all branches at term 0; delta = term 1 - term 0 per branch
    v_all = (v[:, 0].sum(axis=0).reshape(1, -1)
             + bits_f @ (v[:, 1] - v[:, 0]).reshape(m, -1))
    v_all = v_all.reshape(-1, STATE_DIM, STATE_DIM)
    u_all = u[:, 0].sum(axis=0)[None, :] + bits_f @ (u[:, 1] - u[:, 0])
    c_base = (lw[:, 0] + alpha[:, 0]).sum()
    c_all = c_base + bits_f @ ((lw[:, 1] + alpha[:, 1]) - (lw[:, 0] + alpha[:, 0]))
    k_sum = int(ranks[:, 0].sum()) + bits @ (ranks[:, 1] - ranks[:, 0])

    if prior is not None:
        if prior.dim != STATE_DIM or prior.rank != STATE_DIM:
            raise ValueError("prior must be a full-rank Gaussian over the state")
        v_all = v_all + prior.info_matrix[None]
        u_all = u_all + prior.info[None]
        c_all = c_all + (0.5 * (-prior.log_pdet_cov) + prior.alpha)
        k_sum = k_sum + prior.rank

    v_all = 0.5 * (v_all + np.swapaxes(v_all, 1, 2))
    covs, logdet_v = _inv_logdet_pd4(v_all)
    means = np.einsum("lij,lj->li", covs, u_all)
    alpha_all = -0.5 * np.einsum("li,li->l", u_all, means)
    log_w = (c_all - alpha_all - 0.5 * logdet_v
             - 0.5 * (k_sum - STATE_DIM) * LOG_2PI)

    log_evidence = float(logsumexp(log_w))
    mixture = GaussianMixture(means=means, covs=covs,
                              log_weights=log_w - log_evidence)
    w = mixture.weights
    x_hat = w @ means[:, :3]
    theta_post = posterior_fault_probs(branches, prior=prior)
    return PosteriorResult(posterior=mixture, x_hat=x_hat,
                           theta_post=theta_post, log_evidence=log_evidence)


def _log_normal(x, mean, var):
    return -0.5 * ((x - mean) ** 2 / var + np.log(2.0 * math.pi * var))


def _leave_one_out_tables(u, v, c, m):
    """Prefix/suffix partial-product tables over branches.

    prefix[j] holds the (2^j, ...) sums over branches 0..j-1 (combo bit r
    selects the term of branch r); suffix[j] the sums over branches j..m-1.
    Combining prefix[i] with suffix[i+1] enumerates all leave-one-out
    combinations of branch i in O(2^(m-1)) without redoing the sums.
    """
    def grow(table, j):
        base_v, base_u, base_c = table
        return (
            np.concatenate([base_v + v[j, 0][None], base_v + v[j, 1][None]]),
            np.concatenate([base_u + u[j, 0][None], base_u + u[j, 1][None]]),
            np.concatenate([base_c + c[j, 0], base_c + c[j, 1]]),
        )

    empty = (np.zeros((1, STATE_DIM, STATE_DIM)), np.zeros((1, STATE_DIM)),
             np.zeros(1))
    prefix = [empty]
    for j in range(m):
        prefix.append(grow(prefix[-1], j))
    suffix = [empty]
    for j in range(m - 1, -1, -1):
        suffix.append(grow(suffix[-1], j))
    suffix.reverse()
    return prefix, suffix


def posterior_fault_probs(branches, prior=None):
    """Posterior fault probability of every measurement.

    For each branch the product of all *other* branch messages is mapped to
    the measurement scalar, convolved with the noise, and evaluated under the
    two fault hypotheses; combining with the fault prior gives the posterior
    probability that the measurement was faulty. Leave-one-out products reuse
    prefix/suffix tables rather than being recomputed per branch.
    """
    return _fault_probs_and_evidence(branches, prior)[0]


def _fault_probs_and_evidence(branches, prior=None):
    """As posterior_fault_probs, also returning the per-branch evidence.

    On a cycle-free graph the total mass seen from any branch equals the
    fused mixture's unnormalized mass, which makes the second return value a
    strong internal consistency check.
    """
    m = len(branches)
    h_mat = np.stack([br.h for br in branches])
    if np.linalg.matrix_rank(h_mat) < STATE_DIM:
        raise UnobservableStateError(
            f"measurement matrix rank {np.linalg.matrix_rank(h_mat)} < {STATE_DIM}")
    u, v, alpha, lw, _ = _branch_tables(branches)
    c = lw + alpha
    prefix, suffix = _leave_one_out_tables(u, v, c, m)

    p_extra_v = 0.0
    p_extra_u = 0.0
    p_extra_c = 0.0
    k_loo = m - 1
    if prior is not None:
        p_extra_v = prior.info_matrix[None]
        p_extra_u = prior.info[None]
        p_extra_c = 0.5 * (-prior.log_pdet_cov) + prior.alpha
        k_loo = m - 1 + prior.rank

    out = np.empty(m)
    log_evid = np.empty(m)
    for i, br in enumerate(branches):
        pv, pu, pc = prefix[i]
        sv, su, sc = suffix[i + 1]
        v_loo = (pv[:, None] + sv[None, :]).reshape(-1, STATE_DIM, STATE_DIM)
        u_loo = (pu[:, None] + su[None, :]).reshape(-1, STATE_DIM)
        c_loo = (pc[:, None] + sc[None, :]).reshape(-1)
        v_loo = v_loo + p_extra_v
        u_loo = u_loo + p_extra_u
        c_loo = c_loo + p_extra_c
        try:
            cov_loo, logdet = _inv_logdet_pd4(v_loo)
        except UnobservableStateError as exc:
            raise UnobservableStateError(
                "a leave-one-out submodel is rank deficient; posterior fault "
                "probabilities need every (M-1)-measurement subset to be "
                "observable") from exc
        m_loo = np.einsum("lij,lj->li", cov_loo, u_loo)
        a_loo = -0.5 * np.einsum("li,li->l", u_loo, m_loo)
        log_wt = (c_loo - a_loo - 0.5 * logdet
                  - 0.5 * (k_loo - STATE_DIM) * LOG_2PI)

        g_mean = m_loo @ br.h
        g_var = np.einsum("i,lij,j->l", br.h, cov_loo, br.h)
        var0 = g_var + br.noise_std ** 2
        var1 = var0 + br.bias_std ** 2
        log_mu0 = logsumexp(log_wt + _log_normal(br.y, g_mean, var0))
        log_mu1 = logsumexp(log_wt + _log_normal(br.y, g_mean + br.bias_mean,
                                                 var1))
        log_p0 = math.log1p(-br.theta) + log_mu0
        log_p1 = math.log(br.theta) + log_mu1
        log_z = np.logaddexp(log_p0, log_p1)
        out[i] = math.exp(log_p1 - log_z)
        log_evid[i] = log_z
    return out, log_evid
