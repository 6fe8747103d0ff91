"""Estimation network (soft memberships), GMM parameter estimation from
memberships, sample energy, and the covariance penalty.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .autoencoder import Mlp, init_mlp, mlp_forward
from .errors import ConfigError, NumericalError
from .numerics import cholesky, log_sum_exp, softmax

DEGENERATE_COLSUM = 1e-8   # membership mass below which a component collapses
ENERGY_JITTER = 1e-6       # added to covariances before factorization

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class EstimationNet:
    """3-layer MLP with dropout between hidden layers and a softmax output."""

    net: Mlp
    dropout_rate: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ConfigError(
                f"EstimationNet: dropout_rate must be in [0,1), "
                f"got {self.dropout_rate}")

    @property
    def n_components(self):
        return self.net.out_dim


def default_estimation_widths(latent_dim, K):
    return [latent_dim, 16, 8, K]


def init_estimation_net(latent_dim, K, seed, widths=None, dropout_rate=0.5):
    widths = widths or default_estimation_widths(latent_dim, K)
    if widths[0] != latent_dim or widths[-1] != K:
        raise ConfigError(
            f"init_estimation_net: widths must run {latent_dim} -> {K}, "
            f"got {widths}")
    return EstimationNet(net=init_mlp(widths, seed), dropout_rate=dropout_rate)


def sample_dropout_masks(net, n_rows, rng):
    """Inverted-scaling masks for the hidden layers (None for rate 0)."""
    if net.dropout_rate == 0.0:
        return None
    keep = 1.0 - net.dropout_rate
    masks = []
    for layer in net.net.layers[:-1]:
        masks.append(
            (rng.random((n_rows, layer.W.shape[0])) < keep) / keep)
    return masks


@dataclass
class Memberships:
    gamma: np.ndarray  # (N, K) row-stochastic

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=np.float64)
        if g.ndim != 2:
            raise ValueError("Memberships: expected (N, K) matrix")
        self.gamma = g


def estimate_memberships(net, Z, training_mode=False, rng=None, masks=None):
    """Softmax memberships for a (N, latent_dim) batch.

    In training mode dropout masks are sampled from `rng` (or taken from
    `masks` when the caller needs to freeze them, e.g. gradient checks).
    Evaluation mode is deterministic.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[1] != net.net.in_dim:
        raise ValueError(
            f"estimate_memberships: latent dim {Z.shape[1]} does not match "
            f"net input {net.net.in_dim}")
    if training_mode and masks is None and net.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("estimate_memberships: training mode needs rng")
        masks = sample_dropout_masks(net, Z.shape[0], rng)
    logits, _ = mlp_forward(net.net, Z, dropout_masks=masks if training_mode else None)
    return Memberships(gamma=softmax(logits))


@dataclass
class MixtureParams:
    phi: np.ndarray    # (K,)
    mu: np.ndarray     # (K, p)
    sigma: np.ndarray  # (K, p, p) symmetric
    degenerate: list = field(default_factory=list)  # flagged component indices

    @property
    def n_components(self):
        return len(self.phi)

    @property
    def dim(self):
        return self.mu.shape[1]


def fit_mixture_params(memberships, Z):
    """Weighted-moment mixture parameters from soft memberships.

    Components whose membership column sum falls below DEGENERATE_COLSUM get
    mu=0, sigma=I and are flagged; this keeps training alive when a
    component collapses.
    """
    gamma = memberships.gamma if isinstance(memberships, Memberships) \
        else np.asarray(memberships, dtype=np.float64)
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    N, p = Z.shape
    if N == 0:
        raise ValueError("fit_mixture_params: empty batch")
    if gamma.shape[0] != N:
        raise ValueError("fit_mixture_params: gamma/Z row mismatch")
    K = gamma.shape[1]

    col = gamma.sum(axis=0)
    phi = col / N
    mu = np.zeros((K, p))
    sigma = np.zeros((K, p, p))
    degenerate = []
    for k in range(K):
        if col[k] < DEGENERATE_COLSUM:
            mu[k] = 0.0
            sigma[k] = np.eye(p)
            degenerate.append(k)
            continue
        mu[k] = gamma[:, k] @ Z / col[k]
        d = Z - mu[k]
        sigma[k] = (gamma[:, k][:, None] * d).T @ d / col[k]
        sigma[k] = 0.5 * (sigma[k] + sigma[k].T)  # kill fp asymmetry
    return MixtureParams(phi=phi, mu=mu, sigma=sigma, degenerate=degenerate)


def _component_factors(params):
    """Cholesky factors of sigma_k + jitter*I for all components."""
    return [cholesky(params.sigma[k], jitter=ENERGY_JITTER)
            for k in range(params.n_components)]


def _component_log_terms(params, Z, factors):
    """(N, K) matrix of log(phi_k * N(z; mu_k, sigma_k)) terms.

    Zero-weight components get -inf and are excluded from the later
    log-sum-exp.
    """
    Z = np.atleast_2d(Z)
    N = Z.shape[0]
    p = params.dim
    out = np.full((N, params.n_components), -np.inf)
    for k in range(params.n_components):
        if params.phi[k] <= 0.0:
            continue
        delta = Z - params.mu[k]
        y = solve_triangular(factors[k].L, delta.T, lower=True)
        quad = np.einsum("ji,ji->i", y, y)
        out[:, k] = (np.log(params.phi[k]) - 0.5 * quad
                     - 0.5 * factors[k].log_det - 0.5 * p * LOG_2PI)
    return out


def sample_energy(params, z):
    """E(z) = -log sum_k phi_k N(z; mu_k, sigma_k), via Cholesky + LSE."""
    if np.all(params.phi <= 0.0):
        raise NumericalError("sample_energy: all components have zero weight")
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    if z.shape[1] != params.dim:
        raise ValueError(
            f"sample_energy: z has dim {z.shape[1]}, params have {params.dim}")
    terms = _component_log_terms(params, z, _component_factors(params))
    return -float(log_sum_exp(terms[0]))


def batch_energy(params, Z):
    """Vectorized sample_energy over (N, p); identical math."""
    if np.all(params.phi <= 0.0):
        raise NumericalError("batch_energy: all components have zero weight")
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    terms = _component_log_terms(params, Z, _component_factors(params))
    return -log_sum_exp(terms)


def covariance_penalty(params):
    """Sum of reciprocal covariance diagonals over all components."""
    total = 0.0
    for k in range(params.n_components):
        diag = np.diag(params.sigma[k])
        if np.any(diag <= 0.0):
            raise NumericalError(
                f"covariance_penalty: non-positive diagonal in component {k}")
        total += float(np.sum(1.0 / diag))
    return total
