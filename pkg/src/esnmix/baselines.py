"""Comparison systems: PCA+GMM and ESN-AE+GMM two-stage pipelines, plus
encoder-swapped single-stage variants (MLP on the flattened window, vanilla
tanh RNN trained through time).

The esn variant shares the primary training code path exactly: equal seeds
give bit-identical results.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import autoencoder as ae
from . import evaluation as ev
from . import trainer as tr
from .errors import ConfigError, NumericalError
from .numerics import cholesky

LOG_2PI = float(np.log(2.0 * np.pi))


# ---------------------------------------------------------------------------
# encoder variants
# ---------------------------------------------------------------------------

class MlpEncoder:
    """Feed-forward encoder on the flattened window."""

    kind = "mlp"

    def __init__(self, net, T, D, d):
        self.net = net
        self.T = T
        self.D = D
        self.d = d

    @classmethod
    def create(cls, T, D, d, seed, widths=None):
        widths = widths or [T * D, 128, 32, d]
        if widths[0] != T * D or widths[-1] != d:
            raise ConfigError(
                f"MlpEncoder: widths must run {T * D} -> {d}, got {widths}")
        return cls(ae.init_mlp(widths, seed), T, D, d)

    def trainable(self):
        out = {}
        for i, layer in enumerate(self.net.layers):
            out[f"{i}.W"] = layer.W
            out[f"{i}.b"] = layer.b
        return out

    def encode_batch(self, X):
        X = np.asarray(X, dtype=np.float64)
        flat = X.reshape(X.shape[0], -1)
        z_c, cache = ae.mlp_forward(self.net, flat)
        return z_c, cache

    def backward(self, cache, Gzc):
        grads, _ = ae.mlp_backward(self.net, cache, Gzc)
        out = {}
        for i, (gW, gb) in enumerate(grads):
            out[f"{i}.W"] = gW
            out[f"{i}.b"] = gb
        return out


class RnnEncoder:
    """Vanilla tanh RNN; all weights trainable, final state read out linearly."""

    kind = "rnn"

    def __init__(self, W_in, W_rec, b, W_ro, b_ro, T, D, d):
        self.W_in = W_in
        self.W_rec = W_rec
        self.b = b
        self.W_ro = W_ro
        self.b_ro = b_ro
        self.T = T
        self.D = D
        self.d = d
        self.hidden = W_rec.shape[0]

    @classmethod
    def create(cls, T, D, d, hidden, seed):
        rng = np.random.default_rng(seed)
        s = 1.0 / np.sqrt(hidden)
        return cls(
            W_in=rng.uniform(-s, s, size=(hidden, D)),
            W_rec=rng.uniform(-s, s, size=(hidden, hidden)),
            b=np.zeros(hidden),
            W_ro=rng.uniform(-s, s, size=(d, hidden)),
            b_ro=np.zeros(d),
            T=T, D=D, d=d)

    def trainable(self):
        return {"W_in": self.W_in, "W_rec": self.W_rec, "b": self.b,
                "W_ro": self.W_ro, "b_ro": self.b_ro}

    def encode_batch(self, X):
        X = np.asarray(X, dtype=np.float64)
        N = X.shape[0]
        states = [np.zeros((N, self.hidden))]
        for t in range(self.T):
            pre = X[:, t, :] @ self.W_in.T + states[-1] @ self.W_rec.T + self.b
            states.append(np.tanh(pre))
        z_c = states[-1] @ self.W_ro.T + self.b_ro
        return z_c, {"X": X, "states": states}

    def backward(self, cache, Gzc):
        X, states = cache["X"], cache["states"]
        gW_in = np.zeros_like(self.W_in)
        gW_rec = np.zeros_like(self.W_rec)
        gb = np.zeros_like(self.b)
        gW_ro = Gzc.T @ states[-1]
        gb_ro = Gzc.sum(axis=0)
        Gs = Gzc @ self.W_ro
        for t in range(self.T, 0, -1):
            Gpre = Gs * (1.0 - states[t] ** 2)  # tanh'
            gW_in += Gpre.T @ X[:, t - 1, :]
            gW_rec += Gpre.T @ states[t - 1]
            gb += Gpre.sum(axis=0)
            Gs = Gpre @ self.W_rec
        return {"W_in": gW_in, "W_rec": gW_rec, "b": gb,
                "W_ro": gW_ro, "b_ro": gb_ro}


def dagmm_variant(encoder_kind, train_windows, hp, reservoir_cfg=None,
                  rnn_hidden=64):
    """Train a single-stage model with the given encoder kind.

    The esn kind is the primary model; mlp and rnn swap only the encoder and
    share everything downstream.
    """
    train_windows = np.asarray(train_windows, dtype=np.float64)
    T, D = train_windows.shape[1], train_windows.shape[2]
    model = tr.build_model(encoder_kind, T, D, hp,
                           reservoir_cfg=reservoir_cfg, rnn_hidden=rnn_hidden)
    return tr.fit(train_windows, hp, model)


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

@dataclass
class PcaModel:
    components: np.ndarray          # (d, M) orthonormal rows
    mean: np.ndarray                # (M,)
    explained_variance_ratio: np.ndarray  # (d,) nonincreasing


def pca_fit(X, d):
    """Top-d principal directions via SVD of the centered data matrix."""
    X = np.asarray(X, dtype=np.float64)
    N, M = X.shape
    if N < 2:
        raise ValueError("pca_fit: need at least 2 samples")
    if d > min(N, M):
        raise ValueError(f"pca_fit: d={d} exceeds min(N, M)={min(N, M)}")
    mean = X.mean(axis=0)
    _, S, Vt = np.linalg.svd(X - mean, full_matrices=False)
    total = float(np.sum(S ** 2))
    ratios = (S[:d] ** 2) / total if total > 0 else np.zeros(d)
    return PcaModel(components=Vt[:d], mean=mean,
                    explained_variance_ratio=ratios)


def pca_transform(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != model.mean.shape[0]:
        raise ValueError(
            f"pca_transform: dim {X.shape[1]} != {model.mean.shape[0]}")
    return (X - model.mean) @ model.components.T


def pca_inverse_transform(model, codes):
    return np.asarray(codes) @ model.components + model.mean


# ---------------------------------------------------------------------------
# EM for Gaussian mixtures (stage 2 of the two-stage baselines)
# ---------------------------------------------------------------------------

@dataclass
class EmGmm:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihoods: list = field(default_factory=list)
    converged: bool = False
    n_iter: int = 0
    reseeded: list = field(default_factory=list)

    def log_responsibilities(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        K, p = self.means.shape
        log_r = np.empty((X.shape[0], K))
        for k in range(K):
            fac = cholesky(self.covariances[k], jitter=1e-6)
            delta = X - self.means[k]
            y = solve_triangular(fac.L, delta.T, lower=True)
            quad = np.einsum("ji,ji->i", y, y)
            log_r[:, k] = (np.log(self.weights[k]) - 0.5 * quad
                           - 0.5 * fac.log_det - 0.5 * p * LOG_2PI)
        return log_r

    def predict(self, X):
        return np.argmax(self.log_responsibilities(X), axis=1)

    def score_samples(self, X):
        log_r = self.log_responsibilities(X)
        m = log_r.max(axis=1, keepdims=True)
        return np.squeeze(m, 1) + np.log(np.exp(log_r - m).sum(axis=1))


def _kmeanspp_seeds(X, K, rng):
    """k-means++-style seeding: first mean uniform, rest by squared distance."""
    N = X.shape[0]
    means = [X[rng.integers(N)]]
    for _ in range(1, K):
        d2 = np.min(
            [np.sum((X - m) ** 2, axis=1) for m in means], axis=0)
        total = d2.sum()
        if total <= 0.0:
            means.append(X[rng.integers(N)])
            continue
        means.append(X[rng.choice(N, p=d2 / total)])
    return np.stack(means)


def em_gmm_fit(codes, K, seed=0, max_iters=200, tol=1e-6):
    """Expectation-maximization with seeded k-means++ initialization.

    Covariances get a 1e-6 diagonal jitter each M-step.  An emptied
    component is reseeded from the point farthest from every current mean
    (flagged); repeated collapse raises.
    """
    X = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    N, p = X.shape
    if N < K:
        raise ValueError(f"em_gmm_fit: N={N} < K={K}")
    rng = np.random.default_rng(seed)

    means = _kmeanspp_seeds(X, K, rng)
    base_cov = np.cov(X, rowvar=False, bias=True).reshape(p, p) + 1e-6 * np.eye(p)
    covs = np.stack([base_cov.copy() for _ in range(K)])
    weights = np.full(K, 1.0 / K)
    gmm = EmGmm(weights=weights, means=means, covariances=covs)

    collapse_counts = np.zeros(K, dtype=int)
    prev_ll = -np.inf
    for it in range(max_iters):
        log_r = gmm.log_responsibilities(X)
        m = log_r.max(axis=1, keepdims=True)
        lse = m + np.log(np.exp(log_r - m).sum(axis=1, keepdims=True))
        ll = float(lse.sum())
        gmm.log_likelihoods.append(ll)
        resp = np.exp(log_r - lse)

        col = resp.sum(axis=0)
        empty = np.flatnonzero(col < 1e-8)
        for k in empty:
            collapse_counts[k] += 1
            if collapse_counts[k] > 3:
                raise NumericalError(
                    f"em_gmm_fit: component {k} collapsed repeatedly")
            d2 = np.min(
                np.sum((X[:, None, :] - gmm.means[None]) ** 2, axis=2), axis=1)
            far = int(np.argmax(d2))
            gmm.means[k] = X[far]
            gmm.covariances[k] = base_cov.copy()
            gmm.weights[k] = 1.0 / N
            gmm.weights /= gmm.weights.sum()
            gmm.reseeded.append((it, int(k)))
        if len(empty):
            continue  # redo the E-step with the reseeded component

        gmm.weights = col / N
        for k in range(K):
            gmm.means[k] = resp[:, k] @ X / col[k]
            d = X - gmm.means[k]
            cov = (resp[:, k][:, None] * d).T @ d / col[k]
            gmm.covariances[k] = 0.5 * (cov + cov.T) + 1e-6 * np.eye(p)

        if ll - prev_ll < tol and it > 0:
            gmm.converged = True
            gmm.n_iter = it + 1
            break
        prev_ll = ll
    else:
        gmm.n_iter = max_iters
    return gmm


# ---------------------------------------------------------------------------
# two-stage pipelines
# ---------------------------------------------------------------------------

def two_stage_pipeline(kind, prepared, d, K, hp, reservoir_cfg=None):
    """Stage 1: reducer trained for reconstruction only.  Stage 2: EM-GMM on
    the d-dimensional codes (no reconstruction features).

    Returns (test latent codes, EmGmm, MetricsReport).  The silhouette is
    computed on the code space, matching what these baselines cluster.
    """
    from dataclasses import replace

    train = prepared.train_windows
    test = prepared.test_windows
    N_test, T, D = test.shape

    if kind == "pca":
        pca = pca_fit(train.reshape(train.shape[0], -1), d)
        train_codes = pca_transform(pca, train.reshape(train.shape[0], -1))
        test_codes = pca_transform(pca, test.reshape(N_test, -1))
        recon = pca_inverse_transform(pca, test_codes).reshape(test.shape)
    elif kind == "esn_ae":
        hp_ae = replace(hp, d=d, K=K, lambda1=0.0, lambda2=0.0)
        model = tr.build_model("esn", T, D, hp_ae, reservoir_cfg=reservoir_cfg)
        model, _ = tr.fit(train, hp_ae, model)
        train_codes, _ = model.encoder.encode_batch(train)
        test_codes, _ = model.encoder.encode_batch(test)
        flat_hat, _ = ae.mlp_forward(model.decoder, test_codes)
        recon = flat_hat.reshape(test.shape)
    else:
        raise ConfigError(f"two_stage_pipeline: unknown kind {kind!r}")

    gmm = em_gmm_fit(train_codes, K, seed=hp.seed)
    labels = gmm.predict(test_codes)
    mse = ev.reconstruction_mse_metric(test, recon)
    counts = np.bincount(labels, minlength=K).tolist()
    try:
        sil = ev.silhouette_score(test_codes, labels)
        collapsed = False
    except Exception:
        sil = None
        collapsed = True
    report = ev.MetricsReport(
        reconstruction_mse=mse, silhouette=sil, collapsed=collapsed,
        cluster_sizes=counts,
        config={"baseline": kind, "d": d, "K": K, "seed": hp.seed})
    return test_codes, gmm, report
