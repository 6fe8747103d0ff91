"""End-to-end training of the readout, decoder, and estimation network under
the joint objective (reconstruction + weighted sample energy + covariance
penalty), with exact hand-rolled reverse-mode gradients and a finite
difference verification harness.

The energy-term gradient flows through the batch-dependent mixture
parameters (weights, means, covariances) into every trainable block; the
reservoir input/recurrent matrices are fixed and receive no gradient.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve

from . import autoencoder as ae
from . import mixture as mx
from .errors import ConfigError, NumericalError
from .numerics import softmax
from .reservoir import ReservoirConfig, init_reservoir


@dataclass
class Hyperparams:
    lambda1: float = 0.1
    lambda2: float = 0.005
    K: int = 2
    d: int = 10
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 200
    seed: int = 0

    def validate(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("hyperparams: lambda1/lambda2 must be >= 0")
        if self.K < 1 or self.d < 1:
            raise ConfigError("hyperparams: K and d must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("hyperparams: bad batch_size/epochs")


@dataclass
class DagmmModel:
    encoder: object   # EsnEncoder / MlpEncoder / RnnEncoder
    decoder: ae.Mlp
    estimator: mx.EstimationNet
    T: int
    D: int
    d: int
    K: int

    @property
    def encoder_kind(self):
        return self.encoder.kind

    @property
    def latent_dim(self):
        return self.d + 3


def param_blocks(model):
    """Ordered (name, live array) pairs over every trainable block.

    The arrays are the model's own buffers; optimizers update them in place.
    """
    blocks = []
    for name, arr in model.encoder.trainable().items():
        blocks.append((f"encoder.{name}", arr))
    for i, layer in enumerate(model.decoder.layers):
        blocks.append((f"decoder.{i}.W", layer.W))
        blocks.append((f"decoder.{i}.b", layer.b))
    for i, layer in enumerate(model.estimator.net.layers):
        blocks.append((f"estimator.{i}.W", layer.W))
        blocks.append((f"estimator.{i}.b", layer.b))
    return blocks


def model_state(model):
    """Deep copy of all trainable arrays, keyed by block name."""
    return {name: arr.copy() for name, arr in param_blocks(model)}


def restore_model_state(model, state):
    for name, arr in param_blocks(model):
        np.copyto(arr, state[name])


def build_model(encoder_kind, T, D, hp, reservoir_cfg=None,
                decoder_widths=None, estimation_widths=None,
                dropout_rate=0.5, rnn_hidden=64):
    """Assemble a model with the requested encoder kind, seeded from hp.seed."""
    hp.validate()
    if encoder_kind == "esn":
        cfg = reservoir_cfg or ReservoirConfig()
        cfg = replace(cfg, seed=hp.seed)
        encoder = init_reservoir(cfg, D=D, T=T, d=hp.d)
    elif encoder_kind in ("mlp", "rnn"):
        from . import baselines  # deferred: baselines builds on this module
        if encoder_kind == "mlp":
            encoder = baselines.MlpEncoder.create(T, D, hp.d, seed=hp.seed)
        else:
            encoder = baselines.RnnEncoder.create(
                T, D, hp.d, hidden=rnn_hidden, seed=hp.seed)
    else:
        raise ConfigError(f"build_model: unknown encoder kind {encoder_kind!r}")
    decoder = ae.init_decoder(hp.d, T, D, seed=hp.seed + 1,
                              widths=decoder_widths)
    estimator = mx.init_estimation_net(
        hp.d + 3, hp.K, seed=hp.seed + 2,
        widths=estimation_widths, dropout_rate=dropout_rate)
    return DagmmModel(encoder=encoder, decoder=decoder, estimator=estimator,
                      T=T, D=D, d=hp.d, K=hp.K)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _forward(model, X, hp, training_mode, rng=None, masks=None):
    """Full forward pass over a (N, T, D) batch; caches for backward.

    Dropout masks are sampled from `rng` in training mode unless explicitly
    provided (gradient checks freeze them).  Energy and penalty terms are
    skipped entirely when their lambda is zero.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError(f"_forward: expected (N, T, D), got shape {X.shape}")
    N = X.shape[0]
    if N == 0:
        raise ValueError("_forward: empty batch")

    z_c, enc_cache = model.encoder.encode_batch(X)
    flat_hat, dec_cache = ae.mlp_forward(model.decoder, z_c)
    X_hat = flat_hat.reshape(N, model.T, model.D)
    Zr = ae.batch_recon_features(X, X_hat)
    Z = np.concatenate([z_c, Zr], axis=1)

    diff = X - X_hat
    recon_per = np.einsum("ntd,ntd->n", diff, diff) / model.T
    recon_term = float(recon_per.mean())

    cache = {
        "X": X, "z_c": z_c, "enc_cache": enc_cache, "dec_cache": dec_cache,
        "X_hat": X_hat, "Zr": Zr, "Z": Z, "N": N, "masks": None,
        "params": None,
    }

    need_mixture = hp.lambda1 > 0.0 or hp.lambda2 > 0.0
    energy_mean = 0.0
    penalty = 0.0
    if need_mixture:
        if training_mode and masks is None and model.estimator.dropout_rate > 0:
            if rng is None:
                raise ValueError("_forward: training mode needs rng for dropout")
            masks = mx.sample_dropout_masks(model.estimator, N, rng)
        use_masks = masks if training_mode else None
        logits, est_cache = ae.mlp_forward(model.estimator.net, Z,
                                           dropout_masks=use_masks)
        gamma = softmax(logits)
        params = mx.fit_mixture_params(mx.Memberships(gamma), Z)
        cache.update(masks=use_masks, est_cache=est_cache, gamma=gamma,
                     params=params)
        if hp.lambda1 > 0.0:
            factors = mx._component_factors(params)
            terms = mx._component_log_terms(params, Z, factors)
            energies = -np.array([_lse_row(terms[i]) for i in range(N)])
            energy_mean = float(energies.mean())
            cache.update(factors=factors, log_terms=terms, energies=energies)
        if hp.lambda2 > 0.0:
            penalty = mx.covariance_penalty(params)

    terms = {
        "recon": recon_term,
        "energy": hp.lambda1 * energy_mean,
        "penalty": hp.lambda2 * penalty,
    }
    total = terms["recon"] + terms["energy"] + terms["penalty"]
    cache.update(terms=terms, total=total)
    return cache


def _lse_row(row):
    m = np.max(row)
    if not np.isfinite(m):
        return -np.inf
    return m + np.log(np.sum(np.exp(row - m)))


def joint_loss(batch, model, hp, training_mode=False, rng=None, masks=None):
    """Joint objective over a batch; returns (total, terms dict)."""
    cache = _forward(model, batch, hp, training_mode, rng=rng, masks=masks)
    return cache["total"], cache["terms"]


def _backward_from_cache(model, hp, cache):
    """Exact reverse-mode gradients of the joint objective.

    Returns a dict keyed like param_blocks().  See module docstring for the
    gradient paths covered.
    """
    X, X_hat, Z, N = cache["X"], cache["X_hat"], cache["Z"], cache["N"]
    p = model.latent_dim

    GZ = np.zeros_like(Z)
    GXhat = (2.0 / (N * model.T)) * (X_hat - X)
    grads = {}

    if cache["params"] is not None:
        params = cache["params"]
        gamma = cache["gamma"]
        col = gamma.sum(axis=0)
        K = model.K
        degenerate = set(params.degenerate)

        Gphi = np.zeros(K)
        Gmu = np.zeros_like(params.mu)
        Gsigma = np.zeros_like(params.sigma)

        if hp.lambda1 > 0.0:
            # posterior component weights; -inf log terms (zero-weight
            # components) contribute zero mass
            lt = cache["log_terms"]
            e = np.exp(lt - lt.max(axis=1, keepdims=True))
            w = e / e.sum(axis=1, keepdims=True)
            scale = hp.lambda1 / N
            for k in range(K):
                if params.phi[k] <= 0.0:
                    continue
                fac = cache["factors"][k]
                delta = Z - params.mu[k]
                y2 = cho_solve((fac.L, True), delta.T).T  # sigma^-1 delta
                wk = w[:, k]
                Gphi[k] += -scale * wk.sum() / params.phi[k]
                Gmu[k] += -scale * wk @ y2
                sigma_inv = cho_solve((fac.L, True), np.eye(p))
                Gsigma[k] += 0.5 * scale * (wk.sum() * sigma_inv
                                            - (wk[:, None] * y2).T @ y2)
                GZ += scale * wk[:, None] * y2

        if hp.lambda2 > 0.0:
            for k in range(K):
                if k in degenerate:
                    continue  # sigma is a constant identity there
                diag = np.diag(params.sigma[k])
                Gsigma[k] -= hp.lambda2 * np.diag(1.0 / diag ** 2)

        # mixture stats -> memberships and latent vectors
        Ggamma = np.zeros_like(gamma)
        for k in range(K):
            Ggamma[:, k] += Gphi[k] / N
            if k in degenerate:
                continue
            d_k = Z - params.mu[k]
            Ggamma[:, k] += d_k @ Gmu[k] / col[k]
            quad = np.einsum("ia,ab,ib->i", d_k, Gsigma[k], d_k)
            Ggamma[:, k] += (quad - float(np.sum(Gsigma[k] * params.sigma[k]))) \
                / col[k]
            GZ += (gamma[:, k] / col[k])[:, None] * Gmu[k][None, :]
            GZ += (gamma[:, k] / col[k])[:, None] \
                * (d_k @ (Gsigma[k] + Gsigma[k].T))

        # softmax + estimation net
        Glogits = gamma * (Ggamma - np.sum(Ggamma * gamma, axis=1,
                                           keepdims=True))
        est_grads, Gz_est = ae.mlp_backward(model.estimator.net,
                                            cache["est_cache"], Glogits)
        for i, (gW, gb) in enumerate(est_grads):
            grads[f"estimator.{i}.W"] = gW
            grads[f"estimator.{i}.b"] = gb
        GZ += Gz_est
    else:
        for i, layer in enumerate(model.estimator.net.layers):
            grads[f"estimator.{i}.W"] = np.zeros_like(layer.W)
            grads[f"estimator.{i}.b"] = np.zeros_like(layer.b)

    Gz_c = GZ[:, :model.d].copy()
    Gzr = GZ[:, model.d:]
    GXhat = GXhat + ae.batch_recon_features_backward(X, X_hat, Gzr)

    dec_grads, Gz_c_dec = ae.mlp_backward(model.decoder, cache["dec_cache"],
                                          GXhat.reshape(N, -1))
    for i, (gW, gb) in enumerate(dec_grads):
        grads[f"decoder.{i}.W"] = gW
        grads[f"decoder.{i}.b"] = gb
    Gz_c += Gz_c_dec

    for name, g in model.encoder.backward(cache["enc_cache"], Gz_c).items():
        grads[f"encoder.{name}"] = g

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"backward: non-finite gradient in {name}")
    return grads


def backward(batch, model, hp, rng=None, masks=None):
    """Forward + reverse pass; returns (grads, total, terms)."""
    cache = _forward(model, batch, hp, training_mode=True, rng=rng,
                     masks=masks)
    grads = _backward_from_cache(model, hp, cache)
    return grads, cache["total"], cache["terms"]


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainReport:
    """Per-epoch loss decomposition plus the frozen mixture parameters.

    Wall-clock per epoch is kept out of `records()` so that serialized
    reports are bit-identical across reruns of the same (seed, data, hp).
    """

    epochs: list = field(default_factory=list)  # dicts, see fit()
    epoch_seconds: list = field(default_factory=list)
    frozen_params: object = None
    aborted: bool = False

    def records(self):
        return self.epochs

    def write_csv(self, path):
        import csv
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "total", "recon", "energy", "penalty",
                             "degenerate_components"])
            for rec in self.epochs:
                writer.writerow([
                    rec["epoch"], repr(rec["total"]), repr(rec["recon"]),
                    repr(rec["energy"]), repr(rec["penalty"]),
                    ";".join(str(k) for k in rec["degenerate"]),
                ])


class Adam:
    """Adaptive moment estimation over named parameter blocks."""

    def __init__(self, blocks, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(arr) for name, arr in blocks}
        self.v = {name: np.zeros_like(arr) for name, arr in blocks}

    def step(self, blocks, grads):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, arr in blocks:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            arr -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def freeze_mixture_params(model, windows):
    """Evaluation-mode pass over `windows`; returns fitted MixtureParams."""
    z_c, _ = model.encoder.encode_batch(windows)
    flat_hat, _ = ae.mlp_forward(model.decoder, z_c)
    X_hat = flat_hat.reshape(windows.shape[0], model.T, model.D)
    Zr = ae.batch_recon_features(windows, X_hat)
    Z = np.concatenate([z_c, Zr], axis=1)
    gamma = mx.estimate_memberships(model.estimator, Z, training_mode=False)
    return mx.fit_mixture_params(gamma, Z)


def fit(train_windows, hp, model):
    """Minibatch Adam over the joint objective.

    Batches are drawn in a seeded shuffled order per epoch; dropout is active
    only during training steps.  After the last epoch an evaluation-mode pass
    over all training data freezes the mixture parameters into the report.
    Aborts with the last epoch-start state attached when the loss goes
    non-finite.
    """
    hp.validate()
    X = np.asarray(train_windows, dtype=np.float64)
    N = X.shape[0]
    if N == 0:
        raise ValueError("fit: no training windows")
    rng = np.random.default_rng(hp.seed)
    blocks = param_blocks(model)
    opt = Adam(blocks, lr=hp.learning_rate)
    report = TrainReport()

    reservoir_snapshot = None
    if model.encoder_kind == "esn":
        reservoir_snapshot = (model.encoder.W_in.copy(),
                              model.encoder.W_res.copy())

    for epoch in range(hp.epochs):
        t0 = time.perf_counter()
        last_good = model_state(model)
        perm = rng.permutation(N)
        sums = {"total": 0.0, "recon": 0.0, "energy": 0.0, "penalty": 0.0}
        degenerate = set()
        for start in range(0, N, hp.batch_size):
            idx = perm[start:start + hp.batch_size]
            batch = X[idx]
            cache = _forward(model, batch, hp, training_mode=True, rng=rng)
            total, terms = cache["total"], cache["terms"]
            if not np.isfinite(total):
                restore_model_state(model, last_good)
                raise NumericalError(
                    f"fit: non-finite loss at epoch {epoch}; restored the "
                    f"epoch-start state", last_good=last_good)
            grads = _backward_from_cache(model, hp, cache)
            opt.step(blocks, grads)
            if cache["params"] is not None:
                degenerate.update(cache["params"].degenerate)
            nb = len(idx)
            sums["total"] += total * nb
            for key in ("recon", "energy", "penalty"):
                sums[key] += terms[key] * nb
        report.epochs.append({
            "epoch": epoch,
            "total": sums["total"] / N,
            "recon": sums["recon"] / N,
            "energy": sums["energy"] / N,
            "penalty": sums["penalty"] / N,
            "degenerate": sorted(degenerate),
        })
        report.epoch_seconds.append(time.perf_counter() - t0)

    report.frozen_params = freeze_mixture_params(model, X)

    if reservoir_snapshot is not None:
        w_in, w_res = reservoir_snapshot
        if not (np.array_equal(w_in, model.encoder.W_in)
                and np.array_equal(w_res, model.encoder.W_res)):
            raise NumericalError("fit: fixed reservoir weights were mutated")
    return model, report


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def tiny_setup(seed=0, T=6, D=3, d=3, K=2, N=4, d_res=8,
               lambda1=0.1, lambda2=0.005, dropout_rate=0.5, linear=False):
    """Small seeded model + batch for gradient checks.

    `linear=True` swaps every hidden activation for identity, which makes the
    reconstruction-only objective exactly quadratic in each parameter.
    """
    hp = Hyperparams(lambda1=lambda1, lambda2=lambda2, K=K, d=d,
                     batch_size=N, epochs=1, seed=seed)
    cfg = ReservoirConfig(d_res=d_res, spectral_radius=0.9, sparsity=0.5,
                          input_scale=0.5, leak=0.3, seed=seed)
    encoder = init_reservoir(cfg, D=D, T=T, d=d)
    act = "identity" if linear else "relu"
    decoder = ae.init_mlp([d, 8, T * D], seed=seed + 1, hidden_activation=act)
    estimator = mx.EstimationNet(
        net=ae.init_mlp([d + 3, 8, 4, K], seed=seed + 2,
                        hidden_activation=act),
        dropout_rate=dropout_rate)
    model = DagmmModel(encoder=encoder, decoder=decoder, estimator=estimator,
                      T=T, D=D, d=d, K=K)
    X = np.random.default_rng(seed + 3).standard_normal((N, T, D))
    return model, hp, X

@dataclass
class GradCheckReport:
    block_max_error: dict
    max_error: float
    n_checked: int
    tolerance: float
    failures: list

    @property
    def passed(self):
        return not self.failures


def gradient_check(model, hp, X, n_params_sampled=20, tolerance=1e-4,
                   h=1e-5, seed=0, freeze_dropout=True):
    """Compare analytic gradients against central finite differences.

    Dropout masks are sampled once and frozen so both sides see the same
    function.  Samples up to `n_params_sampled` entries per block.
    """
    rng = np.random.default_rng(seed)
    masks = None
    if freeze_dropout and model.estimator.dropout_rate > 0 and \
            (hp.lambda1 > 0 or hp.lambda2 > 0):
        masks = mx.sample_dropout_masks(model.estimator, X.shape[0], rng)

    grads, _, _ = backward(X, model, hp, masks=masks)

    def loss_now():
        total, _ = joint_loss(X, model, hp, training_mode=True, masks=masks)
        return total

    block_max = {}
    failures = []
    n_checked = 0
    for name, arr in param_blocks(model):
        if name not in grads:
            continue
        flat = arr.reshape(-1)
        gflat = grads[name].reshape(-1)
        n = min(n_params_sampled, flat.size)
        picks = rng.choice(flat.size, size=n, replace=False)
        worst = 0.0
        for j in picks:
            orig = flat[j]
            flat[j] = orig + h
            f_plus = loss_now()
            flat[j] = orig - h
            f_minus = loss_now()
            flat[j] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            scale = max(abs(fd), abs(gflat[j]), 1e-6)
            err = abs(fd - gflat[j]) / scale
            worst = max(worst, err)
            n_checked += 1
        block_max[name] = worst
        if worst > tolerance:
            failures.append((name, worst))
    return GradCheckReport(block_max_error=block_max,
                           max_error=max(block_max.values()) if block_max else 0.0,
                           n_checked=n_checked, tolerance=tolerance,
                           failures=failures)
