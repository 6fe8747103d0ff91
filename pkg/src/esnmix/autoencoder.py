"""Decoder MLP, reconstruction-quality features, latent assembly, and the
per-window reconstruction loss.

The Mlp type here is shared with the estimation network and the MLP/RNN
encoder baselines; forward passes cache what the hand-rolled backward pass
needs.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

EPS_NORM = 1e-12  # zero-norm guard for the reconstruction features

ACTIVATIONS = ("relu", "identity")


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"Layer: unknown activation {self.activation!r}")


@dataclass
class Mlp:
    layers: list = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if b.W.shape[1] != a.W.shape[0]:
                raise ConfigError(
                    f"Mlp: layer dims do not chain "
                    f"({a.W.shape[0]} -> {b.W.shape[1]})")

    @property
    def in_dim(self):
        return self.layers[0].W.shape[1]

    @property
    def out_dim(self):
        return self.layers[-1].W.shape[0]


def init_mlp(widths, seed, hidden_activation="relu", output_activation="identity"):
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    layers = []
    n = len(widths) - 1
    for i in range(n):
        fan_in, fan_out = widths[i], widths[i + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        act = output_activation if i == n - 1 else hidden_activation
        layers.append(Layer(W=W, b=np.zeros(fan_out), activation=act))
    return Mlp(layers=layers)


def mlp_forward(mlp, x, dropout_masks=None):
    """Forward pass over a (N, in_dim) batch.

    `dropout_masks` is an optional list (one entry per non-final layer, None
    allowed) of inverted-scaling masks applied after the activation.  Returns
    (output, cache) with everything the backward pass needs.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != mlp.in_dim:
        raise ValueError(
            f"mlp_forward: expected (N, {mlp.in_dim}), got {x.shape}")
    inputs, pre_acts = [], []
    h = x
    for i, layer in enumerate(mlp.layers):
        inputs.append(h)
        pre = h @ layer.W.T + layer.b
        pre_acts.append(pre)
        h = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
        if dropout_masks is not None and i < len(mlp.layers) - 1:
            mask = dropout_masks[i]
            if mask is not None:
                h = h * mask
    return h, {"inputs": inputs, "pre_acts": pre_acts,
               "dropout_masks": dropout_masks}


def mlp_backward(mlp, cache, grad_out):
    """Reverse pass; returns ([(GW, Gb) per layer], grad wrt input)."""
    masks = cache["dropout_masks"]
    grads = [None] * len(mlp.layers)
    g = np.asarray(grad_out, dtype=np.float64)
    for i in reversed(range(len(mlp.layers))):
        layer = mlp.layers[i]
        if masks is not None and i < len(mlp.layers) - 1:
            mask = masks[i]
            if mask is not None:
                g = g * mask
        if layer.activation == "relu":
            g = g * (cache["pre_acts"][i] > 0.0)
        grads[i] = (g.T @ cache["inputs"][i], g.sum(axis=0))
        g = g @ layer.W
    return grads, g


def default_decoder_widths(d, T, D):
    # 4 weight layers, geometric expansion toward the flattened window
    return [d, 32, 64, 128, T * D]


def init_decoder(d, T, D, seed, widths=None):
    widths = widths or default_decoder_widths(d, T, D)
    if widths[0] != d or widths[-1] != T * D:
        raise ConfigError(
            f"init_decoder: widths must run {d} -> {T * D}, got {widths}")
    return init_mlp(widths, seed)


def decode(dec, z_c, T, D):
    """Map latent codes to reconstructed windows (time-major reshape)."""
    z = np.asarray(z_c, dtype=np.float64)
    single = z.ndim == 1
    flat, _ = mlp_forward(dec, z[None] if single else z)
    if flat.shape[1] != T * D:
        raise ValueError(
            f"decode: decoder emits {flat.shape[1]} values, need {T * D}")
    out = flat.reshape(-1, T, D)
    return out[0] if single else out


@dataclass
class ReconFeatures:
    mse: float
    relative_euclidean: float
    cosine: float

    def as_array(self):
        return np.array([self.mse, self.relative_euclidean, self.cosine])


def reconstruction_features(X, X_hat):
    """Per-window reconstruction-quality triple (mse, relative L2, cosine)."""
    u = np.asarray(X, dtype=np.float64).reshape(-1)
    v = np.asarray(X_hat, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise ValueError(
            f"reconstruction_features: shape mismatch {np.shape(X)} vs "
            f"{np.shape(X_hat)}")
    diff = u - v
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    mse = float(diff @ diff) / u.size
    rel = float(np.linalg.norm(diff)) / max(nu, EPS_NORM)
    cos = float(u @ v) / max(nu * nv, EPS_NORM)
    return ReconFeatures(mse=mse, relative_euclidean=rel, cosine=cos)


def batch_recon_features(X, X_hat):
    """Vectorized reconstruction features over (N, T, D) batches -> (N, 3)."""
    N = X.shape[0]
    u = X.reshape(N, -1)
    v = X_hat.reshape(N, -1)
    diff = u - v
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    mse = np.einsum("ij,ij->i", diff, diff) / u.shape[1]
    rel = np.linalg.norm(diff, axis=1) / np.maximum(nu, EPS_NORM)
    cos = np.einsum("ij,ij->i", u, v) / np.maximum(nu * nv, EPS_NORM)
    return np.stack([mse, rel, cos], axis=1)


def batch_recon_features_backward(X, X_hat, Gzr):
    """Gradient of the (N, 3) feature block wrt the reconstruction X_hat.

    X is a constant (ground truth).  Norm guards mirror the forward pass;
    gradients at exactly-degenerate points are clamped to zero.
    """
    N = X.shape[0]
    u = X.reshape(N, -1)
    v = X_hat.reshape(N, -1)
    diff = u - v
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    nd = np.linalg.norm(diff, axis=1)
    M = u.shape[1]

    Gv = (2.0 / M) * (v - u) * Gzr[:, 0:1]

    safe_nd = np.maximum(nd, EPS_NORM)
    Gv += ((v - u) / (np.maximum(nu, EPS_NORM) * safe_nd)[:, None]) * Gzr[:, 1:2]

    denom = np.maximum(nu * nv, EPS_NORM)
    cos = np.einsum("ij,ij->i", u, v) / denom
    safe_nv2 = np.maximum(nv ** 2, EPS_NORM)
    Gv += (u / denom[:, None] - (cos / safe_nv2)[:, None] * v) * Gzr[:, 2:3]
    return Gv.reshape(X_hat.shape)


def assemble_latent(z_c, zr):
    """z = [z_c; mse; relative_euclidean; cosine]."""
    z_c = np.asarray(z_c, dtype=np.float64).reshape(-1)
    tail = zr.as_array() if isinstance(zr, ReconFeatures) else np.asarray(zr)
    return np.concatenate([z_c, tail])


def reconstruction_loss(X, X_hat):
    """(1/T) * sum_t ||x_t - x_hat_t||^2 for one window.

    Note the normalization: sum over features within a step, mean over time
    steps only.  The per-entry MSE used for evaluation lives in the
    evaluation module; the two differ by a factor of D.
    """
    X = np.asarray(X, dtype=np.float64)
    X_hat = np.asarray(X_hat, dtype=np.float64)
    if X.shape != X_hat.shape:
        raise ValueError(
            f"reconstruction_loss: shape mismatch {X.shape} vs {X_hat.shape}")
    diff = X - X_hat
    return float(np.sum(diff * diff)) / X.shape[0]
