"""Echo-state-network encoder: fixed random sparse reservoir plus a
trainable linear readout over [final state; flattened window].
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError


@dataclass
class ReservoirConfig:
    d_res: int = 64
    spectral_radius: float = 0.9
    sparsity: float = 0.1
    input_scale: float = 0.5
    leak: float = 0.3
    seed: int = 0

    def validate(self):
        if not (0.0 < self.leak <= 1.0):
            raise ConfigError(f"reservoir: leak must be in (0,1], got {self.leak}")
        if not (0.0 < self.sparsity <= 1.0):
            raise ConfigError(
                f"reservoir: sparsity must be in (0,1], got {self.sparsity}")
        if self.spectral_radius <= 0.0:
            raise ConfigError("reservoir: spectral_radius must be > 0")
        if self.d_res < 1:
            raise ConfigError("reservoir: d_res must be >= 1")


@dataclass
class ReservoirState:
    s: np.ndarray

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.float64)
        if not np.all(np.isfinite(self.s)):
            raise NumericalError("ReservoirState: non-finite entries")


def spectral_radius(m):
    """Largest eigenvalue magnitude of a (possibly non-symmetric) matrix."""
    return float(np.max(np.abs(np.linalg.eigvals(m))))


class EsnEncoder:
    """W_in and W_res are fixed after construction; only W_out trains."""

    kind = "esn"

    def __init__(self, W_in, W_res, W_out, config, D, T, d):
        self.W_in = W_in
        self.W_res = W_res
        self.W_out = W_out
        self.config = config
        self.D = D
        self.T = T
        self.d = d

    @property
    def readout_dim(self):
        return self.config.d_res + self.T * self.D

    # --- trainable-parameter protocol shared by all encoder kinds ---

    def trainable(self):
        return {"W_out": self.W_out}

    def encode_batch(self, X):
        """Run the reservoir over a (N, T, D) batch.

        Returns (z_c: (N, d), cache) where the cache holds the readout input
        H = [s_T; flatten(X)] needed for the (linear) backward pass.
        """
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[1] != self.T or X.shape[2] != self.D:
            raise ValueError(
                f"encode_batch: expected (N, {self.T}, {self.D}), got {X.shape}")
        N = X.shape[0]
        alpha = self.config.leak
        S = np.zeros((N, self.config.d_res))
        for t in range(self.T):
            S = (1.0 - alpha) * S + alpha * np.tanh(
                X[:, t, :] @ self.W_in.T + S @ self.W_res.T)
        H = np.concatenate([S, X.reshape(N, self.T * self.D)], axis=1)
        z_c = H @ self.W_out.T
        return z_c, {"H": H}

    def backward(self, cache, Gzc):
        """Readout gradient; W_in/W_res receive none (fixed-reservoir contract)."""
        return {"W_out": Gzc.T @ cache["H"]}


def init_reservoir(cfg, D, T, d):
    """Build an EsnEncoder deterministically from cfg.seed.

    W_in ~ U[-input_scale, input_scale]; W_res is sparse U[-1,1] rescaled to
    the requested spectral radius; W_out starts small and uniform.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    d_res = cfg.d_res

    W_in = rng.uniform(-cfg.input_scale, cfg.input_scale, size=(d_res, D))

    W_res = rng.uniform(-1.0, 1.0, size=(d_res, d_res))
    mask = rng.random((d_res, d_res)) < cfg.sparsity
    W_res = W_res * mask
    rho = spectral_radius(W_res)
    if rho <= 1e-12:
        raise NumericalError(
            "init_reservoir: recurrent matrix has (near-)zero spectral radius; "
            "increase sparsity or reservoir size")
    W_res = W_res * (cfg.spectral_radius / rho)

    bound = 1.0 / np.sqrt(d_res + T * D)
    W_out = rng.uniform(-bound, bound, size=(d, d_res + T * D))

    return EsnEncoder(W_in=W_in, W_res=W_res, W_out=W_out,
                      config=cfg, D=D, T=T, d=d)


def update_state(enc, s_prev, x_t):
    """One reservoir step: s_t = (1-a)*s_prev + a*tanh(W_in x + W_res s_prev)."""
    s = np.asarray(s_prev.s if isinstance(s_prev, ReservoirState) else s_prev,
                   dtype=np.float64)
    x = np.asarray(x_t, dtype=np.float64)
    if x.shape != (enc.D,) or s.shape != (enc.config.d_res,):
        raise ValueError(
            f"update_state: dim mismatch (state {s.shape}, input {x.shape})")
    if not np.all(np.isfinite(x)):
        raise NumericalError("update_state: non-finite input")
    alpha = enc.config.leak
    s_new = (1.0 - alpha) * s + alpha * np.tanh(enc.W_in @ x + enc.W_res @ s)
    return ReservoirState(s=s_new)


def encode_sequence(enc, X, s0=None):
    """Encode one (T, D) window from a zero initial state.

    Returns (z_c, final ReservoirState).  `s0` exists only for echo-state
    property experiments; production encoding always starts at zero.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape != (enc.T, enc.D):
        raise ValueError(
            f"encode_sequence: expected ({enc.T}, {enc.D}), got {X.shape}")
    state = ReservoirState(np.zeros(enc.config.d_res) if s0 is None
                           else np.asarray(s0, dtype=np.float64))
    for t in range(X.shape[0]):
        state = update_state(enc, state, X[t])
    h = np.concatenate([state.s, X.reshape(-1)])
    return enc.W_out @ h, state
