"""Evaluation metrics (per-entry reconstruction MSE, silhouette score,
energy scoring) plus the latent-dimension and component-count sweep drivers.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autoencoder as ae
from . import mixture as mx
from .errors import DataError


@dataclass
class MetricsReport:
    reconstruction_mse: float
    silhouette: float          # None when clustering collapsed
    collapsed: bool
    cluster_sizes: list
    energies: np.ndarray = None
    config: dict = field(default_factory=dict)

    def rows(self):
        """Flat (metric, value) pairs for delimited output."""
        out = [("reconstruction_mse", repr(self.reconstruction_mse))]
        out.append(("silhouette",
                    "collapsed" if self.collapsed else repr(self.silhouette)))
        out.append(("cluster_sizes",
                    ";".join(str(c) for c in self.cluster_sizes)))
        for key, val in sorted(self.config.items()):
            out.append((f"config.{key}", str(val)))
        return out


def reconstruction_mse_metric(X_all, X_hat_all):
    """Mean squared error over all N*T*D entries.

    This is the per-entry evaluation metric; it differs from the training
    loss (which sums over features and averages over time only) by a factor
    of the feature count.
    """
    X_all = np.asarray(X_all, dtype=np.float64)
    X_hat_all = np.asarray(X_hat_all, dtype=np.float64)
    if X_all.shape != X_hat_all.shape:
        raise ValueError(
            f"reconstruction_mse_metric: shape mismatch {X_all.shape} vs "
            f"{X_hat_all.shape}")
    diff = X_all - X_hat_all
    return float(np.mean(diff * diff))


def assign_clusters(memberships):
    """Hard labels by per-row argmax; ties go to the lowest component index."""
    gamma = memberships.gamma if isinstance(memberships, mx.Memberships) \
        else np.asarray(memberships)
    return np.argmax(gamma, axis=1)


def silhouette_score(Z, labels):
    """Mean silhouette with Euclidean distance, O(N^2) reference path.

    Per sample: a = mean intra-cluster distance (excluding self), b = min
    over other clusters of the mean distance, s = (b-a)/max(a,b).  Samples
    in singleton clusters score 0, as does the a=b=0 degenerate case.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    labels = np.asarray(labels)
    N = Z.shape[0]
    if N < 3:
        raise DataError("silhouette_score: need at least 3 samples")
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise DataError("silhouette_score: no clustering to evaluate "
                        "(fewer than 2 non-empty clusters)")
    sq = ((Z[:, None, :] - Z[None, :, :]) ** 2).sum(axis=-1)
    dist = np.sqrt(sq)

    scores = np.zeros(N)
    for i in range(N):
        own = labels[i]
        same = np.flatnonzero((labels == own) & (np.arange(N) != i))
        if same.size == 0:
            scores[i] = 0.0  # singleton cluster convention
            continue
        a = dist[i, same].mean()
        b = min(dist[i, labels == other].mean()
                for other in uniq if other != own)
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def energy_score_samples(params, Z):
    """Per-sample mixture energies; no thresholding, inspection only."""
    return mx.batch_energy(params, Z)


def dagmm_latents(model, windows):
    """Evaluation-mode forward pass: returns (Z, X_hat, memberships)."""
    windows = np.asarray(windows, dtype=np.float64)
    z_c, _ = model.encoder.encode_batch(windows)
    flat_hat, _ = ae.mlp_forward(model.decoder, z_c)
    X_hat = flat_hat.reshape(windows.shape[0], model.T, model.D)
    Zr = ae.batch_recon_features(windows, X_hat)
    Z = np.concatenate([z_c, Zr], axis=1)
    gamma = mx.estimate_memberships(model.estimator, Z, training_mode=False)
    return Z, X_hat, gamma


def evaluate_dagmm(model, windows, frozen_params=None, include_energies=False,
                   silhouette_space="z", config=None):
    """MetricsReport for a trained single-stage model on the given windows.

    `silhouette_space` is "z" (full latent including reconstruction features,
    the space the mixture lives in) or "zc" (code only).
    """
    Z, X_hat, gamma = dagmm_latents(model, windows)
    labels = assign_clusters(gamma)
    mse = reconstruction_mse_metric(windows, X_hat)
    space = Z if silhouette_space == "z" else Z[:, :model.d]
    counts = np.bincount(labels, minlength=model.K).tolist()
    try:
        sil = silhouette_score(space, labels)
        collapsed = False
    except DataError:
        sil = None
        collapsed = True
    energies = None
    if include_energies and frozen_params is not None:
        energies = energy_score_samples(frozen_params, Z)
    return MetricsReport(reconstruction_mse=mse, silhouette=sil,
                         collapsed=collapsed, cluster_sizes=counts,
                         energies=energies, config=dict(config or {}))


# ---------------------------------------------------------------------------
# sweep drivers (Fig. 2 / Fig. 3 analogues)
# ---------------------------------------------------------------------------

DAGMM_MODELS = ("esn_dagmm", "mlp_dagmm", "rnn_dagmm")
TWO_STAGE_MODELS = ("pca_gmm", "esn_ae_gmm")
ALL_MODELS = DAGMM_MODELS + TWO_STAGE_MODELS


def _cell_metrics(report):
    return {
        "reconstruction_mse": report.reconstruction_mse,
        "silhouette": report.silhouette,
        "collapsed": report.collapsed,
        "cluster_sizes": report.cluster_sizes,
    }


def _run_cell(model_name, prepared, hp, reservoir_cfg=None):
    from . import baselines  # deferred to avoid an import cycle

    if model_name in DAGMM_MODELS:
        kind = model_name.split("_")[0]
        model, report = baselines.dagmm_variant(
            kind, prepared.train_windows, hp, reservoir_cfg=reservoir_cfg)
        metrics = evaluate_dagmm(model, prepared.test_windows,
                                 frozen_params=report.frozen_params)
        return _cell_metrics(metrics)
    if model_name in TWO_STAGE_MODELS:
        kind = "pca" if model_name == "pca_gmm" else "esn_ae"
        _, _, metrics = baselines.two_stage_pipeline(
            kind, prepared, hp.d, hp.K, hp, reservoir_cfg=reservoir_cfg)
        return _cell_metrics(metrics)
    raise ValueError(f"unknown model {model_name!r}")


def sweep_latent_dims(dims, K, prepared, base_hp, models=ALL_MODELS,
                      reservoir_cfg=None):
    """One row per (model, latent dim) with the test reconstruction MSE.

    Per-cell failures are recorded in the row and the sweep continues.
    """
    from dataclasses import replace
    rows = []
    for model_name in models:
        for d in dims:
            hp = replace(base_hp, d=d, K=K)
            try:
                cell = _run_cell(model_name, prepared, hp,
                                 reservoir_cfg=reservoir_cfg)
                result = cell["reconstruction_mse"]
            except Exception as exc:  # record, keep sweeping
                result = f"error: {exc}"
            rows.append({"model": model_name, "axis": "latent_dim",
                         "value": d, "metric": "reconstruction_mse",
                         "result": result})
    return rows


def sweep_components(K_range, d, prepared, base_hp, models=ALL_MODELS,
                     reservoir_cfg=None):
    """One row per (model, K) with the test silhouette score.

    Cells where a model ends with fewer than 2 non-empty clusters are
    recorded as "collapsed" rather than a number.
    """
    from dataclasses import replace
    rows = []
    for model_name in models:
        for K in K_range:
            if K < 2:
                raise ValueError("sweep_components: K must be >= 2")
            hp = replace(base_hp, d=d, K=K)
            try:
                cell = _run_cell(model_name, prepared, hp,
                                 reservoir_cfg=reservoir_cfg)
                result = "collapsed" if cell["collapsed"] else cell["silhouette"]
            except Exception as exc:
                result = f"error: {exc}"
            rows.append({"model": model_name, "axis": "n_components",
                         "value": K, "metric": "silhouette",
                         "result": result})
    return rows
