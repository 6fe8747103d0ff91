"""KPI trace ingestion, standardization, windowing, splitting, and the
seeded synthetic regime-switching generator used for desk-scale validation.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError


@dataclass
class KpiTrace:
    """A multivariate KPI stream: integer-millisecond timestamps plus a
    (total_steps x D) value matrix."""

    timestamps: np.ndarray  # int64, strictly increasing
    values: np.ndarray      # float64 (total_steps, D)
    feature_names: list
    dropped_rows: int = 0

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError("KpiTrace: values must be 2-D")
        if len(self.timestamps) != self.values.shape[0]:
            raise DataError("KpiTrace: timestamp/value length mismatch")
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise DataError("KpiTrace: timestamps must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise DataError("KpiTrace: non-finite values after ingestion")

    @property
    def total_steps(self):
        return self.values.shape[0]

    @property
    def n_features(self):
        return self.values.shape[1]


@dataclass
class Scaler:
    """Per-feature standardizer (population statistics)."""

    mean: np.ndarray
    std: np.ndarray
    fitted_on: int

    @property
    def zero_std_features(self):
        """Indices of constant features; these pass through as (x - mean)."""
        return np.flatnonzero(self.std == 0.0)

    def _effective_std(self):
        return np.where(self.std == 0.0, 1.0, self.std)

    def apply(self, trace):
        if trace.n_features != len(self.mean):
            raise DataError(
                f"apply_scaler: trace has {trace.n_features} features, "
                f"scaler was fit on {len(self.mean)}"
            )
        scaled = (trace.values - self.mean) / self._effective_std()
        return KpiTrace(
            timestamps=trace.timestamps.copy(),
            values=scaled,
            feature_names=list(trace.feature_names),
            dropped_rows=trace.dropped_rows,
        )

    def inverse_apply(self, trace):
        raw = trace.values * self._effective_std() + self.mean
        return KpiTrace(
            timestamps=trace.timestamps.copy(),
            values=raw,
            feature_names=list(trace.feature_names),
            dropped_rows=trace.dropped_rows,
        )


@dataclass
class WindowedDataset:
    """Sliding windows over a (standardized) trace."""

    windows: np.ndarray        # (N, T, D)
    T: int
    stride: int
    origin_indices: np.ndarray  # start row of each window

    @property
    def n_windows(self):
        return self.windows.shape[0]

    @property
    def n_features(self):
        return self.windows.shape[2]


@dataclass
class SplitSpec:
    train_fraction: float
    boundary_index: int  # first test window


@dataclass
class SynthConfig:
    """Two-regime AR(1) generator with Markov switching.

    Regime 1 shifts the mean of the first `n_offset_features` features by
    `offset`, which is what gives the latent space two separable clusters.
    """

    total_steps: int = 4000
    n_features: int = 13
    ar: tuple = (0.7, 0.7)
    offset: float = 4.0
    n_offset_features: int = 6
    noise: tuple = (1.0, 1.0)
    switch_prob_01: float = 0.005
    switch_prob_10: float = 0.005
    step_ms: int = 20

    def validate(self):
        for name in ("switch_prob_01", "switch_prob_10"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ConfigError(f"synth: {name}={p} is not a probability")
        if self.total_steps < 1:
            raise ConfigError("synth: total_steps must be >= 1")
        if not (0 <= self.n_offset_features <= self.n_features):
            raise ConfigError("synth: n_offset_features out of range")
        for r in (0, 1):
            if not (0.0 <= self.ar[r] < 1.0):
                raise ConfigError(f"synth: ar[{r}] must be in [0, 1)")
            if self.noise[r] < 0.0:
                raise ConfigError(f"synth: noise[{r}] must be >= 0")


def load_kpi_csv(path, feature_columns, timestamp_column, delimiter=","):
    """Read a header-bearing CSV into a KpiTrace.

    Rows with any non-numeric cell in the requested columns are dropped and
    counted.  Column order follows `feature_columns`, not the file.
    """
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"load_kpi_csv: cannot open {path}: {exc}")
    with fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None:
            raise DataError(f"load_kpi_csv: {path} has no header row")
        missing = [c for c in [timestamp_column, *feature_columns]
                   if c not in reader.fieldnames]
        if missing:
            raise DataError(f"load_kpi_csv: missing columns {missing}")
        timestamps, rows, dropped = [], [], 0
        for rec in reader:
            try:
                ts = int(rec[timestamp_column])
                vals = [float(rec[c]) for c in feature_columns]
            except (TypeError, ValueError):
                dropped += 1
                continue
            if not all(np.isfinite(vals)):
                dropped += 1
                continue
            timestamps.append(ts)
            rows.append(vals)
    if not rows:
        raise DataError(f"load_kpi_csv: no usable rows in {path}")
    return KpiTrace(
        timestamps=np.asarray(timestamps, dtype=np.int64),
        values=np.asarray(rows, dtype=np.float64),
        feature_names=list(feature_columns),
        dropped_rows=dropped,
    )


def write_kpi_csv(trace, path, timestamp_column="timestamp_ms", delimiter=","):
    """Write a trace in the same schema load_kpi_csv reads."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow([timestamp_column, *trace.feature_names])
        for ts, row in zip(trace.timestamps, trace.values):
            writer.writerow([int(ts), *[repr(float(v)) for v in row]])


def write_labels(labels, path):
    """Sidecar label file: one integer per trace row."""
    with open(path, "w", encoding="utf-8") as fh:
        for lab in labels:
            fh.write(f"{int(lab)}\n")


def fit_scaler(trace, fit_rows=None):
    """Population mean/std over the given row range (slice or index array).

    Constant features get std 0, flagged by the Scaler and treated as 1 at
    apply time.
    """
    data = trace.values if fit_rows is None else trace.values[fit_rows]
    if data.shape[0] == 0:
        raise DataError("fit_scaler: empty fit range")
    mean = data.mean(axis=0)
    std = np.sqrt(((data - mean) ** 2).mean(axis=0))  # divide by n, not n-1
    return Scaler(mean=mean, std=std, fitted_on=data.shape[0])


def apply_scaler(scaler, trace):
    return scaler.apply(trace)


def make_windows(trace, T=28, stride=1):
    """Contiguous sliding windows of length T with the given stride."""
    if stride < 1:
        raise ConfigError(f"make_windows: stride must be >= 1, got {stride}")
    if trace.total_steps < T:
        raise DataError(
            f"make_windows: trace has {trace.total_steps} steps, "
            f"shorter than window length {T}"
        )
    n = (trace.total_steps - T) // stride + 1
    origins = np.arange(n) * stride
    windows = np.stack([trace.values[o:o + T] for o in origins])
    return WindowedDataset(windows=windows, T=T, stride=stride,
                           origin_indices=origins)


def chronological_split(ds, train_fraction):
    """Split windows by origin time: train = [0, floor(N*f)), test = rest."""
    if not (0.0 < train_fraction < 1.0):
        raise ConfigError(
            f"chronological_split: train_fraction must be in (0,1), "
            f"got {train_fraction}"
        )
    boundary = int(np.floor(ds.n_windows * train_fraction))
    if boundary < 1 or boundary >= ds.n_windows:
        raise DataError(
            f"chronological_split: fraction {train_fraction} leaves an empty "
            f"side (N={ds.n_windows}, boundary={boundary})"
        )
    return SplitSpec(train_fraction=train_fraction, boundary_index=boundary)


def train_row_count(ds, split):
    """Number of leading trace rows covered by the train windows.

    The scaler must be fit on these rows only (no test leakage).
    """
    last_train_origin = int(ds.origin_indices[split.boundary_index - 1])
    return last_train_origin + ds.T


def synth_regime_series(cfg, seed):
    """Deterministic two-regime AR(1) trace with Markov regime switching.

    Returns (KpiTrace, labels) where labels give the regime per step.  Labels
    are for evaluation only, never for training.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    D = cfg.n_features
    mu = np.zeros((2, D))
    mu[1, :cfg.n_offset_features] = cfg.offset

    values = np.empty((cfg.total_steps, D))
    labels = np.empty(cfg.total_steps, dtype=np.int64)
    switch = (cfg.switch_prob_01, cfg.switch_prob_10)

    regime = 0
    x = mu[0] + cfg.noise[0] * rng.standard_normal(D)
    values[0] = x
    labels[0] = 0
    for t in range(1, cfg.total_steps):
        if rng.random() < switch[regime]:
            regime = 1 - regime
        x = mu[regime] + cfg.ar[regime] * (x - mu[regime]) \
            + cfg.noise[regime] * rng.standard_normal(D)
        values[t] = x
        labels[t] = regime

    timestamps = np.arange(cfg.total_steps, dtype=np.int64) * cfg.step_ms
    trace = KpiTrace(
        timestamps=timestamps,
        values=values,
        feature_names=[f"kpi_{i:02d}" for i in range(D)],
    )
    return trace, labels


@dataclass
class PreparedData:
    """Standardized windows plus split metadata, ready for training."""

    dataset: WindowedDataset
    split: SplitSpec
    scaler: Scaler

    @property
    def train_windows(self):
        return self.dataset.windows[:self.split.boundary_index]

    @property
    def test_windows(self):
        return self.dataset.windows[self.split.boundary_index:]


def prepare_dataset(trace, T=28, stride=1, train_fraction=0.1,
                    scaler_scope="train"):
    """Window -> split -> fit scaler on train rows -> standardize -> rewindow.

    `scaler_scope` is "train" (default; statistics from rows covered by the
    train windows only) or "all" (statistics from the whole trace).
    """
    raw_ds = make_windows(trace, T=T, stride=stride)
    split = chronological_split(raw_ds, train_fraction)
    if scaler_scope == "train":
        fit_rows = slice(0, train_row_count(raw_ds, split))
    elif scaler_scope == "all":
        fit_rows = slice(None)
    else:
        raise ConfigError(f"prepare_dataset: unknown scaler_scope {scaler_scope!r}")
    scaler = fit_scaler(trace, fit_rows)
    std_trace = scaler.apply(trace)
    ds = make_windows(std_trace, T=T, stride=stride)
    return PreparedData(dataset=ds, split=split, scaler=scaler)
