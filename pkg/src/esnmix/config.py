"""Run configuration: a flat dotted-key mapping with defaults for every
field except the data source, loadable from a YAML file with full
command-line overrides.
"""

import os
from dataclasses import dataclass

import yaml

from .dataio import SynthConfig
from .errors import ConfigError
from .reservoir import ReservoirConfig
from .trainer import Hyperparams

# key -> (default, type); None default means "required"
DEFAULTS = {
    "data.kind": (None, str),              # "synth" | "csv" (required)
    "data.csv_path": ("", str),
    "data.feature_columns": ("", str),     # comma-separated names
    "data.timestamp_column": ("timestamp_ms", str),
    "data.delimiter": (",", str),

    "synth.total_steps": (4000, int),
    "synth.n_features": (13, int),
    "synth.offset": (4.0, float),
    "synth.n_offset_features": (6, int),
    "synth.ar0": (0.7, float),
    "synth.ar1": (0.7, float),
    "synth.noise0": (1.0, float),
    "synth.noise1": (1.0, float),
    "synth.switch_prob_01": (0.005, float),
    "synth.switch_prob_10": (0.005, float),
    "synth.seed": (0, int),

    "window.length": (28, int),
    "window.stride": (1, int),
    "split.train_fraction": (0.1, float),
    "split.scaler_scope": ("train", str),  # "train" | "all"

    "model.encoder_kind": ("esn", str),    # "esn" | "mlp" | "rnn"
    "model.dropout": (0.5, float),
    "model.rnn_hidden": (64, int),
    "reservoir.size": (64, int),
    "reservoir.spectral_radius": (0.9, float),
    "reservoir.sparsity": (0.1, float),
    "reservoir.input_scale": (0.5, float),
    "reservoir.leak": (0.3, float),

    "hp.latent_dim": (10, int),
    "hp.components": (2, int),
    "hp.lambda1": (0.1, float),
    "hp.lambda2": (0.005, float),
    "hp.learning_rate": (1e-3, float),
    "hp.batch_size": (128, int),
    "hp.epochs": (200, int),
    "hp.seed": (0, int),

    "eval.energies": (False, bool),
    "eval.silhouette_space": ("z", str),   # "z" | "zc"

    "sweep.models": ("esn_dagmm,mlp_dagmm,rnn_dagmm,pca_gmm,esn_ae_gmm", str),
    "sweep.dims": ("2,4,6,8,10,12", str),
    "sweep.k_range": ("2:10", str),

    "output.dir": ("runs", str),
}

OUTPUT_DIR_ENV = "ESNMIX_OUTPUT_DIR"


def _coerce(key, value, typ):
    try:
        if typ is bool:
            if isinstance(value, bool):
                return value
            s = str(value).strip().lower()
            if s in ("true", "1", "yes"):
                return True
            if s in ("false", "0", "no"):
                return False
            raise ValueError(value)
        return typ(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config: cannot parse {key}={value!r} as "
                          f"{typ.__name__}")


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    # --- typed views over the flat mapping ---

    def synth_config(self):
        v = self.values
        return SynthConfig(
            total_steps=v["synth.total_steps"],
            n_features=v["synth.n_features"],
            ar=(v["synth.ar0"], v["synth.ar1"]),
            offset=v["synth.offset"],
            n_offset_features=v["synth.n_offset_features"],
            noise=(v["synth.noise0"], v["synth.noise1"]),
            switch_prob_01=v["synth.switch_prob_01"],
            switch_prob_10=v["synth.switch_prob_10"])

    def reservoir_config(self):
        v = self.values
        return ReservoirConfig(
            d_res=v["reservoir.size"],
            spectral_radius=v["reservoir.spectral_radius"],
            sparsity=v["reservoir.sparsity"],
            input_scale=v["reservoir.input_scale"],
            leak=v["reservoir.leak"],
            seed=v["hp.seed"])

    def hyperparams(self):
        v = self.values
        return Hyperparams(
            lambda1=v["hp.lambda1"], lambda2=v["hp.lambda2"],
            K=v["hp.components"], d=v["hp.latent_dim"],
            learning_rate=v["hp.learning_rate"],
            batch_size=v["hp.batch_size"], epochs=v["hp.epochs"],
            seed=v["hp.seed"])

    def feature_columns(self):
        cols = [c.strip() for c in self.values["data.feature_columns"].split(",")
                if c.strip()]
        return cols

    def output_dir(self):
        return os.environ.get(OUTPUT_DIR_ENV) or self.values["output.dir"]

    def validate(self):
        v = self.values
        if v["data.kind"] not in ("synth", "csv"):
            raise ConfigError(
                f"config: data.kind must be 'synth' or 'csv', "
                f"got {v['data.kind']!r}")
        if v["data.kind"] == "csv":
            if not v["data.csv_path"]:
                raise ConfigError("config: data.csv_path is required for "
                                  "data.kind=csv")
            if not self.feature_columns():
                raise ConfigError("config: data.feature_columns is required "
                                  "for data.kind=csv")
        if v["model.encoder_kind"] not in ("esn", "mlp", "rnn"):
            raise ConfigError(
                f"config: unknown model.encoder_kind "
                f"{v['model.encoder_kind']!r}")
        if v["split.scaler_scope"] not in ("train", "all"):
            raise ConfigError("config: split.scaler_scope must be 'train' "
                              "or 'all'")
        if v["eval.silhouette_space"] not in ("z", "zc"):
            raise ConfigError("config: eval.silhouette_space must be 'z' "
                              "or 'zc'")
        if not (0.0 < v["split.train_fraction"] < 1.0):
            raise ConfigError("config: split.train_fraction must be in (0,1)")
        self.synth_config().validate()
        self.reservoir_config().validate()
        self.hyperparams().validate()
        return self


def build_config(config_path=None, overrides=()):
    """Assemble a validated RunConfig from defaults + file + overrides.

    `overrides` are "key=value" strings (CLI --set flags).  The whole
    configuration is validated before any work starts.
    """
    values = {}
    for key, (default, _typ) in DEFAULTS.items():
        values[key] = default

    if config_path is not None:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"config: cannot read {config_path}: {exc}")
        if not isinstance(loaded, dict):
            raise ConfigError(f"config: {config_path} must be a flat mapping")
        for key, value in loaded.items():
            if key not in DEFAULTS:
                raise ConfigError(f"config: unknown key {key!r}")
            values[key] = _coerce(key, value, DEFAULTS[key][1])

    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"config: override {item!r} is not key=value")
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"config: unknown key {key!r}")
        values[key] = _coerce(key, value.strip(), DEFAULTS[key][1])

    missing = [k for k, v in values.items() if v is None]
    if missing:
        raise ConfigError(f"config: missing required keys {missing}")
    return RunConfig(values=values).validate()


def parse_int_list(spec, what):
    try:
        return [int(x) for x in str(spec).split(",") if str(x).strip()]
    except ValueError:
        raise ConfigError(f"config: cannot parse {what} list {spec!r}")


def parse_range(spec, what):
    """"lo:hi" inclusive, or a comma list."""
    s = str(spec)
    if ":" in s:
        try:
            lo, hi = s.split(":")
            return list(range(int(lo), int(hi) + 1))
        except ValueError:
            raise ConfigError(f"config: cannot parse {what} range {spec!r}")
    return parse_int_list(s, what)
