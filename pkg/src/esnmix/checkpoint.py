"""Versioned text checkpoints.

Weights are stored as decimal text inside a JSON envelope; Python's float
repr round-trips doubles exactly, so save -> load -> save is byte-identical.
A payload checksum catches corruption; a version mismatch is an explicit
error, never a silent reinterpretation.
"""

import hashlib
import json

import numpy as np

from . import autoencoder as ae
from . import mixture as mx
from .baselines import MlpEncoder, RnnEncoder
from .errors import DataError
from .reservoir import EsnEncoder, ReservoirConfig
from .trainer import DagmmModel

FORMAT = "esnmix-checkpoint"
VERSION = 1


def _arr(a):
    return np.asarray(a, dtype=np.float64).tolist()


def _mlp_payload(mlp):
    return [{"W": _arr(layer.W), "b": _arr(layer.b),
             "activation": layer.activation} for layer in mlp.layers]


def _mlp_from_payload(payload):
    return ae.Mlp(layers=[
        ae.Layer(W=np.asarray(rec["W"], dtype=np.float64),
                 b=np.asarray(rec["b"], dtype=np.float64),
                 activation=rec["activation"]) for rec in payload])


def _encoder_payload(enc):
    if enc.kind == "esn":
        cfg = enc.config
        return {
            "kind": "esn",
            "config": {"d_res": cfg.d_res,
                       "spectral_radius": cfg.spectral_radius,
                       "sparsity": cfg.sparsity,
                       "input_scale": cfg.input_scale,
                       "leak": cfg.leak, "seed": cfg.seed},
            "W_in": _arr(enc.W_in), "W_res": _arr(enc.W_res),
            "W_out": _arr(enc.W_out),
        }
    if enc.kind == "mlp":
        return {"kind": "mlp", "layers": _mlp_payload(enc.net)}
    if enc.kind == "rnn":
        return {"kind": "rnn", "W_in": _arr(enc.W_in),
                "W_rec": _arr(enc.W_rec), "b": _arr(enc.b),
                "W_ro": _arr(enc.W_ro), "b_ro": _arr(enc.b_ro)}
    raise DataError(f"checkpoint: unknown encoder kind {enc.kind!r}")


def _encoder_from_payload(payload, T, D, d):
    kind = payload["kind"]
    if kind == "esn":
        cfg = ReservoirConfig(**payload["config"])
        return EsnEncoder(
            W_in=np.asarray(payload["W_in"], dtype=np.float64),
            W_res=np.asarray(payload["W_res"], dtype=np.float64),
            W_out=np.asarray(payload["W_out"], dtype=np.float64),
            config=cfg, D=D, T=T, d=d)
    if kind == "mlp":
        return MlpEncoder(_mlp_from_payload(payload["layers"]), T, D, d)
    if kind == "rnn":
        return RnnEncoder(
            W_in=np.asarray(payload["W_in"], dtype=np.float64),
            W_rec=np.asarray(payload["W_rec"], dtype=np.float64),
            b=np.asarray(payload["b"], dtype=np.float64),
            W_ro=np.asarray(payload["W_ro"], dtype=np.float64),
            b_ro=np.asarray(payload["b_ro"], dtype=np.float64),
            T=T, D=D, d=d)
    raise DataError(f"checkpoint: unknown encoder kind {kind!r}")


def _mixture_payload(params):
    if params is None:
        return None
    return {"phi": _arr(params.phi), "mu": _arr(params.mu),
            "sigma": _arr(params.sigma),
            "degenerate": list(params.degenerate)}


def _mixture_from_payload(payload):
    if payload is None:
        return None
    return mx.MixtureParams(
        phi=np.asarray(payload["phi"], dtype=np.float64),
        mu=np.asarray(payload["mu"], dtype=np.float64),
        sigma=np.asarray(payload["sigma"], dtype=np.float64),
        degenerate=list(payload["degenerate"]))


def _canonical(payload):
    return json.dumps(payload, separators=(",", ":"))


def save_checkpoint(path, model, scaler, config, frozen_params, seed):
    """Write the full model + scaler + config echo + frozen mixture params."""
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "config": dict(config),
        "seed": int(seed),
        "scaler": {"mean": _arr(scaler.mean), "std": _arr(scaler.std),
                   "fitted_on": int(scaler.fitted_on)},
        "model": {
            "encoder_kind": model.encoder_kind,
            "T": model.T, "D": model.D, "d": model.d, "K": model.K,
            "encoder": _encoder_payload(model.encoder),
            "decoder": _mlp_payload(model.decoder),
            "estimator": {
                "dropout_rate": model.estimator.dropout_rate,
                "layers": _mlp_payload(model.estimator.net),
            },
        },
        "mixture": _mixture_payload(frozen_params),
    }
    body = _canonical(payload)
    checksum = hashlib.sha256(body.encode("utf-8")).hexdigest()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_canonical({"payload": payload, "checksum": checksum}))
        fh.write("\n")


def load_checkpoint(path):
    """Returns (model, scaler, config dict, frozen MixtureParams, seed)."""
    from .dataio import Scaler

    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"checkpoint: cannot read {path}: {exc}")
    if not isinstance(doc, dict) or "payload" not in doc or "checksum" not in doc:
        raise DataError(f"checkpoint: {path} is not a checkpoint envelope")
    payload = doc["payload"]
    body = _canonical(payload)
    if hashlib.sha256(body.encode("utf-8")).hexdigest() != doc["checksum"]:
        raise DataError(f"checkpoint: {path} failed the integrity check")
    if payload.get("format") != FORMAT:
        raise DataError(f"checkpoint: {path} has unknown format "
                        f"{payload.get('format')!r}")
    if payload.get("version") != VERSION:
        raise DataError(
            f"checkpoint: version {payload.get('version')} is not supported "
            f"(expected {VERSION})")

    mrec = payload["model"]
    T, D, d, K = mrec["T"], mrec["D"], mrec["d"], mrec["K"]
    model = DagmmModel(
        encoder=_encoder_from_payload(mrec["encoder"], T, D, d),
        decoder=_mlp_from_payload(mrec["decoder"]),
        estimator=mx.EstimationNet(
            net=_mlp_from_payload(mrec["estimator"]["layers"]),
            dropout_rate=mrec["estimator"]["dropout_rate"]),
        T=T, D=D, d=d, K=K)
    srec = payload["scaler"]
    scaler = Scaler(mean=np.asarray(srec["mean"], dtype=np.float64),
                    std=np.asarray(srec["std"], dtype=np.float64),
                    fitted_on=srec["fitted_on"])
    frozen = _mixture_from_payload(payload["mixture"])
    return model, scaler, payload["config"], frozen, payload["seed"]
