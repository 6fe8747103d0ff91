"""Command-line entry point: synth | train | eval | sweep | gradcheck.

Every command is deterministic given (config, seed); reports and figures are
written next to each other under the output directory.
"""

import argparse
import csv
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import dataio
from . import evaluation as ev
from . import plots
from . import trainer as tr
from .config import build_config, parse_int_list, parse_range
from .errors import ConfigError, DataError, EsnmixError, NumericalError


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the toolkit reserves 2 for data
    # problems, so route usage errors through ConfigError (exit 1).
    def error(self, message):
        raise ConfigError(f"usage: {message}")


def _add_common(sub):
    sub.add_argument("--config", "-c", default=None,
                     help="flat YAML config file")
    sub.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="override a config key")
    sub.add_argument("--out", default=None,
                     help="output directory (overrides output.dir)")


def _outdir(cfg, args):
    path = args.out or cfg.output_dir()
    os.makedirs(path, exist_ok=True)
    return path


def _load_trace(cfg):
    if cfg["data.kind"] == "synth":
        trace, labels = dataio.synth_regime_series(cfg.synth_config(),
                                                   cfg["synth.seed"])
        return trace, labels
    trace = dataio.load_kpi_csv(
        cfg["data.csv_path"], cfg.feature_columns(),
        cfg["data.timestamp_column"], delimiter=cfg["data.delimiter"])
    return trace, None


def _prepare(cfg):
    trace, _ = _load_trace(cfg)
    return dataio.prepare_dataset(
        trace, T=cfg["window.length"], stride=cfg["window.stride"],
        train_fraction=cfg["split.train_fraction"],
        scaler_scope=cfg["split.scaler_scope"])


def cmd_synth(args):
    cfg = build_config(args.config, args.overrides)
    outdir = _outdir(cfg, args)
    trace, labels = dataio.synth_regime_series(cfg.synth_config(),
                                               cfg["synth.seed"])
    trace_path = os.path.join(outdir, "synth_trace.csv")
    labels_path = os.path.join(outdir, "synth_labels.txt")
    dataio.write_kpi_csv(trace, trace_path,
                         timestamp_column=cfg["data.timestamp_column"],
                         delimiter=cfg["data.delimiter"])
    dataio.write_labels(labels, labels_path)
    print(f"wrote {trace.total_steps} steps x {trace.n_features} features "
          f"to {trace_path}")
    print(f"wrote regime labels to {labels_path}")
    return 0


def cmd_train(args):
    cfg = build_config(args.config, args.overrides)
    outdir = _outdir(cfg, args)
    prepared = _prepare(cfg)
    hp = cfg.hyperparams()
    T = cfg["window.length"]
    D = prepared.dataset.n_features
    model = tr.build_model(
        cfg["model.encoder_kind"], T, D, hp,
        reservoir_cfg=cfg.reservoir_config(),
        dropout_rate=cfg["model.dropout"],
        rnn_hidden=cfg["model.rnn_hidden"])
    model, report = tr.fit(prepared.train_windows, hp, model)

    ckpt_path = os.path.join(outdir, "checkpoint.json")
    ckpt.save_checkpoint(ckpt_path, model, prepared.scaler, cfg.values,
                         report.frozen_params, hp.seed)
    report_path = os.path.join(outdir, "train_report.csv")
    report.write_csv(report_path)
    plots.plot_training_curves(report,
                               os.path.join(outdir, "training_curves.png"))
    if report.epochs:
        last = report.epochs[-1]
        print(f"epoch {last['epoch']}: total={last['total']:.6f} "
              f"recon={last['recon']:.6f} energy={last['energy']:.6f} "
              f"penalty={last['penalty']:.6f}")
    print(f"wrote {ckpt_path} and {report_path}")
    return 0


def cmd_eval(args):
    model, scaler, config_echo, frozen, _seed = ckpt.load_checkpoint(
        args.checkpoint)
    cfg = build_config(None, [f"{k}={v}" for k, v in config_echo.items()]
                       + list(args.overrides))
    outdir = _outdir(cfg, args)

    trace, _ = _load_trace(cfg)
    if trace.n_features != model.D:
        raise DataError(
            f"eval: data has {trace.n_features} features, checkpoint model "
            f"expects {model.D} (columns: {trace.feature_names})")
    raw_ds = dataio.make_windows(trace, T=cfg["window.length"],
                                 stride=cfg["window.stride"])
    split = dataio.chronological_split(raw_ds, cfg["split.train_fraction"])
    std_trace = scaler.apply(trace)  # checkpoint scaler, never refit
    ds = dataio.make_windows(std_trace, T=cfg["window.length"],
                             stride=cfg["window.stride"])
    test = ds.windows[split.boundary_index:]

    metrics = ev.evaluate_dagmm(
        model, test, frozen_params=frozen,
        include_energies=cfg["eval.energies"],
        silhouette_space=cfg["eval.silhouette_space"],
        config={"d": model.d, "K": model.K,
                "lambda1": cfg["hp.lambda1"], "lambda2": cfg["hp.lambda2"],
                "seed": cfg["hp.seed"],
                "silhouette_space": cfg["eval.silhouette_space"]})
    metrics_path = os.path.join(outdir, "metrics.csv")
    with open(metrics_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerows(metrics.rows())
    print(f"reconstruction_mse={metrics.reconstruction_mse:.6f}")
    print("silhouette=" + ("collapsed" if metrics.collapsed
                           else f"{metrics.silhouette:.6f}"))
    if metrics.energies is not None:
        energies_path = os.path.join(outdir, "energies.csv")
        with open(energies_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["window", "energy"])
            for i, e in enumerate(metrics.energies):
                writer.writerow([i, repr(float(e))])
        plots.plot_energy_histogram(metrics.energies,
                                    os.path.join(outdir, "energy_hist.png"))
    print(f"wrote {metrics_path}")
    return 0


def cmd_sweep(args):
    cfg = build_config(args.config, args.overrides)
    outdir = _outdir(cfg, args)
    models = [m.strip() for m in
              (args.models or cfg["sweep.models"]).split(",") if m.strip()]
    if not models:
        raise ConfigError("sweep: empty model list")
    unknown = [m for m in models if m not in ev.ALL_MODELS]
    if unknown:
        raise ConfigError(f"sweep: unknown models {unknown} "
                          f"(known: {list(ev.ALL_MODELS)})")

    prepared = _prepare(cfg)
    hp = cfg.hyperparams()
    rcfg = cfg.reservoir_config()
    rows = []
    if args.dims or not args.k_range:
        dims = parse_int_list(args.dims or cfg["sweep.dims"], "dims")
        rows += ev.sweep_latent_dims(dims, hp.K, prepared, hp, models=models,
                                     reservoir_cfg=rcfg)
    if args.k_range or not args.dims:
        k_range = parse_range(args.k_range or cfg["sweep.k_range"], "K")
        rows += ev.sweep_components(k_range, hp.d, prepared, hp,
                                    models=models, reservoir_cfg=rcfg)

    table_path = os.path.join(outdir, "sweep_results.csv")
    with open(table_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "axis", "value", "metric", "result"])
        for row in rows:
            result = row["result"]
            writer.writerow([row["model"], row["axis"], row["value"],
                             row["metric"],
                             repr(result) if isinstance(result, float)
                             else result])
    plots.plot_sweep(rows, "reconstruction_mse", "latent dimension",
                     os.path.join(outdir, "mse_vs_latent_dim.png"))
    plots.plot_sweep(rows, "silhouette", "mixture components",
                     os.path.join(outdir, "silhouette_vs_components.png"))
    n_ok = sum(isinstance(r["result"], (int, float)) or r["result"] == "collapsed"
               for r in rows)
    print(f"wrote {len(rows)} rows ({n_ok} completed cells) to {table_path}")
    if n_ok == 0:
        raise NumericalError("sweep: every cell failed")
    return 0


def cmd_gradcheck(args):
    model, hp, X = tr.tiny_setup(seed=args.seed,
                                 dropout_rate=0.0 if args.no_dropout else 0.5)
    report = tr.gradient_check(model, hp, X,
                               n_params_sampled=args.samples,
                               tolerance=args.tolerance, seed=args.seed)
    for name in sorted(report.block_max_error):
        err = report.block_max_error[name]
        status = "ok" if err <= report.tolerance else "FAIL"
        print(f"{name:<20s} max_rel_err={err:.3e}  {status}")
    print(f"checked {report.n_checked} parameters, max error "
          f"{report.max_error:.3e} (tolerance {report.tolerance:g})")
    if not report.passed:
        print("gradient check FAILED")
        return 3
    print("gradient check passed")
    return 0


def make_parser():
    parser = _Parser(prog="esnmix",
                     description="Mixture-structured latent representations "
                                 "of KPI time series with a reservoir "
                                 "encoder")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic regime-switching "
                                     "trace + label sidecar")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("checkpoint", help="checkpoint.json from `train`")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="latent-dim and component-count sweeps")
    _add_common(p)
    p.add_argument("--dims", default=None,
                   help="comma list of latent dims (MSE sweep)")
    p.add_argument("--k-range", default=None,
                   help="lo:hi or comma list of component counts "
                        "(silhouette sweep)")
    p.add_argument("--models", default=None,
                   help=f"comma list from {list(ev.ALL_MODELS)}")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference gradient "
                                         "verification on a tiny model")
    p.add_argument("--samples", type=int, default=20,
                   help="parameters sampled per block")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-dropout", action="store_true",
                   help="disable dropout instead of freezing masks")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except EsnmixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
