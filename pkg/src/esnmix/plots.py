"""Static matplotlib figures rendered next to the delimited outputs."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

# Keep PNGs reproducible across reruns of the same config+seed.
_SAVEFIG = {"dpi": 120, "metadata": {"Software": "esnmix"}}


def plot_training_curves(report, path):
    """Loss decomposition per epoch."""
    if not report.epochs:
        return None
    epochs = [rec["epoch"] for rec in report.epochs]
    fig, axis = plt.subplots(figsize=(7, 4))
    for key, style in (("total", "-"), ("recon", "--"), ("energy", ":"),
                       ("penalty", "-.")):
        axis.plot(epochs, [rec[key] for rec in report.epochs], style,
                  label=key)
    axis.set_xlabel("epoch")
    axis.set_ylabel("loss")
    axis.legend()
    axis.set_title("training loss decomposition")
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)
    return path


def plot_sweep(rows, metric, xlabel, path, logy=False):
    """One line per model over the sweep axis; non-numeric cells skipped."""
    by_model = {}
    for row in rows:
        if row["metric"] != metric or not isinstance(row["result"],
                                                     (int, float)):
            continue
        by_model.setdefault(row["model"], []).append(
            (row["value"], row["result"]))
    if not by_model:
        return None
    fig, axis = plt.subplots(figsize=(7, 4))
    for model in sorted(by_model):
        pts = sorted(by_model[model])
        axis.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                  label=model)
    axis.set_xlabel(xlabel)
    axis.set_ylabel(metric)
    if logy:
        axis.set_yscale("log")
    axis.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)
    return path


def plot_energy_histogram(energies, path):
    fig, axis = plt.subplots(figsize=(6, 4))
    axis.hist(energies, bins=40)
    axis.set_xlabel("sample energy")
    axis.set_ylabel("count")
    axis.set_title("per-window mixture energies")
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)
    return path
