"""Figures written next to the CSV/JSON outputs of the CLI."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

# Fixed metadata keeps reruns byte-stable.
_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
    return path


def plot_history(curves, path, title=None):
    """RMSE against epoch.

    ``curves`` maps a label to a list of per-epoch RMSE values, or to a
    training history (validation and test curves are both drawn).
    """
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    for label, curve in curves.items():
        if hasattr(curve, "column"):
            epochs = curve.column("epoch")
            ax.plot(epochs, curve.column("validation_rmse"), label=f"{label} (valid)")
            ax.plot(epochs, curve.column("test_rmse"), "--", label=f"{label} (test)")
        else:
            ax.plot(range(1, len(curve) + 1), curve, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("RMSE")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_sweep(slices, path):
    """Slice sizes and per-model RMSE against ratings per user."""
    x = [s.mean_ratings_per_user for s in slices]
    fig, (left, right) = plt.subplots(1, 2, figsize=(10, 3.8))
    left.plot(x, [s.users for s in slices], "o-", label="users")
    left.plot(x, [s.items for s in slices], "s-", label="items")
    left.set_xlabel("ratings per user")
    left.set_ylabel("count")
    dens = left.twinx()
    dens.plot(x, [100 * s.density for s in slices], "k^:", label="density (%)")
    dens.set_ylabel("density (%)")
    left.legend(loc="upper left", fontsize=8)

    names = list(slices[0].reports) if slices else []
    for name in names:
        right.plot(x, [s.reports[name].rmse for s in slices], "o-", label=name)
    right.set_xlabel("ratings per user")
    right.set_ylabel("RMSE")
    right.legend(fontsize=8)
    right.grid(alpha=0.3)
    return _save(fig, path)


def plot_reports(reports, path):
    """Bar chart of mean RMSE per model."""
    fig, ax = plt.subplots(figsize=(5, 3.4))
    names = [r.model_kind for r in reports]
    values = [r.rmse for r in reports]
    ax.bar(names, values, color="0.6")
    lo = min(values)
    ax.set_ylim(lo - 0.05 * lo, max(values) + 0.01 * lo)
    ax.set_ylabel("RMSE")
    return _save(fig, path)
