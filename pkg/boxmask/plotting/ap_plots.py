import numpy as np
import pandas as pd
import seaborn as sns
from matplotlib import pyplot as plt

from .colours import (
    baseline_colour,
    boxmask_colour,
    darkblue,
    improved_colour,
    midblue,
    sampling_colours,
    worsened_colour,
)

__all__ = [
    "plot_class_ap",
    "plot_class_deltas",
    "plot_sweep",
    "plot_sampling_curves",
    "plot_loss_log",
]

# x axis column of each sweep table
SWEEP_AXES = {
    "lambda": "lambda",
    "n_conv": "n_conv",
    "roi_size": "roi",
    "effectiveness": "seed",
}


def _save(fig, filename):

    fig.tight_layout()
    fig.savefig(filename, dpi=120)
    plt.close(fig)


def plot_class_ap(result, filename: str, threshold: float = 0.5):
    """
    Bar chart of per-class AP at one IoU threshold.

    :param result: an EvalResult
    """

    key = min(result.thresholds, key=lambda t: abs(t - threshold))
    labels = result.labels

    frame = pd.DataFrame(
        {
            "class": [result.name(label) for label in labels],
            "AP": [result.ap[key][label] for label in labels],
        }
    )

    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(labels)), 3.5))
    sns.barplot(data=frame, x="class", y="AP", color=midblue, ax=ax)

    ax.set_ylim(0, 1)
    ax.set_ylabel(f"AP@{key:.2f}")
    ax.set_xlabel("")
    sns.despine(ax=ax)

    _save(fig, filename)


def plot_class_deltas(improved: pd.Series, worsened: pd.Series, filename: str):
    """
    Two panels: most improved and most worsened classes.
    """

    fig, axes = plt.subplots(1, 2, figsize=(8, 3.5))

    for ax, series, colour, title in (
        (axes[0], improved, improved_colour, "most improved"),
        (axes[1], worsened, worsened_colour, "most worsened"),
    ):
        if len(series):
            ax.barh(series.index[::-1], series.values[::-1], color=colour)
        else:
            ax.text(0.5, 0.5, "none", ha="center", va="center", transform=ax.transAxes)

        ax.axvline(0, color="k", lw=0.8)
        ax.set_title(title)
        ax.set_xlabel(series.name or "delta AP")
        sns.despine(ax=ax)

    _save(fig, filename)


def plot_sweep(name: str, table: pd.DataFrame, filename: str):
    """
    mAP at IoU 0.5 and 0.75 for every row of a sweep table.
    """

    table = table.copy()

    if name == "roi_size":
        table["roi"] = [f"{r}x{u}" for r, u in zip(table["roi_size"], table["up_size"])]

    if name == "lambda":
        table["lambda"] = [
            "baseline" if v == "baseline" else f"{lam:g}"
            for v, lam in zip(table["variant"], table["lambda"])
        ]

    x = SWEEP_AXES.get(name, table.columns[0])
    hue = "arm" if "arm" in table.columns else None

    long = table.melt(
        id_vars=[c for c in (x, hue) if c is not None],
        value_vars=["map_50", "map_75"],
        var_name="metric",
        value_name="mAP",
    )

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), sharey=True)

    for ax, metric in zip(axes, ["map_50", "map_75"]):
        subset = long[long["metric"] == metric]

        if hue is not None:
            palette = {"baseline": baseline_colour, "boxmask": boxmask_colour}
            sns.barplot(data=subset, x=x, y="mAP", hue=hue, palette=palette, ax=ax)
        else:
            sns.barplot(data=subset, x=x, y="mAP", color=darkblue, ax=ax)

        ax.set_title(f"{name}: mAP@{0.5 if metric == 'map_50' else 0.75}")
        ax.set_ylim(0, 1)
        sns.despine(ax=ax)

    _save(fig, filename)


def plot_sampling_curves(table: pd.DataFrame, filename: str):
    """
    mAP@0.5 against the number of support frames, one curve per mode and stride.
    """

    fig, ax = plt.subplots(figsize=(5, 3.5))

    for (mode, S), group in table.groupby(["mode", "S"], sort=True):
        group = group.sort_values("T")
        label = mode if mode == "uniform" else f"{mode}, S={S}"
        ax.plot(
            group["T"],
            group["map_50"],
            marker="o",
            color=sampling_colours.get(mode, darkblue),
            alpha=1.0 if mode == "uniform" else 0.4 + 0.6 * S / table["S"].max(),
            label=label,
        )

    ax.set_xlabel("support frames T")
    ax.set_ylabel("mAP@0.5")
    ax.legend(frameon=False)
    sns.despine(ax=ax)

    _save(fig, filename)


def plot_loss_log(log: pd.DataFrame, filename: str, window: int = 10):
    """
    Running mean of every non-zero loss term against the training step.
    """

    fig, ax = plt.subplots(figsize=(6, 3.5))

    terms = [c for c in log.columns if c.startswith("l_") and np.any(log[c] != 0)]
    palette = sns.color_palette("mako", len(terms))

    for term, colour in zip(terms, palette):
        smooth = log[term].rolling(window, min_periods=1).mean()
        ax.plot(log["step"], smooth, label=term, color=colour)

    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    sns.despine(ax=ax)

    _save(fig, filename)
