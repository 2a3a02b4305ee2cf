from pathlib import Path

import numpy as np
import pandas as pd

from boxmask.analysis import class_deltas, compute_map
from boxmask.geometry import Box, LabeledBox, ScoredBox
from boxmask.plotting import (
    plot_class_ap,
    plot_class_deltas,
    plot_loss_log,
    plot_sampling_curves,
    plot_sweep,
)


def _results():

    gts = [LabeledBox(Box(0, 0, 10, 10), 1), LabeledBox(Box(20, 20, 30, 30), 2)]
    names = {1: "stripes_2", 2: "stripes_4"}

    baseline = compute_map([([ScoredBox(gts[0].box, 0.9, 1)], gts)], class_names=names)
    boxmask = compute_map([([ScoredBox(gts[1].box, 0.9, 2)], gts)], class_names=names)

    return baseline, boxmask


def test_class_plots(output_directory):

    baseline, boxmask = _results()

    file_name = Path(output_directory, "test_class_ap.png")
    plot_class_ap(boxmask, str(file_name))
    assert file_name.exists()

    improved, worsened = class_deltas(baseline, boxmask)
    file_name = Path(output_directory, "test_class_deltas.png")
    plot_class_deltas(improved, worsened, str(file_name))
    assert file_name.exists()

    # nothing worsened
    file_name = Path(output_directory, "test_class_deltas_empty.png")
    plot_class_deltas(improved, worsened[:0], str(file_name))
    assert file_name.exists()


def test_sweep_plots(output_directory, random_seed):

    rng = np.random.default_rng(random_seed)

    tables = {
        "lambda": pd.DataFrame(
            {"variant": ["baseline", "boxmask", "boxmask"], "lambda": [0.0, 0.5, 1.0]}
        ),
        "n_conv": pd.DataFrame({"n_conv": [1, 2, 3]}),
        "roi_size": pd.DataFrame({"roi_size": [7, 7], "up_size": [7, 14]}),
        "effectiveness": pd.DataFrame(
            {"seed": [0, 0, 1, 1], "arm": ["baseline", "boxmask"] * 2}
        ),
    }

    for name, table in tables.items():
        table["map_50"] = rng.random(len(table))
        table["map_75"] = rng.random(len(table))

        file_name = Path(output_directory, f"test_sweep_{name}.png")
        plot_sweep(name, table, str(file_name))
        assert file_name.exists()


def test_sampling_plot(output_directory, random_seed):

    rng = np.random.default_rng(random_seed)
    rows = [
        {"mode": mode, "T": T, "S": S, "map_50": rng.random()}
        for mode, strides in (("uniform", (1,)), ("strided", (1, 3, 7)))
        for S in strides
        for T in (2, 6, 14)
    ]

    file_name = Path(output_directory, "test_sampling.png")
    plot_sampling_curves(pd.DataFrame(rows), str(file_name))
    assert file_name.exists()


def test_loss_plot(output_directory):

    steps = np.arange(40)
    log = pd.DataFrame(
        {
            "step": steps,
            "l_rpn_cls": 0.0,
            "l_cls": np.exp(-steps / 10),
            "l_bm": np.exp(-steps / 20),
            "l_total": 2 * np.exp(-steps / 15),
        }
    )

    file_name = Path(output_directory, "test_loss.png")
    plot_loss_log(log, str(file_name))
    assert file_name.exists()
