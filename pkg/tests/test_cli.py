import filecmp
import json
import os

import numpy as np
import pytest

from boxmask.analysis import Ablation, SweepResults
from boxmask.cli import main
from boxmask.interfaces import RunConfig, VideoDataset

TINY_CONFIG = """
scene.height = 32
scene.width = 32
scene.length = 4
scene.num_objects = 1
scene.num_classes = 2
scene.min_size = 8
scene.max_size = 14
scene.blur = 1

detector.backbone_channels = 8
detector.mask_hidden = 8
detector.fc_hidden = 16
detector.num_proposals = 16
detector.rois_per_frame = 16

sampling.T = 2

run.epochs = 1
run.milestones = 1
run.train_clips = 2
run.val_clips = 1
run.thresholds = 0.5, 0.75

ablation.lambdas = 0, 0.5
ablation.n_convs = 1, 2
ablation.roi_sizes = 7x14
ablation.sampling_modes = uniform, strided
ablation.support_counts = 1, 2
ablation.strides = 1
ablation.seeds = 0
"""


@pytest.fixture(scope="module")
def tiny_config_file(tmpdir_factory):

    path = str(tmpdir_factory.mktemp("cli").join("tiny.txt"))
    with open(path, "w") as f:
        f.write(TINY_CONFIG)

    return path


@pytest.fixture(scope="module")
def tiny_dataset(tiny_config_file, tmpdir_factory):

    path = str(tmpdir_factory.mktemp("cli_data"))
    code = main(["generate", "--config", tiny_config_file, "--out", path, "--force", "--quiet"])
    assert code == 0

    return path


def test_generate(tiny_dataset, tiny_config_file, output_directory):

    train = VideoDataset.load(os.path.join(tiny_dataset, "train"))
    val = VideoDataset.load(os.path.join(tiny_dataset, "val"))

    assert len(train) == 2
    assert len(val) == 1
    assert train.num_classes == 2

    again = str(output_directory.join("generate_again"))
    assert main(["generate", "--config", tiny_config_file, "--out", again, "--quiet"]) == 0

    for split in ("train", "val"):
        a, b = os.path.join(tiny_dataset, split), os.path.join(again, split)
        names = sorted(os.listdir(a))
        assert names == sorted(os.listdir(b))
        _, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
        assert not mismatch and not errors

    # refuses to overwrite without --force
    assert main(["generate", "--config", tiny_config_file, "--out", again, "--quiet"]) == 1


def test_train_eval_plot(tiny_dataset, tiny_config_file, output_directory):

    run_dir = str(output_directory.join("cli_run"))
    args = ["--config", tiny_config_file, "--dataset", tiny_dataset, "--quiet"]

    assert main(["train", *args, "--out", run_dir]) == 0

    checkpoint = os.path.join(run_dir, "checkpoints", "model.ckpt")
    for filename in ("config.txt", "run.json", "loss_log.csv", "checkpoints/epoch_1.ckpt"):
        assert os.path.exists(os.path.join(run_dir, filename))
    assert os.path.exists(checkpoint + ".manifest")

    with open(os.path.join(run_dir, "run.json")) as f:
        stamp = json.load(f)
    assert stamp["seed"] == 0

    assert main(["eval", "--checkpoint", checkpoint, "--baseline", checkpoint, "--quiet"]) == 0

    report = os.path.join(run_dir, "reports", "eval.json")
    with open(report) as f:
        first = f.read()
    assert os.path.exists(os.path.join(run_dir, "reports", "comparison.txt"))

    assert main(["eval", "--checkpoint", checkpoint, "--quiet"]) == 0
    with open(report) as f:
        assert f.read() == first

    values = json.loads(first)
    assert values["thresholds"] == [0.5, 0.75]
    assert values["map_50_95"] is None

    assert main(["plot", "--out", run_dir, "--quiet"]) == 0
    assert os.path.exists(os.path.join(run_dir, "figures", "eval_class_ap.png"))
    assert os.path.exists(os.path.join(run_dir, "figures", "loss.png"))


def test_error_line(output_directory, capsys):

    missing = str(output_directory.join("missing.ckpt"))

    assert main(["eval", "--checkpoint", missing]) == 1

    lines = capsys.readouterr().err.strip().splitlines()
    assert len(lines) == 1
    assert lines[0].startswith("boxmask: error: FileNotFoundError:")


def test_ablation(tiny_dataset, tiny_config_file, output_directory):

    run_dir = str(output_directory.join("ablation"))
    config = RunConfig.from_file(tiny_config_file).update(
        {"run.dataset": tiny_dataset, "run.verbose": False}
    )

    tables = Ablation(config, run_dir).run()

    lambdas = tables["lambda"]
    assert list(lambdas["variant"]) == ["baseline", "boxmask", "boxmask"]
    assert list(lambdas["lambda"]) == [0.0, 0.0, 0.5]

    # a zero BoxMask weight trains exactly the baseline under the shared seed
    metrics = ["map_50", "map_75", "map_50_95", "params"]
    np.testing.assert_array_equal(
        lambdas.iloc[0][metrics].to_numpy(dtype=float),
        lambdas.iloc[1][metrics].to_numpy(dtype=float),
    )
    assert list(tables["n_conv"]["n_conv"]) == [1, 2]
    assert len(tables["roi_size"]) == 1
    assert len(tables["sampling"]) == 4
    assert len(tables["effectiveness_deltas"]) == 1

    params = tables["n_conv"]["params"].tolist()
    assert params[1] > params[0]

    results = SweepResults(os.path.join(run_dir, "sweep.h5"))
    assert set(results.sweeps) == set(tables)

    loaded = results.get_table("sampling")
    assert list(loaded["mode"]) == list(tables["sampling"]["mode"])
    assert results.get_description("lambda")

    assert os.path.exists(os.path.join(run_dir, "tables", "n_conv.txt"))
    assert os.path.exists(os.path.join(run_dir, "figures", "sampling.png"))

    with pytest.raises(FileExistsError):
        Ablation(config, run_dir).run()

    assert main(["plot", "--out", run_dir, "--quiet"]) == 0
