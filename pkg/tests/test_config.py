import pytest

from boxmask.cli import build_parser, resolve_config
from boxmask.interfaces import RunConfig, parse_roi_size


def test_defaults():

    config = RunConfig()

    assert config.detector.lambda_bm == 0.5
    assert config.detector.mask_resolution == 28
    assert config.detector.num_classes == config.scene.num_classes
    assert config.sampling.mode == "uniform"
    assert config.sampling.T == 14
    assert len(config.run.thresholds) == 10


def test_text_roundtrip():

    config = RunConfig().update(
        {
            "detector.lambda_bm": "0.25",
            "detector.boxmask_enabled": "off",
            "sampling.mode": "strided",
            "ablation.roi_sizes": "7x7, 14x14",
            "run.thresholds": "0.5, 0.75",
        }
    )

    assert config.detector.boxmask_enabled is False
    assert config.ablation.roi_sizes == ("7x7", "14x14")
    assert config.run.thresholds == (0.5, 0.75)
    assert RunConfig.from_text(config.to_text()) == config


def test_comments_and_blank_lines():

    config = RunConfig.from_text(
        "# a run\n\nscene.num_classes = 5   # more classes\nrun.epochs = 2\n"
    )

    assert config.scene.num_classes == 5
    assert config.detector.num_classes == 5
    assert config.run.epochs == 2


def test_up_size_sets_mask_resolution():

    config = RunConfig().update({"detector.up_size": 7})

    assert config.detector.mask_resolution == 14


@pytest.mark.parametrize(
    "text",
    [
        "detector.bogus = 1",
        "nosection.value = 1",
        "detector.mask_resolution = 28",
        "detector.num_classes = 4",
        "detector.boxmask_enabled = maybe",
        "run.epochs = many",
        "sampling.mode = keyframe",
        "just some text",
    ],
)
def test_rejected_text(text):

    with pytest.raises(ValueError):
        RunConfig.from_text(text)


def test_roi_size_parsing():

    assert parse_roi_size("7x14") == (7, 14)

    with pytest.raises(ValueError):
        parse_roi_size("seven")


def test_missing_config_file(output_directory):

    with pytest.raises(FileNotFoundError):
        RunConfig.from_file(str(output_directory.join("no_such_config.txt")))


def test_precedence(output_directory):

    config_file = str(output_directory.join("precedence.txt"))
    with open(config_file, "w") as f:
        f.write("detector.lambda_bm = 0.25\nsampling.T = 6\n")

    parser = build_parser()

    assert resolve_config(parser.parse_args(["train"])).detector.lambda_bm == 0.5

    from_file = resolve_config(parser.parse_args(["train", "--config", config_file]))
    assert from_file.detector.lambda_bm == 0.25
    assert from_file.sampling.T == 6

    from_flag = resolve_config(
        parser.parse_args(["train", "--config", config_file, "--lambda", "0.75", "--T", "3"])
    )
    assert from_flag.detector.lambda_bm == 0.75
    assert from_flag.sampling.T == 3


def test_flag_translation():

    args = build_parser().parse_args(
        [
            "train",
            "--proposals",
            "rpn",
            "--boxmask",
            "off",
            "--up-size",
            "7",
            "--out",
            "somewhere",
            "--quiet",
        ]
    )
    config = resolve_config(args)

    assert config.detector.proposal_mode == "learned_rpn"
    assert config.detector.boxmask_enabled is False
    assert config.detector.mask_resolution == 14
    assert config.run.out == "somewhere"
    assert config.run.verbose is False
