import argparse
import glob
import os
import sys
from typing import Optional, Sequence

from ._version import __version__
from .analysis import (
    Ablation,
    Analysis,
    EvalResult,
    SweepResults,
    generate_datasets,
)
from .interfaces import SWEEPS, RunConfig, VideoDataset
from .plotting import plot_class_ap, plot_loss_log, plot_sampling_curves, plot_sweep

__all__ = ["main", "build_parser", "resolve_config"]

"""
Command-line entry points: generate, train, eval, ablate and plot.

Settings are resolved as defaults, then the --config file, then flags.
"""

PROPOSAL_FLAGS = {"oracle": "oracle_jitter", "rpn": "learned_rpn"}

# flag destination -> config key
FLAG_KEYS = {
    "seed": "run.seed",
    "dataset": "run.dataset",
    "epochs": "run.epochs",
    "classes": "scene.num_classes",
    "train_clips": "run.train_clips",
    "val_clips": "run.val_clips",
    "boxmask": "detector.boxmask_enabled",
    "lambda_bm": "detector.lambda_bm",
    "n_conv": "detector.n_conv",
    "roi_size": "detector.roi_size",
    "up_size": "detector.up_size",
    "proposals": "detector.proposal_mode",
    "thresholds": "run.thresholds",
    "sampling": "sampling.mode",
    "T": "sampling.T",
    "S": "sampling.S",
    "sweep": "ablation.sweep",
    "workers": "ablation.workers",
}


def _common(parser: argparse.ArgumentParser):

    parser.add_argument("--config", help="configuration file of key = value lines")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--force", action="store_true", help="overwrite existing output")
    parser.add_argument("--quiet", action="store_true", help="no progress output")


def _training(parser: argparse.ArgumentParser):

    parser.add_argument("--dataset", help="dataset directory with train and val splits")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--boxmask", choices=["on", "off"])
    parser.add_argument("--lambda", dest="lambda_bm", type=float, help="BoxMask loss weight")
    parser.add_argument("--n-conv", dest="n_conv", type=int)
    parser.add_argument("--roi-size", dest="roi_size", type=int)
    parser.add_argument("--up-size", dest="up_size", type=int)
    parser.add_argument("--proposals", choices=sorted(PROPOSAL_FLAGS))


def _sampling(parser: argparse.ArgumentParser):

    parser.add_argument("--sampling", choices=["uniform", "strided"])
    parser.add_argument("--T", type=int, help="support frames")
    parser.add_argument("--S", type=int, help="stride of strided sampling")


def build_parser() -> argparse.ArgumentParser:

    parser = argparse.ArgumentParser(
        prog="boxmask", description="Desk-scale video object detection with BoxMask."
    )
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="write synthetic train and val datasets")
    _common(generate)
    generate.add_argument("--classes", type=int, help="number of object classes")
    generate.add_argument("--train-clips", dest="train_clips", type=int)
    generate.add_argument("--val-clips", dest="val_clips", type=int)

    train = commands.add_parser("train", help="train a detector")
    _common(train)
    _training(train)
    _sampling(train)

    evaluate = commands.add_parser("eval", help="evaluate a checkpoint on the val split")
    _common(evaluate)
    _sampling(evaluate)
    evaluate.add_argument("--dataset", help="dataset directory with a val split")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--baseline", help="baseline checkpoint to compare against")
    evaluate.add_argument("--thresholds", help="comma-separated IoU thresholds")

    ablate = commands.add_parser("ablate", help="run ablation sweeps")
    _common(ablate)
    _training(ablate)
    ablate.add_argument("--sweep", choices=list(SWEEPS) + ["all"])
    ablate.add_argument("--workers", type=int, help="variants trained in parallel")

    plot = commands.add_parser("plot", help="regenerate the figures of a run directory")
    _common(plot)

    return parser


def resolve_config(args: argparse.Namespace, config_file: Optional[str] = None) -> RunConfig:
    """
    Defaults, overridden by the config file, overridden by flags.
    """

    config_file = getattr(args, "config", None) or config_file
    config = RunConfig.from_file(config_file) if config_file else RunConfig()

    overrides = {}
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if dest == "proposals":
            value = PROPOSAL_FLAGS[value]
        overrides[key] = value

    if getattr(args, "out", None) and args.command != "generate":
        overrides["run.out"] = args.out

    if getattr(args, "quiet", False):
        overrides["run.verbose"] = False

    return config.update(overrides)


def _load_split(config: RunConfig, split: str) -> VideoDataset:
    return VideoDataset.load(os.path.join(config.run.dataset, split))


def cmd_generate(args) -> dict:

    config = resolve_config(args)
    path = args.out or config.run.dataset

    return generate_datasets(config, path, force=args.force, verbose=config.run.verbose)


def cmd_train(args) -> Analysis:

    config = resolve_config(args)

    analysis = Analysis(config)
    log = analysis.train(_load_split(config, "train"), force=args.force)

    os.makedirs(os.path.join(analysis.run_dir, "figures"), exist_ok=True)
    plot_loss_log(log, os.path.join(analysis.run_dir, "figures", "loss.png"))

    return analysis


def cmd_eval(args) -> EvalResult:

    if not os.path.exists(args.checkpoint):
        raise FileNotFoundError(f"No checkpoint at {args.checkpoint}")

    config = resolve_config(args, Analysis.find_config(args.checkpoint))
    val = _load_split(config, "val")

    run_dir = args.out
    if run_dir is None:
        run_dir = os.path.dirname(os.path.dirname(os.path.abspath(args.checkpoint)))

    analysis = Analysis(config, run_dir)
    analysis.load(args.checkpoint, val.num_classes or None)
    result = analysis.evaluate(val, name="eval")

    if args.baseline:
        baseline_config = resolve_config(args, Analysis.find_config(args.baseline))
        baseline = Analysis(baseline_config, run_dir)
        baseline.load(args.baseline, val.num_classes or None)
        baseline_result = baseline.evaluate(val, name="eval_baseline")

        analysis.compare(baseline_result, result)

    return result


def cmd_ablate(args) -> dict:

    config = resolve_config(args)

    return Ablation(config).run(force=args.force)


def cmd_plot(args) -> list:
    """
    Regenerate figures from the reports, loss log and sweep tables of a run.
    """

    config = resolve_config(args)
    run_dir = config.run.out

    if not os.path.isdir(run_dir):
        raise FileNotFoundError(f"No run directory at {run_dir}")

    figure_dir = os.path.join(run_dir, "figures")
    os.makedirs(figure_dir, exist_ok=True)
    written = []

    for report in sorted(glob.glob(os.path.join(run_dir, "reports", "*.json"))):
        name = os.path.splitext(os.path.basename(report))[0]
        filename = os.path.join(figure_dir, f"{name}_class_ap.png")
        plot_class_ap(EvalResult.load(report), filename)
        written.append(filename)

    loss_log = os.path.join(run_dir, "loss_log.csv")
    if os.path.exists(loss_log):
        filename = os.path.join(figure_dir, "loss.png")
        plot_loss_log(Analysis.read_loss_log(run_dir), filename)
        written.append(filename)

    sweep_file = os.path.join(run_dir, "sweep.h5")
    if os.path.exists(sweep_file):
        results = SweepResults(sweep_file)
        for name in results.sweeps:
            filename = os.path.join(figure_dir, f"{name}.png")
            if name == "sampling":
                plot_sampling_curves(results.get_table(name), filename)
            elif name in SWEEPS:
                plot_sweep(name, results.get_table(name), filename)
            else:
                continue
            written.append(filename)

    if not written:
        raise FileNotFoundError(f"Nothing to plot in {run_dir}")

    if config.run.verbose:
        print(f"Wrote {len(written)} figures to {figure_dir}")

    return written


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "plot": cmd_plot,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run a command, returning the exit code.

    Failures print a single line `boxmask: error: <type>: <message>`.
    """

    args = build_parser().parse_args(argv)

    try:
        COMMANDS[args.command](args)
    except Exception as e:
        message = " ".join(str(e).split())
        print(f"boxmask: error: {type(e).__name__}: {message}", file=sys.stderr)
        return 1

    return 0


if __name__ == "__main__":
    sys.exit(main())
