import json
import os
from dataclasses import replace
from typing import Optional

import pandas as pd

from .._version import __version__
from ..detector import Detector, Trainer, load_checkpoint, save_checkpoint
from ..interfaces import RunConfig, VideoDataset, generate_clip
from ..plotting import plot_class_ap, plot_class_deltas
from ..sampling import SamplingPlan
from ..utils import SPLITS, derive_seed, set_deterministic
from .evaluation import (
    EVALUATOR_VERSION,
    EvalResult,
    class_deltas,
    delta_table,
    evaluate_detector,
)

__all__ = ["Analysis", "generate_datasets", "build_detector", "load_detector"]

CONFIG_FILE = "config.txt"
RUN_FILE = "run.json"
LOSS_LOG_FILE = "loss_log.csv"
CHECKPOINT_DIR = "checkpoints"
REPORT_DIR = "reports"
FINAL_CHECKPOINT = "model.ckpt"


def generate_datasets(
    config: RunConfig, path: str, force: bool = False, verbose: bool = True
) -> dict:
    """
    Write train and val datasets under path.

    Each clip is seeded from the run seed, its split and its index.

    :return: {split: VideoDataset}
    """

    sizes = {"train": config.run.train_clips, "val": config.run.val_clips}
    classes = config.scene.to_spec(0).classes

    if os.path.isdir(path) and os.listdir(path) and not force:
        raise FileExistsError(
            f"Output directory {path} is not empty, use --force to overwrite"
        )

    datasets = {}
    for split in SPLITS:
        if verbose:
            print(f"Generating {sizes[split]} {split} clips...")

        clips = []
        for i in range(sizes[split]):
            seed = derive_seed(config.run.seed, split, i)
            spec = config.scene.to_spec(seed)
            clips.append(generate_clip(spec, clip_id=f"{split}_{i:04d}"))

        datasets[split] = VideoDataset(clips, classes)
        datasets[split].save(os.path.join(path, split), force=True)

    if verbose:
        for split, dataset in datasets.items():
            print(f"{split}: {dataset.summary()}")
        print("Done!")

    return datasets


def build_detector(config: RunConfig, num_classes: Optional[int] = None) -> Detector:
    """
    A freshly initialised detector for the run, seeded by the run seed.
    """

    detector_config = config.detector
    if num_classes is not None and num_classes != detector_config.num_classes:
        detector_config = replace(detector_config, num_classes=num_classes)

    return Detector(detector_config, seed=config.run.seed)


def load_detector(
    config: RunConfig, checkpoint: str, num_classes: Optional[int] = None
) -> Detector:

    detector = build_detector(config, num_classes)
    load_checkpoint(detector, checkpoint)

    return detector


class Analysis:
    """
    To manage training and evaluation of a detector in a run directory.
    """

    def __init__(
        self,
        config: RunConfig,
        run_dir: Optional[str] = None,
        verbose: Optional[bool] = None,
    ):
        """
        To manage training and evaluation of a detector in a run directory.

        The run directory holds the resolved config, a run stamp with seed
        and versions, the loss log, checkpoints and reports.

        :param config: a RunConfig
        :param run_dir: output directory, config.run.out if not given
        :param verbose: print progress, config.run.verbose if not given
        """

        self.config = config
        self.run_dir = run_dir if run_dir is not None else config.run.out
        self.verbose = config.run.verbose if verbose is None else verbose

        self.detector = None
        self.loss_log = None

    @property
    def checkpoint_dir(self) -> str:
        return os.path.join(self.run_dir, CHECKPOINT_DIR)

    @property
    def report_dir(self) -> str:
        return os.path.join(self.run_dir, REPORT_DIR)

    @property
    def final_checkpoint(self) -> str:
        return os.path.join(self.checkpoint_dir, FINAL_CHECKPOINT)

    def _print(self, message: str):
        if self.verbose:
            print(message)

    def prepare(self, force: bool = False):
        """
        Create the run directory and write the config and run stamp.
        """

        if os.path.isdir(self.run_dir) and os.listdir(self.run_dir) and not force:
            raise FileExistsError(
                f"Run directory {self.run_dir} is not empty, use --force to overwrite"
            )

        os.makedirs(self.checkpoint_dir, exist_ok=True)
        os.makedirs(self.report_dir, exist_ok=True)

        self.config.save(os.path.join(self.run_dir, CONFIG_FILE))

        stamp = {
            "seed": self.config.run.seed,
            "version": __version__,
            "evaluator_version": EVALUATOR_VERSION,
        }
        with open(os.path.join(self.run_dir, RUN_FILE), "w") as f:
            json.dump(stamp, f, indent=2)

    def train(self, dataset: VideoDataset, force: bool = False) -> pd.DataFrame:
        """
        Train on every clip of the dataset for config.run.epochs epochs.

        A checkpoint is written after every epoch, and the loss log after
        training.

        :return: loss log with one row per step
        """

        self.prepare(force)

        if len(dataset) == 0:
            raise ValueError("Cannot train on an empty dataset")

        config = self.config
        set_deterministic(config.run.seed)

        self.detector = build_detector(config, dataset.num_classes or None)
        trainer = Trainer(
            self.detector,
            config.sampling,
            seed=config.run.seed,
            milestones=config.run.milestones,
            verbose=self.verbose,
        )

        arm = "BoxMask" if config.detector.boxmask_enabled else "baseline"
        self._print(f"Training {arm} detector for {config.run.epochs} epochs...")

        rows = []
        for epoch in range(config.run.epochs):
            lr = trainer.optimizer.param_groups[0]["lr"]
            for report in trainer.train_epoch(dataset.clips):
                row = {"step": len(rows), "epoch": epoch, "lr": lr}
                rows.append({**row, **report.as_dict()})

            epoch_file = os.path.join(self.checkpoint_dir, f"epoch_{epoch + 1}.ckpt")
            save_checkpoint(self.detector, epoch_file)

        save_checkpoint(self.detector, self.final_checkpoint)

        self.loss_log = pd.DataFrame(rows)
        self.loss_log.to_csv(os.path.join(self.run_dir, LOSS_LOG_FILE), index=False)

        self._print("Done!")

        return self.loss_log

    def load(self, checkpoint: Optional[str] = None, num_classes: Optional[int] = None):
        """
        Load a checkpoint, the final one of this run by default.
        """

        checkpoint = checkpoint or self.final_checkpoint
        self.detector = load_detector(self.config, checkpoint, num_classes)

    def evaluate(
        self,
        dataset: VideoDataset,
        plan: Optional[SamplingPlan] = None,
        name: str = "eval",
        plot: bool = True,
    ) -> EvalResult:
        """
        Evaluate the current detector and write name.txt and name.json reports.
        """

        if self.detector is None:
            raise ValueError("No detector to evaluate, train or load one first")

        plan = plan or self.config.sampling
        class_names = {i + 1: c.name for i, c in enumerate(dataset.classes)}

        self._print(f"Evaluating on {len(dataset)} clips...")

        result = evaluate_detector(
            self.detector,
            dataset.clips,
            plan,
            thresholds=self.config.run.thresholds,
            seed=self.config.run.seed,
            class_names=class_names,
            verbose=self.verbose,
        )

        os.makedirs(self.report_dir, exist_ok=True)
        prefix = os.path.join(self.report_dir, name)
        result.save(prefix)

        if plot:
            plot_class_ap(result, prefix + "_class_ap.png")

        self._print(result.to_text())
        self._print("Done!")

        return result

    def compare(
        self, baseline: EvalResult, boxmask: EvalResult, name: str = "comparison"
    ):
        """
        Write the baseline against BoxMask delta table, the most improved and
        worsened classes, and their plot.
        """

        os.makedirs(self.report_dir, exist_ok=True)
        prefix = os.path.join(self.report_dir, name)

        table = delta_table(baseline, boxmask)
        improved, worsened = class_deltas(baseline, boxmask, top_k=self.config.run.top_k)

        with open(prefix + ".txt", "w") as f:
            f.write(table.to_string(float_format=lambda v: f"{v:.4f}") + "\n\n")
            f.write("most improved\n" + improved.to_string() + "\n\n")
            f.write("most worsened\n" + worsened.to_string() + "\n")

        plot_class_deltas(improved, worsened, prefix + "_classes.png")

        self._print(table.to_string())

        return table, improved, worsened

    @staticmethod
    def read_loss_log(run_dir: str) -> pd.DataFrame:
        return pd.read_csv(os.path.join(run_dir, LOSS_LOG_FILE))

    @staticmethod
    def find_config(checkpoint: str) -> Optional[str]:
        """
        The config.txt of the run a checkpoint belongs to, if there is one.
        """

        checkpoint_dir = os.path.dirname(os.path.abspath(checkpoint))
        for directory in (os.path.dirname(checkpoint_dir), checkpoint_dir):
            candidate = os.path.join(directory, CONFIG_FILE)
            if os.path.exists(candidate):
                return candidate

        return None
