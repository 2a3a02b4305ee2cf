import json
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm as progress_bar

from ..geometry import LabeledBox, ScoredBox, boxes_to_array, pairwise_iou
from ..sampling import SamplingPlan, sample_support

__all__ = [
    "MatchResult",
    "EvalResult",
    "match_detections",
    "average_precision",
    "compute_map",
    "evaluate_detector",
    "measure_fps",
    "delta_table",
    "class_deltas",
    "EVALUATOR_VERSION",
    "COCO_THRESHOLDS",
]

EVALUATOR_VERSION = "1.0"

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

EXCLUSION_NOTE = "classes without ground truth instances are excluded from the mean"

DELTA_COLUMNS = ("AP@0.50", "AP@0.75", "AP@[0.50:0.95]")


@dataclass
class MatchResult:
    """
    Outcome of matching the detections of one frame.

    :param tp: per detection, in input order, True for a true positive
    :param matched_gt: index of the matched ground truth box, -1 for false positives
    :param num_fn: ground truth boxes left unmatched
    """

    tp: np.ndarray
    matched_gt: np.ndarray
    num_fn: int

    @property
    def num_tp(self) -> int:
        return int(self.tp.sum())

    @property
    def num_fp(self) -> int:
        return int(len(self.tp) - self.tp.sum())


def match_detections(
    dets: Sequence[ScoredBox], gts: Sequence[LabeledBox], iou_thresh: float
) -> MatchResult:
    """
    Greedy one-to-one matching in order of descending score.

    Each detection takes the unmatched ground truth box of its class with the
    highest IoU, provided the IoU reaches iou_thresh.
    """

    n = len(dets)
    tp = np.zeros(n, dtype=bool)
    matched_gt = np.full(n, -1, dtype=np.int64)

    if n == 0 or len(gts) == 0:
        return MatchResult(tp, matched_gt, len(gts))

    scores = np.array([d.score for d in dets])
    overlaps = pairwise_iou(boxes_to_array(dets), boxes_to_array(gts))
    same_class = np.array([d.label for d in dets])[:, None] == np.array(
        [g.label for g in gts]
    )[None, :]

    taken = np.zeros(len(gts), dtype=bool)

    for i in np.lexsort((np.arange(n), -scores)):
        candidates = np.where(same_class[i] & ~taken, overlaps[i], -1.0)
        j = int(np.argmax(candidates))

        if candidates[j] >= iou_thresh:
            tp[i] = True
            matched_gt[i] = j
            taken[j] = True

    return MatchResult(tp, matched_gt, int((~taken).sum()))


def average_precision(scores: np.ndarray, tp: np.ndarray, num_gt: int) -> float:
    """
    Area under the all-point interpolated precision-recall curve.

    On equal scores false positives rank before true positives.
    """

    if num_gt <= 0:
        raise ValueError("Average precision needs at least one ground truth box")

    if len(scores) == 0:
        return 0.0

    order = np.lexsort((np.asarray(tp, dtype=int), -np.asarray(scores)))
    hits = np.asarray(tp, dtype=float)[order]

    tp_sum = np.cumsum(hits)
    fp_sum = np.cumsum(1.0 - hits)

    recall = tp_sum / num_gt
    precision = tp_sum / (tp_sum + fp_sum)

    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])

    # precision envelope
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]

    steps = np.flatnonzero(mrec[1:] != mrec[:-1]) + 1

    return float(np.sum((mrec[steps] - mrec[steps - 1]) * mpre[steps]))


@dataclass
class EvalResult:
    """
    Per-class AP and counts at every IoU threshold.

    :param thresholds: IoU thresholds
    :param ap: {threshold: {label: AP}}, classes with ground truth only
    :param counts: {threshold: {label: (TP, FP, FN)}}
    :param class_names: {label: name}
    """

    thresholds: Tuple[float, ...]
    ap: Dict[float, Dict[int, float]]
    counts: Dict[float, Dict[int, Tuple[int, int, int]]]
    class_names: Dict[int, str] = field(default_factory=dict)
    version: str = EVALUATOR_VERSION

    @property
    def labels(self) -> List[int]:
        return sorted(self.ap[self.thresholds[0]])

    def name(self, label: int) -> str:
        return self.class_names.get(label, f"class_{label}")

    def map_at(self, threshold: float) -> float:
        """
        Unweighted mean AP over the classes present in the ground truth.
        """

        key = _threshold_key(self.thresholds, threshold)

        return float(np.mean(list(self.ap[key].values())))

    @property
    def map_50(self) -> Optional[float]:
        return self._maybe(0.5)

    @property
    def map_75(self) -> Optional[float]:
        return self._maybe(0.75)

    @property
    def map_50_95(self) -> Optional[float]:
        """
        Mean of the mAPs at 0.5, 0.55, ..., 0.95, None unless all are evaluated.
        """

        if not all(_has_threshold(self.thresholds, t) for t in COCO_THRESHOLDS):
            return None

        return float(np.mean([self.map_at(t) for t in COCO_THRESHOLDS]))

    def _maybe(self, threshold: float) -> Optional[float]:

        if not _has_threshold(self.thresholds, threshold):
            return None

        return self.map_at(threshold)

    def to_frame(self) -> pd.DataFrame:
        """
        Classes as rows, AP at each threshold as columns, plus a mean row.
        """

        table = pd.DataFrame(
            {
                f"AP@{t:.2f}": [self.ap[t][label] for label in self.labels]
                for t in self.thresholds
            },
            index=[self.name(label) for label in self.labels],
        )
        table.loc["mAP"] = table.mean(axis=0)

        return table

    def to_text(self) -> str:

        lines = [
            f"evaluator version {self.version}, all-point interpolated AP",
            f"note: {EXCLUSION_NOTE}",
        ]

        for t in self.thresholds:
            lines.append("")
            lines.append(f"IoU threshold {t:.2f}")
            block = pd.DataFrame(
                {
                    "AP": [self.ap[t][label] for label in self.labels],
                    "TP": [self.counts[t][label][0] for label in self.labels],
                    "FP": [self.counts[t][label][1] for label in self.labels],
                    "FN": [self.counts[t][label][2] for label in self.labels],
                },
                index=[self.name(label) for label in self.labels],
            )
            lines.append(block.to_string(float_format=lambda v: f"{v:.4f}"))
            lines.append(f"mAP = {self.map_at(t):.4f}")

        if self.map_50_95 is not None:
            lines.append("")
            lines.append(f"mAP@[0.5:0.95] = {self.map_50_95:.4f}")

        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:

        return {
            "evaluator_version": self.version,
            "interpolation": "all-point",
            "note": EXCLUSION_NOTE,
            "thresholds": list(self.thresholds),
            "map": {f"{t:.2f}": self.map_at(t) for t in self.thresholds},
            "map_50_95": self.map_50_95,
            "classes": {
                str(label): {
                    "name": self.name(label),
                    "ap": {f"{t:.2f}": self.ap[t][label] for t in self.thresholds},
                    "counts": {
                        f"{t:.2f}": list(self.counts[t][label]) for t in self.thresholds
                    },
                }
                for label in self.labels
            },
        }

    @classmethod
    def from_dict(cls, values: dict) -> "EvalResult":

        thresholds = tuple(float(t) for t in values["thresholds"])
        classes = values["classes"]

        ap = {
            t: {int(label): c["ap"][f"{t:.2f}"] for label, c in classes.items()}
            for t in thresholds
        }
        counts = {
            t: {
                int(label): tuple(c["counts"][f"{t:.2f}"]) for label, c in classes.items()
            }
            for t in thresholds
        }
        names = {int(label): c["name"] for label, c in classes.items()}

        return cls(thresholds, ap, counts, names, values["evaluator_version"])

    def save(self, prefix: str):
        """
        Write prefix.txt and prefix.json.
        """

        with open(prefix + ".txt", "w") as f:
            f.write(self.to_text())

        with open(prefix + ".json", "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, filename: str) -> "EvalResult":

        with open(filename, "r") as f:
            return cls.from_dict(json.load(f))


def _has_threshold(thresholds, value) -> bool:
    return any(abs(t - value) < 1e-9 for t in thresholds)


def _threshold_key(thresholds, value) -> float:

    for t in thresholds:
        if abs(t - value) < 1e-9:
            return t

    raise ValueError(f"IoU threshold {value} was not evaluated")


def compute_map(
    frames: Sequence[Tuple[Sequence[ScoredBox], Sequence[LabeledBox]]],
    thresholds: Sequence[float] = COCO_THRESHOLDS,
    class_names: Optional[Dict[int, str]] = None,
) -> EvalResult:
    """
    Mean average precision over a test set.

    :param frames: (detections, ground truth) for every frame
    :param thresholds: IoU thresholds
    :param class_names: optional {label: name} used in reports
    """

    thresholds = tuple(float(t) for t in thresholds)

    if len(thresholds) == 0:
        raise ValueError("Need at least one IoU threshold")

    gt_counts = {}
    for _, gts in frames:
        for g in gts:
            gt_counts[int(g.label)] = gt_counts.get(int(g.label), 0) + 1

    if not gt_counts:
        raise ValueError("Cannot compute mAP without any ground truth box")

    ap = {}
    counts = {}

    for t in thresholds:
        scores = {label: [] for label in gt_counts}
        hits = {label: [] for label in gt_counts}
        fps = {label: 0 for label in gt_counts}
        fns = {label: 0 for label in gt_counts}

        for dets, gts in frames:
            match = match_detections(dets, gts, t)

            for det, hit in zip(dets, match.tp):
                label = int(det.label)
                if label not in gt_counts:
                    continue
                scores[label].append(det.score)
                hits[label].append(hit)
                fps[label] += int(not hit)

            for j, g in enumerate(gts):
                if j not in match.matched_gt:
                    fns[int(g.label)] += 1

        ap[t] = {}
        counts[t] = {}
        for label in sorted(gt_counts):
            ap[t][label] = average_precision(
                np.array(scores[label]), np.array(hits[label], dtype=bool), gt_counts[label]
            )
            counts[t][label] = (int(np.sum(hits[label])), fps[label], fns[label])

    return EvalResult(thresholds, ap, counts, dict(class_names or {}))


def _run_inference(detector, clips, plan, seed, verbose, desc):

    frames = []
    for clip in progress_bar(clips, desc=desc, disable=not verbose):
        cache = {}
        for t in range(len(clip)):
            supports = sample_support(len(clip), t, plan)
            dets = detector.infer(
                clip.frames, t, supports, clip.annotations, seed=seed, cache=cache
            )
            frames.append((dets, clip.annotations[t]))

    return frames


def evaluate_detector(
    detector,
    clips: Sequence,
    plan: SamplingPlan,
    thresholds: Sequence[float] = COCO_THRESHOLDS,
    seed: int = 0,
    class_names: Optional[Dict[int, str]] = None,
    verbose: bool = True,
) -> EvalResult:
    """
    Run inference on every frame of every clip and compute the mAP.
    """

    frames = _run_inference(detector, clips, plan, seed, verbose, "Evaluating")

    return compute_map(frames, thresholds, class_names)


def measure_fps(detector, clips: Sequence, plan: SamplingPlan, seed: int = 0) -> float:
    """
    Inference throughput in frames per second, backbone included.
    """

    start = time.perf_counter()
    frames = _run_inference(detector, clips, plan, seed, False, "Timing")
    elapsed = time.perf_counter() - start

    return len(frames) / elapsed if elapsed > 0 else float("inf")


def delta_table(baseline: EvalResult, boxmask: EvalResult) -> pd.DataFrame:
    """
    Baseline against BoxMask at AP@0.5, AP@0.75 and AP@[0.5:0.95].
    """

    def row(result):
        values = (result.map_50, result.map_75, result.map_50_95)
        return {
            name: np.nan if value is None else value
            for name, value in zip(DELTA_COLUMNS, values)
        }

    table = pd.DataFrame([row(baseline), row(boxmask)], index=["baseline", "boxmask"])
    table.loc["delta"] = table.loc["boxmask"] - table.loc["baseline"]

    return table


def class_deltas(
    baseline: EvalResult, boxmask: EvalResult, threshold: float = 0.5, top_k: int = 5
) -> Tuple[pd.Series, pd.Series]:
    """
    Most improved and most worsened classes by AP difference.

    :return: (improved, worsened) series indexed by class name, at most
        top_k entries each, largest changes first
    """

    t_base = _threshold_key(baseline.thresholds, threshold)
    t_box = _threshold_key(boxmask.thresholds, threshold)

    labels = sorted(set(baseline.ap[t_base]) & set(boxmask.ap[t_box]))
    delta = pd.Series(
        [boxmask.ap[t_box][label] - baseline.ap[t_base][label] for label in labels],
        index=[boxmask.name(label) for label in labels],
        name=f"delta AP@{threshold:.2f}",
    )

    improved = delta[delta > 0].sort_values(ascending=False, kind="stable")[:top_k]
    worsened = delta[delta < 0].sort_values(ascending=True, kind="stable")[:top_k]

    return improved, worsened
