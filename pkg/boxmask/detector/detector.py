from typing import Dict, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from tqdm import tqdm as progress_bar

from ..features import (
    FeatureMap,
    RoIFeatureGrid,
    TemporalAttentionAggregator,
    extract_roi_features,
    match_indices,
    match_support_features,
    msa_aggregate,
)
from ..geometry import Box, LabeledBox, ScoredBox, batched_nms, decode_boxes
from ..maskgen import build_roi_targets
from ..sampling import SamplingPlan, sample_support
from .backbone import Backbone
from .config import DetectorConfig
from .heads import BoxMaskHead, DetectionBatch, DetectionHead, heads_forward
from .losses import LossReport, compute_losses
from .proposals import OracleProposer, RegionProposalNetwork, sample_rois

__all__ = ["Detector", "Trainer", "init_parameters", "count_parameters"]


def init_parameters(module: nn.Module, scale: float = 1.0):
    """
    Uniform He-style weights scaled by `scale`, zero biases.
    """

    for name, param in module.named_parameters():
        if name.endswith("bias"):
            nn.init.zeros_(param)
        else:
            nn.init.kaiming_uniform_(param, nonlinearity="relu")
            with torch.no_grad():
                param.mul_(scale)


def count_parameters(module: Optional[nn.Module]) -> int:

    if module is None:
        return 0

    return sum(p.numel() for p in module.parameters())


class Detector(nn.Module):
    """
    Two-stage video object detector with temporal RoI aggregation and an
    auxiliary BoxMask head.
    """

    def __init__(self, config: DetectorConfig, seed: int = 0):
        """
        Two-stage video object detector with temporal RoI aggregation and an
        auxiliary BoxMask head.

        The mask head is always built so that parameter initialisation and
        checkpoints do not depend on whether it is trained. All parameters
        are float64.

        :param config: a DetectorConfig
        :param seed: seed of the parameter initialisation
        """

        super().__init__()

        self.config = config
        self.seed = seed
        channels = config.backbone_channels

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)

            self.backbone = Backbone(channels)
            self.aggregator = TemporalAttentionAggregator(channels, config.num_heads)
            self.detection_head = DetectionHead(
                channels, config.fc_hidden, config.num_outputs
            )
            self.mask_head = BoxMaskHead(
                channels, config.mask_hidden, config.n_conv, config.num_outputs
            )

            if config.proposal_mode == "learned_rpn":
                self.rpn = RegionProposalNetwork(
                    channels,
                    Backbone.stride,
                    anchor_sizes=config.rpn_anchor_sizes,
                    batch_size=config.rpn_batch_size,
                    pre_nms=config.rpn_pre_nms,
                    post_nms=config.rpn_post_nms,
                    nms_iou=config.rpn_nms_iou,
                    positive_iou=config.rpn_positive_iou,
                    negative_iou=config.rpn_negative_iou,
                    proposal_positive_iou=config.positive_iou,
                )
            else:
                self.rpn = None

            init_parameters(self, config.init_scale)

        self.oracle = OracleProposer(
            jitter=config.jitter,
            copies=config.jitter_copies,
            num_proposals=config.num_proposals,
            positive_iou=config.positive_iou,
        )

        self.double()

    @property
    def proposer(self):
        return self.rpn if self.rpn is not None else self.oracle

    def num_parameters(self, include_mask_head: bool = True) -> int:
        """
        Learnable parameter count, optionally without the training-only mask head.
        """

        total = count_parameters(self)

        if not include_mask_head:
            total -= count_parameters(self.mask_head)

        return total

    def feature_maps(
        self, frames: np.ndarray, indices: Sequence[int], cache: Optional[dict] = None
    ) -> Dict[int, FeatureMap]:
        """
        Backbone features for the distinct frames among indices.

        :param cache: optional dict reused across calls on the same clip
        """

        if cache is None:
            cache = {}

        missing = sorted(set(int(i) for i in indices) - set(cache))
        if missing:
            for fmap in self.backbone.feature_maps(frames[missing], missing):
                cache[fmap.frame_index] = fmap

        return {int(i): cache[int(i)] for i in indices}

    def temporal_features(
        self,
        target: FeatureMap,
        supports: Sequence[FeatureMap],
        rois: np.ndarray,
        matches: Optional[Sequence[torch.Tensor]] = None,
    ) -> RoIFeatureGrid:
        """
        RoI features of the target frame aggregated with matched features
        from every support frame.

        :param matches: fixed match_indices per support frame, recomputed
            from the current features when None
        """

        grid = extract_roi_features(
            target, rois, roi_size=self.config.roi_size, up_size=self.config.up_size
        )

        if matches is None:
            matches = [None] * len(supports)
        elif len(matches) != len(supports):
            raise ValueError(f"{len(matches)} match sets for {len(supports)} support frames")

        matched = [match_support_features(grid, s, m) for s, m in zip(supports, matches)]

        return msa_aggregate(grid, matched, self.aggregator)

    @torch.no_grad()
    def support_matches(
        self,
        fmaps: Dict[int, FeatureMap],
        target: int,
        support_indices: Sequence[int],
        rois: np.ndarray,
    ) -> list:
        """
        match_indices of every support frame for RoIs on the target frame.
        """

        grid = extract_roi_features(
            fmaps[target], rois, roi_size=self.config.roi_size, up_size=self.config.up_size
        )

        return [match_indices(grid, fmaps[s]) for s in support_indices]

    def roi_losses(
        self,
        fmaps: Dict[int, FeatureMap],
        target: int,
        support_indices: Sequence[int],
        rois: np.ndarray,
        labels: np.ndarray,
        regression_targets: np.ndarray,
        gt: Sequence[LabeledBox],
        rpn_losses: Optional[dict] = None,
        matches: Optional[Sequence[torch.Tensor]] = None,
    ) -> LossReport:
        """
        Second-stage losses for a fixed set of RoIs on the target frame.
        """

        if len(rois) == 0:
            raise ValueError("Cannot compute losses without RoIs")

        grid = self.temporal_features(
            fmaps[target], [fmaps[s] for s in support_indices], rois, matches
        )
        det, masks = heads_forward([grid], self.detection_head, self.mask_head, self.config)

        det = DetectionBatch(
            det.class_logits,
            det.deltas,
            labels=torch.as_tensor(labels, dtype=torch.long),
            regression_targets=torch.as_tensor(
                regression_targets, dtype=det.deltas.dtype, device=det.deltas.device
            ),
        )

        targets = None
        if masks is not None:
            targets = build_roi_targets(
                [Box(*r) for r in rois],
                gt,
                self.config.mask_resolution,
                self.config.num_classes,
            )

        return compute_losses(det, masks, targets, self.config, rpn_losses)

    def loss(
        self,
        frames: np.ndarray,
        annotations: Sequence[Sequence[LabeledBox]],
        target: int,
        support_indices: Sequence[int],
        rng: np.random.Generator,
    ) -> LossReport:
        """
        Full training loss for one target frame.

        :param frames: (N, H, W, 3) clip
        :param annotations: per-frame ground truth boxes
        :param target: index of the target frame
        :param support_indices: indices of the support frames
        :param rng: generator for proposal jitter and RoI sampling
        """

        gt = annotations[target]
        height, width = frames.shape[1:3]

        fmaps = self.feature_maps(frames, [target, *support_indices])
        proposals, rpn_losses = self.proposer.propose(
            fmaps[target], gt, (height, width), rng
        )

        index, labels = sample_rois(
            proposals,
            gt,
            self.config.rois_per_frame,
            self.config.positive_fraction,
            rng,
        )

        return self.roi_losses(
            fmaps,
            target,
            support_indices,
            proposals.boxes[index],
            labels,
            proposals.regression_targets[index],
            gt,
            rpn_losses,
        )

    @torch.no_grad()
    def infer(
        self,
        frames: np.ndarray,
        target: int,
        support_indices: Sequence[int],
        annotations: Optional[Sequence[Sequence[LabeledBox]]] = None,
        seed: int = 0,
        cache: Optional[dict] = None,
    ) -> list:
        """
        Detections on one target frame. Only the detection branch runs.

        :param frames: (N, H, W, 3) clip
        :param target: index of the target frame
        :param support_indices: indices of the support frames
        :param annotations: needed for oracle proposals only
        :param seed: seeds the oracle jitter together with the target index
        :param cache: feature map cache shared across targets of one clip
        :return: list of ScoredBox, highest score first
        """

        if len(frames) == 0:
            raise ValueError("Cannot run inference on an empty clip")

        if not 0 <= target < len(frames):
            raise ValueError(f"Target {target} is outside a clip of {len(frames)} frames")

        config = self.config
        height, width = frames.shape[1:3]
        fmaps = self.feature_maps(frames, [target, *support_indices], cache)

        if self.rpn is not None:
            gt = None
        else:
            if annotations is None:
                raise ValueError("Oracle proposals need the clip annotations")
            gt = annotations[target]
            if not gt:
                return []

        rng = np.random.default_rng([seed, target])
        proposals, _ = self.proposer.propose(fmaps[target], gt, (height, width), rng)

        if len(proposals) == 0:
            return []

        grid = self.temporal_features(
            fmaps[target], [fmaps[s] for s in support_indices], proposals.boxes
        )
        logits, deltas = self.detection_head(grid.values)

        scores = F.softmax(logits, dim=1).cpu().numpy()
        boxes = decode_boxes(proposals.boxes, deltas.cpu().numpy(), (height, width))

        roi, cls = np.nonzero(scores[:, 1:] > config.score_thresh)
        cls = cls + 1
        cand_boxes = boxes[roi]
        cand_scores = scores[roi, cls]

        valid = (cand_boxes[:, 2] > cand_boxes[:, 0]) & (cand_boxes[:, 3] > cand_boxes[:, 1])
        cand_boxes, cand_scores, cls = cand_boxes[valid], cand_scores[valid], cls[valid]

        keep = batched_nms(cand_boxes, cand_scores, cls, config.nms_iou)
        keep = keep[: config.max_detections]

        return [
            ScoredBox(Box(*cand_boxes[i]), float(cand_scores[i]), int(cls[i]))
            for i in keep
        ]


class Trainer:
    """
    SGD with momentum and step learning rate decay around a Detector.
    """

    def __init__(
        self,
        detector: Detector,
        plan: SamplingPlan,
        seed: int = 0,
        milestones: Sequence[int] = (4, 6),
        verbose: bool = True,
    ):
        """
        SGD with momentum and step learning rate decay around a Detector.

        train_step mutates the detector and optimizer state, calls must
        not overlap.

        :param detector: the model to train
        :param plan: sampling plan, train_support frames are drawn per step
        :param seed: seeds target, support and RoI sampling
        :param milestones: epochs at which the learning rate is divided
        :param verbose: show progress bars
        """

        self.detector = detector
        self.plan = plan
        self.seed = seed
        self.verbose = verbose

        config = detector.config
        self.optimizer = torch.optim.SGD(
            detector.parameters(),
            lr=config.learning_rate,
            momentum=config.momentum,
            weight_decay=config.weight_decay,
        )
        self.scheduler = torch.optim.lr_scheduler.MultiStepLR(
            self.optimizer, milestones=list(milestones), gamma=config.lr_decay_factor
        )

        self.rng = np.random.default_rng(seed)
        self.epoch = 0

    def train_step(
        self,
        frames: np.ndarray,
        annotations: Sequence[Sequence[LabeledBox]],
        target: Optional[int] = None,
    ) -> LossReport:
        """
        One parameter update on a target frame of the clip.

        :param target: frame to train on, drawn at random among annotated
            frames if not given
        :return: the loss report before the update
        """

        if len(frames) == 0:
            raise ValueError("Cannot train on an empty clip")

        if target is None:
            annotated = [i for i, gt in enumerate(annotations) if gt]
            if not annotated:
                raise ValueError("Clip has no annotated frame to train on")
            target = int(self.rng.choice(annotated))

        supports = sample_support(
            len(frames), target, self.plan, seed=self.rng, training=True
        )

        self.detector.train()
        self.optimizer.zero_grad()

        report = self.detector.loss(frames, annotations, target, supports, self.rng)
        report.check_finite()

        report.total.backward()
        self.optimizer.step()

        report.total = None

        return report

    def train_epoch(self, clips: Sequence) -> list:
        """
        One step per clip in a random order, then a scheduler step.

        :param clips: objects with frames and annotations attributes
        :return: list of loss reports
        """

        order = self.rng.permutation(len(clips))
        reports = []

        bar = progress_bar(
            order, desc=f"Epoch {self.epoch + 1}", disable=not self.verbose
        )
        for i in bar:
            report = self.train_step(clips[i].frames, clips[i].annotations)
            reports.append(report)
            bar.set_postfix(l_total=f"{report.l_total:.4f}")

        self.scheduler.step()
        self.epoch += 1

        return reports
