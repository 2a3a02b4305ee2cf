from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..features import FeatureMap
from ..geometry import (
    LabeledBox,
    batched_nms,
    boxes_to_array,
    decode_boxes,
    encode_boxes,
    pairwise_iou,
)

__all__ = [
    "ProposalSet",
    "ProposalSource",
    "OracleProposer",
    "RegionProposalNetwork",
    "assign_proposals",
    "sample_rois",
    "rpn_loss",
]


@dataclass
class ProposalSet:
    """
    Candidate boxes for one frame.

    :param boxes: (K, 4) proposals
    :param objectness: (K,) probability of containing an object
    :param labels: (K,) p*, 1 for proposals matching a ground truth box
    :param regression_targets: (K, 4) t*, zero for negatives
    :param gt_index: (K,) matched ground truth index, -1 if unmatched
    """

    boxes: np.ndarray
    objectness: np.ndarray
    labels: np.ndarray
    regression_targets: np.ndarray
    gt_index: np.ndarray

    def __post_init__(self):

        if np.any(self.objectness < 0) or np.any(self.objectness > 1):
            raise ValueError("Objectness must lie in [0, 1]")

    def __len__(self):
        return len(self.boxes)


def assign_proposals(
    boxes: np.ndarray,
    objectness: np.ndarray,
    gt: Optional[Sequence[LabeledBox]],
    positive_iou: float,
) -> ProposalSet:
    """
    Label proposals against ground truth: positive when the best IoU with
    any ground truth box reaches positive_iou.
    """

    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    k = len(boxes)

    labels = np.zeros(k, dtype=np.int64)
    targets = np.zeros((k, 4), dtype=np.float64)
    gt_index = np.full(k, -1, dtype=np.int64)

    if gt and k > 0:
        gt_boxes = boxes_to_array(gt)
        overlaps = pairwise_iou(boxes, gt_boxes)
        best = overlaps.argmax(axis=1)
        positive = overlaps[np.arange(k), best] >= positive_iou

        labels[positive] = 1
        gt_index[positive] = best[positive]
        if np.any(positive):
            targets[positive] = encode_boxes(boxes[positive], gt_boxes[best[positive]])

    return ProposalSet(
        boxes=boxes,
        objectness=np.asarray(objectness, dtype=np.float64).reshape(-1),
        labels=labels,
        regression_targets=targets,
        gt_index=gt_index,
    )


def sample_rois(
    proposals: ProposalSet,
    gt: Sequence[LabeledBox],
    rois_per_frame: int,
    positive_fraction: float,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw the RoIs used in the detection losses.

    :return: (indices into proposals, class label y per sampled RoI)
    """

    positives = np.flatnonzero(proposals.labels == 1)
    negatives = np.flatnonzero(proposals.labels == 0)

    n_pos = min(len(positives), int(round(rois_per_frame * positive_fraction)))
    n_neg = min(len(negatives), rois_per_frame - n_pos)

    chosen_pos = rng.choice(positives, size=n_pos, replace=False)
    chosen_neg = rng.choice(negatives, size=n_neg, replace=False)
    indices = np.concatenate([chosen_pos, chosen_neg]).astype(np.int64)

    gt_labels = np.array([int(g.label) for g in gt], dtype=np.int64)
    y = np.zeros(len(indices), dtype=np.int64)
    y[:n_pos] = gt_labels[proposals.gt_index[chosen_pos]]

    return indices, y


class ProposalSource(ABC):
    """
    Abstract base class for first-stage proposal generation.
    """

    @abstractmethod
    def propose(
        self,
        fmap: FeatureMap,
        gt: Optional[Sequence[LabeledBox]],
        image_size: Tuple[int, int],
        rng: np.random.Generator,
    ) -> Tuple[ProposalSet, Optional[dict]]:
        """
        Proposals for one frame.

        :param fmap: feature map of the frame
        :param gt: ground truth boxes, None at inference
        :param image_size: (height, width) of the frame
        :param rng: random generator for any sampling
        :return: the proposals and a dict of first-stage loss tensors
            ("rpn_cls", "rpn_reg"), or None when there is nothing to train
        """

        pass


class OracleProposer(ProposalSource):
    """
    Proposals made by jittering the ground truth boxes, plus random negatives.
    """

    def __init__(
        self,
        jitter: float = 0.15,
        copies: int = 4,
        num_proposals: int = 32,
        positive_iou: float = 0.5,
    ):
        """
        Proposals made by jittering the ground truth boxes, plus random negatives.

        :param jitter: each corner moves by up to this fraction of the box size
        :param copies: jittered copies per ground truth box
        :param num_proposals: total proposals K per frame
        :param positive_iou: IoU for a proposal to count as positive
        """

        if not 0.0 <= jitter < 0.5:
            raise ValueError(f"Jitter must lie in [0, 0.5), got {jitter}")

        self.jitter = jitter
        self.copies = copies
        self.num_proposals = num_proposals
        self.positive_iou = positive_iou

    def propose(self, fmap, gt, image_size, rng):

        if not gt:
            raise ValueError("Oracle proposals need ground truth boxes")

        height, width = image_size
        gt_boxes = boxes_to_array(gt)
        sizes = np.stack(
            [gt_boxes[:, 2] - gt_boxes[:, 0], gt_boxes[:, 3] - gt_boxes[:, 1]], axis=1
        )

        jittered = np.repeat(gt_boxes, self.copies, axis=0)
        scale = np.tile(np.repeat(sizes, self.copies, axis=0), 2)
        jittered = jittered + rng.uniform(-self.jitter, self.jitter, jittered.shape) * scale
        jittered = jittered[: self.num_proposals]

        n_random = self.num_proposals - len(jittered)
        w = rng.uniform(0.1, 0.5, n_random) * width
        h = rng.uniform(0.1, 0.5, n_random) * height
        x1 = rng.uniform(0, 1, n_random) * (width - w)
        y1 = rng.uniform(0, 1, n_random) * (height - h)
        random_boxes = np.stack([x1, y1, x1 + w, y1 + h], axis=1)

        boxes = np.concatenate([jittered, random_boxes])
        boxes[:, 0::2] = np.clip(boxes[:, 0::2], 0, width)
        boxes[:, 1::2] = np.clip(boxes[:, 1::2], 0, height)
        valid = (boxes[:, 2] - boxes[:, 0] > 1e-6) & (boxes[:, 3] - boxes[:, 1] > 1e-6)
        boxes = boxes[valid]

        objectness = pairwise_iou(boxes, gt_boxes).max(axis=1)

        return assign_proposals(boxes, objectness, gt, self.positive_iou), None


def rpn_loss(
    logits: torch.Tensor,
    deltas: torch.Tensor,
    p_star: torch.Tensor,
    t_star: torch.Tensor,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    First-stage loss: binary cross-entropy on objectness plus smooth L1 on
    the deltas, the latter gated by p*. Both are normalised by the number
    of sampled anchors.

    :param logits: (N,) objectness logits of the sampled anchors
    :param deltas: (N, 4) predicted deltas
    :param p_star: (N,) anchor labels in {0, 1}
    :param t_star: (N, 4) regression targets
    """

    p_star = p_star.to(logits.dtype)
    l_cls = F.binary_cross_entropy_with_logits(logits, p_star)

    reg = F.smooth_l1_loss(deltas, t_star, reduction="none", beta=1.0).sum(dim=1)
    l_reg = (p_star * reg).sum() / max(len(p_star), 1)

    return l_cls, l_reg


class RegionProposalNetwork(nn.Module, ProposalSource):
    """
    Single-scale RPN on the backbone feature map.
    """

    def __init__(
        self,
        channels: int,
        stride: int,
        anchor_sizes: Sequence[float] = (16.0, 24.0),
        batch_size: int = 64,
        pre_nms: int = 200,
        post_nms: int = 32,
        nms_iou: float = 0.7,
        positive_iou: float = 0.5,
        negative_iou: float = 0.3,
        proposal_positive_iou: float = 0.5,
    ):
        """
        Single-scale RPN on the backbone feature map.

        :param channels: backbone channels
        :param stride: backbone stride
        :param anchor_sizes: square anchor sides in pixels, one anchor per size
            at every feature location
        :param batch_size: anchors sampled for the loss, at most half positive
        :param proposal_positive_iou: IoU labelling the emitted proposals
        """

        super().__init__()

        self.stride = stride
        self.anchor_sizes = tuple(anchor_sizes)
        self.batch_size = batch_size
        self.pre_nms = pre_nms
        self.post_nms = post_nms
        self.nms_iou = nms_iou
        self.positive_iou = positive_iou
        self.negative_iou = negative_iou
        self.proposal_positive_iou = proposal_positive_iou

        a = len(self.anchor_sizes)
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)
        self.objectness = nn.Conv2d(channels, a, 1)
        self.deltas = nn.Conv2d(channels, 4 * a, 1)

    def anchors(self, height: int, width: int) -> np.ndarray:
        """
        (H * W * A, 4) anchors for an H x W feature map.
        """

        cy, cx = np.meshgrid(
            (np.arange(height) + 0.5) * self.stride,
            (np.arange(width) + 0.5) * self.stride,
            indexing="ij",
        )
        half = 0.5 * np.array(self.anchor_sizes)

        x1 = cx[..., None] - half
        y1 = cy[..., None] - half
        x2 = cx[..., None] + half
        y2 = cy[..., None] + half

        return np.stack([x1, y1, x2, y2], axis=-1).reshape(-1, 4)

    def forward(self, features: torch.Tensor):
        """
        :param features: (C, H, W) feature map
        :return: (H * W * A,) logits and (H * W * A, 4) deltas
        """

        hidden = F.relu(self.conv(features[None]))[0]
        a = len(self.anchor_sizes)
        _, h, w = hidden.shape

        logits = self.objectness(hidden[None])[0].permute(1, 2, 0).reshape(-1)
        deltas = self.deltas(hidden[None])[0].reshape(a, 4, h, w)
        deltas = deltas.permute(2, 3, 0, 1).reshape(-1, 4)

        return logits, deltas

    def _label_anchors(self, anchors, gt, rng):
        """
        Sample anchors for the loss, returns (indices, p*, t*).
        """

        gt_boxes = boxes_to_array(gt)
        overlaps = pairwise_iou(anchors, gt_boxes)
        best = overlaps.argmax(axis=1)
        best_iou = overlaps[np.arange(len(anchors)), best]

        labels = np.full(len(anchors), -1, dtype=np.int64)
        labels[best_iou < self.negative_iou] = 0
        labels[best_iou >= self.positive_iou] = 1
        # the best anchor of every ground truth box is positive
        labels[overlaps.argmax(axis=0)] = 1
        best[overlaps.argmax(axis=0)] = np.arange(len(gt_boxes))

        positives = np.flatnonzero(labels == 1)
        negatives = np.flatnonzero(labels == 0)
        n_pos = min(len(positives), self.batch_size // 2)
        n_neg = min(len(negatives), self.batch_size - n_pos)

        indices = np.concatenate(
            [
                rng.choice(positives, size=n_pos, replace=False),
                rng.choice(negatives, size=n_neg, replace=False),
            ]
        ).astype(np.int64)

        p_star = labels[indices]
        t_star = np.zeros((len(indices), 4))
        pos = p_star == 1
        t_star[pos] = encode_boxes(anchors[indices[pos]], gt_boxes[best[indices[pos]]])

        return indices, p_star, t_star

    def propose(self, fmap, gt, image_size, rng):

        logits, deltas = self(fmap.values)
        anchors = self.anchors(fmap.height, fmap.width)

        losses = None
        if gt:
            indices, p_star, t_star = self._label_anchors(anchors, gt, rng)
            index = torch.as_tensor(indices, device=logits.device)
            l_cls, l_reg = rpn_loss(
                logits[index],
                deltas[index],
                torch.as_tensor(p_star, dtype=logits.dtype, device=logits.device),
                torch.as_tensor(t_star, dtype=deltas.dtype, device=deltas.device),
            )
            losses = {"rpn_cls": l_cls, "rpn_reg": l_reg}

        with torch.no_grad():
            scores = torch.sigmoid(logits).cpu().numpy()
            raw = deltas.cpu().numpy()

        order = np.argsort(-scores, kind="stable")[: self.pre_nms]
        boxes = decode_boxes(anchors[order], raw[order], image_size)
        scores = scores[order]

        valid = (boxes[:, 2] - boxes[:, 0] >= 1.0) & (boxes[:, 3] - boxes[:, 1] >= 1.0)
        boxes, scores = boxes[valid], scores[valid]

        keep = batched_nms(boxes, scores, np.zeros(len(boxes)), self.nms_iou)
        keep = keep[: self.post_nms]
        boxes, scores = boxes[keep], scores[keep]

        if gt:
            # ground truth boxes join the proposals during training
            boxes = np.concatenate([boxes, boxes_to_array(gt)])
            scores = np.concatenate([scores, np.ones(len(gt))])

        proposals = assign_proposals(boxes, scores, gt, self.proposal_positive_iou)

        return proposals, losses
