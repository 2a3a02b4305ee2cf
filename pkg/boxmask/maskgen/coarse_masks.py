from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F

from ..geometry import Box, LabeledBox

"""
Coarse class masks generated from box annotations, and the pixel-wise
cross-entropy used to supervise the BoxMask head.

All pixels inside a box take the box's class. Where boxes overlap the
smaller box is in front. Pixels outside every box are background (0).
A cell belongs to a box when the cell centre lies inside the box.

The loss is normalised by the number of RoIs times the number of mask
cells (m * m), i.e. it is the mean cross-entropy over every cell.
"""

__all__ = ["LabelMask", "rasterize_label_map", "build_roi_targets", "boxmask_loss"]


@dataclass
class LabelMask:
    """
    An m x m grid of class labels in [0, num_classes].
    """

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):

        self.labels = np.asarray(self.labels, dtype=np.int64)

        if self.labels.ndim != 2 or self.labels.shape[0] != self.labels.shape[1]:
            raise ValueError(f"Label masks are square grids, got {self.labels.shape}")

        if self.labels.shape[0] < 1:
            raise ValueError("Label masks need a resolution of at least 1")

        if self.labels.min() < 0 or self.labels.max() > self.num_classes:
            raise ValueError(
                f"Mask labels must lie in [0, {self.num_classes}], "
                f"got [{self.labels.min()}, {self.labels.max()}]"
            )

    @property
    def resolution(self) -> int:
        return self.labels.shape[0]


def _cell_centers(region: Box, m: int):
    """
    x and y coordinates of the m x m cell centres covering region.
    """

    xs = region.x1 + (np.arange(m) + 0.5) * region.width / m
    ys = region.y1 + (np.arange(m) + 0.5) * region.height / m

    return np.meshgrid(xs, ys)


def rasterize_label_map(
    boxes: Sequence[LabeledBox],
    region: Box,
    m: int,
    num_classes: Optional[int] = None,
    areas: Optional[Sequence[float]] = None,
) -> LabelMask:
    """
    Rasterize labeled boxes onto an m x m grid covering region.

    :param boxes: annotations, labels in [1, num_classes]
    :param region: the area divided into cells
    :param m: grid resolution
    :param num_classes: class count L, defaults to the largest label present
    :param areas: sizes deciding which box is in front, the box areas if None
    """

    if m < 1:
        raise ValueError(f"Mask resolution must be positive, got {m}")

    if region.area <= 0:
        raise ValueError(f"Cannot rasterize onto the degenerate region {region}")

    if num_classes is None:
        num_classes = max([int(b.label) for b in boxes], default=0)

    if areas is None:
        areas = [b.box.area for b in boxes]
    elif len(areas) != len(boxes):
        raise ValueError(f"{len(areas)} areas given for {len(boxes)} boxes")

    labels = np.zeros((m, m), dtype=np.int64)
    xx, yy = _cell_centers(region, m)

    # paint largest first so smaller boxes end up in front,
    # among equal areas the earlier annotation is painted last
    order = sorted(range(len(boxes)), key=lambda i: (-areas[i], -i))

    for i in order:
        labels[boxes[i].box.contains(xx, yy)] = boxes[i].label

    return LabelMask(labels, num_classes)


def build_roi_targets(
    rois: Sequence[Box],
    gt: Sequence[LabeledBox],
    m: int,
    num_classes: Optional[int] = None,
) -> list:
    """
    One coarse mask per RoI, with the RoI as the rasterized region.

    Ground truth boxes are intersected with each RoI for membership, while
    the front-to-back order follows their full areas.
    """

    if num_classes is None:
        num_classes = max([int(b.label) for b in gt], default=0)

    targets = []
    for roi in rois:
        clipped = []
        areas = []
        for g in gt:
            overlap = roi.intersection(g.box)
            if overlap is not None:
                clipped.append(LabeledBox(overlap, g.label))
                areas.append(g.box.area)

        targets.append(rasterize_label_map(clipped, roi, m, num_classes, areas))

    return targets


def boxmask_loss(
    logits: torch.Tensor, targets: Union[Sequence[LabelMask], torch.Tensor]
) -> torch.Tensor:
    """
    Mean per-cell softmax cross-entropy between mask logits and coarse masks.

    :param logits: (R, L + 1, m, m) mask logits
    :param targets: R label masks, or an (R, m, m) integer tensor
    :return: scalar loss, differentiable w.r.t. logits
    """

    if not torch.is_tensor(targets):
        if len(targets) == 0:
            raise ValueError("The BoxMask loss needs at least one RoI")
        targets = torch.from_numpy(np.stack([t.labels for t in targets]))

    targets = targets.to(device=logits.device, dtype=torch.long)

    if logits.ndim != 4 or targets.ndim != 3:
        raise ValueError(
            f"Expected (R, C, m, m) logits and (R, m, m) targets, "
            f"got {tuple(logits.shape)} and {tuple(targets.shape)}"
        )

    if logits.shape[0] == 0:
        raise ValueError("The BoxMask loss needs at least one RoI")

    if logits.shape[0] != targets.shape[0] or logits.shape[2:] != targets.shape[1:]:
        raise ValueError(
            f"Mask logits {tuple(logits.shape)} do not match "
            f"targets {tuple(targets.shape)}"
        )

    if targets.max() >= logits.shape[1]:
        raise ValueError(
            f"Target label {int(targets.max())} exceeds the "
            f"{logits.shape[1]} predicted classes"
        )

    return F.cross_entropy(logits, targets, reduction="mean")
