from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from ..features import RoIFeatureGrid
from .config import DetectorConfig

__all__ = ["DetectionBatch", "DetectionHead", "BoxMaskHead", "heads_forward"]


@dataclass
class DetectionBatch:
    """
    Second-stage outputs for a batch of RoIs.

    :param class_logits: (R, L + 1) unnormalised class scores
    :param deltas: (R, 4) class-agnostic box deltas
    :param labels: (R,) target label y in [0, L], None at inference
    :param regression_targets: (R, 4) t*, None at inference
    """

    class_logits: torch.Tensor
    deltas: torch.Tensor
    labels: Optional[torch.Tensor] = None
    regression_targets: Optional[torch.Tensor] = None

    def __post_init__(self):

        if not torch.all(torch.isfinite(self.class_logits)):
            raise FloatingPointError("Detection head produced non-finite scores")

        if self.labels is not None:
            if len(self.labels) != len(self.class_logits):
                raise ValueError(
                    f"{len(self.labels)} labels for {len(self.class_logits)} RoIs"
                )
            if len(self.labels) and (
                self.labels.min() < 0 or self.labels.max() >= self.class_logits.shape[1]
            ):
                raise ValueError("RoI labels must lie in [0, L]")

    def __len__(self):
        return len(self.class_logits)

    @property
    def scores(self) -> torch.Tensor:
        """
        Class probabilities p_c.
        """
        return F.softmax(self.class_logits, dim=1)


class DetectionHead(nn.Module):
    """
    Average pool, two fully connected layers, then class scores and
    class-agnostic box deltas.
    """

    def __init__(self, channels: int, hidden: int, num_outputs: int):

        super().__init__()

        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, hidden)
        self.cls_score = nn.Linear(hidden, num_outputs)
        self.bbox_pred = nn.Linear(hidden, 4)

    def forward(self, features: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        :param features: (R, C, P, P) RoI features
        :return: (R, L + 1) logits, (R, 4) deltas
        """

        x = features.mean(dim=(2, 3))
        x = F.relu(self.fc1(x))
        x = F.relu(self.fc2(x))

        return self.cls_score(x), self.bbox_pred(x)


class BoxMaskHead(nn.Module):
    """
    Per-pixel class prediction for every RoI, trained on coarse box masks.
    """

    def __init__(self, channels: int, hidden: int, n_conv: int, num_outputs: int):
        """
        Per-pixel class prediction for every RoI, trained on coarse box masks.

        n_conv 3x3 convolutions with ReLU, a 2x2 stride 2 deconvolution and a
        1x1 convolution to num_outputs channels. The output side is twice the
        input side.

        :param channels: input RoI feature channels
        :param hidden: width of the convolution stack
        :param n_conv: number of 3x3 convolutions
        :param num_outputs: classes including background
        """

        super().__init__()

        if n_conv < 1:
            raise ValueError(f"n_conv must be at least 1, got {n_conv}")

        layers = []
        in_channels = channels
        for _ in range(n_conv):
            layers += [nn.Conv2d(in_channels, hidden, 3, padding=1), nn.ReLU()]
            in_channels = hidden

        self.convs = nn.Sequential(*layers)
        self.deconv = nn.ConvTranspose2d(hidden, hidden, 2, stride=2)
        self.predictor = nn.Conv2d(hidden, num_outputs, 1)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        """
        :param features: (R, C, P, P) RoI features
        :return: (R, L + 1, 2P, 2P) mask logits
        """

        x = self.convs(features)
        x = F.relu(self.deconv(x))

        return self.predictor(x)


def heads_forward(
    aggregated: Sequence[RoIFeatureGrid],
    detection_head: DetectionHead,
    mask_head: Optional[BoxMaskHead],
    config: DetectorConfig,
) -> Tuple[DetectionBatch, Optional[torch.Tensor]]:
    """
    Run both second-stage branches on the aggregated RoI features.

    The mask branch is skipped when config.boxmask_enabled is off or no
    mask head is given; the detection branch never depends on it.

    :param aggregated: temporal RoI features, one grid per frame
    :return: detection outputs and (R, L + 1, m, m) mask logits or None
    """

    if len(aggregated) == 0:
        raise ValueError("heads_forward needs at least one RoI grid")

    for grid in aggregated:
        if grid.size != config.up_size:
            raise ValueError(
                f"RoI grid resolution {grid.size} does not match "
                f"up_size {config.up_size}"
            )

    features = torch.cat([grid.values for grid in aggregated])

    logits, deltas = detection_head(features)
    det = DetectionBatch(logits, deltas)

    masks = None
    if config.boxmask_enabled and mask_head is not None:
        masks = mask_head(features)

        if masks.shape[-1] != config.mask_resolution:
            raise ValueError(
                f"Mask logits of side {masks.shape[-1]} do not match "
                f"mask resolution {config.mask_resolution}"
            )

    return det, masks
