from dataclasses import dataclass
from typing import Tuple

__all__ = ["DetectorConfig", "PROPOSAL_MODES"]

PROPOSAL_MODES = ("oracle_jitter", "learned_rpn")


@dataclass
class DetectorConfig:
    """
    Architecture, loss and optimizer settings of the detector.

    :param num_classes: object classes L, background excluded
    :param lambda_bm: weight of the BoxMask loss in the total loss
    :param mask_resolution: m, side of the predicted mask (2 * up_size)
    :param n_conv: number of 3x3 convolutions in the BoxMask head
    :param roi_size: RoIAlign output resolution
    :param up_size: resolution the RoI features are upsampled to
    :param proposal_mode: "oracle_jitter" or "learned_rpn"
    :param boxmask_enabled: train the BoxMask head
    :param mask_on_positives_only: restrict the BoxMask loss to positive RoIs
    """

    num_classes: int = 3
    lambda_bm: float = 0.5
    mask_resolution: int = 28
    n_conv: int = 1
    roi_size: int = 7
    up_size: int = 14
    proposal_mode: str = "oracle_jitter"
    boxmask_enabled: bool = True
    mask_on_positives_only: bool = False

    # network widths
    backbone_channels: int = 32
    mask_hidden: int = 64
    fc_hidden: int = 128
    num_heads: int = 2
    init_scale: float = 1.0

    # proposals and RoI sampling
    num_proposals: int = 32
    jitter: float = 0.15
    jitter_copies: int = 4
    rois_per_frame: int = 32
    positive_fraction: float = 0.25
    positive_iou: float = 0.5
    rpn_anchor_sizes: Tuple[float, ...] = (16.0, 24.0)
    rpn_batch_size: int = 64
    rpn_pre_nms: int = 200
    rpn_post_nms: int = 32
    rpn_nms_iou: float = 0.7
    rpn_positive_iou: float = 0.5
    rpn_negative_iou: float = 0.3

    # optimizer
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    lr_decay_factor: float = 0.1

    # inference
    nms_iou: float = 0.5
    score_thresh: float = 0.05
    max_detections: int = 100

    def __post_init__(self):

        if self.num_classes < 1:
            raise ValueError(f"Need at least one class, got {self.num_classes}")

        if self.lambda_bm < 0:
            raise ValueError(f"lambda_bm must be non-negative, got {self.lambda_bm}")

        if self.mask_resolution % 2 != 0:
            raise ValueError(
                f"Mask resolution must be even, got {self.mask_resolution}"
            )

        if self.mask_resolution != 2 * self.up_size:
            raise ValueError(
                f"Mask resolution {self.mask_resolution} must be twice "
                f"up_size {self.up_size}"
            )

        if self.n_conv < 1:
            raise ValueError(f"n_conv must be at least 1, got {self.n_conv}")

        if self.roi_size < 1 or self.up_size < self.roi_size:
            raise ValueError(
                f"Need 1 <= roi_size <= up_size, got {self.roi_size}, {self.up_size}"
            )

        if self.proposal_mode not in PROPOSAL_MODES:
            raise ValueError(f"Proposal mode {self.proposal_mode} is not recognised")

        if self.backbone_channels % self.num_heads != 0:
            raise ValueError(
                f"{self.backbone_channels} backbone channels cannot be split "
                f"over {self.num_heads} attention heads"
            )

        if not 0.0 < self.nms_iou <= 1.0:
            raise ValueError(f"nms_iou must lie in (0, 1], got {self.nms_iou}")

        if not 0.0 < self.positive_fraction <= 1.0:
            raise ValueError(
                f"positive_fraction must lie in (0, 1], got {self.positive_fraction}"
            )

        self.rpn_anchor_sizes = tuple(float(s) for s in self.rpn_anchor_sizes)

    @property
    def num_outputs(self) -> int:
        """
        Classes including background.
        """
        return self.num_classes + 1
