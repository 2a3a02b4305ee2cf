from dataclasses import dataclass, field, fields
from typing import Optional, Sequence, Union

import torch
import torch.nn.functional as F

from ..maskgen import LabelMask, boxmask_loss
from .config import DetectorConfig
from .heads import DetectionBatch

__all__ = ["LossReport", "compute_losses", "total_loss", "LOSS_TERMS"]


@dataclass
class LossReport:
    """
    Scalar values of every loss term of one training step.

    The differentiable total is kept in `total` and is not part of
    comparisons or the logged values.
    """

    l_rpn_cls: float = 0.0
    l_rpn_reg: float = 0.0
    l_cls: float = 0.0
    l_reg: float = 0.0
    l_bm: float = 0.0
    l_total: float = 0.0
    total: Optional[torch.Tensor] = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "total"}

    def check_finite(self):
        """
        Raise FloatingPointError naming the first non-finite term.
        """

        values = self.as_dict()
        for name, value in values.items():
            if not torch.isfinite(torch.tensor(value)):
                dump = ", ".join(f"{k}={v}" for k, v in values.items())
                raise FloatingPointError(f"Loss term {name} is not finite ({dump})")


LOSS_TERMS = tuple(f.name for f in fields(LossReport) if f.name != "total")


def _scalar(value) -> float:

    if torch.is_tensor(value):
        return value.detach().item()

    return float(value)


def total_loss(l_cls, l_reg, l_bm, lambda_bm, l_rpn_cls=0.0, l_rpn_reg=0.0):
    """
    Multi-task loss, for floats or tensors alike.
    """

    return l_cls + l_reg + lambda_bm * l_bm + l_rpn_cls + l_rpn_reg


def compute_losses(
    det: DetectionBatch,
    masks: Optional[torch.Tensor],
    targets: Optional[Union[Sequence[LabelMask], torch.Tensor]],
    config: DetectorConfig,
    rpn_losses: Optional[dict] = None,
) -> LossReport:
    """
    Classification, regression and BoxMask losses of one batch of RoIs.

    :param det: detection outputs with labels and regression targets set
    :param masks: (R, L + 1, m, m) mask logits, None when the branch is off
    :param targets: R coarse masks aligned with masks
    :param config: detector configuration, lambda_bm weights the mask loss
    :param rpn_losses: first-stage terms from the RPN, if any
    """

    if len(det) == 0:
        raise ValueError("Cannot compute losses without RoIs")

    if det.labels is None or det.regression_targets is None:
        raise ValueError("Detection batch carries no training targets")

    labels = det.labels.to(det.class_logits.device)
    l_cls = F.cross_entropy(det.class_logits, labels)

    positive = labels > 0
    reg = F.smooth_l1_loss(
        det.deltas[positive], det.regression_targets[positive], reduction="sum", beta=1.0
    )
    l_reg = reg / len(det)

    zero = det.class_logits.new_zeros(())
    l_bm = zero
    if masks is not None:
        if targets is None:
            raise ValueError("Mask logits given without coarse mask targets")

        if not torch.is_tensor(targets):
            targets = torch.stack([torch.as_tensor(t.labels) for t in targets])

        if config.mask_on_positives_only:
            if torch.any(positive):
                l_bm = boxmask_loss(masks[positive], targets[positive.cpu()])
        else:
            l_bm = boxmask_loss(masks, targets)

    l_rpn_cls = zero
    l_rpn_reg = zero
    if rpn_losses is not None:
        l_rpn_cls = rpn_losses["rpn_cls"]
        l_rpn_reg = rpn_losses["rpn_reg"]

    total = total_loss(l_cls, l_reg, l_bm, config.lambda_bm, l_rpn_cls, l_rpn_reg)

    return LossReport(
        l_rpn_cls=_scalar(l_rpn_cls),
        l_rpn_reg=_scalar(l_rpn_reg),
        l_cls=_scalar(l_cls),
        l_reg=_scalar(l_reg),
        l_bm=_scalar(l_bm),
        l_total=_scalar(total),
        total=total,
    )
