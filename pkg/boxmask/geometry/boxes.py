from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

"""
Axis-aligned box arithmetic shared by proposal generation, the detection
head and the evaluator.

Boxes are continuous (x1, y1, x2, y2) pixel coordinates. A box covers the
half-open region x1 <= x < x2, y1 <= y < y2, which is the convention used
whenever a box is rasterized.

Box deltas follow the usual two-stage detector parameterization:
  dx = (gx - px) / pw
  dy = (gy - py) / ph
  dw = log(gw / pw)
  dh = log(gh / ph)
where (px, py, pw, ph) are the proposal centre and size.
"""

__all__ = [
    "Box",
    "LabeledBox",
    "ScoredBox",
    "BoxDelta",
    "BBOX_XFORM_CLIP",
    "iou",
    "pairwise_iou",
    "nms",
    "batched_nms",
    "encode",
    "decode",
    "encode_boxes",
    "decode_boxes",
    "boxes_to_array",
]

# upper bound on dw, dh before exponentiation
BBOX_XFORM_CLIP = float(np.log(1000.0 / 16))


@dataclass(frozen=True)
class Box:
    """
    Axis-aligned box in continuous pixel coordinates.

    Corners may coincide. Such degenerate boxes come out of clipping and are
    rejected by iou, rasterization, LabeledBox and ScoredBox.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):

        coords = (self.x1, self.y1, self.x2, self.y2)

        if not np.all(np.isfinite(coords)):
            raise ValueError(f"Box coordinates must be finite, got {coords}")

        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"Box corners are inverted: {coords}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return 0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2)

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "Box":
        x1, y1, x2, y2 = (float(v) for v in values)
        return cls(x1, y1, x2, y2)

    def contains(self, x, y):
        """
        Half-open point membership, works elementwise on arrays.
        """

        return (x >= self.x1) & (x < self.x2) & (y >= self.y1) & (y < self.y2)

    def intersection(self, other: "Box") -> Optional["Box"]:
        """
        Overlap of two boxes, None when they do not overlap.
        """

        x1 = max(self.x1, other.x1)
        y1 = max(self.y1, other.y1)
        x2 = min(self.x2, other.x2)
        y2 = min(self.y2, other.y2)

        if x2 <= x1 or y2 <= y1:
            return None

        return Box(x1, y1, x2, y2)

    def clip(self, width: float, height: float) -> "Box":
        """
        Clip to the frame [0, width] x [0, height].
        """

        x1 = min(max(self.x1, 0.0), width)
        y1 = min(max(self.y1, 0.0), height)
        x2 = min(max(self.x2, 0.0), width)
        y2 = min(max(self.y2, 0.0), height)

        return Box(x1, y1, x2, y2)


@dataclass(frozen=True)
class LabeledBox:
    """
    A ground truth box with its class label, label 0 is reserved for background.
    """

    box: Box
    label: int

    def __post_init__(self):

        if int(self.label) < 1:
            raise ValueError(f"Object labels start at 1, got {self.label}")

        if self.box.area <= 0:
            raise ValueError(f"Annotated boxes need a positive area, got {self.box}")


@dataclass(frozen=True)
class ScoredBox:
    """
    A detection: box, confidence and predicted class.
    """

    box: Box
    score: float
    label: int

    def __post_init__(self):

        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"Detection score must lie in [0, 1], got {self.score}")

        if self.box.area <= 0:
            raise ValueError(f"Detections need a positive area, got {self.box}")


@dataclass(frozen=True)
class BoxDelta:
    """
    Centre offset and log-scale regression target.
    """

    dx: float
    dy: float
    dw: float
    dh: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dw, self.dh], dtype=np.float64)


def boxes_to_array(boxes: Sequence) -> np.ndarray:
    """
    Stack Box, LabeledBox or ScoredBox objects into an (N, 4) array.
    """

    rows = [b.box.as_array() if hasattr(b, "box") else b.as_array() for b in boxes]

    if not rows:
        return np.zeros((0, 4), dtype=np.float64)

    return np.stack(rows)


def iou(a: Box, b: Box) -> float:
    """
    Intersection over union of two boxes.

    :param a: first box
    :param b: second box
    :return: overlap ratio in [0, 1]
    """

    for box in (a, b):
        if box.area <= 0:
            raise ValueError(f"IoU is undefined for the degenerate box {box}")

    if a == b:
        return 1.0

    overlap = a.intersection(b)

    if overlap is None:
        return 0.0

    inter = overlap.area

    return inter / (a.area + b.area - inter)


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    IoU matrix between two (N, 4) and (M, 4) box arrays.
    Degenerate boxes give zero overlap here.
    """

    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)

    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])

    x1 = np.maximum(a[:, None, 0], b[None, :, 0])
    y1 = np.maximum(a[:, None, 1], b[None, :, 1])
    x2 = np.minimum(a[:, None, 2], b[None, :, 2])
    y2 = np.minimum(a[:, None, 3], b[None, :, 3])

    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    union = area_a[:, None] + area_b[None, :] - inter

    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)

    return out


def _greedy_nms(boxes: np.ndarray, scores: np.ndarray, iou_thresh: float) -> list:
    """
    Greedy suppression over a single class, returns indices into boxes.
    """

    # descending score, ties broken by the lower index
    order = np.lexsort((np.arange(len(scores)), -scores))
    overlaps = pairwise_iou(boxes, boxes)

    keep = []
    while order.size > 0:
        i = order[0]
        keep.append(int(i))
        order = order[1:][overlaps[i, order[1:]] <= iou_thresh]

    return keep


def batched_nms(
    boxes: np.ndarray, scores: np.ndarray, labels: np.ndarray, iou_thresh: float
) -> np.ndarray:
    """
    Class-wise greedy non-maximum suppression on arrays.

    :param boxes: (N, 4) array
    :param scores: (N,) array
    :param labels: (N,) integer class per box
    :param iou_thresh: boxes overlapping a kept box by more than this are dropped
    :return: kept indices ordered by descending score (ties by index)
    """

    if not 0.0 < iou_thresh <= 1.0:
        raise ValueError(f"iou_thresh must lie in (0, 1], got {iou_thresh}")

    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)

    if len(scores) == 0:
        return np.zeros(0, dtype=np.int64)

    keep = []
    for label in np.unique(labels):
        idx = np.flatnonzero(labels == label)
        keep.extend(idx[_greedy_nms(boxes[idx], scores[idx], iou_thresh)])

    keep = np.array(keep, dtype=np.int64)

    return keep[np.lexsort((keep, -scores[keep]))]


def nms(dets: Sequence[ScoredBox], iou_thresh: float) -> list:
    """
    Class-wise greedy non-maximum suppression.

    :param dets: detections
    :param iou_thresh: suppression threshold in (0, 1]
    :return: list of kept indices into dets
    """

    boxes = boxes_to_array(dets)
    scores = np.array([d.score for d in dets], dtype=np.float64)
    labels = np.array([d.label for d in dets], dtype=np.int64)

    return batched_nms(boxes, scores, labels, iou_thresh).tolist()


def encode_boxes(proposals: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """
    Regression targets mapping proposals onto targets, both (N, 4).
    """

    proposals = np.asarray(proposals, dtype=np.float64).reshape(-1, 4)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 4)

    pw = proposals[:, 2] - proposals[:, 0]
    ph = proposals[:, 3] - proposals[:, 1]
    px = proposals[:, 0] + 0.5 * pw
    py = proposals[:, 1] + 0.5 * ph

    gw = targets[:, 2] - targets[:, 0]
    gh = targets[:, 3] - targets[:, 1]
    gx = targets[:, 0] + 0.5 * gw
    gy = targets[:, 1] + 0.5 * gh

    if np.any(pw <= 0) or np.any(ph <= 0) or np.any(gw <= 0) or np.any(gh <= 0):
        raise ValueError("Cannot encode degenerate boxes")

    return np.stack(
        [(gx - px) / pw, (gy - py) / ph, np.log(gw / pw), np.log(gh / ph)], axis=1
    )


def decode_boxes(
    proposals: np.ndarray,
    deltas: np.ndarray,
    image_size: Optional[Tuple[int, int]] = None,
) -> np.ndarray:
    """
    Apply (N, 4) deltas to (N, 4) proposals.

    :param image_size: (height, width), clip the result to the frame if given
    """

    proposals = np.asarray(proposals, dtype=np.float64).reshape(-1, 4)
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)

    if not np.all(np.isfinite(deltas)):
        raise ValueError("Box deltas must be finite")

    pw = proposals[:, 2] - proposals[:, 0]
    ph = proposals[:, 3] - proposals[:, 1]
    px = proposals[:, 0] + 0.5 * pw
    py = proposals[:, 1] + 0.5 * ph

    dw = np.minimum(deltas[:, 2], BBOX_XFORM_CLIP)
    dh = np.minimum(deltas[:, 3], BBOX_XFORM_CLIP)

    cx = px + deltas[:, 0] * pw
    cy = py + deltas[:, 1] * ph
    w = pw * np.exp(dw)
    h = ph * np.exp(dh)

    out = np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)

    if image_size is not None:
        height, width = image_size
        out[:, 0::2] = np.clip(out[:, 0::2], 0, width)
        out[:, 1::2] = np.clip(out[:, 1::2], 0, height)

    return out


def encode(proposal: Box, gt: Box) -> BoxDelta:
    """
    Regression target turning proposal into gt.
    """

    return BoxDelta(*encode_boxes(proposal.as_array(), gt.as_array())[0])


def decode(
    proposal: Box, delta: BoxDelta, image_size: Optional[Tuple[int, int]] = None
) -> Box:
    """
    Apply a delta to a proposal.

    :param image_size: (height, width) to clip to, no clipping if None
    """

    out = decode_boxes(proposal.as_array(), delta.as_array(), image_size)

    return Box.from_array(out[0])
