from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from torchvision.ops import roi_align

from ..geometry import Box, boxes_to_array

__all__ = [
    "FeatureMap",
    "RoIFeatureGrid",
    "extract_roi_features",
    "similarity_map",
    "match_indices",
    "match_support_features",
]

ROI_SOURCES = ("target", "support", "aggregated")


@dataclass
class FeatureMap:
    """
    Backbone output for one frame.

    :param values: (C, H, W) tensor
    :param stride: downscale factor relative to the input frame
    :param frame_index: index of the source frame in its clip
    """

    values: torch.Tensor
    stride: int = 1
    frame_index: Optional[int] = None

    def __post_init__(self):

        if self.values.ndim != 3:
            raise ValueError(
                f"Feature maps are (C, H, W), got {tuple(self.values.shape)}"
            )

        if self.stride < 1:
            raise ValueError(f"Feature stride must be at least 1, got {self.stride}")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass
class RoIFeatureGrid:
    """
    Pooled features for a batch of K RoIs.

    :param values: (K, C, P, P) tensor
    :param source: "target", "support" or "aggregated"
    """

    values: torch.Tensor
    source: str = "target"

    def __post_init__(self):

        if self.values.ndim != 4 or self.values.shape[2] != self.values.shape[3]:
            raise ValueError(
                f"RoI grids are (K, C, P, P), got {tuple(self.values.shape)}"
            )

        if self.source not in ROI_SOURCES:
            raise ValueError(f"RoI grid source {self.source} is not recognised")

    @property
    def num_rois(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def size(self) -> int:
        return self.values.shape[2]


def _as_roi_array(rois) -> np.ndarray:

    if isinstance(rois, Box):
        return rois.as_array()[None]

    if isinstance(rois, np.ndarray):
        return rois.reshape(-1, 4).astype(np.float64)

    return boxes_to_array(rois)


def extract_roi_features(
    fmap: FeatureMap,
    rois: Union[Box, Sequence[Box], np.ndarray],
    roi_size: int = 7,
    up_size: int = 14,
) -> RoIFeatureGrid:
    """
    Bilinear RoIAlign with 2 x 2 samples per bin, optionally followed by
    bilinear upsampling to up_size.

    :param fmap: feature map of one frame
    :param rois: boxes in frame pixel coordinates
    :param roi_size: pooled resolution
    :param up_size: output resolution, at least roi_size
    """

    if roi_size < 1 or up_size < roi_size:
        raise ValueError(
            f"Need 1 <= roi_size <= up_size, got roi_size={roi_size}, up_size={up_size}"
        )

    boxes = _as_roi_array(rois)

    frame_w = fmap.width * fmap.stride
    frame_h = fmap.height * fmap.stride

    outside = (
        (boxes[:, 2] <= 0)
        | (boxes[:, 3] <= 0)
        | (boxes[:, 0] >= frame_w)
        | (boxes[:, 1] >= frame_h)
    )
    if np.any(outside):
        raise ValueError(
            f"RoI {boxes[np.argmax(outside)].tolist()} lies outside the "
            f"{frame_w}x{frame_h} frame"
        )

    boxes = boxes.copy()
    boxes[:, 0::2] = np.clip(boxes[:, 0::2], 0, frame_w)
    boxes[:, 1::2] = np.clip(boxes[:, 1::2], 0, frame_h)

    values = fmap.values
    box_tensor = torch.as_tensor(boxes, dtype=values.dtype, device=values.device)

    pooled = roi_align(
        values[None],
        [box_tensor],
        output_size=roi_size,
        spatial_scale=1.0 / fmap.stride,
        sampling_ratio=2,
        aligned=True,
    )

    if up_size != roi_size:
        pooled = F.interpolate(
            pooled, size=(up_size, up_size), mode="bilinear", align_corners=False
        )

    return RoIFeatureGrid(pooled, source="target")


def similarity_map(target: RoIFeatureGrid, support: FeatureMap) -> torch.Tensor:
    """
    Cosine similarity between every target bin and every support position.

    Zero vectors have similarity 0 with everything.

    :return: (K, P * P, H, W) tensor with values in [-1, 1]
    """

    if target.channels != support.channels:
        raise ValueError(
            f"Channel mismatch: target RoIs have {target.channels}, "
            f"support map has {support.channels}"
        )

    k, c, p, _ = target.values.shape

    queries = F.normalize(target.values.flatten(2).transpose(1, 2), dim=-1)
    keys = F.normalize(support.values.flatten(1), dim=0)

    sim = queries @ keys

    return sim.reshape(k, p * p, support.height, support.width)


def match_indices(target: RoIFeatureGrid, support: FeatureMap) -> torch.Tensor:
    """
    (K, P * P) flattened support position of the most similar feature vector
    for every target bin. Ties go to the lowest index.
    """

    with torch.no_grad():
        sim = similarity_map(target, support)

    return sim.flatten(2).argmax(dim=-1)


def match_support_features(
    target: RoIFeatureGrid,
    support: FeatureMap,
    indices: Optional[torch.Tensor] = None,
) -> RoIFeatureGrid:
    """
    For each target bin take the support feature vector with the highest
    cosine similarity, giving a pseudo-RoI from the support frame.

    :param indices: precomputed match_indices, the matching is recomputed
        when None
    """

    if target.channels != support.channels:
        raise ValueError(
            f"Channel mismatch: target RoIs have {target.channels}, "
            f"support map has {support.channels}"
        )

    k, c, p, _ = target.values.shape

    best = match_indices(target, support) if indices is None else indices
    if best.shape != (k, p * p):
        raise ValueError(
            f"Expected match indices of shape {(k, p * p)}, got {tuple(best.shape)}"
        )

    support_flat = support.values.flatten(1)
    matched = support_flat[:, best.reshape(-1)]
    matched = matched.reshape(c, k, p, p).transpose(0, 1)

    return RoIFeatureGrid(matched, source="support")
