import numpy as np
import torch
from torch import nn

from ..features import FeatureMap

__all__ = ["Backbone", "backbone_forward", "frames_to_tensor", "MIN_FRAME_SIZE"]

MIN_FRAME_SIZE = 16


def frames_to_tensor(frames, dtype=torch.float64) -> torch.Tensor:
    """
    Convert (H, W, 3) or (N, H, W, 3) frames in [0, 1] to an (N, 3, H, W) tensor.
    """

    frames = torch.as_tensor(np.asarray(frames), dtype=dtype)

    if frames.ndim == 3:
        frames = frames[None]

    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise ValueError(f"Expected (N, H, W, 3) frames, got {tuple(frames.shape)}")

    return frames.permute(0, 3, 1, 2).contiguous()


class Backbone(nn.Module):
    """
    Four-layer convolutional feature extractor with a total stride of 8.
    """

    stride = 8

    def __init__(self, channels: int = 32):
        """
        Four-layer convolutional feature extractor with a total stride of 8.

        :param channels: output channels
        """

        super().__init__()

        self.channels = channels

        self.layers = nn.Sequential(
            nn.Conv2d(3, channels // 2, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(channels // 2, channels, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, stride=1, padding=1),
            nn.ReLU(),
        )

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """
        :param images: (N, 3, H, W) tensor
        :return: (N, C, H / 8, W / 8) tensor
        """

        height, width = images.shape[-2:]

        if height < MIN_FRAME_SIZE or width < MIN_FRAME_SIZE:
            raise ValueError(
                f"Frames must be at least {MIN_FRAME_SIZE}x{MIN_FRAME_SIZE}, "
                f"got {height}x{width}"
            )

        return self.layers(images)

    def feature_maps(self, frames, frame_indices=None) -> list:
        """
        Run the backbone on (N, H, W, 3) frames and wrap each output.
        """

        param = next(self.parameters())
        images = frames_to_tensor(frames, dtype=param.dtype).to(param.device)
        features = self(images)

        if frame_indices is None:
            frame_indices = range(len(features))

        return [
            FeatureMap(f, stride=self.stride, frame_index=int(i))
            for f, i in zip(features, frame_indices)
        ]


def backbone_forward(backbone: Backbone, frame) -> FeatureMap:
    """
    Feature map of a single (H, W, 3) frame.
    """

    return backbone.feature_maps(np.asarray(frame)[None])[0]
