from typing import Sequence

import torch
from torch import nn

from .roi_align import RoIFeatureGrid

__all__ = ["TemporalAttentionAggregator", "msa_aggregate"]


class TemporalAttentionAggregator(nn.Module):
    """
    Multi-head attention over target and matched support RoI features.
    """

    def __init__(self, channels: int, num_heads: int = 2):
        """
        Multi-head attention over target and matched support RoI features.

        Attention runs independently for every spatial bin: the query is the
        target bin vector, keys and values are the target bin followed by the
        same bin of every matched support grid. No positional encoding is
        used, so the result does not depend on the order of the supports.

        :param channels: feature channels C, divisible by num_heads
        :param num_heads: number of attention heads
        """

        super().__init__()

        if channels % num_heads != 0:
            raise ValueError(
                f"{channels} channels cannot be split over {num_heads} heads"
            )

        self.channels = channels
        self.num_heads = num_heads

        self.attention = nn.MultiheadAttention(
            channels, num_heads, dropout=0.0, batch_first=True
        )

    def forward(self, target: torch.Tensor, matched: Sequence[torch.Tensor]):
        """
        :param target: (K, C, P, P) target RoI features
        :param matched: (K, C, P, P) matched features, one per support frame
        :return: (K, C, P, P) target plus attended features
        """

        k, c, p, _ = target.shape

        if c != self.channels:
            raise ValueError(
                f"Aggregator expects {self.channels} channels, target has {c}"
            )

        for grid in matched:
            if grid.shape != target.shape:
                raise ValueError(
                    f"Support grid {tuple(grid.shape)} does not match "
                    f"target grid {tuple(target.shape)}"
                )

        tokens = torch.stack([target, *matched], dim=1)
        tokens = tokens.permute(0, 3, 4, 1, 2).reshape(k * p * p, len(matched) + 1, c)
        queries = tokens[:, :1]

        attended, _ = self.attention(queries, tokens, tokens, need_weights=False)
        attended = attended.reshape(k, p, p, c).permute(0, 3, 1, 2)

        return target + attended


def msa_aggregate(
    target: RoIFeatureGrid,
    matched: Sequence[RoIFeatureGrid],
    aggregator: TemporalAttentionAggregator,
) -> RoIFeatureGrid:
    """
    Temporal RoI features for the target frame.

    :param target: target frame RoI features
    :param matched: matched support RoI features, may be empty
    :param aggregator: the attention module holding the projections
    """

    for grid in matched:
        if grid.channels != target.channels:
            raise ValueError(
                f"Channel mismatch: target {target.channels}, support {grid.channels}"
            )

    out = aggregator(target.values, [grid.values for grid in matched])

    return RoIFeatureGrid(out, source="aggregated")
