from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

__all__ = ["SamplingPlan", "SAMPLING_MODES", "sample_support"]

SAMPLING_MODES = ("uniform", "strided")


@dataclass
class SamplingPlan:
    """
    How support frames are chosen for a target frame.

    :param mode: "uniform" spans the whole video, "strided" walks
        outwards from the target
    :param T: number of support frames at inference
    :param S: stride between strided support frames
    :param train_support: random support frames per training step
    """

    mode: str = "uniform"
    T: int = 14
    S: int = 1
    train_support: int = 2

    def __post_init__(self):

        if self.mode not in SAMPLING_MODES:
            raise ValueError(f"Sampling mode {self.mode} is not recognised")

        if self.T < 0:
            raise ValueError(f"T must be non-negative, got {self.T}")

        if self.S < 1:
            raise ValueError(f"S must be at least 1, got {self.S}")

        if self.train_support < 0:
            raise ValueError(
                f"train_support must be non-negative, got {self.train_support}"
            )


def _uniform(video_len: int, T: int) -> np.ndarray:

    if T == 1:
        return np.zeros(1, dtype=np.int64)

    k = np.arange(T)

    # round half up
    return np.floor(k * (video_len - 1) / (T - 1) + 0.5).astype(np.int64)


def _strided(video_len: int, target: int, T: int, S: int) -> np.ndarray:

    n_left = T // 2
    n_right = T - n_left

    left = target - S * np.arange(n_left, 0, -1)
    right = target + S * np.arange(1, n_right + 1)

    return np.clip(np.concatenate([left, right]), 0, video_len - 1).astype(np.int64)


def sample_support(
    video_len: int,
    target: int,
    plan: SamplingPlan,
    seed: Optional[Union[int, np.random.Generator]] = None,
    training: bool = False,
) -> list:
    """
    Support frame indices for one target frame.

    Indices are clamped into the video, so frames near the boundaries
    are replicated. Duplicates are kept and the target itself may appear.

    :param video_len: number of frames in the video
    :param target: index of the target frame
    :param plan: the sampling strategy
    :param seed: seed or generator, used in training mode only
    :param training: draw plan.train_support random frames instead
    :return: list of frame indices
    """

    if video_len < 1:
        raise ValueError(f"Video length must be positive, got {video_len}")

    if not 0 <= target < video_len:
        raise ValueError(f"Target {target} is outside a video of {video_len} frames")

    if training:
        rng = np.random.default_rng(seed)
        indices = rng.integers(0, video_len, size=plan.train_support)

    elif plan.T == 0:
        indices = np.zeros(0, dtype=np.int64)

    elif plan.mode == "uniform":
        indices = _uniform(video_len, plan.T)

    else:
        indices = _strided(video_len, target, plan.T, plan.S)

    return [int(i) for i in indices]
