import numpy as np
import torch

__all__ = ["set_deterministic", "derive_seed", "SPLITS"]

SPLITS = ("train", "val")


def set_deterministic(seed: int):
    """
    Seed torch and ask it for deterministic kernels.
    """

    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def derive_seed(seed: int, *keys) -> int:
    """
    A 32 bit seed derived from a master seed and integer or string keys,
    e.g. derive_seed(7, "train", 3) for the fourth training clip.
    """

    entropy = [int(seed)]
    for key in keys:
        if isinstance(key, str):
            entropy.extend(key.encode())
        else:
            entropy.append(int(key))

    return int(np.random.SeedSequence(entropy).generate_state(1)[0])
