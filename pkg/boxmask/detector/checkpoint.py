import os

import numpy as np
import torch
from torch import nn

__all__ = ["save_checkpoint", "load_checkpoint", "read_manifest", "MANIFEST_SUFFIX"]

"""
Checkpoints are a flat binary file of little-endian float64 arrays with a
plain-text manifest next to it. Each manifest line reads

    <name> <shape> <offset>

with the shape as comma-separated integers (empty for scalars) and the byte
offset of the array in the binary file.
"""

MANIFEST_SUFFIX = ".manifest"

_DTYPE = np.dtype("<f8")


def save_checkpoint(model: nn.Module, path: str):
    """
    Write all parameters and buffers of model to path and path + ".manifest".
    """

    offset = 0
    lines = []

    with open(path, "wb") as f:
        for name, tensor in model.state_dict().items():
            values = tensor.detach().cpu().numpy().astype(_DTYPE)
            shape = ",".join(str(s) for s in values.shape)

            lines.append(f"{name} {shape} {offset}")
            f.write(values.tobytes(order="C"))
            offset += values.nbytes

    with open(path + MANIFEST_SUFFIX, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_manifest(path: str) -> dict:
    """
    Parse the manifest of the checkpoint at path.

    :return: {name: (shape, offset)}
    """

    manifest_file = path + MANIFEST_SUFFIX

    if not os.path.exists(manifest_file):
        raise FileNotFoundError(f"No checkpoint manifest at {manifest_file}")

    entries = {}
    with open(manifest_file, "r") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue

            parts = line.split(" ")
            if len(parts) != 3:
                raise ValueError(f"Malformed manifest line {number} in {manifest_file}")

            name, shape, offset = parts
            shape = tuple(int(s) for s in shape.split(",") if s)
            entries[name] = (shape, int(offset))

    return entries


def load_checkpoint(model: nn.Module, path: str):
    """
    Load a checkpoint written by save_checkpoint into model.

    Every parameter must be present with the same shape.
    """

    if not os.path.exists(path):
        raise FileNotFoundError(f"No checkpoint at {path}")

    entries = read_manifest(path)
    raw = np.fromfile(path, dtype=np.uint8)

    state = model.state_dict()

    unexpected = sorted(set(entries) - set(state))
    if unexpected:
        raise ValueError(
            f"Checkpoint parameter {unexpected[0]} does not exist in the model"
        )

    loaded = {}
    for name, tensor in state.items():
        if name not in entries:
            raise ValueError(f"Checkpoint is missing parameter {name}")

        shape, offset = entries[name]
        if shape != tuple(tensor.shape):
            raise ValueError(
                f"Parameter {name} has shape {shape} in the checkpoint, "
                f"the model expects {tuple(tensor.shape)}"
            )

        count = int(np.prod(shape, dtype=np.int64))
        end = offset + count * _DTYPE.itemsize
        if end > len(raw):
            raise ValueError(f"Checkpoint {path} is truncated at parameter {name}")

        values = np.frombuffer(raw[offset:end].tobytes(), dtype=_DTYPE).reshape(shape)
        loaded[name] = torch.from_numpy(values.astype(np.float64)).to(tensor.dtype)

    model.load_state_dict(loaded)
