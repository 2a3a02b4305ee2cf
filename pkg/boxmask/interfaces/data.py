import json
import os
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from ..geometry import Box, LabeledBox
from .synthvid import ClassDefinition, VideoClip

__all__ = [
    "VideoDataset",
    "write_clip",
    "read_clip",
    "dataset_roundtrip",
    "MANIFEST_FILE",
    "SVID_MAGIC",
    "SVID_VERSION",
]

"""
On-disk layout of a dataset directory:

    manifest.json        clip ids, shapes, seeds and the class table
    <clip_id>.svid       header followed by little-endian float32 frames
    <clip_id>.json       frame index -> list of [x1, y1, x2, y2, label]

The .svid header is the magic b"SVID" followed by four little-endian
uint32 values: format version, height, width and clip length.
"""

MANIFEST_FILE = "manifest.json"
SVID_MAGIC = b"SVID"
SVID_VERSION = 1

_HEADER = np.dtype(
    [
        ("magic", "S4"),
        ("version", "<u4"),
        ("height", "<u4"),
        ("width", "<u4"),
        ("length", "<u4"),
    ]
)
_FRAME_DTYPE = np.dtype("<f4")


def write_clip(clip: VideoClip, path: str):
    """
    Write the frames and annotations of clip into the directory path.
    """

    header = np.zeros(1, dtype=_HEADER)
    header["magic"] = SVID_MAGIC
    header["version"] = SVID_VERSION
    header["height"] = clip.height
    header["width"] = clip.width
    header["length"] = len(clip)

    with open(os.path.join(path, f"{clip.clip_id}.svid"), "wb") as f:
        f.write(header.tobytes())
        f.write(np.ascontiguousarray(clip.frames, dtype=_FRAME_DTYPE).tobytes())

    annotations = {
        str(t): [[*box.box.as_array().tolist(), int(box.label)] for box in boxes]
        for t, boxes in enumerate(clip.annotations)
    }

    with open(os.path.join(path, f"{clip.clip_id}.json"), "w") as f:
        json.dump(annotations, f, indent=1)


def read_clip(path: str, clip_id: str, seed: Optional[int] = None) -> VideoClip:
    """
    Read one clip written by write_clip.

    Errors name the clip whose files are missing, corrupt or truncated.
    """

    frame_file = os.path.join(path, f"{clip_id}.svid")
    annotation_file = os.path.join(path, f"{clip_id}.json")

    for filename in (frame_file, annotation_file):
        if not os.path.exists(filename):
            raise FileNotFoundError(f"Clip {clip_id}: missing file {filename}")

    raw = np.fromfile(frame_file, dtype=np.uint8)

    if len(raw) < _HEADER.itemsize:
        raise ValueError(f"Clip {clip_id}: corrupt header in {frame_file}")

    header = np.frombuffer(raw[: _HEADER.itemsize].tobytes(), dtype=_HEADER)[0]

    if header["magic"] != SVID_MAGIC:
        raise ValueError(f"Clip {clip_id}: corrupt header, bad magic {header['magic']!r}")

    if header["version"] != SVID_VERSION:
        raise ValueError(
            f"Clip {clip_id}: format version {header['version']} is not recognised"
        )

    shape = (int(header["length"]), int(header["height"]), int(header["width"]), 3)
    expected = int(np.prod(shape)) * _FRAME_DTYPE.itemsize
    data = raw[_HEADER.itemsize :]

    if len(data) != expected:
        raise ValueError(
            f"Clip {clip_id}: truncated frame data, expected {expected} bytes "
            f"and found {len(data)}"
        )

    frames = np.frombuffer(data.tobytes(), dtype=_FRAME_DTYPE).reshape(shape)
    frames = frames.astype(np.float32)

    try:
        with open(annotation_file, "r") as f:
            entries = json.load(f)
    except json.JSONDecodeError as e:
        raise ValueError(f"Clip {clip_id}: corrupt annotations ({e})")

    if not isinstance(entries, dict):
        raise ValueError(
            f"Clip {clip_id}: corrupt annotations, expected an object keyed by frame "
            f"and found {type(entries).__name__}"
        )

    annotations = []
    for t in range(shape[0]):
        rows = entries.get(str(t), [])
        try:
            if len(rows) and any(len(row) != 5 for row in rows):
                raise ValueError("rows must be [x1, y1, x2, y2, label]")
            annotations.append([LabeledBox(Box(*row[:4]), int(row[4])) for row in rows])
        except (TypeError, ValueError, IndexError) as e:
            raise ValueError(f"Clip {clip_id}: corrupt annotations in frame {t} ({e})")

    return VideoClip(frames, annotations, clip_id=clip_id, seed=seed)


class VideoDataset:
    """
    An ordered collection of clips with their class table.
    """

    def __init__(
        self,
        clips: Sequence[VideoClip] = (),
        classes: Sequence[ClassDefinition] = (),
    ):
        """
        An ordered collection of clips with their class table.

        :param clips: VideoClip objects, in manifest order
        :param classes: class definitions, label i is classes[i - 1]
        """

        self.clips = list(clips)
        self.classes = tuple(classes)

        ids = [clip.clip_id for clip in self.clips]
        if len(set(ids)) != len(ids):
            raise ValueError("Clip ids in a dataset must be unique")

    def __len__(self):
        return len(self.clips)

    def __getitem__(self, i):
        return self.clips[i]

    def __iter__(self):
        return iter(self.clips)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def save(self, path: str, force: bool = False):
        """
        Write the dataset into the directory path.

        :param force: allow writing into an existing non-empty directory
        """

        if os.path.isdir(path) and os.listdir(path) and not force:
            raise FileExistsError(
                f"Output directory {path} is not empty, use force to overwrite"
            )

        os.makedirs(path, exist_ok=True)

        manifest = {
            "format": "svid",
            "version": SVID_VERSION,
            "classes": [c.as_dict() for c in self.classes],
            "clips": [
                {
                    "id": clip.clip_id,
                    "height": clip.height,
                    "width": clip.width,
                    "length": len(clip),
                    "seed": clip.seed,
                }
                for clip in self.clips
            ],
        }

        for clip in self.clips:
            write_clip(clip, path)

        with open(os.path.join(path, MANIFEST_FILE), "w") as f:
            json.dump(manifest, f, indent=2)

    @classmethod
    def load(cls, path: str) -> "VideoDataset":
        """
        Read a dataset directory written by save, clips in manifest order.
        """

        manifest_file = os.path.join(path, MANIFEST_FILE)

        if not os.path.exists(manifest_file):
            raise FileNotFoundError(f"No dataset manifest at {manifest_file}")

        with open(manifest_file, "r") as f:
            manifest = json.load(f)

        classes = [ClassDefinition.from_dict(c) for c in manifest.get("classes", [])]

        clips = []
        for entry in manifest.get("clips", []):
            clip = read_clip(path, entry["id"], seed=entry.get("seed"))

            expected = (entry["length"], entry["height"], entry["width"])
            if clip.frames.shape[:3] != tuple(expected):
                raise ValueError(
                    f"Clip {entry['id']}: frames of shape {clip.frames.shape[:3]} "
                    f"do not match the manifest {tuple(expected)}"
                )

            clips.append(clip)

        return cls(clips, classes)

    def class_histogram(self) -> pd.Series:
        """
        Annotated instances per class over all frames.
        """

        counts = np.zeros(self.num_classes, dtype=np.int64)
        for clip in self.clips:
            for boxes in clip.annotations:
                for box in boxes:
                    counts[box.label - 1] += 1

        return pd.Series(counts, index=[c.name for c in self.classes], name="instances")

    def summary(self) -> str:

        lines = [f"{len(self)} clips, {sum(len(c) for c in self.clips)} frames"]
        lines += [f"  {name}: {count}" for name, count in self.class_histogram().items()]

        return "\n".join(lines)


def dataset_roundtrip(
    clips: Sequence[VideoClip],
    path: str,
    classes: Sequence[ClassDefinition] = (),
    force: bool = False,
) -> List[VideoClip]:
    """
    Store clips at path and read them back.
    """

    VideoDataset(clips, classes).save(path, force=force)

    return VideoDataset.load(path).clips
