from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..geometry import Box, LabeledBox

__all__ = [
    "ClassDefinition",
    "ObjectTrack",
    "SceneSpec",
    "VideoClip",
    "default_classes",
    "make_tracks",
    "render_frame",
    "generate_clip",
]

"""
Synthetic clips of textured rounded rectangles moving over a static
background. All classes share the shape and colour and only differ in the
frequency of their stripe texture, so they are easy to confuse from a
single blurred frame.
"""

# shared by every default class
BASE_COLOUR = (0.85, 0.45, 0.2)


@dataclass(frozen=True)
class ClassDefinition:
    """
    Appearance of one object class.

    :param name: class name
    :param stripe_frequency: stripe cycles across the object width
    :param colour: RGB base colour in [0, 1]
    :param corner_radius: rounding as a fraction of the shorter side
    """

    name: str
    stripe_frequency: float
    colour: Tuple[float, float, float] = BASE_COLOUR
    corner_radius: float = 0.25

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "stripe_frequency": self.stripe_frequency,
            "colour": list(self.colour),
            "corner_radius": self.corner_radius,
        }

    @classmethod
    def from_dict(cls, values: dict) -> "ClassDefinition":
        return cls(
            name=values["name"],
            stripe_frequency=float(values["stripe_frequency"]),
            colour=tuple(float(c) for c in values["colour"]),
            corner_radius=float(values.get("corner_radius", 0.25)),
        )


def default_classes(num_classes: int = 3) -> tuple:
    """
    Confusable classes with stripe frequencies 2, 4, 8, ...
    """

    if num_classes < 1:
        raise ValueError(f"Need at least one class, got {num_classes}")

    return tuple(
        ClassDefinition(f"stripes_{2 ** (i + 1)}", float(2 ** (i + 1)))
        for i in range(num_classes)
    )


@dataclass(frozen=True)
class ObjectTrack:
    """
    Linear motion with an optional vertical sinusoidal drift.

    :param label: class label, starting at 1
    :param size: (width, height) in pixels
    :param position: top-left corner at t = 0
    :param velocity: pixels per frame
    :param drift_amplitude: amplitude of the vertical drift in pixels
    :param drift_period: period of the drift in frames
    """

    label: int
    size: Tuple[float, float]
    position: Tuple[float, float]
    velocity: Tuple[float, float] = (0.0, 0.0)
    drift_amplitude: float = 0.0
    drift_period: float = 12.0

    def box_at(self, t: float) -> Box:
        """
        Full extent of the object at time t, not clipped to the frame.
        """

        drift = self.drift_amplitude * np.sin(2 * np.pi * t / self.drift_period)

        x1 = self.position[0] + self.velocity[0] * t
        y1 = self.position[1] + self.velocity[1] * t + drift

        return Box(float(x1), float(y1), float(x1 + self.size[0]), float(y1 + self.size[1]))


@dataclass
class SceneSpec:
    """
    Parameters of a synthetic clip. Generation is a pure function of these fields.

    :param height: frame height
    :param width: frame width
    :param length: frames per clip
    :param num_objects: objects per clip, ignored when tracks are given
    :param classes: class definitions, label i is classes[i - 1]
    :param min_size: smallest object side
    :param max_size: largest object side
    :param max_speed: largest displacement per frame along each axis
    :param drift: amplitude of the vertical sinusoidal drift
    :param blur: sub-frame renders averaged per frame
    :param occlusion: the second object retraces the first one's path in
        reverse so that they cross mid-clip
    :param seed: random seed
    :param tracks: explicit object tracks, replacing random placement
    """

    height: int = 64
    width: int = 64
    length: int = 24
    num_objects: int = 2
    classes: Tuple[ClassDefinition, ...] = field(default_factory=default_classes)
    min_size: float = 16.0
    max_size: float = 28.0
    max_speed: float = 1.5
    drift: float = 0.0
    blur: int = 3
    occlusion: bool = False
    seed: int = 0
    tracks: Optional[Tuple[ObjectTrack, ...]] = None

    def __post_init__(self):

        if self.length < 1:
            raise ValueError(f"Clip length must be at least 1, got {self.length}")

        if self.blur < 1:
            raise ValueError(f"Blur window must be at least 1, got {self.blur}")

        if self.num_objects < 0:
            raise ValueError(f"Object count must be non-negative, got {self.num_objects}")

        if len(self.classes) < 1:
            raise ValueError("A scene needs at least one class")

        if self.min_size <= 0 or self.max_size < self.min_size:
            raise ValueError(
                f"Need 0 < min_size <= max_size, got {self.min_size}, {self.max_size}"
            )

        if self.max_size > min(self.height, self.width):
            raise ValueError(
                f"Objects up to {self.max_size} px do not fit a "
                f"{self.width}x{self.height} frame"
            )

        self.classes = tuple(self.classes)

        if self.tracks is not None:
            self.tracks = tuple(self.tracks)

            for track in self.tracks:
                self._check_track(track)

    def _check_track(self, track: ObjectTrack):

        w, h = track.size
        if w <= 0 or h <= 0 or w > self.width or h > self.height:
            raise ValueError(
                f"Object of size {w}x{h} does not fit a {self.width}x{self.height} frame"
            )

        if not 1 <= track.label <= len(self.classes):
            raise ValueError(
                f"Object label {track.label} is not one of the {len(self.classes)} classes"
            )

        box = track.box_at(0)
        if box.x1 < 0 or box.y1 < 0 or box.x2 > self.width or box.y2 > self.height:
            raise ValueError(f"Object {box} is not inside the frame at t = 0")

    @property
    def num_classes(self) -> int:
        return len(self.classes)


@dataclass
class VideoClip:
    """
    Frames and per-frame annotations of one clip.

    :param frames: (N, H, W, 3) float32 in [0, 1]
    :param annotations: per frame, one LabeledBox per visible object,
        clipped to the frame
    :param clip_id: name of the clip in its dataset
    :param seed: seed the clip was generated with
    """

    frames: np.ndarray
    annotations: List[List[LabeledBox]]
    clip_id: str = "clip"
    seed: Optional[int] = None

    def __post_init__(self):

        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ValueError(
                f"Clip {self.clip_id}: frames must be (N, H, W, 3), "
                f"got {self.frames.shape}"
            )

        if len(self.annotations) != len(self.frames):
            raise ValueError(
                f"Clip {self.clip_id}: {len(self.annotations)} annotation lists "
                f"for {len(self.frames)} frames"
            )

    def __len__(self):
        return len(self.frames)

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


def make_tracks(spec: SceneSpec, rng: np.random.Generator) -> tuple:
    """
    Random tracks that stay inside the frame for the whole clip.
    """

    if spec.tracks is not None:
        return spec.tracks

    duration = max(spec.length - 1, 1)
    reach = spec.max_speed * duration

    tracks = []
    for i in range(spec.num_objects):
        label = int(rng.integers(1, spec.num_classes + 1))
        w, h = rng.uniform(spec.min_size, spec.max_size, 2)

        # keep the drift inside the frame
        margin = min(spec.drift, (spec.height - h) / 2)
        x_range = (0.0, spec.width - w)
        y_range = (margin, spec.height - h - margin)

        if spec.occlusion and i == 1:
            # reverse the path of the first object
            first = tracks[0]
            start = np.array(first.box_at(duration).as_array()[:2])
            end = np.array(first.position)
            start = np.clip(start, 0, [spec.width - w, spec.height - h])
            end = np.clip(end, 0, [spec.width - w, spec.height - h])
        else:
            start = np.array([rng.uniform(*x_range), rng.uniform(*y_range)])
            low = np.maximum([x_range[0], y_range[0]], start - reach)
            high = np.minimum([x_range[1], y_range[1]], start + reach)
            end = rng.uniform(low, high)

        velocity = (end - start) / duration if spec.length > 1 else np.zeros(2)

        tracks.append(
            ObjectTrack(
                label=label,
                size=(float(w), float(h)),
                position=(float(start[0]), float(start[1])),
                velocity=(float(velocity[0]), float(velocity[1])),
                drift_amplitude=float(spec.drift),
            )
        )

    return tuple(tracks)


def _object_mask(box: Box, radius: float, xx: np.ndarray, yy: np.ndarray) -> np.ndarray:
    """
    Rounded rectangle membership of the pixel centres.
    """

    r = radius * min(box.width, box.height)

    dx = np.maximum.reduce([box.x1 + r - xx, np.zeros_like(xx), xx - (box.x2 - r)])
    dy = np.maximum.reduce([box.y1 + r - yy, np.zeros_like(yy), yy - (box.y2 - r)])

    inside = box.contains(xx, yy)

    return inside & (dx ** 2 + dy ** 2 <= r ** 2)


def render_frame(
    spec: SceneSpec, tracks: Sequence[ObjectTrack], background: np.ndarray, t: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Render frame t as the average of spec.blur sub-frame renders.

    :return: (H, W, 3) image and (n_objects, H, W) coverage, the fraction of
        sub-frames in which each pixel shows the object
    """

    yy, xx = np.mgrid[0 : spec.height, 0 : spec.width] + 0.5

    image = np.zeros((spec.height, spec.width, 3))
    coverage = np.zeros((len(tracks), spec.height, spec.width))

    offsets = (np.arange(spec.blur) - (spec.blur - 1) / 2) / spec.blur

    for offset in offsets:
        canvas = background.copy()
        visible = np.zeros_like(coverage, dtype=bool)

        for k, track in enumerate(tracks):
            box = track.box_at(t + offset)
            definition = spec.classes[track.label - 1]

            mask = _object_mask(box, definition.corner_radius, xx, yy)

            u = (xx - box.x1) / box.width
            stripes = 0.5 + 0.5 * np.sin(2 * np.pi * definition.stripe_frequency * u)
            shade = 0.4 + 0.6 * stripes

            canvas[mask] = shade[mask][:, None] * np.array(definition.colour)

            # later objects are drawn on top
            visible[:k, mask] = False
            visible[k] = mask

        image += canvas
        coverage += visible

    return image / spec.blur, coverage / spec.blur


def generate_clip(spec: SceneSpec, clip_id: str = "clip") -> VideoClip:
    """
    Render a clip. Identical specs give bit-identical clips.

    :param spec: a SceneSpec, including the seed
    :param clip_id: name of the clip
    """

    rng = np.random.default_rng(spec.seed)

    tracks = make_tracks(spec, rng)
    for track in tracks:
        spec._check_track(track)

    background = 0.15 + 0.1 * rng.random((spec.height, spec.width, 3))

    frames = np.empty((spec.length, spec.height, spec.width, 3), dtype=np.float32)
    annotations = []

    for t in range(spec.length):
        image, _ = render_frame(spec, tracks, background, t)
        frames[t] = np.clip(image, 0, 1)

        boxes = []
        for track in tracks:
            box = track.box_at(t).clip(spec.width, spec.height)
            if box.area > 0:
                boxes.append(LabeledBox(box, track.label))
        annotations.append(boxes)

    return VideoClip(frames, annotations, clip_id=clip_id, seed=spec.seed)
