import os
from dataclasses import dataclass, field, fields, replace
from typing import Tuple

from ..detector import DetectorConfig
from ..sampling import SamplingPlan
from .synthvid import SceneSpec, default_classes

__all__ = [
    "SceneSettings",
    "RunSettings",
    "AblationSettings",
    "RunConfig",
    "DEFAULT_THRESHOLDS",
    "SWEEPS",
    "parse_roi_size",
]

"""
Run configuration files are flat `key = value` text with dotted section
keys, for example

    # a comment
    detector.lambda_bm = 0.5
    sampling.mode = strided
    ablation.roi_sizes = 7x7, 7x14

Tuples are comma-separated and booleans accept on/off, true/false,
yes/no and 1/0. Keys that do not name a field are rejected.
"""

DEFAULT_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

SWEEPS = ("lambda", "n_conv", "roi_size", "sampling", "effectiveness")

# keys computed from other settings
DERIVED_KEYS = {
    "detector.num_classes": "scene.num_classes",
    "detector.mask_resolution": "twice detector.up_size",
}

_TRUE = ("on", "true", "yes", "1")
_FALSE = ("off", "false", "no", "0")


@dataclass
class SceneSettings:
    """
    Scene parameters shared by every generated clip, see SceneSpec.
    """

    height: int = 64
    width: int = 64
    length: int = 24
    num_objects: int = 2
    num_classes: int = 3
    min_size: float = 16.0
    max_size: float = 28.0
    max_speed: float = 1.5
    drift: float = 0.0
    blur: int = 3
    occlusion: bool = False

    def __post_init__(self):
        self.to_spec(0)

    def to_spec(self, seed: int) -> SceneSpec:

        return SceneSpec(
            height=self.height,
            width=self.width,
            length=self.length,
            num_objects=self.num_objects,
            classes=default_classes(self.num_classes),
            min_size=self.min_size,
            max_size=self.max_size,
            max_speed=self.max_speed,
            drift=self.drift,
            blur=self.blur,
            occlusion=self.occlusion,
            seed=seed,
        )


@dataclass
class RunSettings:
    """
    Seeds, data location, schedule and evaluation settings of a run.

    :param out: run directory, or dataset directory for generate
    :param dataset: dataset directory read by train, eval and ablate
    :param seed: master seed
    :param epochs: training epochs
    :param milestones: epochs after which the learning rate is divided
    :param train_clips: clips in the train split
    :param val_clips: clips in the val split
    :param thresholds: IoU thresholds of the evaluation
    :param top_k: classes listed as most improved and most worsened
    :param verbose: print progress
    """

    out: str = "runs/default"
    dataset: str = "data"
    seed: int = 0
    epochs: int = 7
    milestones: Tuple[int, ...] = (4, 6)
    train_clips: int = 40
    val_clips: int = 10
    thresholds: Tuple[float, ...] = DEFAULT_THRESHOLDS
    top_k: int = 5
    verbose: bool = True

    def __post_init__(self):

        if self.epochs < 1:
            raise ValueError(f"Need at least one epoch, got {self.epochs}")

        if self.train_clips < 0 or self.val_clips < 0:
            raise ValueError("Clip counts must be non-negative")

        for t in self.thresholds:
            if not 0.0 < t <= 1.0:
                raise ValueError(f"IoU threshold {t} is outside (0, 1]")


def parse_roi_size(value: str) -> Tuple[int, int]:
    """
    "7x14" -> (7, 14)
    """

    try:
        roi_size, up_size = (int(v) for v in value.lower().split("x"))
    except ValueError:
        raise ValueError(f"RoI size {value} is not of the form <roi>x<up>")

    return roi_size, up_size


@dataclass
class AblationSettings:
    """
    Grids of the ablation sweeps.

    :param sweep: one of SWEEPS or "all"
    :param lambdas: BoxMask loss weights, the baseline arm is added
    :param n_convs: BoxMask convolution counts
    :param roi_sizes: "<roi_size>x<up_size>" pairs
    :param sampling_modes: sampling modes evaluated
    :param support_counts: T values evaluated
    :param strides: S values evaluated in strided mode
    :param seeds: seeds of the effectiveness sweep
    :param workers: variants trained in parallel processes
    """

    sweep: str = "all"
    lambdas: Tuple[float, ...] = (0.0, 0.25, 0.5, 1.0)
    n_convs: Tuple[int, ...] = (1, 2, 3, 4)
    roi_sizes: Tuple[str, ...] = ("7x7", "7x14", "7x28", "14x14")
    sampling_modes: Tuple[str, ...] = ("uniform", "strided")
    support_counts: Tuple[int, ...] = (2, 6, 14)
    strides: Tuple[int, ...] = (1, 3, 7)
    seeds: Tuple[int, ...] = (0, 1, 2)
    workers: int = 1

    def __post_init__(self):

        if self.sweep not in SWEEPS + ("all",):
            raise ValueError(f"Sweep {self.sweep} is not recognised")

        for value in self.roi_sizes:
            parse_roi_size(value)

        if self.workers < 1:
            raise ValueError(f"Need at least one worker, got {self.workers}")


def _parse_value(key: str, text: str, default):
    """
    Convert text to the type of the default value.
    """

    text = text.strip()

    try:
        if isinstance(default, bool):
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)

        if isinstance(default, tuple):
            element = default[0] if default else ""
            items = [item for item in text.split(",") if item.strip()]
            return tuple(_parse_value(key, item, element) for item in items)

        if isinstance(default, int):
            return int(text)

        if isinstance(default, float):
            return float(text)

    except ValueError:
        raise ValueError(f"Value {text!r} for {key} is not a valid {type(default).__name__}")

    return text


def _format_value(value) -> str:

    if isinstance(value, bool):
        return "on" if value else "off"

    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)

    return str(value)


@dataclass
class RunConfig:
    """
    Every setting of a run, grouped in sections.
    """

    detector: DetectorConfig = field(default_factory=DetectorConfig)
    scene: SceneSettings = field(default_factory=SceneSettings)
    sampling: SamplingPlan = field(default_factory=SamplingPlan)
    run: RunSettings = field(default_factory=RunSettings)
    ablation: AblationSettings = field(default_factory=AblationSettings)

    def __post_init__(self):

        if self.detector.num_classes != self.scene.num_classes:
            self.detector = replace(self.detector, num_classes=self.scene.num_classes)

    @classmethod
    def sections(cls) -> tuple:
        return tuple(f.name for f in fields(cls))

    def update(self, values: dict) -> "RunConfig":
        """
        A new RunConfig with the dotted keys in values replaced.

        Values may be text, which is parsed by field type, or typed values.
        """

        changes = {section: {} for section in self.sections()}

        for key, value in values.items():
            if key in DERIVED_KEYS:
                raise ValueError(f"Key {key} is derived from {DERIVED_KEYS[key]}")

            section, _, name = key.partition(".")
            if section not in changes:
                raise ValueError(f"Unknown configuration key {key}")

            current = getattr(self, section)
            if name not in {f.name for f in fields(current)}:
                raise ValueError(f"Unknown configuration key {key}")

            default = getattr(current, name)
            if isinstance(value, str) and not isinstance(default, str):
                value = _parse_value(key, value, default)

            changes[section][name] = value

        detector_changes = changes["detector"]
        if "up_size" in detector_changes:
            detector_changes["mask_resolution"] = 2 * detector_changes["up_size"]
        if "num_classes" in changes["scene"]:
            detector_changes["num_classes"] = changes["scene"]["num_classes"]

        return RunConfig(
            **{
                section: replace(getattr(self, section), **changes[section])
                for section in self.sections()
            }
        )

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":

        values = {}
        for number, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue

            if "=" not in line:
                raise ValueError(f"Line {number} is not of the form key = value: {line}")

            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value

        return cls().update(values)

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":

        if not os.path.exists(path):
            raise FileNotFoundError(f"No configuration file at {path}")

        with open(path, "r") as f:
            return cls.from_text(f.read())

    def to_text(self) -> str:
        """
        The resolved configuration in the file format, derived keys omitted.
        """

        lines = []
        for section in self.sections():
            for f in fields(getattr(self, section)):
                key = f"{section}.{f.name}"
                if key in DERIVED_KEYS:
                    continue
                value = getattr(getattr(self, section), f.name)
                lines.append(f"{key} = {_format_value(value)}")

        return "\n".join(lines) + "\n"

    def save(self, path: str):

        with open(path, "w") as f:
            f.write(self.to_text())
