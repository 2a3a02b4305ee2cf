import numpy as np
import pytest

from boxmask.detector import DetectorConfig
from boxmask.geometry import Box, LabeledBox
from boxmask.interfaces import ObjectTrack, SceneSpec, generate_clip


@pytest.fixture(scope="session")
def output_directory(tmpdir_factory):

    directory = tmpdir_factory.mktemp("output")

    return directory


@pytest.fixture(scope="session")
def random_seed():

    seed = 42

    return seed


@pytest.fixture
def tiny_config():
    """
    Narrow detector for fast tests on 32 x 32 frames.
    """

    return DetectorConfig(
        num_classes=3,
        backbone_channels=8,
        mask_hidden=8,
        fc_hidden=16,
        num_proposals=16,
        rois_per_frame=16,
    )


@pytest.fixture(scope="session")
def fixed_scene():
    """
    One 32 x 32 clip with two well separated objects of different classes.
    """

    tracks = (
        ObjectTrack(label=1, size=(12.0, 12.0), position=(2.0, 3.0), velocity=(0.5, 0.0)),
        ObjectTrack(label=3, size=(10.0, 13.0), position=(18.0, 16.0), velocity=(-0.5, 0.0)),
    )
    spec = SceneSpec(
        height=32,
        width=32,
        length=4,
        min_size=8.0,
        max_size=16.0,
        blur=1,
        seed=5,
        tracks=tracks,
    )

    return generate_clip(spec, clip_id="fixed")


@pytest.fixture
def two_box_gt():

    return [
        LabeledBox(Box(0.0, 0.0, 20.0, 20.0), 1),
        LabeledBox(Box(5.0, 5.0, 10.0, 10.0), 2),
    ]


def point_in_box_oracle(boxes, region, m):
    """
    Per-cell reference labelling: smallest containing box wins, earlier on ties.
    """

    labels = np.zeros((m, m), dtype=np.int64)

    for row in range(m):
        for col in range(m):
            x = region.x1 + (col + 0.5) * region.width / m
            y = region.y1 + (row + 0.5) * region.height / m

            best = None
            for i, b in enumerate(boxes):
                box = b.box
                if box.x1 <= x < box.x2 and box.y1 <= y < box.y2:
                    if best is None or box.area < boxes[best].box.area:
                        best = i

            if best is not None:
                labels[row, col] = boxes[best].label

    return labels


@pytest.fixture(scope="session")
def label_oracle():
    return point_in_box_oracle
