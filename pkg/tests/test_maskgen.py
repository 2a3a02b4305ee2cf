import numpy as np
import pytest
import torch

from boxmask.geometry import Box, LabeledBox
from boxmask.maskgen import LabelMask, boxmask_loss, build_roi_targets, rasterize_label_map
from boxmask.utils import check_gradients


def test_rasterize_background_and_full():

    region = Box(0, 0, 16, 16)

    empty = rasterize_label_map([], region, 8, num_classes=3)
    assert np.all(empty.labels == 0)

    full = rasterize_label_map([LabeledBox(region, 2)], region, 8, num_classes=3)
    assert np.all(full.labels == 2)


def test_rasterize_nested(two_box_gt, label_oracle):

    region = Box(0, 0, 20, 20)
    mask = rasterize_label_map(two_box_gt, region, 8, num_classes=3)

    np.testing.assert_array_equal(mask.labels, label_oracle(two_box_gt, region, 8))
    assert set(np.unique(mask.labels)) == {1, 2}

    # order of the annotations does not matter
    reversed_mask = rasterize_label_map(two_box_gt[::-1], region, 8, num_classes=3)
    np.testing.assert_array_equal(mask.labels, reversed_mask.labels)


def test_rasterize_random_single_boxes(random_seed, label_oracle):

    rng = np.random.default_rng(random_seed)
    region = Box(0, 0, 8, 8)

    for _ in range(1000):
        x1, y1 = rng.uniform(-2, 8, 2)
        w, h = rng.uniform(0.1, 8, 2)
        boxes = [LabeledBox(Box(x1, y1, x1 + w, y1 + h), int(rng.integers(1, 4)))]

        mask = rasterize_label_map(boxes, region, 8, num_classes=3)
        np.testing.assert_array_equal(mask.labels, label_oracle(boxes, region, 8))


def test_rasterize_small_coordinates(label_oracle):

    region = Box(0, 0, 4, 4)

    for x1 in range(4):
        for y1 in range(4):
            for x2 in range(x1 + 1, 5):
                for y2 in range(y1 + 1, 5):
                    boxes = [LabeledBox(Box(x1, y1, x2, y2), 1)]
                    mask = rasterize_label_map(boxes, region, 4, num_classes=1)
                    np.testing.assert_array_equal(
                        mask.labels, label_oracle(boxes, region, 4)
                    )


def test_smaller_box_in_front(random_seed, label_oracle):

    rng = np.random.default_rng(random_seed)
    region = Box(0, 0, 8, 8)

    for _ in range(1000):
        boxes = []
        for label in (1, 2):
            x1, y1 = rng.uniform(0, 5, 2)
            w, h = rng.uniform(1, 6, 2)
            boxes.append(LabeledBox(Box(x1, y1, x1 + w, y1 + h), label))

        mask = rasterize_label_map(boxes, region, 8, num_classes=2)
        np.testing.assert_array_equal(mask.labels, label_oracle(boxes, region, 8))


def test_equal_area_tie_goes_to_first():

    region = Box(0, 0, 4, 4)
    boxes = [
        LabeledBox(Box(0, 0, 3, 3), 1),
        LabeledBox(Box(1, 1, 4, 4), 2),
    ]

    mask = rasterize_label_map(boxes, region, 4, num_classes=2)

    # cells (1, 1) and (2, 2) are covered by both boxes
    assert mask.labels[1, 1] == 1
    assert mask.labels[2, 2] == 1
    assert mask.labels[3, 3] == 2


def test_label_mask_validation():

    with pytest.raises(ValueError):
        LabelMask(np.full((2, 2), 4), num_classes=3)

    with pytest.raises(ValueError):
        LabelMask(np.zeros((2, 3)), num_classes=3)


def test_build_roi_targets(label_oracle):

    gt = [LabeledBox(Box(10, 10, 20, 20), 3)]

    exact, disjoint, half = build_roi_targets(
        [Box(10, 10, 20, 20), Box(30, 30, 40, 40), Box(5, 10, 15, 20)], gt, 4, 3
    )

    assert np.all(exact.labels == 3)
    assert np.all(disjoint.labels == 0)

    # left half background, right half the object
    assert np.all(half.labels[:, :2] == 0)
    assert np.all(half.labels[:, 2:] == 3)
    np.testing.assert_array_equal(
        half.labels, label_oracle([LabeledBox(Box(10, 10, 15, 20), 3)], Box(5, 10, 15, 20), 4)
    )


def test_roi_targets_front_order_uses_full_areas(label_oracle):

    # the large box only clips a corner of the RoI
    gt = [LabeledBox(Box(0, 0, 40, 40), 1), LabeledBox(Box(30, 30, 50, 50), 2)]
    roi = Box(32, 32, 60, 60)

    (target,) = build_roi_targets([roi], gt, 4, 2)

    expected = np.zeros((4, 4), dtype=np.int64)
    expected[:3, :3] = 2

    assert target.labels[0, 0] == 2
    np.testing.assert_array_equal(target.labels, expected)
    np.testing.assert_array_equal(target.labels, label_oracle(gt, roi, 4))


def test_rasterize_area_override():

    gt = [LabeledBox(Box(0, 0, 8, 8), 1), LabeledBox(Box(0, 0, 4, 4), 2)]
    region = Box(0, 0, 8, 8)

    default = rasterize_label_map(gt, region, 4, 2)
    flipped = rasterize_label_map(gt, region, 4, 2, areas=[1.0, 100.0])

    assert default.labels[0, 0] == 2
    assert flipped.labels[0, 0] == 1

    with pytest.raises(ValueError):
        rasterize_label_map(gt, region, 4, 2, areas=[1.0])


def test_boxmask_loss_uniform():

    logits = torch.zeros(2, 4, 6, 6, dtype=torch.float64)
    targets = torch.randint(0, 4, (2, 6, 6))

    assert boxmask_loss(logits, targets).item() == pytest.approx(np.log(4), abs=1e-6)


def test_boxmask_loss_saturated():

    targets = torch.randint(0, 4, (3, 5, 5))
    logits = 30.0 * torch.nn.functional.one_hot(targets, 4).permute(0, 3, 1, 2).double()

    assert boxmask_loss(logits, targets).item() < 1e-6


def test_boxmask_loss_scalar_oracle():

    logits = torch.tensor(
        [[[[0.3, -1.2], [2.0, 0.1]], [[-0.5, 0.7], [0.0, 1.5]]]], dtype=torch.float64
    )
    target = LabelMask(np.array([[0, 1], [1, 0]]), num_classes=1)

    expected = 0.0
    for row in range(2):
        for col in range(2):
            scores = logits[0, :, row, col].numpy()
            label = target.labels[row, col]
            expected -= scores[label] - np.log(np.sum(np.exp(scores)))
    expected /= 4

    assert boxmask_loss(logits, [target]).item() == pytest.approx(expected, abs=1e-12)


def test_boxmask_loss_errors():

    with pytest.raises(ValueError):
        boxmask_loss(torch.zeros(2, 4, 6, 6), torch.zeros(2, 5, 5, dtype=torch.long))

    with pytest.raises(ValueError):
        boxmask_loss(torch.zeros(0, 4, 6, 6), torch.zeros(0, 6, 6, dtype=torch.long))


def test_boxmask_loss_gradient(random_seed):

    torch.manual_seed(random_seed)
    logits = torch.randn(2, 3, 4, 4, dtype=torch.float64, requires_grad=True)
    targets = torch.randint(0, 3, (2, 4, 4))

    failures = check_gradients(lambda: boxmask_loss(logits, targets), {"logits": logits})

    assert not failures, "\n".join(str(f) for f in failures)
