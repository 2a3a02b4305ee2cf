import numpy as np
import pytest

from boxmask.geometry import (
    BBOX_XFORM_CLIP,
    Box,
    BoxDelta,
    LabeledBox,
    ScoredBox,
    batched_nms,
    decode,
    decode_boxes,
    encode,
    encode_boxes,
    iou,
    nms,
    pairwise_iou,
)


def random_boxes(rng, n, size=100.0):

    xy = rng.uniform(0, size, (n, 2))
    wh = rng.uniform(1, size / 3, (n, 2))

    return np.concatenate([xy, xy + wh], axis=1)


def reference_nms(boxes, scores, labels, thresh):
    """
    O(n^2) suppression: walk boxes by score and keep each one that
    overlaps no kept box of its class by more than thresh.
    """

    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    kept = []

    for i in order:
        a = Box(*boxes[i])
        if all(
            labels[j] != labels[i] or iou(a, Box(*boxes[j])) <= thresh for j in kept
        ):
            kept.append(i)

    return kept


def test_iou():

    b = Box(0, 0, 10, 10)

    assert iou(b, b) == 1.0
    assert iou(b, Box(20, 20, 30, 30)) == 0.0
    assert iou(b, Box(5, 5, 15, 15)) == pytest.approx(25 / 175, abs=1e-9)


def test_iou_symmetric(random_seed):

    rng = np.random.default_rng(random_seed)
    boxes = random_boxes(rng, 50)

    overlaps = pairwise_iou(boxes, boxes)

    np.testing.assert_allclose(overlaps, overlaps.T)
    assert np.all((overlaps >= 0) & (overlaps <= 1))
    np.testing.assert_allclose(np.diag(overlaps), 1.0)


def test_iou_degenerate():

    with pytest.raises(ValueError):
        iou(Box(0, 0, 0, 10), Box(0, 0, 10, 10))


def test_box_validation():

    with pytest.raises(ValueError):
        Box(0, 0, np.inf, 1)

    with pytest.raises(ValueError):
        Box(5, 0, 1, 1)

    with pytest.raises(ValueError):
        ScoredBox(Box(0, 0, 1, 1), 1.5, 1)


def test_degenerate_boxes():

    line = Box(2, 0, 2, 5)
    assert line.area == 0
    assert Box(0, 0, 10, 10).intersection(Box(10, 0, 20, 10)) is None
    assert Box(12, 3, 15, 6).clip(10, 10).area == 0

    with pytest.raises(ValueError, match="positive area"):
        LabeledBox(line, 1)

    with pytest.raises(ValueError, match="positive area"):
        ScoredBox(line, 0.5, 1)


def test_nms_examples():

    single = [ScoredBox(Box(0, 0, 10, 10), 0.5, 1)]
    assert nms(single, 0.5) == [0]

    same = [ScoredBox(Box(0, 0, 10, 10), 0.8, 1), ScoredBox(Box(0, 0, 10, 10), 0.9, 1)]
    assert nms(same, 0.5) == [1]

    assert nms([], 0.5) == []


def test_nms_is_per_class():

    dets = [ScoredBox(Box(0, 0, 10, 10), 0.9, 1), ScoredBox(Box(0, 0, 10, 10), 0.8, 2)]

    assert nms(dets, 0.5) == [0, 1]


def test_nms_threshold_range():

    with pytest.raises(ValueError):
        batched_nms(np.zeros((1, 4)), np.ones(1), np.ones(1), 0.0)


@pytest.mark.parametrize("n_boxes", [200])
def test_nms_matches_reference(random_seed, n_boxes):

    rng = np.random.default_rng(random_seed)

    for _ in range(100):
        boxes = random_boxes(rng, n_boxes)
        scores = rng.random(n_boxes)
        labels = rng.integers(1, 4, n_boxes)

        kept = batched_nms(boxes, scores, labels, 0.5)
        expected = reference_nms(boxes, scores, labels, 0.5)

        assert sorted(kept.tolist()) == sorted(expected)


def test_nms_input_order(random_seed):

    rng = np.random.default_rng(random_seed)
    boxes = random_boxes(rng, 60)
    scores = rng.random(60)
    labels = rng.integers(1, 3, 60)

    kept = batched_nms(boxes, scores, labels, 0.4)

    perm = rng.permutation(60)
    kept_perm = batched_nms(boxes[perm], scores[perm], labels[perm], 0.4)

    np.testing.assert_array_equal(np.sort(perm[kept_perm]), np.sort(kept))

    # kept boxes of one class overlap by at most the threshold
    overlaps = pairwise_iou(boxes[kept], boxes[kept])
    same = labels[kept][:, None] == labels[kept][None, :]
    np.fill_diagonal(same, False)
    assert np.all(overlaps[same] <= 0.4)


def test_encode_decode_identity():

    b = Box(3, 4, 20, 30)

    delta = encode(b, b)
    np.testing.assert_allclose(delta.as_array(), 0.0)

    assert decode(b, BoxDelta(0, 0, 0, 0)) == b


def test_encode_decode_inverse(random_seed):

    rng = np.random.default_rng(random_seed)
    proposals = random_boxes(rng, 500)
    targets = random_boxes(rng, 500)

    decoded = decode_boxes(proposals, encode_boxes(proposals, targets))

    assert np.max(np.abs(decoded - targets)) <= 1e-6


def test_decode_clamps():

    proposal = np.array([[10.0, 10.0, 20.0, 20.0]])

    huge = decode_boxes(proposal, np.array([[0, 0, 50.0, 50.0]]))
    np.testing.assert_allclose(huge[0, 2] - huge[0, 0], 10 * np.exp(BBOX_XFORM_CLIP))

    clipped = decode_boxes(proposal, np.array([[5.0, 5.0, 1.0, 1.0]]), (32, 40))
    assert clipped.min() >= 0
    assert np.all(clipped[:, 0::2] <= 40) and np.all(clipped[:, 1::2] <= 32)

    with pytest.raises(ValueError):
        decode_boxes(proposal, np.array([[np.nan, 0, 0, 0]]))
