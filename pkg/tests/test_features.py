import numpy as np
import pytest
import torch
from scipy.interpolate import RegularGridInterpolator

from boxmask.features import (
    FeatureMap,
    RoIFeatureGrid,
    TemporalAttentionAggregator,
    extract_roi_features,
    match_indices,
    match_support_features,
    msa_aggregate,
    similarity_map,
)
from boxmask.geometry import Box
from boxmask.utils import check_gradients


def dense_roi_oracle(values, box, stride, size, oversample=100):
    """
    Box average of the bilinearly interpolated map over every bin,
    sampled on a fine grid.
    """

    c, h, w = values.shape
    # feature pixel j is centred on (j + 0.5) * stride
    centres_y = (np.arange(h) + 0.5) * stride
    centres_x = (np.arange(w) + 0.5) * stride
    interp = RegularGridInterpolator(
        (centres_y, centres_x),
        np.moveaxis(values, 0, -1),
        bounds_error=False,
        fill_value=None,
    )

    out = np.zeros((c, size, size))
    bin_w = (box.x2 - box.x1) / size
    bin_h = (box.y2 - box.y1) / size
    offsets = (np.arange(oversample) + 0.5) / oversample

    for i in range(size):
        for j in range(size):
            ys = box.y1 + (i + offsets) * bin_h
            xs = box.x1 + (j + offsets) * bin_w
            yy, xx = np.meshgrid(ys, xs, indexing="ij")
            samples = interp(np.stack([yy.ravel(), xx.ravel()], axis=1))
            out[:, i, j] = samples.mean(axis=0)

    return out


def smooth_field(rng, channels=2, size=16):

    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    values = np.zeros((channels, size, size))

    for c in range(channels):
        for _ in range(3):
            fx, fy = rng.uniform(0.01, 0.04, 2)
            phase = rng.uniform(0, 2 * np.pi)
            values[c] += np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)

    return values


def test_constant_field():

    fmap = FeatureMap(torch.full((4, 8, 8), 3.0, dtype=torch.float64), stride=8)
    grid = extract_roi_features(fmap, Box(5, 7, 40, 50), roi_size=7, up_size=14)

    assert grid.values.shape == (1, 4, 14, 14)
    torch.testing.assert_close(grid.values, torch.full_like(grid.values, 3.0))


def test_linear_field():

    w = 16
    # value equals the x coordinate of the pixel centre
    ramp = torch.arange(w, dtype=torch.float64) + 0.5
    fmap = FeatureMap(ramp.expand(1, w, w).clone(), stride=1)

    box = Box(2.0, 3.0, 12.0, 11.0)
    grid = extract_roi_features(fmap, box, roi_size=5, up_size=5)

    centres = box.x1 + (np.arange(5) + 0.5) * box.width / 5
    expected = np.broadcast_to(centres, (5, 5))

    np.testing.assert_allclose(grid.values[0, 0].numpy(), expected, atol=1e-5)


def test_dense_oracle(random_seed):

    rng = np.random.default_rng(random_seed)

    for _ in range(100):
        values = smooth_field(rng)
        fmap = FeatureMap(torch.from_numpy(values), stride=1)

        x1, y1 = rng.uniform(1, 9, 2)
        w, h = rng.uniform(3, 6, 2)
        box = Box(x1, y1, min(x1 + w, 15.0), min(y1 + h, 15.0))

        grid = extract_roi_features(fmap, box, roi_size=4, up_size=4)
        expected = dense_roi_oracle(values, box, 1, 4)

        np.testing.assert_allclose(grid.values[0].numpy(), expected, atol=2e-2)


def test_roi_outside_frame():

    fmap = FeatureMap(torch.zeros(2, 4, 4, dtype=torch.float64), stride=8)

    with pytest.raises(ValueError):
        extract_roi_features(fmap, Box(40, 40, 50, 50))

    with pytest.raises(ValueError):
        extract_roi_features(fmap, Box(0, 0, 10, 10), roi_size=7, up_size=5)


def test_similarity_values():

    target = RoIFeatureGrid(torch.tensor([1.0, 0.0]).reshape(1, 2, 1, 1), "target")
    support = FeatureMap(torch.tensor([1.0, 1.0]).reshape(2, 1, 1) / np.sqrt(2))

    sim = similarity_map(target, support)

    assert sim.shape == (1, 1, 1, 1)
    assert sim.item() == pytest.approx(0.707107, abs=1e-6)


def test_match_exact_copy():

    # one-hot target vectors, the support map holds them plus zeros
    target_values = torch.eye(4, dtype=torch.float64).reshape(4, 4, 1, 1)
    target_values = target_values.permute(1, 0, 2, 3).reshape(1, 4, 2, 2)
    target = RoIFeatureGrid(target_values, "target")

    support = torch.zeros(4, 3, 3, dtype=torch.float64)
    support[:, 1:, 1:] = target_values[0]
    matched = match_support_features(target, FeatureMap(support))

    assert matched.source == "support"
    torch.testing.assert_close(matched.values, target.values)


def test_match_indices_override():

    target_values = torch.eye(4, dtype=torch.float64).reshape(4, 4, 1, 1)
    target_values = target_values.permute(1, 0, 2, 3).reshape(1, 4, 2, 2)
    target = RoIFeatureGrid(target_values, "target")

    support = torch.zeros(4, 3, 3, dtype=torch.float64)
    support[:, 1:, 1:] = target_values[0]
    fmap = FeatureMap(support)

    best = match_indices(target, fmap)
    assert best.tolist() == [[4, 5, 7, 8]]

    # the given positions are gathered, whatever the similarity says
    fixed = match_support_features(target, fmap, torch.tensor([[8, 7, 5, 4]]))
    torch.testing.assert_close(fixed.values, target.values.flip(2, 3))

    with pytest.raises(ValueError):
        match_support_features(target, fmap, torch.tensor([[4, 5, 7]]))


def test_match_zero_support():

    target = RoIFeatureGrid(torch.ones(1, 3, 2, 2, dtype=torch.float64), "target")
    support = FeatureMap(torch.zeros(3, 4, 4, dtype=torch.float64))

    sim = similarity_map(target, support)
    assert torch.all(sim == 0)

    matched = match_support_features(target, support)
    assert torch.all(matched.values == 0)


def test_match_scale_invariance(random_seed):

    torch.manual_seed(random_seed)
    target = RoIFeatureGrid(torch.randn(2, 4, 3, 3, dtype=torch.float64), "target")
    support = torch.randn(4, 5, 5, dtype=torch.float64)

    matched = match_support_features(target, FeatureMap(support))
    scaled = match_support_features(target, FeatureMap(7.5 * support))

    torch.testing.assert_close(scaled.values, 7.5 * matched.values)


def test_similarity_channel_mismatch():

    target = RoIFeatureGrid(torch.ones(1, 3, 2, 2), "target")

    with pytest.raises(ValueError):
        similarity_map(target, FeatureMap(torch.ones(4, 2, 2)))


def test_aggregate_single_key():

    torch.manual_seed(0)
    aggregator = TemporalAttentionAggregator(4, num_heads=2).double()
    target = torch.randn(2, 4, 3, 3, dtype=torch.float64)

    out = aggregator(target, [])

    # with one key the attention weight is 1: value projection then output projection
    attention = aggregator.attention
    w_v = attention.in_proj_weight[8:]
    b_v = attention.in_proj_bias[8:]
    tokens = target.permute(0, 2, 3, 1)
    projected = (tokens @ w_v.T + b_v) @ attention.out_proj.weight.T + attention.out_proj.bias

    torch.testing.assert_close(out, target + projected.permute(0, 3, 1, 2))


def test_aggregate_identical_keys():

    torch.manual_seed(1)
    aggregator = TemporalAttentionAggregator(4, num_heads=2).double()

    v = torch.randn(1, 4, 2, 2, dtype=torch.float64)

    out = aggregator(v, [v, v])
    first = aggregator(v, [v])

    torch.testing.assert_close(out, first)


def test_aggregate_permutation(random_seed):

    torch.manual_seed(random_seed)
    aggregator = TemporalAttentionAggregator(8, num_heads=2).double()

    target = RoIFeatureGrid(torch.randn(3, 8, 4, 4, dtype=torch.float64), "target")
    matched = [
        RoIFeatureGrid(torch.randn(3, 8, 4, 4, dtype=torch.float64), "support")
        for _ in range(3)
    ]

    out = msa_aggregate(target, matched, aggregator)
    permuted = msa_aggregate(target, matched[::-1], aggregator)

    assert out.source == "aggregated"
    torch.testing.assert_close(out.values, permuted.values)


def test_aggregate_channel_mismatch():

    aggregator = TemporalAttentionAggregator(4, num_heads=2).double()
    target = RoIFeatureGrid(torch.zeros(1, 4, 2, 2, dtype=torch.float64), "target")
    other = RoIFeatureGrid(torch.zeros(1, 6, 2, 2, dtype=torch.float64), "support")

    with pytest.raises(ValueError):
        msa_aggregate(target, [other], aggregator)

    with pytest.raises(ValueError):
        TemporalAttentionAggregator(5, num_heads=2)


def test_feature_gradients(random_seed):

    torch.manual_seed(random_seed)
    aggregator = TemporalAttentionAggregator(4, num_heads=2).double()

    values = torch.randn(4, 4, 4, dtype=torch.float64, requires_grad=True)
    support = torch.randn(4, 4, 4, dtype=torch.float64, requires_grad=True)
    rois = np.array([[1.0, 2.0, 20.0, 25.0], [8.0, 4.0, 30.0, 30.0]])

    def func():
        grid = extract_roi_features(FeatureMap(values, stride=8), rois, 2, 4)
        matched = match_support_features(grid, FeatureMap(support, stride=8))
        out = msa_aggregate(grid, [matched], aggregator)
        return (out.values ** 2).sum()

    tensors = {"values": values, "support": support}
    tensors.update(dict(aggregator.named_parameters()))

    failures = check_gradients(func, tensors, step=1e-6, rtol=1e-4, atol=1e-6)

    assert not failures, "\n".join(str(f) for f in failures)
