import numpy as np
import pytest

from boxmask.sampling import SamplingPlan, sample_support


@pytest.mark.parametrize("plan", [SamplingPlan(T=14), SamplingPlan("strided", T=4, S=3)])
def test_single_frame_video(plan):

    assert sample_support(1, 0, plan) == [0] * plan.T
    assert sample_support(1, 0, plan, seed=3, training=True) == [0, 0]


def test_uniform_rounding():

    assert sample_support(8, 3, SamplingPlan(T=4)) == [0, 2, 5, 7]
    assert sample_support(8, 3, SamplingPlan(T=1)) == [0]
    assert sample_support(8, 3, SamplingPlan(T=0)) == []


def test_strided_clamping():

    plan = SamplingPlan("strided", T=4, S=2)

    assert sample_support(10, 1, plan) == [0, 0, 3, 5]
    assert sample_support(10, 9, plan) == [5, 7, 9, 9]


def test_uniform_ignores_target():

    plan = SamplingPlan(T=14)
    expected = sample_support(30, 0, plan)

    for target in range(30):
        assert sample_support(30, target, plan) == expected


def test_length_and_range(random_seed):

    rng = np.random.default_rng(random_seed)

    for _ in range(200):
        video_len = int(rng.integers(1, 40))
        target = int(rng.integers(0, video_len))
        plan = SamplingPlan(
            mode=str(rng.choice(["uniform", "strided"])),
            T=int(rng.integers(0, 30)),
            S=int(rng.integers(1, 8)),
        )

        indices = sample_support(video_len, target, plan)

        assert len(indices) == plan.T
        assert all(0 <= i < video_len for i in indices)


def test_training_determinism():

    plan = SamplingPlan(train_support=5)

    first = sample_support(20, 4, plan, seed=11, training=True)
    second = sample_support(20, 4, plan, seed=11, training=True)

    assert first == second
    assert len(first) == 5


def test_target_out_of_range():

    with pytest.raises(ValueError):
        sample_support(5, 5, SamplingPlan())

    with pytest.raises(ValueError):
        sample_support(5, -1, SamplingPlan())


def test_plan_validation():

    with pytest.raises(ValueError):
        SamplingPlan(mode="keyframe")

    with pytest.raises(ValueError):
        SamplingPlan(S=0)

    with pytest.raises(ValueError):
        SamplingPlan(T=-1)
