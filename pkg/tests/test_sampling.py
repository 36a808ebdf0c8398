from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motiondiff.adapter import group_joints
from motiondiff.denoiser.model import DenoiserConfig, DenoiserModel
from motiondiff.motion_data import FrameLayout
from motiondiff.schedule import cosine_schedule
from motiondiff.synthesis.sampling import (alternating_control, coarse_probability, edit_body_part, full_mask,
                                           inpaint, joints_mask, lower_body_mask, sample, upper_body_mask)
from motiondiff.synthetic import humanoid6

SCH = cosine_schedule(20)
MODEL = DenoiserModel(DenoiserConfig(max_step=20, control_dim=4), seed=1)
LAYOUT = FrameLayout(6)


class ConstantStub:
    """Denoiser that always predicts the same clip."""

    def __init__(self, target):
        self.target = target
        self.cfg = SimpleNamespace(width=target.shape[1])
        self.calls = []

    def predict(self, x, steps, control=None):
        self.calls.append(control)
        return self.target.copy()


def test_constant_oracle_reaches_target_exactly():
    target = np.random.default_rng(0).normal(size=(5, 54))
    for seed in (0, 1, 2):
        out = sample(ConstantStub(target), SCH, 5, None, np.random.default_rng(seed))
        np.testing.assert_allclose(out, target, atol=1e-12)


def test_sample_deterministic():
    a = sample(MODEL, SCH, 6, None, np.random.default_rng(7))
    b = sample(MODEL, SCH, 6, None, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, sample(MODEL, SCH, 6, None, np.random.default_rng(8)))


def test_inpaint_all_known_and_all_unknown():
    x = np.random.default_rng(0).normal(size=(6, 54))
    r = np.random.default_rng(3)
    state = r.bit_generator.state
    np.testing.assert_array_equal(inpaint(MODEL, SCH, x, np.ones(6), None, r), x)
    assert r.bit_generator.state == state
    a = inpaint(MODEL, SCH, x, np.zeros(6), None, np.random.default_rng(4))
    b = sample(MODEL, SCH, 6, None, np.random.default_rng(4))
    np.testing.assert_array_equal(a, b)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.booleans())
def test_inpaint_known_entries_bit_exact(seed, per_frame):
    r = np.random.default_rng(seed)
    x = r.normal(size=(6, 54)) * 3
    mask = r.random(6) < 0.5 if per_frame else r.random((6, 54)) < 0.5
    out = inpaint(MODEL, SCH, x, mask, None, r)
    m = full_mask(mask, 54)
    assert np.array_equal(out[m], x[m])


def test_mask_shape_errors():
    x = np.zeros((6, 54))
    with pytest.raises(ValueError):
        inpaint(MODEL, SCH, x, np.ones((6, 53)), None, np.random.default_rng(0))
    with pytest.raises(ValueError):
        inpaint(MODEL, SCH, x, np.ones(5), None, np.random.default_rng(0))
    with pytest.raises(ValueError):
        edit_body_part(MODEL, SCH, x, np.ones(6), None, np.random.default_rng(0))


def test_coarse_probability():
    assert coarse_probability(10, 20, 1.0) == 0.5
    assert coarse_probability(1, 20, 0.0) == 1.0
    assert coarse_probability(19, 20, 1e9) < 1e-300
    assert coarse_probability(20, 20, 1e9) == 1.0


def test_alternating_gamma_zero_is_coarse_sampling():
    cc = MODEL.encode(np.ones((3, 4)))
    cf = MODEL.encode(-np.ones((2, 4)))
    out, choices = alternating_control(MODEL, SCH, cc, cf, 0.0, 6, np.random.default_rng(5))
    assert choices == ["coarse"] * 20
    np.testing.assert_array_equal(out, sample(MODEL, SCH, 6, cc, np.random.default_rng(5)))


def test_alternating_gamma_huge_switches_after_first_step():
    cc, cf = MODEL.encode(np.ones((3, 4))), MODEL.encode(-np.ones((2, 4)))
    stub = ConstantStub(np.zeros((6, 54)))
    _, choices = alternating_control(stub, SCH, cc, cf, 1e9, 6, np.random.default_rng(5))
    assert choices == ["coarse"] + ["fine"] * 19
    assert stub.calls == [cc] + [cf] * 19
    with pytest.raises(ValueError):
        alternating_control(stub, SCH, cc, cf, -1.0, 6, np.random.default_rng(5))


def test_alternating_frequency_matches_probability():
    stub = ConstantStub(np.zeros((2, 54)))
    sch = cosine_schedule(10)
    counts = np.zeros(10)
    for seed in range(400):
        _, ch = alternating_control(stub, sch, None, None, 1.0, 2, np.random.default_rng(seed))
        counts += [c == "coarse" for c in ch]
    p = np.array([coarse_probability(t, 10, 1.0) for t in range(10, 0, -1)])
    se = np.sqrt(p * (1 - p) / 400) + 1e-12
    assert np.all(np.abs(counts / 400 - p) <= 4 * se)


def test_body_part_masks():
    grouping = group_joints(humanoid6())
    low = lower_body_mask(LAYOUT, grouping, 4)
    regenerated = np.flatnonzero(~low[0])
    expect = np.concatenate([LAYOUT.rot_channels(j) for j in (0, 1, 2)])
    np.testing.assert_array_equal(regenerated, expect)
    up = upper_body_mask(LAYOUT, grouping, 4, positions=True)
    expect = np.concatenate([LAYOUT.rot_channels(j) for j in (3, 4, 5)] + [LAYOUT.pos_channels(j) for j in (3, 4, 5)])
    np.testing.assert_array_equal(np.flatnonzero(~up[0]), expect)
    assert joints_mask(LAYOUT, 2, []).all()


def test_edit_keeps_upper_body():
    grouping = group_joints(humanoid6())
    x = np.random.default_rng(0).normal(size=(6, 54))
    np.testing.assert_array_equal(edit_body_part(MODEL, SCH, x, np.ones((6, 54)), None, np.random.default_rng(0)), x)
    m = lower_body_mask(LAYOUT, grouping, 6)
    out = edit_body_part(MODEL, SCH, x, m, None, np.random.default_rng(1))
    assert np.array_equal(out[m], x[m])
    assert not np.array_equal(out[~m], x[~m])
