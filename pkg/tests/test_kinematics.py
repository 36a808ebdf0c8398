import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from motiondiff.geometry import rot_x, rot_y
from motiondiff.kinematics import (DegenerateHeadingError, Pose, Skeleton, SkeletonError, constraint_residual,
                                   forward_kinematics, heading_track, rescale_to_height, restore_heading,
                                   rotation_invariant_positions, skeleton_height)
from motiondiff.synthetic import humanoid6

seeds = st.integers(0, 2**31)


def chain5():
    return Skeleton.from_arrays(["a", "b", "c", "d", "e"], [-1, 0, 1, 2, 3],
                                [[0, 0, 0], [0, 0.3, 0], [0.2, 0.1, 0], [0, 0, 0.4], [0.1, -0.2, 0.05]])


def oracle_fk(skel, root_pos, rots):
    """Per-joint 4x4 homogeneous transforms multiplied along the root path."""
    out = []
    for j in range(skel.num_joints):
        path = []
        k = j
        while k >= 0:
            path.append(k)
            k = skel.parents[k]
        M = np.eye(4)
        for k in reversed(path):
            T = np.eye(4)
            T[:3, :3] = rots[k]
            T[:3, 3] = root_pos if skel.parents[k] < 0 else skel.offsets[k]
            M = M @ T
        out.append(M[:3, 3])
    return np.array(out)


def test_skeleton_validation():
    with pytest.raises(SkeletonError):
        Skeleton.from_arrays(["a", "b"], [-1, -1], np.zeros((2, 3)))
    with pytest.raises(SkeletonError):
        Skeleton.from_arrays(["a", "b"], [1, -1], np.zeros((2, 3)))
    with pytest.raises(SkeletonError):
        Skeleton.from_arrays(["a", "b"], [-1, 0], [[0, 0, 0], [np.nan, 0, 0]])


def test_fk_zero_rotation_sums_offsets():
    skel = chain5()
    pos = forward_kinematics(skel, skel.default_pose())
    np.testing.assert_allclose(pos, np.cumsum(skel.offsets, axis=0), atol=1e-15)


def test_fk_root_yaw_equivariance(rng):
    skel = humanoid6()
    rots = Rotation.random(6, random_state=2).as_matrix()
    base = forward_kinematics(skel, Pose(np.zeros(3), rots))
    rots2 = rots.copy()
    rots2[0] = rot_y(np.pi / 2) @ rots[0]
    turned = forward_kinematics(skel, Pose(np.zeros(3), rots2))
    np.testing.assert_allclose(turned, base @ rot_y(np.pi / 2).T, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_fk_matches_matrix_chain_oracle(seed):
    skel = chain5()
    r = np.random.default_rng(seed)
    rots = Rotation.random(5, random_state=seed).as_matrix()
    root = r.normal(size=3)
    np.testing.assert_allclose(forward_kinematics(skel, Pose(root, rots)), oracle_fk(skel, root, rots), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_fk_rigid_equivariance_and_bone_lengths(seed):
    skel = humanoid6()
    r = np.random.default_rng(seed)
    rots = Rotation.random(6, random_state=seed).as_matrix()
    root = r.normal(size=3)
    pos = forward_kinematics(skel, Pose(root, rots))
    G = Rotation.random(random_state=seed + 1).as_matrix()
    t = r.normal(size=3)
    rots2 = rots.copy()
    rots2[0] = G @ rots[0]
    pos2 = forward_kinematics(skel, Pose(G @ root + t, rots2))
    np.testing.assert_allclose(pos2, pos @ G.T + t, atol=1e-12)
    for j in range(1, 6):
        p = skel.parents[j]
        assert np.linalg.norm(pos[j] - pos[p]) == pytest.approx(skel.bone_lengths()[j], abs=1e-12)


def test_invariant_positions_identity_at_origin():
    skel = humanoid6()
    rots = Rotation.random(6, random_state=4).as_matrix()
    rots[0] = rot_x(0.3)  # pitch only: zero yaw
    pose = Pose(np.array([0.0, 1.0, 0.0]), rots)
    np.testing.assert_allclose(rotation_invariant_positions(skel, pose), forward_kinematics(skel, pose), atol=1e-12)


def test_invariant_positions_translate_and_yaw():
    skel = humanoid6()
    rots = Rotation.random(6, random_state=5).as_matrix()
    pose = Pose(np.array([0.0, 0.9, 0.0]), rots)
    rots2 = rots.copy()
    rots2[0] = rot_y(np.pi / 2) @ rots[0]
    moved = Pose(np.array([5.0, 0.9, 3.0]), rots2)
    np.testing.assert_allclose(rotation_invariant_positions(skel, moved), rotation_invariant_positions(skel, pose),
                               atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_invariant_positions_ground_plane_invariance(seed):
    skel = humanoid6()
    r = np.random.default_rng(seed)
    rots = Rotation.random(6, random_state=seed).as_matrix()
    pose = Pose(r.normal(size=3), rots)
    yaw = r.uniform(-np.pi, np.pi)
    shift = np.array([r.normal(), 0.0, r.normal()]) * 3
    rots2 = rots.copy()
    rots2[0] = rot_y(yaw) @ rots[0]
    moved = Pose(rot_y(yaw) @ pose.root_pos + shift, rots2)
    np.testing.assert_allclose(rotation_invariant_positions(skel, moved), rotation_invariant_positions(skel, pose),
                               atol=1e-9)


def test_invariant_positions_restore():
    skel = humanoid6()
    rots = Rotation.random(6, random_state=6).as_matrix()
    pose = Pose(np.array([1.5, 0.8, -2.0]), rots)
    from motiondiff.kinematics import heading_angle
    psi = heading_angle(rots[0])
    local = rotation_invariant_positions(skel, pose)
    np.testing.assert_allclose(restore_heading(local, 1.5, -2.0, psi), forward_kinematics(skel, pose), atol=1e-12)


def test_degenerate_heading():
    skel = humanoid6()
    rots = np.broadcast_to(np.eye(3), (6, 3, 3)).copy()
    rots[0] = rot_x(np.pi / 2)  # forward axis points straight down
    pose = Pose(np.zeros(3), rots)
    with pytest.raises(DegenerateHeadingError):
        rotation_invariant_positions(skel, pose)
    out = rotation_invariant_positions(skel, pose, prev_heading=0.0)
    np.testing.assert_allclose(out, forward_kinematics(skel, pose), atol=1e-12)
    track = np.stack([rot_y(0.4), rot_x(np.pi / 2), rot_y(-0.2)])
    np.testing.assert_allclose(heading_track(track), [0.4, 0.4, -0.2], atol=1e-12)
    with pytest.raises(DegenerateHeadingError):
        heading_track(track[1:])


def test_rescale_to_height():
    skel = humanoid6()
    h = skeleton_height(skel)
    pos = oracle_fk(skel, np.zeros(3), np.broadcast_to(np.eye(3), (6, 3, 3)))
    assert h == pytest.approx(pos[:, 1].max() - pos[:, 1].min(), abs=1e-15)
    same = rescale_to_height(skel, h)
    np.testing.assert_allclose(same.offsets, skel.offsets, atol=1e-15)
    double = rescale_to_height(skel, 2 * h)
    np.testing.assert_allclose(double.offsets, 2 * skel.offsets, atol=1e-15)
    assert skeleton_height(rescale_to_height(skel, 1.83)) == pytest.approx(1.83, abs=1e-9)
    flat = Skeleton.from_arrays(["a", "b"], [-1, 0], [[0, 0, 0], [1, 0, 0]])
    with pytest.raises(SkeletonError):
        rescale_to_height(flat, 1.0)
    with pytest.raises(ValueError):
        rescale_to_height(skel, 0.0)


def test_constraint_residual(rng):
    skel = humanoid6()
    rots = Rotation.random(6, random_state=7).as_matrix()
    pose = Pose(rng.normal(size=3), rots)
    pos = forward_kinematics(skel, pose)
    assert constraint_residual(skel, pose, [(j, pos[j]) for j in range(6)]) == 0.0
    assert constraint_residual(skel, pose, [(4, pos[4] + [0.1, 0, 0])]) == pytest.approx(0.1, abs=1e-12)
    targets = rng.normal(size=(5, 3))
    joints = rng.integers(0, 6, 5)
    ref = oracle_fk(skel, pose.root_pos, rots)
    naive = sum(np.abs(ref[j] - t).sum() for j, t in zip(joints, targets))
    assert constraint_residual(skel, pose, list(zip(joints, targets))) == pytest.approx(naive, abs=1e-12)
    with pytest.raises(IndexError):
        constraint_residual(skel, pose, [(6, np.zeros(3))])


def test_skeleton_dict_round_trip():
    skel = chain5().with_default_rots(Rotation.random(5, random_state=1).as_matrix())
    back = Skeleton.from_dict(skel.to_dict())
    assert back.names == skel.names
    np.testing.assert_array_equal(back.offsets, skel.offsets)
    np.testing.assert_array_equal(back.default_rots, skel.default_rots)
    assert back.subtree(2) == [2, 3, 4]
    assert skel.children(0) == [1]
