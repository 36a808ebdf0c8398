import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from motiondiff.denoiser.model import DenoiserConfig, DenoiserModel
from motiondiff.geometry import rotmat_to_6d, sixd_to_rotmat
from motiondiff.kinematics import Skeleton, fk_arrays
from motiondiff.schedule import cosine_schedule
from motiondiff.synthesis.ik import IkConstraint, refine_ik, solve_ik
from motiondiff.synthetic import humanoid6

L1, L2 = 0.3, 0.25
REACH = L1 + L2
ARM = Skeleton.from_arrays(["shoulder", "elbow", "hand"], [-1, 0, 1], [[0, 0, 0], [L1, 0, 0], [L2, 0, 0]])
SCH = cosine_schedule(20)
ARM_MODEL = DenoiserModel(DenoiserConfig(width=27, max_step=20), seed=1)


def arm_ik(target, seed=0, **kw):
    cons = [IkConstraint(0, 0, (0, 0, 0)), IkConstraint(0, 2, target)]
    return solve_ik(ARM_MODEL, SCH, cons, 4, ARM, np.random.default_rng(seed), optimize_root=False, **kw)


def arm_positions(result):
    return fk_arrays(ARM, result.root_pos[:1], sixd_to_rotmat(result.rot6[:1]))[0][0]


def l1_to_ball(target, radius):
    """Smallest L1 distance from ``target`` to the ball of the given radius, by constrained search."""
    target = np.asarray(target, float)
    best = np.inf
    for start in (target / np.linalg.norm(target) * radius, np.zeros(3), np.sign(target) * radius / np.sqrt(3)):
        res = minimize(lambda p: np.abs(p - target).sum(), start, method="SLSQP",
                       constraints=[{"type": "ineq", "fun": lambda p: radius ** 2 - p @ p}],
                       options={"ftol": 1e-12, "maxiter": 500})
        best = min(best, res.fun)
    return best


def test_constraint_validation():
    with pytest.raises(ValueError):
        IkConstraint(0, 0, (1, 2))
    with pytest.raises(ValueError):
        solve_ik(ARM_MODEL, SCH, [], 4, ARM, np.random.default_rng(0))
    with pytest.raises(IndexError):
        solve_ik(ARM_MODEL, SCH, [IkConstraint(4, 0, (0, 0, 0))], 4, ARM, np.random.default_rng(0))
    with pytest.raises(IndexError):
        solve_ik(ARM_MODEL, SCH, [IkConstraint(0, 3, (0, 0, 0))], 4, ARM, np.random.default_rng(0))
    with pytest.raises(ValueError):
        refine_ik(ARM, np.zeros((1, 3)), np.zeros((1, 3, 6)), [IkConstraint(0, 0, (0, 0, 0))], method="newton")


@pytest.mark.parametrize("method", ["gauss-newton", "gradient"])
def test_refine_at_global_minimum_is_a_no_op(method):
    skel = humanoid6()
    r = np.random.default_rng(0)
    rots = Rotation.random(2 * 6, random_state=0).as_matrix().reshape(2, 6, 3, 3)
    root = r.normal(size=(2, 3))
    pos, _ = fk_arrays(skel, root, rots)
    cons = [IkConstraint(f, j, pos[f, j]) for f in range(2) for j in (0, 4, 5)]
    rot6 = rotmat_to_6d(rots)
    root2, rot2, history = refine_ik(skel, root, rot6, cons, steps=20, method=method)
    assert history[0] <= 1e-12
    assert all(h <= history[0] for h in history)
    np.testing.assert_allclose(rot2, rot6, atol=1e-9)
    np.testing.assert_allclose(root2, root, atol=1e-9)


@pytest.mark.parametrize("target", [(0.4, 0.2, 0.0), (0.1, -0.35, 0.2), (-0.2, 0.3, -0.3)])
def test_two_link_reachable_matches_analytic(target):
    res = arm_ik(target)
    assert res.residual <= 1e-3
    p = arm_positions(res)
    np.testing.assert_allclose(p[2], target, atol=1e-3)
    assert np.linalg.norm(p[1] - p[0]) == pytest.approx(L1, abs=1e-9)
    # analytic two-link law of cosines; the two branches share the elbow bend magnitude
    d = np.linalg.norm(target)
    bend = np.pi - np.arccos((L1 ** 2 + L2 ** 2 - d ** 2) / (2 * L1 * L2))
    u, v = p[1] - p[0], p[2] - p[1]
    got = np.arccos(np.clip(u @ v / np.linalg.norm(u) / np.linalg.norm(v), -1, 1))
    assert got == pytest.approx(bend, abs=1e-2)
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))


@pytest.mark.parametrize("target", [(1.0, 0.0, 0.0), (0.0, -0.9, 0.0), (0.0, 0.0, 0.7)])
def test_two_link_unreachable_on_axis(target):
    res = arm_ik(target)
    assert res.residual == pytest.approx(np.linalg.norm(target) - REACH, abs=1e-3)
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))


def test_two_link_unreachable_off_axis_matches_l1_ball_oracle():
    target = (0.6, 0.5, -0.2)
    res = arm_ik(target)
    oracle = l1_to_ball(target, REACH)
    assert res.residual == pytest.approx(oracle, abs=1e-3)
    # Euclidean shortfall would understate the L1 optimum here
    assert oracle > np.linalg.norm(target) - REACH + 0.05


def test_literal_gradient_variant_is_monotone():
    res = arm_ik((0.2, 0.4, 0.1), method="gradient")
    h = res.history
    assert len(h) == 201
    assert all(b <= a for a, b in zip(h, h[1:]))
    assert h[-1] < h[0]


def test_only_constrained_frames_move_and_clip_is_consistent():
    res = arm_ik((0.4, 0.2, 0.0))
    assert res.clip.frames.shape == (4, 27)
    decoded = fk_arrays(ARM, res.root_pos, sixd_to_rotmat(res.rot6))[0]
    np.testing.assert_allclose(decoded[0, 2], (0.4, 0.2, 0.0), atol=1e-3)
    np.testing.assert_array_equal(res.root_pos[:, [0, 2]], 0.0)


def test_root_translation_is_optional():
    cons = [IkConstraint(0, 2, (2.0, 0.0, 0.0))]
    res = solve_ik(ARM_MODEL, SCH, cons, 2, ARM, np.random.default_rng(0))
    assert res.residual <= 1e-3
