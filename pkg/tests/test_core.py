import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from prpose.core import (HypothesisSet, JointCountError, PoseError, Skeleton, as_hypotheses,
                         check_pose2d, check_pose3d, check_variance, root_center)

finite = st.floats(-1e4, 1e4, allow_nan=False)


def test_root_center_identity_on_rooted_pose():
    p = np.random.default_rng(0).normal(size=(16, 3))
    p[0] = 0
    assert np.array_equal(root_center(p), p)


def test_root_center_translation_invariant():
    p = np.random.default_rng(1).normal(size=(16, 3)) * 100
    np.testing.assert_allclose(root_center(p + [10, 20, 30]), root_center(p), atol=1e-9)


@given(arrays(np.float64, (7, 3), elements=finite))
@settings(max_examples=50, deadline=None)
def test_root_center_preserves_distances(p):
    q = root_center(p)
    assert np.all(q[0] == 0)
    d = lambda x: np.linalg.norm(x[:, None] - x[None], axis=-1)  # noqa: E731
    np.testing.assert_allclose(d(q), d(p), atol=1e-9)


def test_check_pose_shapes_and_errors():
    assert check_pose2d(np.zeros((4, 2))).shape == (4, 2)
    assert check_pose2d(np.zeros((5, 8))).shape == (5, 4, 2)
    assert check_pose3d(np.zeros((2, 4, 3)), 4).shape == (2, 4, 3)
    with pytest.raises(JointCountError):
        check_pose3d(np.zeros((2, 4, 3)), 5)
    with pytest.raises(PoseError):
        check_pose2d(np.array([[0.0, np.nan]]))
    with pytest.raises(PoseError):
        check_pose3d(np.zeros((2, 3, 4, 3)))


def test_check_variance():
    assert check_variance([1.0, 2.0], 2).shape == (2,)
    with pytest.raises(PoseError):
        check_variance([-1.0])
    assert check_variance([-1.0], nonneg=False)[0] == -1.0
    with pytest.raises(JointCountError):
        check_variance(np.ones((3, 4)), 5)


def test_skeleton_validation_and_id():
    sk = Skeleton((-1, 0, 1), (0.0, 1.0, 2.0), ("a", "b", "c"))
    assert sk.n_joints == 3 and sk.reach() == 3.0 and sk.index("c") == 2
    assert sk.skeleton_id == Skeleton((-1, 0, 1), (0.0, 1.0, 2.0), ("a", "b", "c")).skeleton_id
    with pytest.raises(ValueError):
        Skeleton((-1, 2, 0), (0.0, 1.0, 1.0), ("a", "b", "c"))
    with pytest.raises(JointCountError):
        Skeleton((-1, 0), (0.0,), ("a", "b"))


def test_hypothesis_set_is_read_only():
    hs = HypothesisSet(np.zeros((3, 4, 3)), 7)
    assert len(hs) == 3 and hs.n_joints == 4
    with pytest.raises(ValueError):
        hs.hypotheses[0, 0, 0] = 1.0
    assert as_hypotheses(np.zeros((4, 3))).shape == (1, 4, 3)
