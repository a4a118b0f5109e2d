import numpy as np
import pytest

from prpose.core import JointCountError
from prpose.synthgen import (H36M16, Camera, DatasetConfig, DatasetFormatError, JointLimits,
                             NoiseProfile, ProjectionError, corrupt_2d, generate_dataset,
                             h36m16_limits, load_dataset, make_dataset, project, sample_pose,
                             sample_poses, write_dataset)


def test_rest_pose_is_canonical():
    rest = JointLimits.rest(h36m16_limits())
    a = sample_pose(H36M16, rest, np.random.default_rng(0))
    b = sample_pose(H36M16, rest, np.random.default_rng(99))
    assert np.array_equal(a, b)
    assert a[9, 1] > a[8, 1] > a[0, 1] > a[2, 1]  # head above thorax above pelvis above knee


def test_sampling_deterministic():
    lim = h36m16_limits()
    a = sample_poses(H36M16, lim, np.random.default_rng(5), 10)
    b = sample_poses(H36M16, lim, np.random.default_rng(5), 10)
    assert np.array_equal(a, b)


def test_bone_lengths_preserved():
    P = sample_poses(H36M16, h36m16_limits(), np.random.default_rng(1), 1000)
    parents = np.array(H36M16.parents[1:])
    lengths = np.linalg.norm(P[:, 1:] - P[:, parents], axis=-1)
    np.testing.assert_allclose(lengths, np.broadcast_to(H36M16.bone_lengths[1:], lengths.shape),
                               rtol=0, atol=1e-9)
    assert np.all(P[:, 0] == 0)


def test_empty_limits_rejected():
    with pytest.raises(ValueError):
        JointLimits(np.zeros((0, 3, 2)), np.zeros((0, 3)))


def test_projection_arithmetic():
    cam1 = Camera(1.0, (0.0, 0.0), 1000.0)
    np.testing.assert_allclose(project(np.array([[100.0, 200.0, 0.0]]), cam1), [[0.1, 0.2]])
    assert np.array_equal(project(np.array([[0.0, 0.0, 300.0]]), cam1), [[0.0, 0.0]])
    far = Camera(1.0, (0.0, 0.0), 2000.0)
    p = np.array([[50.0, -70.0, 0.0]])
    np.testing.assert_allclose(project(p, far), project(p, cam1) / 2)
    with pytest.raises(ProjectionError):
        project(np.array([[0.0, 0.0, -1000.0]]), cam1)


def test_corrupt_zero_noise_and_determinism():
    x = np.random.default_rng(0).normal(size=(5, 16, 2))
    zero = NoiseProfile.uniform(16, 0.0)
    y, m = corrupt_2d(x, zero, np.random.default_rng(0))
    assert np.array_equal(y, x) and not m.any()
    prof = DatasetConfig().noise_profile(H36M16)
    a = corrupt_2d(x, prof, np.random.default_rng(3))
    b = corrupt_2d(x, prof, np.random.default_rng(3))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_corrupt_empirical_std():
    prof = NoiseProfile((0.02,))
    y, _ = corrupt_2d(np.zeros((10000, 1, 2)), prof, np.random.default_rng(11))
    s = y.std(axis=0).ravel()
    assert np.all((0.019 <= s) & (s <= 0.021))


def test_occluded_joints_noisier():
    prof = NoiseProfile((0.01, 0.01), occlusion_groups=((1,),), occlusion_prob=0.5,
                        occlusion_multiplier=3.0)
    y, m = corrupt_2d(np.zeros((20000, 2, 2)), prof, np.random.default_rng(2))
    occ = y[:, 1][m[:, 1]]
    vis = y[:, 1][~m[:, 1]]
    assert not m[:, 0].any()
    assert occ.std() > vis.std()
    assert occ.std() == pytest.approx(0.03, rel=0.05)


def test_split_counts_and_zero_noise():
    train, test = make_dataset(DatasetConfig(count=10, split=(80, 20), base_sigma=0.0))
    assert (len(train), len(test)) == (8, 2)
    assert np.array_equal(train.det2d, train.clean2d)
    assert set(train.sample_ids) | set(test.sample_ids) == set(range(10))


def test_files_deterministic_and_round_trip(tmp_path):
    cfg = DatasetConfig(count=30)
    a = generate_dataset(cfg, tmp_path / "a")
    b = generate_dataset(cfg, tmp_path / "b")
    for x, y in zip(a, b):
        assert x.read_bytes() == y.read_bytes()
    train, _ = make_dataset(cfg)
    back = load_dataset(a[0])
    assert list(back) == list(train)
    assert back.digest == train.digest
    assert back.mm_per_unit == cfg.camera().mm_per_unit


def test_wrong_v_record_rejected(tmp_path):
    train, _ = make_dataset(DatasetConfig(count=11))
    p = write_dataset(train, tmp_path / "d.jsonl")
    lines = p.read_text().splitlines()
    lines[3] = lines[3].replace('"occl": [', '"occl": [false, ', 1)
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(JointCountError):
        load_dataset(p)


def test_truncated_file_rejected(tmp_path):
    train, _ = make_dataset(DatasetConfig(count=11))
    p = write_dataset(train, tmp_path / "d.jsonl")
    data = p.read_bytes()
    p.write_bytes(data[: len(data) // 2])
    with pytest.raises(DatasetFormatError):
        load_dataset(p)
