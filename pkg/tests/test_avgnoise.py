import math

import numpy as np
import pytest

from prpose import nn
from prpose.avgnoise import (AdaptiveVarianceRegressor, DegenerateLabelsError, PseudoLabelSet,
                             kl_gaussian, load_pseudo_labels, normalize_errors,
                             save_pseudo_labels, train_avg)


def test_normalization_arithmetic():
    labels, C = normalize_errors([[2.0], [4.0]])
    assert C == 3.0
    np.testing.assert_array_equal(labels.ravel(), [2 / 3, 4 / 3])


def test_labels_average_to_one():
    for seed in range(5):
        D = np.random.default_rng(seed).gamma(2.0, 30.0, size=(500, 16))
        labels, _ = normalize_errors(D)
        assert abs(labels.mean() - 1.0) < 1e-9


def test_degenerate_labels():
    with pytest.raises(DegenerateLabelsError):
        normalize_errors(np.zeros((3, 16)))


def test_pseudo_labels_from_lifter(small_models, small_data):
    _, pseudo, _ = small_models
    assert pseudo.labels.shape == (len(small_data[0]), 16)
    assert abs(pseudo.labels.mean() - 1.0) < 1e-9
    assert pseudo.C > 0


def test_pseudo_label_file_round_trip(tmp_path, small_models):
    _, pseudo, _ = small_models
    back = load_pseudo_labels(save_pseudo_labels(pseudo, tmp_path / "p.csv"))
    assert np.array_equal(back.labels, pseudo.labels) and back.C == pseudo.C
    assert back.lifter_hash == pseudo.lifter_hash


def test_lifter_untouched_by_avg_training(small_models, small_data):
    lifter, pseudo, _ = small_models
    before = lifter.network_.to_bytes()
    for paradigm in ("independent", "shared"):
        train_avg(small_data[0], pseudo, paradigm=paradigm, lifter=lifter, hidden_dim=8, epochs=1)
    assert lifter.network_.to_bytes() == before


def test_linear_teacher(small_data):
    train, _ = small_data
    X = train.det2d.reshape(len(train), -1)
    w = np.random.default_rng(0).normal(size=(X.shape[1], 16)) * 3
    Z = (X - X.mean(0)) / X.std(0)
    labels = Z @ w / 10 + 1.0
    model = AdaptiveVarianceRegressor(hidden_dim=0, n_blocks=0, epochs=300, lr=1e-2,
                                      lr_decay_epoch=200, batch_size=64).fit(train.det2d, labels)
    assert model.loss_curve_[-1] < 1e-4


def test_avg_determinism_shape_and_round_trip(small_models, small_data):
    _, pseudo, avg = small_models
    train, test = small_data
    again = train_avg(train, pseudo, hidden_dim=16, n_blocks=1, epochs=4, lr_decay_epoch=3, seed=0)
    assert again.network_.to_bytes() == avg.network_.to_bytes()
    x = test.det2d[0]
    assert avg.predict(x).shape == (16,)
    assert np.array_equal(avg.predict(x), avg.predict(x))
    back = AdaptiveVarianceRegressor.from_network(nn.Network.from_bytes(avg.network_.to_bytes()))
    assert np.array_equal(back.predict(test.det2d), avg.predict(test.det2d))


def test_shared_paradigm_head_only(small_models, small_data):
    lifter, pseudo, _ = small_models
    shared = train_avg(small_data[0], pseudo, paradigm="shared", lifter=lifter, epochs=1)
    assert shared.n_new_params_ == lifter.hidden_dim * 16 + 16
    with pytest.raises(ValueError):
        AdaptiveVarianceRegressor(paradigm="shared").fit(small_data[0].det2d, pseudo.labels)


def _kl_scalar(s, sh):
    return 0.5 * (math.log((sh / s) ** 2) + s * s / (sh * sh) - 1.0)


def test_kl_values():
    assert kl_gaussian(1.5, 1.5) == 0.0
    a, b = kl_gaussian(1.0, 2.0), kl_gaussian(2.0, 1.0)
    assert a != b
    assert a == pytest.approx(_kl_scalar(1.0, 2.0), rel=1e-14)
    assert b == pytest.approx(_kl_scalar(2.0, 1.0), rel=1e-14)
    with pytest.raises(ValueError):
        kl_gaussian(0.0, 1.0)


def test_kl_monte_carlo():
    s, sh = 1.0, 2.0
    x = np.random.default_rng(0).normal(0.0, s, 10_000_000)
    mc = np.mean(np.log(sh / s) - x ** 2 / (2 * s * s) + x ** 2 / (2 * sh * sh))
    assert abs(mc - kl_gaussian(s, sh)) < 0.01 * kl_gaussian(s, sh)


def test_kl_minimum_at_target():
    grid = np.linspace(0.05, 5.0, 400)
    for sh in (0.3, 1.0, 2.5):
        kl = kl_gaussian(grid, sh)
        below, above = kl[grid < sh], kl[grid > sh]
        assert np.all(np.diff(below) < 0) and np.all(np.diff(above) > 0)
        assert kl.min() >= 0 and kl_gaussian(sh, sh) == 0.0


def test_pseudo_label_set_prior():
    ps = PseudoLabelSet(np.array([[1.0, 3.0], [1.0, 1.0]]), 2.0, np.arange(2))
    np.testing.assert_array_equal(ps.joint_prior(), [1.0, 2.0])
