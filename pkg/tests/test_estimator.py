import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from coilfail.estimator import (
    CoilFailureClassifier,
    ZScoreNormalizer,
    check_groups,
    check_labels,
    check_windows,
)


def toy(n_per_class=20, seed=0):
    rng = np.random.default_rng(seed)
    X = np.concatenate([5.0 + rng.normal(size=(n_per_class, 4, 40)),
                        8.0 + rng.normal(size=(n_per_class, 4, 40))])
    y = np.array([0] * n_per_class + [1] * n_per_class)
    groups = np.array([f"c{i // 2}" for i in range(len(y))])  # two windows per coil
    return X, y, groups


def test_check_windows():
    X = np.zeros((3, 40, 4))
    assert check_windows(X).shape == (3, 4, 40)
    with pytest.raises(ValueError):
        check_windows(np.zeros((3, 5, 40)))
    with pytest.raises(ValueError):
        check_windows(np.full((1, 4, 40), np.nan))
    with pytest.raises(ValueError):
        check_windows(np.zeros((4, 40)))


def test_check_labels_and_groups():
    with pytest.raises(ValueError):
        check_labels([0, 2], 2)
    with pytest.raises(ValueError):
        check_labels([0, 1, 1], 2)
    with pytest.raises(ValueError):
        check_groups(["a", "a"], np.array([0, 1]))
    assert len(check_groups(None, np.array([0, 1, 1]))) == 3


def test_normalizer_round_trip():
    X, _, _ = toy()
    norm = ZScoreNormalizer().fit(X)
    Z = norm.transform(X)
    np.testing.assert_allclose(Z.mean(axis=(0, 2)), 0, atol=1e-12)
    np.testing.assert_allclose(Z.std(axis=(0, 2)), 1, atol=1e-12)
    np.testing.assert_allclose(norm.inverse_transform(Z), X, atol=1e-12)
    with pytest.raises(NotFittedError):
        ZScoreNormalizer().transform(X)
    with pytest.raises(ValueError):
        ZScoreNormalizer().fit(np.ones((2, 4, 40)))


def test_params_protocol():
    clf = CoilFailureClassifier(kind="tcnn", epochs=3)
    assert clf.get_params()["kind"] == "tcnn"
    clf.set_params(epochs=5)
    assert clone(clf).get_params() == clf.get_params()
    with pytest.raises(ValueError):
        CoilFailureClassifier(kind="mlp").fit(*toy()[:2])


def test_fit_predict_on_separable_windows():
    X, y, groups = toy()
    clf = CoilFailureClassifier(kind="fcn", epochs=15, batch_size=8, random_state=1).fit(X, y, groups)
    assert clf.score(X, y) == 1.0
    proba = clf.predict_proba(X)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert list(clf.classes_) == [0, 1]
    assert len(clf.history_) >= 1


def test_fit_is_reproducible():
    X, y, groups = toy(8)
    a = CoilFailureClassifier(kind="tcnn", epochs=2, random_state=3).fit(X, y, groups)
    b = CoilFailureClassifier(kind="tcnn", epochs=2, random_state=3).fit(X, y, groups)
    np.testing.assert_array_equal(a.predict_proba(X), b.predict_proba(X))


def test_unfitted_predict():
    with pytest.raises(NotFittedError):
        CoilFailureClassifier().predict(np.zeros((1, 4, 40)))
