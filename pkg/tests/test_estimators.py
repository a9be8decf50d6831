"""sklearn-facade semantics: params, cloning, fitting, and validation."""

import numpy as np
import pytest
from sklearn.base import clone

from auxblocks.estimators import AuxBlockClassifier
from auxblocks.validation import as_image_batch, encode_labels


@pytest.fixture(scope="module")
def fitted(blobs):
    clf = AuxBlockClassifier(aux="mnist", tap_positions=(1, 3), epochs=4,
                             batch_size=32, learning_rate=0.05, random_state=7)
    X = blobs.images.reshape(len(blobs), -1)
    return clf.fit(X, blobs.labels), X, blobs.labels


class TestSklearnProtocol:
    def test_get_params_round_trip(self):
        clf = AuxBlockClassifier(epochs=3, learning_rate=0.02, predict_mode="score")
        params = clf.get_params()
        assert params["epochs"] == 3
        assert params["learning_rate"] == 0.02
        restored = AuxBlockClassifier(**params)
        assert restored.get_params() == params

    def test_set_params_chains(self):
        clf = AuxBlockClassifier().set_params(epochs=1, momentum=0.9)
        assert clf.epochs == 1 and clf.momentum == 0.9

    def test_clone_preserves_config_without_state(self, fitted):
        clf, _, _ = fitted
        cloned = clone(clf)
        assert cloned.get_params() == clf.get_params()
        assert not hasattr(cloned, "model_")

    def test_unfitted_predict_raises(self, blobs):
        with pytest.raises(AttributeError):
            AuxBlockClassifier().predict(blobs.images[:2])


class TestFitPredict:
    def test_fit_learns_the_blobs(self, fitted):
        clf, X, y = fitted
        assert clf.score(X, y) >= 0.95
        assert len(clf.history_) == 4
        assert clf.model_.num_aux == 2

    def test_predict_proba_rows_sum_to_one(self, fitted):
        clf, X, _ = fitted
        proba = clf.predict_proba(X[:16])
        assert proba.shape == (16, 4)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-6)

    def test_accepts_4d_and_2d_input(self, fitted, blobs):
        clf, X, _ = fitted
        from_flat = clf.predict(X[:8])
        from_images = clf.predict(blobs.images[:8])
        np.testing.assert_array_equal(from_flat, from_images)

    def test_string_labels_round_trip(self, blobs):
        names = np.array(["ant", "bee", "cat", "dog"])
        y = names[blobs.labels]
        clf = AuxBlockClassifier(aux=None, epochs=2, batch_size=32,
                                 learning_rate=0.05, random_state=0)
        clf.fit(blobs.images, y)
        preds = clf.predict(blobs.images[:20])
        assert set(preds) <= set(names)
        assert (preds == y[:20]).mean() >= 0.8

    def test_private_mode_prediction(self, blobs):
        clf = AuxBlockClassifier(aux="mnist", tap_positions=(1, 3), epochs=3,
                                 batch_size=32, learning_rate=0.05,
                                 predict_mode="private_vote", random_state=1)
        clf.fit(blobs.images, blobs.labels)
        assert clf.score(blobs.images, blobs.labels) >= 0.9

    def test_plain_backbone_when_aux_none(self, blobs):
        clf = AuxBlockClassifier(aux=None, epochs=1, batch_size=32, random_state=0)
        clf.fit(blobs.images, blobs.labels)
        assert clf.model_.num_aux == 0

    def test_wrong_input_shape_at_predict(self, fitted):
        clf, _, _ = fitted
        with pytest.raises(ValueError, match="shape"):
            clf.predict(np.zeros((2, 1, 8, 8), dtype=np.float32))


class TestValidationHelpers:
    def test_square_inference(self):
        X = as_image_batch(np.zeros((3, 64), dtype=np.float32))
        assert X.shape == (3, 1, 8, 8)

    def test_non_square_needs_shape(self):
        with pytest.raises(ValueError, match="input_shape"):
            as_image_batch(np.zeros((3, 60), dtype=np.float32))

    def test_explicit_shape(self):
        X = as_image_batch(np.zeros((3, 48), dtype=np.float32), input_shape=(3, 4, 4))
        assert X.shape == (3, 3, 4, 4)

    def test_3d_gets_channel_axis(self):
        X = as_image_batch(np.zeros((3, 5, 5), dtype=np.float32))
        assert X.shape == (3, 1, 5, 5)

    def test_range_enforced(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            as_image_batch(np.full((2, 4, 4), 7.0, dtype=np.float32))

    def test_non_finite_rejected(self):
        X = np.zeros((2, 4, 4), dtype=np.float32)
        X[0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="NaN"):
            as_image_batch(X)

    def test_encode_labels(self):
        idx, classes = encode_labels(np.array(["b", "a", "b"]))
        np.testing.assert_array_equal(classes, ["a", "b"])
        np.testing.assert_array_equal(idx, [1, 0, 1])

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="two classes"):
            encode_labels(np.zeros(5))
