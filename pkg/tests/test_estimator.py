import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from bwnet.errors import ShapeError
from bwnet.estimator import BinaryWeightNetClassifier

from test_training import toy_two_class


@pytest.fixture(scope="module")
def fitted():
    X, y = toy_two_class(seed=0)
    clf = BinaryWeightNetClassifier(depth_blocks=1, channels=(4,), embedding_dim=8,
                                    epochs=50, batch_size=1, seed=0)
    return clf.fit(X, y), X, y


class TestSklearnProtocol:
    def test_get_set_params_round_trip(self):
        clf = BinaryWeightNetClassifier(epochs=3, channels=(4, 8))
        params = clf.get_params()
        assert params["epochs"] == 3
        other = BinaryWeightNetClassifier().set_params(**params)
        assert other.get_params() == params

    def test_clone(self):
        clf = BinaryWeightNetClassifier(depth_blocks=3, channels=(2, 4, 8), seed=5)
        cloned = clone(clf)
        assert cloned.get_params() == clf.get_params()

    def test_unfitted_predict_raises(self):
        with pytest.raises(NotFittedError):
            BinaryWeightNetClassifier().predict(np.zeros((1, 1, 8, 8), np.float32))


class TestFitPredictTransform:
    def test_fits_and_overfits_toy_task(self, fitted):
        clf, X, y = fitted
        assert clf.score(X, y) >= 0.9

    def test_transform_returns_unit_embeddings(self, fitted):
        clf, X, _ = fitted
        emb = clf.transform(X)
        assert emb.shape == (len(X), 8)
        assert np.max(np.abs(np.linalg.norm(emb, axis=1) - 1.0)) < 1e-5

    def test_predict_returns_original_labels(self):
        X, y = toy_two_class(seed=1)
        labels = np.array(["spk_a", "spk_b"])[y]
        clf = BinaryWeightNetClassifier(depth_blocks=1, channels=(4,),
                                        embedding_dim=8, epochs=30,
                                        batch_size=1, seed=1)
        clf.fit(X, labels)
        assert set(clf.classes_) == {"spk_a", "spk_b"}
        assert set(clf.predict(X)) <= {"spk_a", "spk_b"}

    def test_fullprec_inference_mode(self, fitted):
        clf, X, y = fitted
        full = clone(clf).set_params(inference_mode="train_fullprec")
        full.fit(X, y)
        assert full.predict(X).shape == y.shape

    def test_three_dim_input_gains_channel_axis(self, fitted):
        clf, X, _ = fitted
        squeezed = X[:, 0]
        assert np.array_equal(clf.transform(squeezed), clf.transform(X))

    def test_history_records_every_epoch(self, fitted):
        clf, _, _ = fitted
        assert len(clf.history_) == 50
        assert {"epoch", "lr", "loss", "accuracy"} <= set(clf.history_[0])

    def test_bad_input_rank_rejected(self, fitted):
        clf, _, _ = fitted
        with pytest.raises(ShapeError):
            clf.predict(np.zeros((4, 4), np.float32))
