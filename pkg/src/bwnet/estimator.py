"""Scikit-learn style front door for the binary-weight network engine.

The estimator trains full-precision shadow weights with the binarized
backward rule and, by default, runs inference through the packed
multiplication-free path.  ``transform`` yields L2-normalized embeddings
(for verification scoring), ``predict`` yields class labels.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ConfigError
from .layers import MODE_BINARY, MODES, binarize_network, build_micro_resnet, forward_network
from .training import TrainConfig, train_network
from .validation import check_feature_array, check_labels


class BinaryWeightNetClassifier(TransformerMixin, BaseEstimator):
    """Binary-weight residual network for embedding and classification.

    Parameters mirror the engine defaults: SGD with momentum 0.95 starting
    at lr 0.01, decaying 90% every 10 epochs, embedding size 128.

    Attributes after fit: ``spec_`` (network description), ``params_``
    (full-precision shadow weights), ``banks_`` (packed binary filters),
    ``classes_``, and ``history_`` (per-epoch loss/accuracy records).
    """

    def __init__(self, depth_blocks=2, channels=(8, 16), embedding_dim=128,
                 activation="relu", epochs=20, batch_size=32, lr0=0.01,
                 momentum=0.95, clip_threshold=1.0, backward_rule="scaled",
                 clip_shadow_weights=False, inference_mode=MODE_BINARY, seed=0):
        self.depth_blocks = depth_blocks
        self.channels = channels
        self.embedding_dim = embedding_dim
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr0 = lr0
        self.momentum = momentum
        self.clip_threshold = clip_threshold
        self.backward_rule = backward_rule
        self.clip_shadow_weights = clip_shadow_weights
        self.inference_mode = inference_mode
        self.seed = seed

    def fit(self, X, y, log_fn=None):
        if self.inference_mode not in MODES:
            raise ConfigError(f"unknown inference_mode '{self.inference_mode}'")
        X = check_feature_array(X)
        y = check_labels(y, X.shape[0])
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.shape[0] < 2:
            raise ConfigError("need at least 2 classes to fit")
        self.spec_ = build_micro_resnet(
            self.depth_blocks,
            self.channels,
            num_classes=int(self.classes_.shape[0]),
            embedding_dim=self.embedding_dim,
            activation=self.activation,
            input_channels=int(X.shape[1]),
        )
        config = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr0=self.lr0,
            momentum=self.momentum,
            clip_threshold=self.clip_threshold,
            backward_rule=self.backward_rule,
            clip_shadow_weights=self.clip_shadow_weights,
            seed=self.seed,
        )
        state, history = train_network(self.spec_, (X, encoded.astype(np.int64)),
                                       config, log_fn=log_fn)
        self.params_ = state.params
        self.banks_ = binarize_network(self.spec_, self.params_)
        self.history_ = history
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def _forward(self, X):
        check_is_fitted(self, "spec_")
        X = check_feature_array(X)
        banks = self.banks_ if self.inference_mode == MODE_BINARY else None
        return forward_network(self.spec_, self.params_, X, self.inference_mode,
                               banks=banks)

    def transform(self, X):
        """L2-normalized embeddings, shape [N, embedding_dim]."""
        return self._forward(X).embedding

    def predict(self, X):
        logits = self._forward(X).logits
        return self.classes_[logits.argmax(axis=1)]

    def predict_logits(self, X):
        return self._forward(X).logits

    def score(self, X, y):
        """Mean accuracy of predict(X) against y."""
        y = check_labels(y, np.asarray(X).shape[0])
        return float(np.mean(self.predict(X) == y))
