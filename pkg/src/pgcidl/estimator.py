"""scikit-learn compatible estimators over bags of instances.

``X`` is a sequence of 2-D arrays (one per bag, rows are instances) and ``y``
holds one label per bag.

Examples
--------
>>> from pgcidl import PGCIDLClassifier, SynthConfig, generate_synthetic
>>> ds = generate_synthetic(SynthConfig(num_bags=12, seed=0))
>>> X = [b.features for b in ds.bags]; y = ds.labels
>>> clf = PGCIDLClassifier(epochs=2, lr=1e-3).fit(X, y)
>>> clf.predict_proba(X).shape
(12, 3)
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import Bag, Dataset
from .model import encode, forward, mean_pool_forward
from .train import TrainConfig, train
from .validation import check_bags, check_bags_y


class PGCIDLClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Latent-factor grouping + counterfactual re-weighting MIL classifier.

    Parameters
    ----------
    width : int
        Encoder output dimension.
    rank : int or None
        Rank of the metric factor; ``None`` means ``min(width - 1, 64)``.
    gamma : float
        Weight of the group-separation term subtracted from the loss.
    agg_mode : {"centroid_weighted", "instance_weighted"}
    epochs, batch_size : int
    lr : float or None
        Constant learning rate; ``None`` uses ``lr_schedule``.
    lr_schedule : tuple of (first_epoch, last_epoch, lr) or None
        ``None`` stretches the 1e-5 / 5e-6 / 1e-6 step schedule over ``epochs``.
    seed : int
    rms_decay, rms_epsilon : float
        RMSprop hyper-parameters.

    Attributes
    ----------
    classes_ : ndarray
    params_ : ModelParams
    history_ : TrainHistory
    n_features_in_ : int
    """

    _model = "pgcidl"

    def __init__(self, width=64, rank=None, gamma=0.1, agg_mode="centroid_weighted", epochs=100,
                 batch_size=2, lr=None, lr_schedule=None, seed=0, rms_decay=0.9,
                 rms_epsilon=1e-8):
        self.width = width
        self.rank = rank
        self.gamma = gamma
        self.agg_mode = agg_mode
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_schedule = lr_schedule
        self.seed = seed
        self.rms_decay = rms_decay
        self.rms_epsilon = rms_epsilon

    def _config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, gamma=self.gamma,
                           seed=self.seed, lr_schedule=self.lr_schedule, lr=self.lr, rank=self.rank,
                           agg_mode=self.agg_mode, width=self.width, rms_decay=self.rms_decay,
                           rms_epsilon=self.rms_epsilon, model=self._model)

    def _dataset(self, bags, codes, name):
        return Dataset([Bag(b, int(c), f"{name}_{i:05d}") for i, (b, c) in enumerate(zip(bags, codes))],
                       len(self.classes_), self.n_features_in_, name)

    def fit(self, X, y, X_val=None, y_val=None):
        """Train on bags ``X`` with bag labels ``y``; optional validation bags feed the history."""
        bags, y = check_bags_y(X, y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        self.n_features_in_ = bags[0].shape[1]
        self.config_ = self._config()
        val = None
        if X_val is not None:
            vb, vy = check_bags_y(X_val, y_val)
            val = self._dataset(vb, np.searchsorted(self.classes_, vy), "val")
        self.params_, self.history_ = train(self.config_, self._dataset(bags, codes, "train"), val)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        bags = check_bags(X, self.n_features_in_)
        if self._model == "mean_pool":
            return np.array([mean_pool_forward(self.params_, b) for b in bags])
        cfg = self.config_.loss_config
        return np.array([forward(self.params_, b, cfg).probs for b in bags])

    def predict(self, X):
        check_is_fitted(self, "params_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def explain(self, X):
        """Full forward traces (grouping, effects, factor map) for each bag."""
        check_is_fitted(self, "params_")
        cfg = self.config_.loss_config
        return [forward(self.params_, b, cfg) for b in check_bags(X, self.n_features_in_)]

    def transform(self, X):
        """Bag embeddings: the effect-re-weighted ``z_final`` of each bag."""
        return np.array([t.z_final for t in self.explain(X)])


class MeanPoolingMILClassifier(PGCIDLClassifier):
    """Same encoder and head, plain mean pooling, no grouping or re-weighting."""

    _model = "mean_pool"

    def transform(self, X):
        check_is_fitted(self, "params_")
        return np.array([encode(self.params_, b).mean(axis=0) for b in check_bags(X, self.n_features_in_)])
