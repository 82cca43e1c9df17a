"""Scikit-learn style facade over the learning pipeline.

Estimators take the feature matrix X with the aggregated anchor columns last
(or at an explicit anchor_index) and learn latent-condition models without
ground-truth labels.  They compose with sklearn tooling via get_params /
set_params and standard fit/predict_proba semantics.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .data import Dataset
from .infer import GibbsConfig, gibbs_posterior_batch
from .model import NoiseModel
from .moments import moments_init
from .train import TrainConfig, train


def check_binary_matrix(X, name: str = "X") -> np.ndarray:
    X = check_array(X, dtype=None, ensure_2d=True)
    X = np.asarray(X)
    if not np.isin(X, (0, 1)).all():
        raise ValueError(f"{name} must be binary")
    return X.astype(np.int8)


def _split_anchors(X: np.ndarray, n_conditions: int, anchor_index) -> tuple[np.ndarray, np.ndarray]:
    if anchor_index is None:
        anchor_index = np.arange(X.shape[1] - n_conditions, X.shape[1])
    else:
        anchor_index = np.asarray(anchor_index, dtype=int)
    return X[:, anchor_index], anchor_index


class MomentsNoisyOr(BaseEstimator):
    """Moments-based noisy-or initialization as a standalone estimator."""

    def __init__(self, n_conditions=1, p_a1_y1=1.0, p_a1_y0=0.0,
                 anchor_index=None, smoothing=1.0):
        self.n_conditions = n_conditions
        self.p_a1_y1 = p_a1_y1
        self.p_a1_y0 = p_a1_y0
        self.anchor_index = anchor_index
        self.smoothing = smoothing

    def _noise(self) -> NoiseModel:
        m = self.n_conditions
        return NoiseModel(
            p_a1_y1=np.broadcast_to(np.asarray(self.p_a1_y1, dtype=float), (m,)).copy(),
            p_a1_y0=np.broadcast_to(np.asarray(self.p_a1_y0, dtype=float), (m,)).copy(),
        )

    def fit(self, X, y=None):
        X = check_binary_matrix(X)
        A, anchor_index = _split_anchors(X, self.n_conditions, self.anchor_index)
        dataset = Dataset(X=X, A=A)
        self.params_, self.diagnostics_ = moments_init(
            dataset, self._noise(), smoothing=self.smoothing,
            anchor_index=anchor_index,
        )
        return self

    def predict_proba(self, X, gibbs: GibbsConfig | None = None):
        check_is_fitted(self, "params_")
        X = check_binary_matrix(X)
        mask = np.ones_like(X, dtype=bool)
        return gibbs_posterior_batch(
            self.params_, X, mask, None, gibbs or GibbsConfig()
        )

    def predict(self, X):
        return (self.predict_proba(X) >= 0.5).astype(np.int8)


class NoisyOrTagger(MomentsNoisyOr):
    """Full pipeline estimator: moments initialization followed by
    semi-supervised variational training."""

    def __init__(self, n_conditions=1, p_a1_y1=1.0, p_a1_y0=0.0,
                 anchor_index=None, smoothing=1.0, lam=1.0, epochs=60,
                 burn_in_epochs=20, minibatch=64, lr_phi=1e-4,
                 val_records=200, seed=0):
        super().__init__(n_conditions, p_a1_y1, p_a1_y0, anchor_index, smoothing)
        self.lam = lam
        self.epochs = epochs
        self.burn_in_epochs = burn_in_epochs
        self.minibatch = minibatch
        self.lr_phi = lr_phi
        self.val_records = val_records
        self.seed = seed

    def fit(self, X, y=None):
        super().fit(X)
        X = check_binary_matrix(X)
        A, _ = _split_anchors(X, self.n_conditions, self.anchor_index)
        noise = self._noise()
        config = TrainConfig(
            lam=self.lam,
            epochs=self.epochs,
            burn_in_epochs=self.burn_in_epochs,
            minibatch=self.minibatch,
            lr_phi=self.lr_phi,
            val_records=self.val_records,
            seed=self.seed,
        )
        self.theta0_ = self.params_
        result = train(Dataset(X=X, A=A), self.theta0_, noise, config)
        self.params_ = result.best.params
        self.phi_ = result.best.phi
        self.history_ = result.history
        return self
