"""Estimator facade with the scikit-learn fit/predict/score conventions.

``ConversationEmotionRecognizer`` exposes every pipeline hyperparameter as
a constructor argument (so ``get_params``/``set_params``/``clone`` work),
trains on a :class:`~convemo.data.Dataset`, and predicts per-utterance
emotion labels. Learned state lives in trailing-underscore attributes.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import TrainConfig
from .data import Dataset, load_dataset
from .trainer import evaluate, model_from_checkpoint, train

__all__ = ["ConversationEmotionRecognizer"]


class ConversationEmotionRecognizer(BaseEstimator):
    """Utterance-level emotion classifier over conversation datasets.

    Parameters mirror :class:`~convemo.config.TrainConfig`; see that class
    for semantics and defaults. ``X`` is a Dataset (or a path to one in the
    line-delimited record format); labels travel inside the dataset, so
    ``y`` is accepted only for interface compatibility and must be None.
    """

    def __init__(
        self,
        latent_dim=64,
        d_fusion=64,
        proj_dim=32,
        alpha=0.4,
        gamma1=0.3,
        gamma2=0.3,
        triplets_per_anchor=2,
        window_k=5,
        tau_low=1.0,
        tau_high=1.0,
        nce_temperature=0.5,
        w_same=3,
        w_cross=1,
        jacobi_alpha=0.0,
        jacobi_beta=0.0,
        jacobi_order_R=3,
        beta_cons=0.3,
        n_heads=2,
        n_layers=2,
        lambda1=1.0,
        lambda2=0.1,
        lambda3=1.0,
        steps=300,
        learning_rate=1e-3,
        adam_beta1=0.9,
        adam_beta2=0.999,
        adam_eps=1e-8,
        seed=0,
        eig_size_cap=1500,
        disable_decoupler=False,
        disable_shared_branch=False,
        disable_private_branch=False,
        disable_transformer_fusion=False,
    ):
        self.latent_dim = latent_dim
        self.d_fusion = d_fusion
        self.proj_dim = proj_dim
        self.alpha = alpha
        self.gamma1 = gamma1
        self.gamma2 = gamma2
        self.triplets_per_anchor = triplets_per_anchor
        self.window_k = window_k
        self.tau_low = tau_low
        self.tau_high = tau_high
        self.nce_temperature = nce_temperature
        self.w_same = w_same
        self.w_cross = w_cross
        self.jacobi_alpha = jacobi_alpha
        self.jacobi_beta = jacobi_beta
        self.jacobi_order_R = jacobi_order_R
        self.beta_cons = beta_cons
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.lambda3 = lambda3
        self.steps = steps
        self.learning_rate = learning_rate
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.seed = seed
        self.eig_size_cap = eig_size_cap
        self.disable_decoupler = disable_decoupler
        self.disable_shared_branch = disable_shared_branch
        self.disable_private_branch = disable_private_branch
        self.disable_transformer_fusion = disable_transformer_fusion

    def _config(self):
        kwargs = {f.name: getattr(self, f.name) for f in dataclasses.fields(TrainConfig)}
        return TrainConfig(**kwargs).validate()

    @staticmethod
    def _as_dataset(X):
        if isinstance(X, Dataset):
            return X.validate()
        if isinstance(X, (str, bytes)) or hasattr(X, "__fspath__"):
            return load_dataset(X)
        raise TypeError(f"X must be a Dataset or a dataset-file path, got {type(X).__name__}")

    def fit(self, X, y=None):
        """Train on a conversation dataset; labels come from the dataset."""
        if y is not None:
            raise ValueError("labels travel inside the Dataset; pass y=None")
        dataset = self._as_dataset(X)
        checkpoint, history = train(self._config(), dataset)
        self.checkpoint_ = checkpoint
        self.model_ = model_from_checkpoint(checkpoint)
        self.history_ = history
        self.classes_ = np.arange(dataset.num_classes)
        self.n_features_in_ = int(sum(dataset.dims))
        return self

    def predict(self, X):
        """Per-utterance labels, flattened in dataset order."""
        check_is_fitted(self, "model_")
        dataset = self._as_dataset(X)
        out = []
        for conv in dataset.conversations:
            labels, _ = self.model_.predict(conv)
            out.extend(int(v) for v in labels)
        return np.array(out, dtype=int)

    def predict_proba(self, X):
        """Per-utterance class probabilities, stacked in dataset order."""
        check_is_fitted(self, "model_")
        dataset = self._as_dataset(X)
        rows = []
        for conv in dataset.conversations:
            _, probs = self.model_.predict(conv)
            rows.append(probs)
        return np.vstack(rows)

    def score(self, X, y=None):
        """Utterance-level accuracy on a dataset."""
        return self.evaluate(X).accuracy

    def evaluate(self, X):
        """Full metrics: accuracy, weighted F1, per-class F1, confusion matrix."""
        check_is_fitted(self, "model_")
        return evaluate(self.model_, self._as_dataset(X))
