"""scikit-learn compatible wrapper around two-phase margin training."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils import check_random_state
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from .autodiff import softmax_np
from .datagen import Dataset
from .margins import OrdinalSchema
from .metrics import evaluate_predictions, margin_report
from .sampler import BatchSpec
from .trainer import TrainConfig, train_cloc


class CLOCClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Ordinal classifier trained with cross-entropy plus a multi-margin n-pair loss.

    Class labels are ordered by sorting (``np.unique``), so pass ranks that
    sort in their ordinal order. ``transform`` returns the learned
    embeddings; ``margins_`` holds the C-1 adjacent-rank margins after
    training.

    Parameters mirror :class:`cloc.trainer.TrainConfig`; ``fixed_margins``
    maps a 1-based boundary index to a fixed margin value.
    """

    def __init__(self, hidden_layer_sizes=(64, 64), embedding_dim=16, classifier_hidden=32,
                 learning_rate=1e-3, max_epochs=500, phase1_stop_train_accuracy=0.95,
                 phase2_patience=10, rho=0.0, margin_mode="per_pair", margin_constant=1.0,
                 fixed_margins=None, ranks_per_batch=None, samples_per_rank=4, mm_weight=1.0,
                 precautions=True, two_phase=True, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.embedding_dim = embedding_dim
        self.classifier_hidden = classifier_hidden
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.phase1_stop_train_accuracy = phase1_stop_train_accuracy
        self.phase2_patience = phase2_patience
        self.rho = rho
        self.margin_mode = margin_mode
        self.margin_constant = margin_constant
        self.fixed_margins = fixed_margins
        self.ranks_per_batch = ranks_per_batch
        self.samples_per_rank = samples_per_rank
        self.mm_weight = mm_weight
        self.precautions = precautions
        self.two_phase = two_phase
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        seed = self.random_state
        if not isinstance(seed, (int, np.integer)):
            seed = check_random_state(seed).randint(2**31 - 1)
        cfg = TrainConfig(
            learning_rate=self.learning_rate,
            max_epochs=self.max_epochs,
            phase1_stop_train_accuracy=self.phase1_stop_train_accuracy,
            phase2_patience=self.phase2_patience,
            rho=self.rho,
            batch_spec=BatchSpec(self.ranks_per_batch, self.samples_per_rank),
            seed=int(seed),
            margin_mode=self.margin_mode,
            margin_constant=self.margin_constant,
            fixed_overrides=dict(self.fixed_margins or {}),
            phase1_only=not self.two_phase,
            mm_weight=self.mm_weight,
            hidden=tuple(self.hidden_layer_sizes),
            embedding_dim=self.embedding_dim,
            classifier_hidden=self.classifier_hidden,
        )
        return cfg if self.precautions else cfg.without_precautions()

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        self.label_encoder_ = LabelEncoder().fit(y)
        self.classes_ = self.label_encoder_.classes_
        if self.classes_.size < 2:
            raise ValueError("CLOCClassifier needs at least two ordered classes")
        ranks = self.label_encoder_.transform(y) + 1
        data = Dataset(np.arange(X.shape[0]), X, ranks, int(self.classes_.size))
        result = train_cloc(data, self._config())
        self.model_ = result.model
        self.margin_set_ = result.margins
        self.margins_ = result.margins.values()
        self.train_log_ = result.logs
        return self

    def _checked(self, X):
        check_is_fitted(self, "model_")
        return validate_data(self, X, reset=False, dtype=np.float64)

    def decision_function(self, X):
        X = self._checked(X)
        return self.model_.logits(X)

    def predict_proba(self, X):
        return softmax_np(self.decision_function(X), axis=1)

    def predict(self, X):
        idx = np.argmax(self.decision_function(X), axis=1)
        return self.classes_[idx]

    def transform(self, X):
        """Learned embeddings of X."""
        X = self._checked(X)
        return self.model_.embed(X)

    def fit_transform(self, X, y=None, **fit_params):
        if y is None:
            raise ValueError("CLOCClassifier is supervised; fit_transform needs y")
        return self.fit(X, y).transform(X)

    def mae(self, X, y) -> float:
        """Mean absolute error in rank-index units."""
        pred = self.label_encoder_.transform(self.predict(X))
        true = self.label_encoder_.transform(np.asarray(y))
        return float(np.mean(np.abs(pred - true)))

    def evaluation_report(self, X, y) -> dict:
        pred = self.label_encoder_.transform(self.predict(X)) + 1
        true = self.label_encoder_.transform(np.asarray(y)) + 1
        return evaluate_predictions(true, pred, int(self.classes_.size)).to_dict()

    def margin_report(self) -> dict:
        check_is_fitted(self, "model_")
        schema = OrdinalSchema(int(self.classes_.size), tuple(self.classes_))
        return margin_report(self.margin_set_, schema)
