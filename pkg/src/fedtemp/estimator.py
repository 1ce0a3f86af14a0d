"""scikit-learn style wrapper around a full federated training run."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .config import ExperimentConfig
from .data import Dataset
from .nn import forward, softmax


class FederatedClassifier(ClassifierMixin, BaseEstimator):
    """Train the two-layer MLP with simulated federated rounds on ``(X, y)``.

    ``X`` is split into non-IID client shards (Dirichlet ``alpha``); a fraction
    ``attackers / clients`` of them can run an attack.  ``root_size`` and
    ``holdout`` samples are reserved for the server before partitioning.
    """

    def __init__(self, clients=10, clients_per_round=5, rounds=20, local_steps=5, local_unit="epochs",
                 batch_size=64, beta=0.01, alpha=1.0, hidden=64, attack="none", tau=1.0, coupling=True,
                 sigma=0.1, k_shift=1, attackers=0, defense="fedavg", root_size=10, holdout=10,
                 precision="float32", random_state=0, threads=1):
        self.clients = clients
        self.clients_per_round = clients_per_round
        self.rounds = rounds
        self.local_steps = local_steps
        self.local_unit = local_unit
        self.batch_size = batch_size
        self.beta = beta
        self.alpha = alpha
        self.hidden = hidden
        self.attack = attack
        self.tau = tau
        self.coupling = coupling
        self.sigma = sigma
        self.k_shift = k_shift
        self.attackers = attackers
        self.defense = defense
        self.root_size = root_size
        self.holdout = holdout
        self.precision = precision
        self.random_state = random_state
        self.threads = threads

    def _config(self) -> ExperimentConfig:
        return ExperimentConfig().with_overrides(**{
            "clients": int(self.clients),
            "clients_per_round": int(self.clients_per_round),
            "rounds": int(self.rounds),
            "local_steps": int(self.local_steps),
            "local_unit": self.local_unit,
            "batch_size": int(self.batch_size),
            "beta": float(self.beta),
            "alpha": float(self.alpha),
            "precision": self.precision,
            "eval_stride": max(1, int(self.rounds)),
            "data.hidden": int(self.hidden),
            "attack.kind": self.attack,
            "attack.tau": float(self.tau),
            "attack.coupling": bool(self.coupling),
            "attack.sigma": float(self.sigma),
            "attack.k_shift": int(self.k_shift),
            "attack.attackers": int(self.attackers),
            "defense.kind": self.defense,
            "defense.root_size": int(self.root_size),
            "posthoc.holdout": int(self.holdout),
            "posthoc.n_cal": int(self.holdout),
        })

    def fit(self, X, y):
        from .simulation import Experiment

        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need samples of at least two classes")
        dtype = np.float32 if self.precision == "float32" else np.float64
        data = Dataset(X.astype(dtype), codes, int(self.classes_.size))
        exp = Experiment(self._config(), int(self.random_state), (data, data), self.threads)
        result = exp.run()
        self.params_ = result.final
        self.attacker_ids_ = list(result.attacker_ids)
        self.history_ = result.records
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        logits, _ = forward(self.params_, X.astype(self.params_.values.dtype))
        return np.asarray(logits, dtype=np.float64)

    def predict_proba(self, X):
        return softmax(self.decision_function(X), 1.0)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]
