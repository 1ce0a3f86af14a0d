"""Synchronous FedAvg simulation: local training, client sampling, aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, DomainError, EmptyShardError, ProtocolError
from .nn import ModelParams, backward

COUPLING_TOL = 1e-12


@dataclass(frozen=True)
class LocalTrainSpec:
    """Local optimisation knobs for one client.

    ``steps`` counts SGD steps when ``unit == "steps"``; with
    ``unit == "epochs"`` each unit is ``ceil(n_k / batch_size)`` steps.
    Batches are always drawn uniformly with replacement from the shard.
    """

    steps: int
    batch_size: int
    eta: float
    tau: float = 1.0
    unit: str = "steps"

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError("need at least one local step")
        if self.batch_size < 1:
            raise ConfigurationError("batch size must be positive")
        if not self.eta > 0:
            raise DomainError("learning rate must be positive")
        if not self.tau > 0:
            raise DomainError("temperature must be positive")
        if self.unit not in ("steps", "epochs"):
            raise ConfigurationError(f"unit must be 'steps' or 'epochs', got {self.unit!r}")

    @property
    def beta(self) -> float:
        return self.eta / self.tau

    @classmethod
    def coupled(cls, beta, tau, steps, batch_size, unit="steps"):
        """``eta = beta * tau`` so the effective step ``eta / tau`` stays ``beta``."""
        spec = cls(steps, batch_size, beta * tau, tau, unit)
        if abs(spec.eta - beta * tau) > COUPLING_TOL:
            raise ConfigurationError("coupling violated")
        return spec

    def n_steps(self, n_samples: int) -> int:
        if self.unit == "steps":
            return self.steps
        return self.steps * math.ceil(n_samples / self.batch_size)


@dataclass(frozen=True, eq=False)
class ClientUpdate:
    client_id: int
    delta: np.ndarray
    n_k: int
    malicious: bool = False
    tag: str = "benign"

    def __post_init__(self):
        if self.n_k < 1:
            raise DomainError("client update needs n_k >= 1")
        if not np.all(np.isfinite(self.delta)):
            raise DomainError(f"client {self.client_id} produced a non-finite update")


@dataclass
class RoundRecord:
    round: int
    sampled: list
    metrics: dict | None
    diagnostics: dict = field(default_factory=dict)


def local_train(global_params: ModelParams, shard, spec: LocalTrainSpec, rs,
                client_id: int = 0, malicious: bool = False, tag: str = "benign",
                trace=None) -> ClientUpdate:
    """``spec.n_steps`` mini-batch SGD steps on the temperature-scaled loss.

    ``rs`` supplies the batch indices; two calls with identically seeded
    streams see the same batches.  ``trace``, when a list, receives the
    displacement after every step.
    """
    n = len(shard)
    if n == 0:
        raise EmptyShardError(client_id)
    theta = global_params.values.copy()
    params = global_params.with_values(theta)
    lr = theta.dtype.type(spec.eta)
    X, y = shard.features, shard.labels
    for _ in range(spec.n_steps(n)):
        idx = rs.integers(n, spec.batch_size)
        g = backward(params, X[idx], y[idx], spec.tau)
        theta -= lr * g
        if trace is not None:
            trace.append(theta - global_params.values)
    return ClientUpdate(client_id, theta - global_params.values, n, malicious, tag)


def sample_clients(n_clients: int, per_round: int, rs) -> list:
    """``per_round`` distinct ids drawn uniformly, returned in ascending order."""
    if not 1 <= per_round <= n_clients:
        raise ConfigurationError(f"cannot sample {per_round} of {n_clients} clients")
    return sorted(int(k) for k in rs.choice(n_clients, per_round))


def _check_layout(updates, base):
    if not updates:
        raise ProtocolError("no client updates to aggregate")
    for u in updates:
        if u.delta.shape != base.values.shape:
            raise ConfigurationError(f"client {u.client_id} update layout does not match the model")


def canonical(updates):
    return sorted(updates, key=lambda u: u.client_id)


def combine(base: ModelParams, deltas, weights) -> ModelParams:
    """``base + sum_k w_k delta_k`` accumulated in float64, in the given order."""
    acc = np.zeros(base.values.shape, dtype=np.float64)
    for w, d in zip(weights, deltas):
        if w:
            acc += float(w) * d.astype(np.float64, copy=False)
    return base.with_values((base.values.astype(np.float64) + acc).astype(base.values.dtype))


def fedavg_weights(updates) -> np.ndarray:
    n = np.array([u.n_k for u in updates], dtype=np.float64)
    return n / n.sum()


def fedavg(updates, base: ModelParams) -> ModelParams:
    _check_layout(updates, base)
    updates = canonical(updates)
    return combine(base, [u.delta for u in updates], fedavg_weights(updates))
