"""Malicious client behaviours: temperature scaling attack and poisoning baselines."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ConfigurationError, DomainError
from .engine import ClientUpdate, LocalTrainSpec, local_train

ATTACK_KINDS = ("none", "tsa", "noise", "label_flip")


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "none"
    tau: float = 1.0
    coupling: bool = True
    sigma: float = 0.0
    k_shift: int = 1
    attacker_ids: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigurationError(f"unknown attack kind {self.kind!r}")
        if self.kind == "tsa" and not self.tau > 0:
            raise DomainError("attack temperature must be positive")
        if self.kind == "noise" and self.sigma < 0:
            raise DomainError("noise sigma must be non-negative")
        object.__setattr__(self, "attacker_ids", frozenset(int(k) for k in self.attacker_ids))

    def check_fraction(self, n_clients: int) -> None:
        if self.kind != "none" and len(self.attacker_ids) / n_clients >= 0.5:
            warnings.warn(
                f"{len(self.attacker_ids)}/{n_clients} attackers exceeds the honest-majority threat model"
            )


def tsa_spec(base: LocalTrainSpec, tau: float, coupling: bool = True) -> LocalTrainSpec:
    """Attacker's local spec: temperature ``tau`` with ``eta = beta * tau`` (or base eta if uncoupled)."""
    if not tau > 0:
        raise DomainError("attack temperature must be positive")
    if coupling:
        return LocalTrainSpec.coupled(base.beta, tau, base.steps, base.batch_size, base.unit)
    return replace(base, tau=tau)


def tsa_local_train(global_params, shard, base: LocalTrainSpec, tau: float, coupling: bool, rs,
                    client_id: int = 0, trace=None) -> ClientUpdate:
    return local_train(global_params, shard, tsa_spec(base, tau, coupling), rs,
                       client_id=client_id, malicious=True, tag="tsa", trace=trace)


def noise_inject(update: ClientUpdate, sigma: float, rs) -> ClientUpdate:
    """Add i.i.d. N(0, sigma^2) to every coordinate of the update."""
    if sigma < 0:
        raise DomainError("noise sigma must be non-negative")
    if sigma == 0:
        return replace(update, malicious=True, tag="noise")
    noise = rs.normal(update.delta.size).reshape(update.delta.shape)
    delta = (update.delta.astype(np.float64) + sigma * noise).astype(update.delta.dtype)
    return replace(update, delta=delta, malicious=True, tag="noise")


def flip_labels(labels, k_shift: int, n_classes: int) -> np.ndarray:
    """``(y + k) mod C``."""
    if not 1 <= k_shift < n_classes:
        raise ConfigurationError(f"label shift must lie in [1, {n_classes}), got {k_shift}")
    return (np.asarray(labels, dtype=np.int64) + k_shift) % n_classes


def flipped_shard(shard, k_shift: int):
    from .data import Dataset

    return Dataset(shard.features, flip_labels(shard.labels, k_shift, shard.n_classes), shard.n_classes)


def attacked_update(attack: AttackConfig, global_params, shard, base: LocalTrainSpec, rs,
                    noise_rs=None, client_id: int = 0, trace=None) -> ClientUpdate:
    """Run one malicious client's round under ``attack``."""
    if attack.kind == "tsa":
        return tsa_local_train(global_params, shard, base, attack.tau, attack.coupling, rs,
                               client_id=client_id, trace=trace)
    if attack.kind == "label_flip":
        return local_train(global_params, flipped_shard(shard, attack.k_shift), base, rs,
                           client_id=client_id, malicious=True, tag="label_flip", trace=trace)
    if attack.kind == "noise":
        if noise_rs is None:
            raise ConfigurationError("noise attack needs its own stream")
        honest = local_train(global_params, shard, base, rs, client_id=client_id, trace=trace)
        return noise_inject(honest, attack.sigma, noise_rs)
    return local_train(global_params, shard, base, rs, client_id=client_id, trace=trace)
