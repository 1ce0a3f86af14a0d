"""Detectability probes: update cosine, logit cosine, penultimate linear CKA."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import rng
from .attacks import flipped_shard, tsa_spec
from .engine import LocalTrainSpec, local_train
from .exceptions import ConfigurationError, DomainError
from .nn import forward


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ConfigurationError(f"vectors differ in length: {u.size} vs {v.size}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise DomainError("cosine of a zero vector is undefined")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def linear_cka(X, Y) -> float:
    """``||Xc^T Yc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F)`` on column-centred features."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ConfigurationError("CKA needs two matrices over the same rows")
    if X.shape[0] < 2:
        raise DomainError("CKA needs at least two samples")
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    xx = np.linalg.norm(Xc.T @ Xc)
    yy = np.linalg.norm(Yc.T @ Yc)
    if xx == 0 or yy == 0:
        raise DomainError("feature matrix is constant after centring")
    return float(np.clip(np.linalg.norm(Xc.T @ Yc) ** 2 / (xx * yy), 0.0, 1.0))


def logit_similarity(Z1, Z2) -> float:
    """Mean over samples of the cosine between paired logit vectors."""
    Z1 = np.asarray(Z1, dtype=np.float64)
    Z2 = np.asarray(Z2, dtype=np.float64)
    if Z1.shape != Z2.shape:
        raise ConfigurationError("logit matrices differ in shape")
    n1 = np.linalg.norm(Z1, axis=1)
    n2 = np.linalg.norm(Z2, axis=1)
    if np.any(n1 == 0) or np.any(n2 == 0):
        raise DomainError("zero logit vector")
    return float(np.mean(np.sum(Z1 * Z2, axis=1) / (n1 * n2)))


def representations(model, X, chunk=4096):
    zs, hs = [], []
    for i in range(0, X.shape[0], chunk):
        z, h = forward(model, X[i:i + chunk])
        zs.append(z)
        hs.append(h)
    return np.concatenate(zs), np.concatenate(hs)


def representation_similarity(model_a, model_b, X) -> tuple[float, float]:
    """``(mean per-sample logit cosine, penultimate linear CKA)`` on inputs ``X``."""
    za, ha = representations(model_a, X)
    zb, hb = representations(model_b, X)
    return logit_similarity(za, zb), linear_cka(ha, hb)


@dataclass(frozen=True)
class Arm:
    name: str
    kind: str = "benign"
    tau: float = 1.0
    coupling: bool = True
    sigma: float = 0.0
    k_shift: int = 1


def default_arms():
    arms = [Arm(f"tsa_tau={t:g}", "tsa", t) for t in (0.2, 0.5, 2.0, 5.0)]
    arms += [Arm(f"tsa_uncoupled_tau={t:g}", "tsa", t, coupling=False) for t in (0.2, 5.0)]
    arms += [Arm(f"noise_sigma={s:g}", "noise", sigma=s) for s in (0.1, 0.05, 0.01)]
    arms += [Arm(f"label_flip_k={k}", "label_flip", k_shift=k) for k in range(1, 6)]
    return arms


def _arm_trace(arm: Arm, start, shard, spec: LocalTrainSpec, seed: int):
    trace = []
    rs = rng.stream(seed, "probe")
    if arm.kind == "tsa":
        local_train(start, shard, tsa_spec(spec, arm.tau, arm.coupling), rs, trace=trace)
    elif arm.kind == "label_flip":
        local_train(start, flipped_shard(shard, arm.k_shift), spec, rs, trace=trace)
    elif arm.kind in ("benign", "noise"):
        local_train(start, shard, spec, rs, trace=trace)
        if arm.kind == "noise" and arm.sigma > 0:
            eps = arm.sigma * rng.stream(seed, "probe-noise").normal(start.values.size)
            trace = [d.astype(np.float64) + eps for d in trace]
    else:
        raise ConfigurationError(f"unknown probe arm kind {arm.kind!r}")
    return trace


def update_similarity_probe(start, shard, spec: LocalTrainSpec, arms, seed: int = 0):
    """Cosine of each arm's displacement to the benign (tau = 1) one after every local step.

    All arms start from ``start`` and replay the same batch sequence, so the
    attack knob is the only difference.  Returns ``[(arm, steps, cosine), ...]``.
    """
    if spec.tau != 1.0:
        raise ConfigurationError("the probe reference must be the benign tau = 1 spec")
    ref = _arm_trace(Arm("benign"), start, shard, spec, seed)
    rows = []
    for arm in arms:
        trace = _arm_trace(arm, start, shard, spec, seed)
        for s, (d_ref, d_arm) in enumerate(zip(ref, trace), 1):
            rows.append((arm.name, s, cosine(d_arm, d_ref)))
    return rows


def probe_start(cfg, seed: int, data, warmup_rounds: int, threads: int = 1):
    """Benign global model after ``warmup_rounds`` rounds, plus the experiment for its shards."""
    from .simulation import Experiment

    warm = cfg.with_overrides(**{"rounds": warmup_rounds, "attack.kind": "none", "posthoc.kind": "none"})
    exp = Experiment(warm, seed, data, threads)
    return exp.run().final, exp


def seed_pairs(models: dict, X):
    """``[(seed_i, seed_j, logit_cos, cka), ...]`` over all unordered pairs."""
    reps = {s: representations(m, X) for s, m in models.items()}
    rows = []
    for a, b in combinations(sorted(models), 2):
        rows.append((a, b, logit_similarity(reps[a][0], reps[b][0]), linear_cka(reps[a][1], reps[b][1])))
    return rows


def seed_variability_baseline(cfg, seeds, data=None, n_samples=None, threads=1):
    """Train one benign run per seed and compare every pair on the test set."""
    from .simulation import load_data, run_experiment

    if len(seeds) < 2:
        raise ConfigurationError("need at least two seeds")
    train, test = data if data is not None else load_data(cfg)
    benign = cfg.with_overrides(**{"attack.kind": "none"})
    models = {s: run_experiment(benign, s, (train, test), threads).final for s in seeds}
    X = test.features if n_samples is None else test.features[:n_samples]
    return seed_pairs(models, X), models


__all__ = [
    "Arm",
    "cosine",
    "default_arms",
    "linear_cka",
    "logit_similarity",
    "probe_start",
    "representation_similarity",
    "seed_pairs",
    "seed_variability_baseline",
    "update_similarity_probe",
]
