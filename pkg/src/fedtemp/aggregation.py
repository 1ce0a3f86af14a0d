"""Server aggregation rules: FedAvg, FLTrust, FoolsGold, MultiKrum.

Each rule folds updates in ascending client-id order, so results do not
depend on the order updates arrive in.  The ``*_weights`` / ``krum_scores``
helpers expose the per-client diagnostics the round loop records.
"""

from __future__ import annotations

import numpy as np

from .engine import _check_layout, canonical, combine, fedavg, fedavg_weights
from .exceptions import ConfigurationError


def _cos(u, v) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(u @ v / (nu * nv))


def fltrust_weights(updates, root_update, normalize=True):
    """Rectified cosine trust scores and the deltas they apply to.

    With ``normalize`` every update longer than the root update is clipped
    to the root norm.
    """
    root = np.asarray(root_update, dtype=np.float64)
    root_norm = float(np.linalg.norm(root))
    if root_norm == 0:
        raise ConfigurationError("FLTrust needs a non-zero root update")
    scores, deltas = [], []
    for u in updates:
        d = u.delta.astype(np.float64)
        s = max(0.0, _cos(d, root))
        n = np.linalg.norm(d)
        if normalize and n > root_norm:
            d = d * (root_norm / n)
        scores.append(s)
        deltas.append(d)
    return np.array(scores), deltas, root_norm


def fltrust(updates, base, root_update, normalize=True):
    _check_layout(updates, base)
    updates = canonical(updates)
    scores, deltas, _ = fltrust_weights(updates, root_update, normalize)
    total = scores.sum()
    if total == 0:
        return base.copy()
    return combine(base, deltas, scores / total)


def foolsgold_weights(history_vectors, confidence=1.0, eps=1e-5):
    """FoolsGold multipliers from per-client cumulative update vectors (rows)."""
    H = np.asarray(history_vectors, dtype=np.float64)
    n = H.shape[0]
    if n == 1:
        return np.ones(1)
    norms = np.linalg.norm(H, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    U = H / safe[:, None]
    cs = U @ U.T
    cs[norms == 0, :] = 0.0
    cs[:, norms == 0] = 0.0
    np.fill_diagonal(cs, -np.inf)
    v = cs.max(axis=1)
    # pardoning: an honest client that merely resembles a sybil is not penalised for it
    for i in range(n):
        for j in range(n):
            if i != j and v[i] < v[j] and v[j] > 0:
                cs[i, j] *= v[i] / v[j]
    wv = np.clip(1.0 - cs.max(axis=1), 0.0, 1.0)
    if wv.max() == 0:
        return np.zeros(n)
    wv = np.clip(wv / wv.max(), eps, 0.99)
    wv = confidence * (np.log(wv / (1.0 - wv)) + 0.5)
    return np.clip(wv, 0.0, 1.0)


def foolsgold(updates, base, history, confidence=1.0):
    """Accumulate ``updates`` into ``history`` (mutated) and aggregate with FoolsGold weights.

    ``history`` maps client id to its cumulative delta (float64).
    """
    _check_layout(updates, base)
    updates = canonical(updates)
    for u in updates:
        prev = history.get(u.client_id)
        d = u.delta.astype(np.float64)
        history[u.client_id] = d.copy() if prev is None else prev + d
    wv = foolsgold_weights([history[u.client_id] for u in updates], confidence)
    w = wv * fedavg_weights(updates)
    if w.sum() == 0:
        return base.copy(), wv
    return combine(base, [u.delta for u in updates], w / w.sum()), wv


def krum_scores(deltas, f: int) -> np.ndarray:
    """Sum of squared distances from each update to its ``n - f - 2`` nearest others."""
    X = np.stack([np.asarray(d, dtype=np.float64) for d in deltas])
    n = X.shape[0]
    if f < 0 or n < f + 3:
        raise ConfigurationError(
            f"MultiKrum needs at least f + 3 = {f + 3} updates, got {n}"
        )
    sq = np.sum(X * X, axis=1)
    D = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)
    k = n - f - 2
    scores = np.empty(n)
    for i in range(n):
        others = np.delete(D[i], i)
        scores[i] = np.sort(others)[:k].sum()
    return scores


def multikrum_select(updates, f: int, m: int):
    updates = canonical(updates)
    if not 1 <= m <= len(updates):
        raise ConfigurationError(f"MultiKrum selection size {m} outside [1, {len(updates)}]")
    scores = krum_scores([u.delta for u in updates], f)
    order = np.argsort(scores, kind="stable")[:m]
    return sorted(updates[i].client_id for i in order), scores


def multikrum(updates, base, f: int, m: int):
    _check_layout(updates, base)
    updates = canonical(updates)
    selected, _ = multikrum_select(updates, f, m)
    chosen = [u for u in updates if u.client_id in selected]
    return combine(base, [u.delta for u in chosen], np.full(len(chosen), 1.0 / len(chosen)))


class FedAvg:
    name = "fedavg"

    def reset(self):
        pass

    def __call__(self, updates, base, root_update=None):
        updates = canonical(updates)
        w = fedavg_weights(updates)
        return fedavg(updates, base), {"weights": dict(zip([u.client_id for u in updates], w.tolist()))}


class FLTrust:
    name = "fltrust"
    needs_root = True

    def __init__(self, normalize=True):
        self.normalize = normalize

    def reset(self):
        pass

    def __call__(self, updates, base, root_update=None):
        if root_update is None:
            raise ConfigurationError("FLTrust needs a root update each round")
        updates = canonical(updates)
        scores, _, root_norm = fltrust_weights(updates, root_update, self.normalize)
        out = fltrust(updates, base, root_update, self.normalize)
        return out, {"weights": dict(zip([u.client_id for u in updates], scores.tolist())),
                     "root_norm": root_norm}


class FoolsGold:
    name = "foolsgold"

    def __init__(self, confidence=1.0):
        self.confidence = confidence
        self.history = {}

    def reset(self):
        self.history = {}

    def __call__(self, updates, base, root_update=None):
        updates = canonical(updates)
        out, wv = foolsgold(updates, base, self.history, self.confidence)
        return out, {"weights": dict(zip([u.client_id for u in updates], wv.tolist()))}


class MultiKrum:
    """``f`` defaults to the expected attacker count among the sampled updates."""

    name = "multikrum"

    def __init__(self, f=None, m=None, attacker_fraction=0.0):
        self.f = f
        self.m = m
        self.attacker_fraction = attacker_fraction

    def reset(self):
        pass

    def resolve(self, n_updates):
        f = self.f
        if f is None:
            f = int(np.floor(self.attacker_fraction * n_updates + 0.5))
            f = max(0, min(f, n_updates - 3))
        m = self.m if self.m is not None else n_updates - f
        return f, min(m, n_updates)

    def __call__(self, updates, base, root_update=None):
        updates = canonical(updates)
        f, m = self.resolve(len(updates))
        selected, scores = multikrum_select(updates, f, m)
        return multikrum(updates, base, f, m), {
            "selected": selected,
            "weights": {u.client_id: float(u.client_id in selected) / len(selected) for u in updates},
            "scores": dict(zip([u.client_id for u in updates], scores.tolist())),
        }


def make_aggregator(kind: str, **params):
    table = {"fedavg": FedAvg, "fltrust": FLTrust, "foolsgold": FoolsGold, "multikrum": MultiKrum}
    try:
        return table[kind](**params)
    except KeyError:
        raise ConfigurationError(f"unknown defense {kind!r}") from None
