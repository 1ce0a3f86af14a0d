"""End-to-end federated runs: data split, attackers, round loop, evaluation."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .aggregation import FedAvg, make_aggregator
from .attacks import AttackConfig, attacked_update
from .calibration import (
    apply_calibrator,
    calibration_report,
    evaluate,
    fit_calibrator,
)
from .config import ExperimentConfig
from .data import Dataset, dirichlet_partition, load_idx, synth_blobs
from .engine import LocalTrainSpec, RoundRecord, local_train, sample_clients
from .exceptions import ConfigurationError, EmptyShardError
from .nn import init_params

log = logging.getLogger(__name__)


def load_data(cfg: ExperimentConfig):
    """``(train, test)`` for the configured source."""
    d = cfg.data
    if d.source == "synth":
        # test blobs share centres but draw noise from a different seed
        train = synth_blobs(d.synth_classes, d.synth_per_class, d.synth_dim, d.synth_spread, seed=0)
        test = synth_blobs(d.synth_classes, d.synth_test_per_class, d.synth_dim, d.synth_spread, seed=1)
        return train, test
    root = Path(d.dir)
    train = load_idx(root / d.train_images, root / d.train_labels)
    test = load_idx(root / d.test_images, root / d.test_labels)
    return train, test


def model_shapes(cfg: ExperimentConfig, train: Dataset):
    return ((train.n_features, cfg.data.hidden), (cfg.data.hidden, train.n_classes))


@dataclass
class Split:
    """Server-side holdouts carved from the training set before partitioning."""

    root: np.ndarray
    calibration: np.ndarray
    pool: np.ndarray


def split_train(cfg: ExperimentConfig, n: int, seed: int) -> Split:
    need = cfg.defense.root_size + cfg.posthoc.holdout
    if n - need < cfg.clients:
        raise ConfigurationError(
            f"training set of {n} cannot hold root ({cfg.defense.root_size}) + calibration "
            f"({cfg.posthoc.holdout}) holdouts and still give {cfg.clients} clients a sample"
        )
    perm = rng.stream(seed, "holdout").permutation(n)
    r, h = cfg.defense.root_size, cfg.posthoc.holdout
    return Split(np.sort(perm[:r]), np.sort(perm[r:r + h]), np.sort(perm[r + h:]))


def choose_attackers(cfg: ExperimentConfig, seed: int) -> list:
    if cfg.attacker_count == 0:
        return []
    ids = rng.stream(seed, "attackers").choice(cfg.clients, cfg.attacker_count)
    return sorted(int(k) for k in ids)


def base_spec(cfg: ExperimentConfig) -> LocalTrainSpec:
    return LocalTrainSpec(cfg.local_steps, cfg.batch_size, cfg.beta, 1.0, cfg.local_unit)


def make_defense(cfg: ExperimentConfig):
    df = cfg.defense
    if df.kind == "fltrust":
        return make_aggregator("fltrust", normalize=df.normalize)
    if df.kind == "foolsgold":
        return make_aggregator("foolsgold", confidence=df.confidence)
    if df.kind == "multikrum":
        return make_aggregator(
            "multikrum",
            f=None if df.f < 0 else df.f,
            m=None if df.m < 0 else df.m,
            attacker_fraction=cfg.attack.attackers / cfg.clients,
        )
    return FedAvg()


@dataclass
class ExperimentResult:
    seed: int
    records: list
    initial: object
    final: object
    attacker_ids: list
    split: Split
    partition: object
    final_report: object = None
    posthoc_report: object = None
    extras: dict = field(default_factory=dict)


class Experiment:
    """One seeded run of the configured federation.

    Per-client streams are keyed by ``(seed, "batches", round, client)``, so
    training clients on a thread pool gives the same bits as a sequential loop.
    """

    def __init__(self, cfg: ExperimentConfig, seed: int, data=None, threads: int = 1):
        self.cfg = cfg
        self.seed = seed
        self.threads = max(1, int(threads))
        self.train, self.test = data if data is not None else load_data(cfg)
        self.dtype = np.float32 if cfg.precision == "float32" else np.float64
        self.split = split_train(cfg, len(self.train), seed)
        pool = self.train.subset(self.split.pool)
        self.partition = dirichlet_partition(pool, cfg.clients, cfg.alpha, seed)
        self.shards = [pool.subset(a) for a in self.partition.assignments]
        self.root = self.train.subset(self.split.root)
        self.attacker_ids = choose_attackers(cfg, seed)
        a = cfg.attack
        self.attack = AttackConfig(a.kind, a.tau, a.coupling, a.sigma, a.k_shift, frozenset(self.attacker_ids))
        self.attack.check_fraction(cfg.clients)
        if a.kind == "label_flip" and not a.k_shift < self.train.n_classes:
            raise ConfigurationError(f"attack.k_shift must be < {self.train.n_classes}")
        self.spec = base_spec(cfg)
        self.defense = make_defense(cfg)
        self.defense.reset()
        self.initial = init_params(model_shapes(cfg, self.train), rng.stream(seed, "init"), self.dtype)

    def client_update(self, params, t: int, k: int):
        rs = rng.stream(self.seed, "batches", t, k)
        shard = self.shards[k]
        if k in self.attack.attacker_ids and self.attack.kind != "none":
            return attacked_update(self.attack, params, shard, self.spec, rs,
                                   noise_rs=rng.stream(self.seed, "noise", t, k), client_id=k)
        return local_train(params, shard, self.spec, rs, client_id=k)

    def _collect(self, params, t, sampled):
        def job(k):
            try:
                return self.client_update(params, t, k)
            except EmptyShardError:
                log.warning("round %d: client %d skipped (empty shard)", t, k)
                return None
            except Exception as exc:
                raise type(exc)(f"round {t}, client {k}: {exc}") from exc

        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                out = list(pool.map(job, sampled))
        else:
            out = [job(k) for k in sampled]
        return [u for u in out if u is not None]

    def report(self, params):
        return calibration_report(evaluate(params, self.test), self.cfg.bins)

    def run(self) -> ExperimentResult:
        cfg = self.cfg
        params = self.initial
        records = []
        report = None
        for t in range(cfg.rounds):
            sampled = sample_clients(cfg.clients, cfg.clients_per_round, rng.stream(self.seed, "sampling", t))
            updates = self._collect(params, t, sampled)
            root_update = None
            if getattr(self.defense, "needs_root", False):
                root_update = local_train(params, self.root, self.spec,
                                          rng.stream(self.seed, "root", t), client_id=-1).delta
            params, diag = self.defense(updates, params, root_update)
            diag["malicious"] = [u.client_id for u in updates if u.malicious]
            metrics = None
            if (t + 1) % cfg.eval_stride == 0 or t == cfg.rounds - 1:
                report = self.report(params)
                metrics = report.as_dict()
                log.info("seed %d round %d acc %.4f ece %.4f sece %.4f", self.seed, t,
                         metrics["accuracy"], metrics["ece"], metrics["sece"])
            records.append(RoundRecord(t, sampled, metrics, diag))
        if report is None:
            report = self.report(params)
        result = ExperimentResult(self.seed, records, self.initial, params, self.attacker_ids,
                                  self.split, self.partition, final_report=report)
        if cfg.posthoc.kind != "none":
            result.posthoc_report = self.posthoc(params, cfg.posthoc.kind, cfg.posthoc.n_cal)
        return result

    def calibration_set(self, n_cal: int) -> Dataset:
        return self.train.subset(self.split.calibration[:n_cal])

    def posthoc(self, params, kind: str, n_cal: int):
        cal = evaluate(params, self.calibration_set(n_cal))
        calibrator = fit_calibrator(kind, cal.logits, cal.labels)
        return calibration_report(apply_calibrator(calibrator, evaluate(params, self.test)), self.cfg.bins)


def run_experiment(cfg: ExperimentConfig, seed: int, data=None, threads: int = 1) -> ExperimentResult:
    return Experiment(cfg, seed, data, threads).run()
