"""Run experiments from a config and write self-describing result archives.

Archive layout (one directory per run)::

    config.txt        canonical config echo (+ update convention note)
    rounds.csv        seed, round, accuracy, ece, sece, nll, brier
    reliability.csv   seed, bin_lo, bin_hi, count, acc, conf   (final model)
    final.csv         seed, stage, accuracy, ece, sece, nll, brier
    summary.csv       stage, metric, mean, std, n              (std uses n - 1)
    diagnostics.csv   seed, round, client, malicious, weight, selected

Floats carry 9 significant digits; lines end with '\\n'.
"""

from __future__ import annotations

import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path

from .config import ExperimentConfig
from .exceptions import ConfigurationError
from .io import fmt, write_csv
from .simulation import load_data, run_experiment

log = logging.getLogger(__name__)

METRICS = ("accuracy", "ece", "sece", "nll", "brier")
SWEEP_AXES = ("tau", "attacker_ratio", "alpha", "beta")


@dataclass
class ResultsArchive:
    config: ExperimentConfig
    path: Path | None
    results: list
    summary: dict = field(default_factory=dict)

    def mean(self, metric: str, stage: str = "pre") -> float:
        return self.summary[(stage, metric)][0]


def summarize(results) -> dict:
    """``{(stage, metric): (mean, std, n)}`` across seeds; std is the n-1 estimator (0 for one seed)."""
    out = {}
    stages = [("pre", "final_report"), ("post", "posthoc_report")]
    for stage, attr in stages:
        reports = [getattr(r, attr) for r in results if getattr(r, attr) is not None]
        if not reports:
            continue
        for m in METRICS:
            vals = [getattr(rep, m) for rep in reports]
            sd = statistics.stdev(vals) if len(vals) > 1 else 0.0
            out[(stage, m)] = (statistics.fmean(vals), sd, len(vals))
    return out


def write_archive(out: Path, cfg: ExperimentConfig, results, summary) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(
        cfg.to_text() + "# clients upload parameter displacements (theta_after - theta_before)\n"
    )
    rounds, rel, final, diag = [], [], [], []
    for r in results:
        for rec in r.records:
            if rec.metrics is not None:
                rounds.append([r.seed, rec.round] + [rec.metrics[m] for m in METRICS])
            weights = rec.diagnostics.get("weights", {})
            selected = rec.diagnostics.get("selected")
            bad = set(rec.diagnostics.get("malicious", []))
            for k in rec.sampled:
                if k not in weights:
                    continue
                sel = "" if selected is None else int(k in selected)
                diag.append([r.seed, rec.round, k, int(k in bad), weights[k], str(sel)])
        for lo, hi, n, acc, conf in r.final_report.bins.rows():
            rel.append([r.seed, lo, hi, n, acc, conf])
        final.append([r.seed, "pre"] + [getattr(r.final_report, m) for m in METRICS])
        if r.posthoc_report is not None:
            final.append([r.seed, "post"] + [getattr(r.posthoc_report, m) for m in METRICS])
    write_csv(out / "rounds.csv", ["seed", "round", *METRICS], rounds)
    write_csv(out / "reliability.csv", ["seed", "bin_lo", "bin_hi", "count", "acc", "conf"], rel)
    write_csv(out / "final.csv", ["seed", "stage", *METRICS], final)
    write_csv(out / "diagnostics.csv", ["seed", "round", "client", "malicious", "weight", "selected"], diag)
    write_csv(out / "summary.csv", ["stage", "metric", "mean", "std", "n"],
              [[s, m, mu, sd, n] for (s, m), (mu, sd, n) in summary.items()])


def run(cfg: ExperimentConfig, out=None, seeds=None, threads: int = 1, data=None) -> ResultsArchive:
    """Every seed of ``cfg``; writes an archive when ``out`` is given."""
    seeds = list(cfg.seeds if seeds is None else seeds)
    if data is None:
        data = load_data(cfg)
    results = []
    for s in seeds:
        log.info("running seed %d", s)
        results.append(run_experiment(cfg, s, data, threads))
    summary = summarize(results)
    path = None
    if out is not None:
        path = Path(out)
        try:
            write_archive(path, cfg, results, summary)
        except OSError as exc:
            raise OSError(f"writing archive to {path}: {exc}") from exc
    return ResultsArchive(cfg, path, results, summary)


def apply_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "tau":
        return cfg.with_overrides(**{"attack.kind": "tsa", "attack.tau": float(value)})
    if axis == "attacker_ratio":
        n = int(float(value) * cfg.clients + 0.5)
        return cfg.with_overrides(**{"attack.attackers": n})
    if axis == "alpha":
        return cfg.with_overrides(alpha=float(value))
    if axis == "beta":
        return cfg.with_overrides(beta=float(value))
    raise ConfigurationError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")


def sweep(cfg: ExperimentConfig, axis: str, values, out=None, seeds=None, threads: int = 1, data=None):
    """One :func:`run` per value (shared seeds); returns ``{value: ResultsArchive}``."""
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = list(values)
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    if data is None:
        data = load_data(cfg)
    archives = {}
    for v in values:
        sub = None if out is None else Path(out) / f"{axis}={fmt(v)}"
        archives[v] = run(apply_axis(cfg, axis, v), sub, seeds, threads, data)
    if out is not None:
        rows = []
        for v, arch in archives.items():
            for (stage, m), (mu, sd, n) in arch.summary.items():
                rows.append([axis, v, stage, m, mu, sd, n])
        write_csv(Path(out) / "sweep.csv", ["axis", "value", "stage", "metric", "mean", "std", "n"], rows)
    return archives
