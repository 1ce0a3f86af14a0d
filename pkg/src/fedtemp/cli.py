"""Command-line entry point: ``fedtemp {run,sweep,probe,calibrate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .exceptions import ConfigParseError, ConfigurationError, DomainError, FormatError, ProtocolError

log = logging.getLogger("fedtemp")


def _seeds(text: str):
    try:
        out = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}")
    if not out:
        raise argparse.ArgumentTypeError("empty seed list")
    return out


def _floats(text: str):
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"values must be comma-separated numbers, got {text!r}")


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value config file (defaults when omitted)")
    common.add_argument("--out", type=Path, default=None, help="output directory")
    common.add_argument("--seeds", type=_seeds, default=None, help="comma-separated seeds, e.g. 0,1,2")
    common.add_argument("--threads", type=_positive, default=1, help="client worker threads")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="fedtemp", description="Federated temperature-scaling attack experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run the configured experiment for every seed")
    sw = sub.add_parser("sweep", parents=[common], help="repeat a run over one config axis")
    sw.add_argument("--axis", required=True, choices=["tau", "attacker_ratio", "alpha", "beta"])
    sw.add_argument("--values", required=True, type=_floats)
    pr = sub.add_parser("probe", parents=[common], help="update-similarity and representation probes")
    pr.add_argument("--steps", type=_positive, default=10, help="local steps per probe arm")
    pr.add_argument("--warmup", type=int, default=0, help="benign rounds before probing (0 = initial model)")
    pr.add_argument("--client", type=int, default=0, help="client whose shard the probe trains on")
    pr.add_argument("--skip-seeds", action="store_true", help="skip the seed-variability baseline")
    ca = sub.add_parser("calibrate", parents=[common], help="post-hoc calibration of the final global model")
    ca.add_argument("--methods", default="temperature,platt,isotonic,histogram")
    ca.add_argument("--n-cal", type=str, default="10,50,100,250,500",
                    help="comma-separated calibration set sizes")
    return p


def _config(args):
    from .config import ExperimentConfig, load_config

    cfg = load_config(args.config) if args.config is not None else ExperimentConfig()
    if args.set:
        cfg = _override(cfg, args.set)
    return cfg


def _override(cfg, pairs):
    from .config import parse_config

    # re-parse the canonical text with the overrides replacing their keys
    lines = {}
    for line in cfg.to_text().splitlines():
        if "=" in line and not line.lstrip().startswith("#"):
            k, v = line.split("=", 1)
            lines[k.strip()] = v.strip()
    for pair in pairs:
        if "=" not in pair:
            raise ConfigParseError(pair, "override must look like key=value")
        k, v = pair.split("=", 1)
        lines[k.strip()] = v.strip()
    return parse_config("".join(f"{k} = {v}\n" for k, v in lines.items()))


def _out(args, cfg) -> Path:
    return args.out if args.out is not None else Path(cfg.output)


def cmd_run(args, cfg):
    from .harness import run

    arch = run(cfg, _out(args, cfg), args.seeds, args.threads)
    for (stage, m), (mu, sd, n) in arch.summary.items():
        print(f"{stage} {m}: {mu:.4f} +/- {sd:.4f} (n={n})")
    return 0


def cmd_sweep(args, cfg):
    from .harness import sweep

    archives = sweep(cfg, args.axis, args.values, _out(args, cfg), args.seeds, args.threads)
    for v, arch in archives.items():
        acc = arch.summary[("pre", "accuracy")][0]
        sece = arch.summary[("pre", "sece")][0]
        print(f"{args.axis}={v:g}: accuracy {acc:.4f} sece {sece:+.4f}")
    return 0


def cmd_probe(args, cfg):
    from dataclasses import replace

    from .analysis import default_arms, probe_start, seed_variability_baseline, update_similarity_probe
    from .io import write_csv
    from .simulation import base_spec, load_data

    out = _out(args, cfg)
    seeds = list(args.seeds if args.seeds is not None else cfg.seeds)
    data = load_data(cfg)
    start, exp = probe_start(cfg, seeds[0], data, args.warmup, args.threads)
    if not 0 <= args.client < cfg.clients:
        raise ConfigurationError(f"--client must be in [0, {cfg.clients})")
    spec = replace(base_spec(cfg), steps=args.steps, unit="steps", tau=1.0)
    C = exp.train.n_classes
    arms = [a for a in default_arms() if a.kind != "label_flip" or a.k_shift < C]
    rows = update_similarity_probe(start, exp.shards[args.client], spec, arms, seeds[0])
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "update_similarity.csv", ["arm", "steps", "cosine"], rows)
    for name, s, c in rows:
        if s == args.steps:
            print(f"{name}: cosine {c:.4f} after {s} steps")
    if not args.skip_seeds and len(seeds) > 1:
        pairs, _ = seed_variability_baseline(cfg, seeds, data, threads=args.threads)
        write_csv(out / "seed_similarity.csv", ["seed_i", "seed_j", "logit_cos", "cka"], pairs)
        for a, b, lc, cka in pairs:
            print(f"seeds {a},{b}: logit cosine {lc:.4f} cka {cka:.4f}")
    return 0


def cmd_calibrate(args, cfg):
    from .calibration import apply_calibrator, calibration_report, evaluate, fit_calibrator
    from .harness import METRICS
    from .io import write_csv
    from .simulation import Experiment, load_data

    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    sizes = [int(s) for s in args.n_cal.split(",") if s.strip()]
    for n in sizes:
        if not 1 <= n <= cfg.posthoc.holdout:
            raise ConfigurationError(f"n_cal must be in [1, {cfg.posthoc.holdout}], got {n}")
    out = _out(args, cfg)
    data = load_data(cfg)
    rows = []
    for seed in (args.seeds if args.seeds is not None else cfg.seeds):
        exp = Experiment(cfg.with_overrides(**{"posthoc.kind": "none"}), seed, data, args.threads)
        res = exp.run()
        test_preds = evaluate(res.final, exp.test)
        rows.append([seed, "none", 0] + [getattr(res.final_report, m) for m in METRICS])
        for n in sizes:
            cal = evaluate(res.final, exp.calibration_set(n))
            for method in methods:
                c = fit_calibrator(method, cal.logits, cal.labels)
                rep = calibration_report(apply_calibrator(c, test_preds), cfg.bins)
                rows.append([seed, method, n] + [getattr(rep, m) for m in METRICS])
                print(f"seed {seed} {method} n_cal={n}: ece {rep.ece:.4f} sece {rep.sece:+.4f}")
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "posthoc.csv", ["seed", "method", "n_cal", *METRICS], rows)
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "probe": cmd_probe, "calibrate": cmd_calibrate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigurationError, DomainError, FormatError, ProtocolError) as exc:
        print(f"fedtemp: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"fedtemp: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
