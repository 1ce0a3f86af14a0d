"""End-to-end acceptance checks on MNIST plus the math and metric oracles.

The MNIST runs take roughly a minute each; every arm is trained once per
session and shared between the criteria that need it.
"""

import itertools

import numpy as np
import pytest

from fedtemp import rng
from fedtemp.aggregation import fltrust_weights, krum_scores, multikrum_select
from fedtemp.analysis import (
    default_arms,
    linear_cka,
    logit_similarity,
    probe_start,
    representations,
    update_similarity_probe,
)
from fedtemp.calibration import (
    PredictionSet,
    TemperatureScaling,
    apply_calibrator,
    brier,
    calibration_report,
    ece,
    evaluate,
    fit_calibrator,
    nll,
    sece,
)
from fedtemp.config import ExperimentConfig
from fedtemp.engine import ClientUpdate, LocalTrainSpec
from fedtemp.harness import run
from fedtemp.nn import backward, ce_logit_grad, ce_logit_hessian, ce_loss, mean_loss, softmax
from fedtemp.simulation import load_data, run_experiment

from conftest import ACCEPTANCE_LINES, SYNTH_CONFIG, find_mnist, tiny_params
from test_calibration import _synthetic_logits, brute_metrics, random_instance

SEEDS = (0, 1, 2, 3, 4)
MNIST = find_mnist()
needs_mnist = pytest.mark.skipif(MNIST is None, reason="MNIST IDX files not found (see README)")


def report(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def base_config():
    return ExperimentConfig().with_overrides(**{"data.dir": str(MNIST), "eval_stride": 100})


ARMS = {
    "benign": {},
    "tau5": {"attack.kind": "tsa", "attack.tau": 5.0},
    "tau0.2": {"attack.kind": "tsa", "attack.tau": 0.2},
    "fltrust_tau0.2": {"attack.kind": "tsa", "attack.tau": 0.2, "defense.kind": "fltrust"},
}


class Runs:
    def __init__(self):
        self.cfg = base_config()
        self.data = load_data(self.cfg)
        self.cache = {}

    def __call__(self, arm):
        if arm not in self.cache:
            cfg = self.cfg.with_overrides(**ARMS[arm])
            self.cache[arm] = [run_experiment(cfg, s, self.data) for s in SEEDS]
        return self.cache[arm]

    def mean(self, arm, metric):
        return float(np.mean([getattr(r.final_report, metric) for r in self(arm)]))


@pytest.fixture(scope="session")
def runs():
    return Runs()


def pct(x):
    return 100 * x


@needs_mnist
def test_c01_benign_reproduction(runs):
    acc, e, s = (pct(runs.mean("benign", m)) for m in ("accuracy", "ece", "sece"))
    ok = abs(acc - 91.57) <= 1.5 and abs(e - 3.11) <= 2.0 and s > 0
    report(1, ok, f"benign acc {acc:.2f} (91.57+-1.5) ece {e:.2f} (3.11+-2.0) sece {s:+.2f} (>0)")


@needs_mnist
def test_c02_tsa_overconfidence(runs):
    acc, e, s = (pct(runs.mean("tau5", m)) for m in ("accuracy", "ece", "sece"))
    ben = pct(runs.mean("benign", "accuracy"))
    ok = s < -2.5 and abs(e - 5.02) <= 2.0 and abs(acc - ben) <= 1.5
    report(2, ok, f"tau=5 sece {s:+.2f} (<-2.5) ece {e:.2f} (5.02+-2.0) acc {acc:.2f} vs benign {ben:.2f}")


@needs_mnist
def test_c03_tsa_underconfidence(runs):
    acc, s = pct(runs.mean("tau0.2", "accuracy")), pct(runs.mean("tau0.2", "sece"))
    ben = pct(runs.mean("benign", "accuracy"))
    ok = s > 3.0 and abs(acc - ben) <= 1.5
    report(3, ok, f"tau=0.2 sece {s:+.2f} (>3.0) acc {acc:.2f} vs benign {ben:.2f}")


@needs_mnist
def test_c04_directional_monotonicity(runs):
    s = [pct(runs.mean(a, "sece")) for a in ("tau0.2", "benign", "tau5")]
    ok = s[0] > s[1] > s[2]
    report(4, ok, "mean sece tau 0.2/1/5: " + " > ".join(f"{v:+.2f}" for v in s))


@pytest.fixture(scope="session")
def probe_rows(runs):
    # probe from the freshly initialised global model on client 0's shard
    start, exp = probe_start(runs.cfg, 0, runs.data, warmup_rounds=0)
    spec = LocalTrainSpec(10, runs.cfg.batch_size, runs.cfg.beta)
    rows = update_similarity_probe(start, exp.shards[0], spec, default_arms(), seed=0)
    return {a: c for a, s, c in rows if s == 10}


@needs_mnist
def test_c05_update_geometry_stealth(probe_rows):
    tsa = [probe_rows[f"tsa_tau={t:g}"] for t in (0.2, 0.5, 2, 5)]
    noise, flip = probe_rows["noise_sigma=0.1"], probe_rows["label_flip_k=5"]
    ok = min(tsa) >= 0.9 and noise <= 0.3 and flip <= 0.5
    report(5, ok, f"tsa min cos {min(tsa):.4f} (>=0.9) noise {noise:.4f} (<=0.3) flip k=5 {flip:.4f} (<=0.5)")


@needs_mnist
def test_c06_coupling_ablation(probe_rows):
    c02, u02 = probe_rows["tsa_tau=0.2"], probe_rows["tsa_uncoupled_tau=0.2"]
    c5, u5 = probe_rows["tsa_tau=5"], probe_rows["tsa_uncoupled_tau=5"]
    ok = c02 > u02 and c5 > u5 and (c02 - u02) > (c5 - u5)
    report(6, ok, f"tau=0.2 coupled {c02:.4f} > uncoupled {u02:.4f}; tau=5 coupled {c5:.4f} > "
                  f"uncoupled {u5:.4f}; drops {c02 - u02:.4f} > {c5 - u5:.4f}")


@needs_mnist
def test_c07_representation_band(runs):
    X = runs.data[1].features
    ben = {r.seed: representations(r.final, X) for r in runs("benign")}
    pair_cka = [linear_cka(ben[a][1], ben[b][1]) for a, b in itertools.combinations(SEEDS, 2)]
    # each attacked run against the benign run sharing its seed (same init and partition)
    tsa = {r.seed: representations(r.final, X) for r in runs("tau5")}
    cka = [linear_cka(tsa[s][1], ben[s][1]) for s in SEEDS]
    cos = [logit_similarity(tsa[s][0], ben[s][0]) for s in SEEDS]
    ok = min(pair_cka) >= 0.8 and min(cka) >= 0.8 and min(cos) >= 0.85
    report(7, ok, f"benign pairwise cka min {min(pair_cka):.4f} (>=0.8); tau=5 vs benign cka min "
                  f"{min(cka):.4f} (>=0.8) logit cos min {min(cos):.4f} (>=0.85)")


def test_c08_math_core_oracles():
    worst = {}
    # analytic backward vs central differences
    p = tiny_params(shapes=((6, 5), (5, 4)), seed=1)
    rs = rng.Stream(3)
    X, y = rs.normal(8 * 6).reshape(8, 6), rs.integers(4, 8)
    rel = []
    for tau in (0.2, 1.0, 5.0):
        g = backward(p, X, y, tau)
        fd = np.empty_like(g)
        for i in range(g.size):
            v = p.values.copy()
            v[i] += 1e-6
            up = mean_loss(p.with_values(v), X, y, tau)
            v[i] -= 2e-6
            fd[i] = (up - mean_loss(p.with_values(v), X, y, tau)) / 2e-6
        rel.append(np.linalg.norm(g - fd) / np.linalg.norm(fd))
    worst["backward_rel"] = max(rel)
    # logit gradient and hessian
    r = np.random.default_rng(0)
    gerr = herr = 0.0
    for _ in range(50):
        C, tau = int(r.integers(2, 10)), float(r.uniform(0.2, 5))
        z, lab = r.normal(scale=3, size=C), int(r.integers(0, C))
        I = np.eye(C)
        fd = np.array([(ce_loss(z + 1e-6 * I[i], lab, tau) - ce_loss(z - 1e-6 * I[i], lab, tau)) / 2e-6
                       for i in range(C)])
        gerr = max(gerr, np.abs(ce_logit_grad(z, lab, tau) - fd).max())
        fdh = np.stack([(ce_logit_grad(z + 1e-5 * I[i], lab, tau) - ce_logit_grad(z - 1e-5 * I[i], lab, tau))
                        / 2e-5 for i in range(C)])
        herr = max(herr, np.abs(ce_logit_hessian(z, tau) - fdh).max())
    worst["grad_abs"], worst["hess_abs"] = gerr, herr
    # operator norm of the softmax covariance over random probability vectors
    norm = 0.0
    for _ in range(10_000):
        C = int(r.integers(2, 20))
        q = r.dirichlet(np.full(C, r.uniform(0.05, 5)))
        norm = max(norm, np.linalg.norm(np.diag(q) - np.outer(q, q), 2))
    worst["cov_norm"] = norm
    # temperature identity and argmax invariance
    exact = argmax = True
    for _ in range(2000):
        z = r.normal(scale=r.uniform(0.1, 20), size=int(r.integers(2, 12)))
        tau = float(np.exp(r.uniform(np.log(0.01), np.log(100))))
        exact &= np.array_equal(softmax(z, tau), softmax(z / tau, 1.0))
        argmax &= int(np.argmax(softmax(z, tau))) == int(np.argmax(z))
    ok = (worst["backward_rel"] <= 1e-4 and gerr <= 1e-6 and herr <= 1e-5 and norm <= 0.5
          and exact and argmax)
    report(8, ok, f"backward rel {worst['backward_rel']:.1e} grad {gerr:.1e} hess {herr:.1e} "
                  f"max ||diag(p)-pp'|| {norm:.4f} (<=0.5) identity {exact} argmax {argmax}")


def test_c09_metric_oracles():
    worst, bound = 0.0, True
    for seed in range(100):
        p, y = random_instance(1000 + seed)
        preds = PredictionSet(p, y)
        ref = brute_metrics(p, y)
        got = (ece(preds), sece(preds), nll(preds), brier(preds))
        worst = max(worst, max(abs(a - b) for a, b in zip(got, ref)))
        bound &= abs(got[1]) <= got[0]
    report(9, worst <= 1e-12 and bound, f"max |metric - brute force| {worst:.1e} (<=1e-12) |sece|<=ece {bound}")


@needs_mnist
def test_c10_posthoc_study(runs):
    logits, y = _synthetic_logits(2.0)
    T = TemperatureScaling().fit(logits, y).temperature_
    raw, temp, hist = [], [], []
    train, test = runs.data
    for r in runs("tau5"):
        test_preds = evaluate(r.final, test)
        raw.append(abs(r.final_report.sece))
        for kind, n_cal, out in (("temperature", 500, temp), ("histogram", 10, hist)):
            cal = evaluate(r.final, train.subset(r.split.calibration[:n_cal]))
            c = fit_calibrator(kind, cal.logits, cal.labels)
            out.append(abs(calibration_report(apply_calibrator(c, test_preds)).sece))
    m_raw, m_t, m_h = (pct(np.mean(v)) for v in (raw, temp, hist))
    ok = abs(T - 2.0) <= 0.05 and m_t < m_raw and not m_h < m_raw
    report(10, ok, f"fitted T {T:.4f} (2+-0.05); tau=5 mean |sece| raw {m_raw:.2f} temperature(500) "
                   f"{m_t:.2f} (<raw) histogram(10) {m_h:.2f} (not <raw)")


@needs_mnist
def test_c11_robust_aggregation(runs):
    r = np.random.default_rng(0)
    never = True
    for _ in range(200):
        good = [np.ones(50) + 1e-3 * r.normal(size=50) for _ in range(5)]
        bad = r.normal(size=50) * 100
        vecs = good + [bad]
        order = r.permutation(6)
        ups = [ClientUpdate(int(k), vecs[k], 1) for k in order]
        sel, scores = multikrum_select(ups, 1, 4)
        X = np.stack(vecs)
        brute = [sum(sorted(np.sum((X[i] - X[j]) ** 2) for j in range(6) if j != i)[:3]) for i in range(6)]
        never &= 5 not in sel and set(sel) == set(np.argsort(brute)[:4].tolist())
    root = r.normal(size=50)
    w, _, _ = fltrust_weights([ClientUpdate(0, root.copy(), 1), ClientUpdate(1, -root, 1)], root)
    s = pct(runs.mean("fltrust_tau0.2", "sece"))
    ok = never and w[1] == 0.0 and s > 0
    report(11, ok, f"multikrum outlier never selected {never}; fltrust anti-aligned weight {w[1]}; "
                   f"fltrust tau=0.2 mean sece {s:+.2f} (>0)")


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_c12_determinism(tmp_path):
    from fedtemp.config import parse_config

    synth = parse_config(SYNTH_CONFIG + "attack.kind = noise\nattack.attackers = 1\n")
    configs = {"synth": synth}
    if MNIST is not None:
        configs["mnist"] = base_config().with_overrides(
            rounds=2, eval_stride=1, **{"attack.kind": "tsa", "attack.tau": 5.0, "defense.kind": "fltrust"})
    same = True
    for name, cfg in configs.items():
        seeds = [0, 1] if name == "synth" else [0]
        run(cfg, tmp_path / name / "a", seeds=seeds)
        run(cfg, tmp_path / name / "b", seeds=seeds)
        run(cfg, tmp_path / name / "c", seeds=seeds, threads=4)
        a, b, c = (_tree(tmp_path / name / x) for x in "abc")
        same &= a == b == c and len(a) == 6
    report(12, same, f"repeat and threads=4 archives byte-identical on {sorted(configs)}")
