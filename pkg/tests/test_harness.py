import subprocess
import sys

import numpy as np
import pytest

from fedtemp.cli import main
from fedtemp.config import load_config
from fedtemp.exceptions import ConfigurationError
from fedtemp.harness import run, summarize, sweep
from fedtemp.simulation import Experiment, load_data

from conftest import SYNTH_CONFIG


def _cfg(tmp_path, extra=""):
    p = tmp_path / "c.cfg"
    p.write_text(SYNTH_CONFIG + extra)
    return load_config(p)


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_smoke_one_round(tmp_path):
    cfg = _cfg(tmp_path).with_overrides(rounds=1, clients=1, clients_per_round=1)
    arch = run(cfg, tmp_path / "out", seeds=[0])
    files = _tree(tmp_path / "out")
    assert set(files) == {"config.txt", "rounds.csv", "reliability.csv", "final.csv", "summary.csv",
                          "diagnostics.csv"}
    assert files["rounds.csv"].decode().splitlines()[0] == "seed,round,accuracy,ece,sece,nll,brier"
    assert files["reliability.csv"].decode().splitlines()[0] == "seed,bin_lo,bin_hi,count,acc,conf"
    assert b"\r" not in files["rounds.csv"]
    assert "displacement" in files["config.txt"].decode()
    assert len(arch.results[0].records) == 1


def test_archive_echo_reparses(tmp_path):
    cfg = _cfg(tmp_path)
    run(cfg, tmp_path / "o", seeds=[0])
    assert load_config(tmp_path / "o" / "config.txt") == cfg


def test_identical_invocations_are_byte_identical(tmp_path):
    cfg = _cfg(tmp_path, "[attack]\nkind = noise\nattackers = 1\n")
    run(cfg, tmp_path / "a", seeds=[0, 1])
    run(cfg, tmp_path / "b", seeds=[0, 1], threads=3)
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")


@pytest.mark.parametrize("defense", ["fedavg", "fltrust", "foolsgold"])
def test_defenses_run(tmp_path, defense):
    cfg = _cfg(tmp_path).with_overrides(**{"defense.kind": defense})
    arch = run(cfg, None, seeds=[0])
    assert 0 <= arch.mean("accuracy") <= 1


def test_multikrum_run(tmp_path):
    cfg = _cfg(tmp_path).with_overrides(clients_per_round=4, **{"defense.kind": "multikrum"})
    arch = run(cfg, None, seeds=[0])
    assert "selected" in arch.results[0].records[0].diagnostics


def test_summary_uses_unbiased_std(tmp_path):
    arch = run(_cfg(tmp_path), None, seeds=[0, 1, 2])
    accs = [r.final_report.accuracy for r in arch.results]
    mu, sd, n = arch.summary[("pre", "accuracy")]
    assert n == 3 and mu == pytest.approx(np.mean(accs)) and sd == pytest.approx(np.std(accs, ddof=1))


def test_posthoc_rows(tmp_path):
    cfg = _cfg(tmp_path).with_overrides(**{"posthoc.kind": "temperature"})
    arch = run(cfg, tmp_path / "o", seeds=[0])
    assert ("post", "ece") in arch.summary
    assert "0,post," in (tmp_path / "o" / "final.csv").read_text()


def test_sweep_layout_and_single_value(tmp_path):
    cfg = _cfg(tmp_path).with_overrides(**{"attack.attackers": 1})
    arch = sweep(cfg, "tau", [0.2, 5.0], tmp_path / "sw", seeds=[0])
    assert set(arch) == {0.2, 5.0}
    assert (tmp_path / "sw" / "tau=0.2" / "rounds.csv").is_file()
    lines = (tmp_path / "sw" / "sweep.csv").read_text().splitlines()
    assert lines[0] == "axis,value,stage,metric,mean,std,n" and len(lines) == 11
    single = sweep(cfg, "tau", [5.0], None, seeds=[0])[5.0]
    direct = run(cfg.with_overrides(**{"attack.kind": "tsa", "attack.tau": 5.0}), None, seeds=[0])
    assert single.summary == direct.summary
    with pytest.raises(ConfigurationError):
        sweep(cfg, "gamma", [1.0])
    with pytest.raises(ConfigurationError):
        sweep(cfg, "tau", [])


def test_sweep_attacker_ratio_maps_to_count(tmp_path):
    from fedtemp.harness import apply_axis

    cfg = _cfg(tmp_path).with_overrides(clients=50, **{"defense.root_size": 10, "posthoc.holdout": 10,
                                                       "posthoc.n_cal": 10})
    assert apply_axis(cfg, "attacker_ratio", 0.26).attack.attackers == 13
    assert apply_axis(cfg, "alpha", 0.1).alpha == 0.1


def test_threads_give_identical_updates(tmp_path):
    cfg = _cfg(tmp_path)
    data = load_data(cfg)
    a = Experiment(cfg, 0, data, threads=1).run()
    b = Experiment(cfg, 0, data, threads=4).run()
    np.testing.assert_array_equal(a.final.values, b.final.values)


def test_cli_subcommands(tmp_path, capsys):
    p = tmp_path / "c.cfg"
    p.write_text(SYNTH_CONFIG)
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "r"), "--seeds", "0"]) == 0
    assert (tmp_path / "r" / "summary.csv").is_file()
    assert main(["sweep", "--config", str(p), "--out", str(tmp_path / "s"), "--seeds", "0",
                 "--axis", "alpha", "--values", "0.5,2"]) == 0
    assert main(["probe", "--config", str(p), "--out", str(tmp_path / "p"), "--seeds", "0,1",
                 "--steps", "3"]) == 0
    assert (tmp_path / "p" / "update_similarity.csv").read_text().startswith("arm,steps,cosine\n")
    assert (tmp_path / "p" / "seed_similarity.csv").read_text().startswith("seed_i,seed_j,logit_cos,cka\n")
    assert main(["calibrate", "--config", str(p), "--out", str(tmp_path / "c"), "--seeds", "0",
                 "--n-cal", "10,50"]) == 0
    assert "histogram" in (tmp_path / "c" / "posthoc.csv").read_text()


def test_cli_failures(tmp_path, capsys):
    p = tmp_path / "c.cfg"
    p.write_text(SYNTH_CONFIG + "clients_per_round = 60\n")
    assert main(["run", "--config", str(p)]) != 0
    assert "error" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) != 0
    assert "missing.cfg" in capsys.readouterr().err


def test_cli_module_entry(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text(SYNTH_CONFIG + "bogus = 1\n")
    r = subprocess.run([sys.executable, "-m", "fedtemp.cli", "run", "--config", str(p)],
                       capture_output=True, text=True)
    assert r.returncode != 0 and "bogus" in r.stderr
