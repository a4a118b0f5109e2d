import math
import subprocess
import sys

import numpy as np
import pytest

from prpose.harness import (AblationGapError, ConfigError, Pipeline, ablation_table, parse_config,
                            read_results, run_pipeline, throughput_report)
from prpose.harness.cli import main
from prpose.harness.config import to_ini
from prpose.harness.reports import ResultRow

TINY = """
[dataset]
count = 330
[lifter]
hidden_dim = 24
n_blocks = 1
epochs = 3
lr_decay_epoch = 2
[avg]
hidden_dim = 8
epochs = 2
lr_decay_epoch = 1
paradigms = independent
[sampling]
kinds = NoAdapted, SampleJointsAdapted
layers = pre
samples = 10, 200
eval_count = 12
[run]
seeds = 0, 1, 2
export_count = 2
export_samples = 3
"""


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = parse_config(TINY)
    return cfg, out, run_pipeline(cfg, out)


def test_config_defaults_and_overlay():
    cfg = parse_config()
    assert cfg.alphas == (0.005,) and cfg.samples == (1, 5, 10, 50, 200) and cfg.seeds == (0, 1, 2)
    assert parse_config(TINY).lifter.hidden_dim == 24


@pytest.mark.parametrize("text", ["[lifter]\nwidth = 3\n", "[bogus]\nx = 1\n",
                                  "[sampling]\nalphas = -1\n", "[sampling]\nsamples = 0\n"])
def test_config_rejects_bad_input(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_show_config_round_trips():
    cfg = parse_config(TINY)
    assert parse_config(to_ini(cfg)) == cfg


def test_results_counting(tiny_run):
    cfg, out, path = tiny_run
    rows = read_results(path)
    for proto in ("p1", "p2"):
        for sel in ("pbest", "jbest"):
            sub = [r for r in rows if r.metric == "mpjpe" and r.protocol == proto and r.selection == sel]
            assert len(sub) == 12
    assert len({(r.seed, r.strategy, r.S) for r in rows}) == 12
    assert all(r.n_eval == 12 for r in rows)
    na = [r for r in rows if r.strategy == "NoAdapted"]
    assert all(r.avg_hash == "" for r in na)
    assert all(r.avg_hash for r in rows if r.strategy == "SampleJointsAdapted")
    assert (out / "ablation.txt").is_file() and (out / "timings.csv").is_file()
    assert len(list((out / "exports").glob("*.jsonl"))) == 3


def test_rerun_uses_cache(tiny_run):
    cfg, out, path = tiny_run
    before = path.read_bytes()
    path.unlink()
    p = Pipeline(cfg, out)
    p.run()
    assert path.read_bytes() == before
    assert p.timings == []


def test_ablation_matrix(tiny_run):
    _, _, path = tiny_run
    rows = read_results(path)
    tab = ablation_table(rows)
    assert len(tab.strategy) == 4
    per = [r.value for r in rows if r.strategy == "NoAdapted" and r.S == 10 and r.metric == "mpjpe"
           and r.protocol == "p1" and r.selection == "pbest"]
    assert abs(tab.strategy[("NoAdapted", 10)][0] - math.fsum(per) / 3) < 1e-12
    dropped = [r for r in rows if not (r.seed == 1 and r.strategy == "SampleJointsAdapted" and r.S == 200)]
    with pytest.raises(AblationGapError) as ei:
        ablation_table(dropped)
    assert ei.value.missing == [("SampleJointsAdapted", 200, 1)]
    assert "seed=1" in str(ei.value)


def test_ablation_rejects_mixed_paradigms():
    base = dict(seed=0, strategy="NoAdapted", layer="pre", alpha=0.005, S=1, protocol="p1",
                selection="pbest", metric="mpjpe", value=1.0, n_eval=1, dataset_hash="",
                lifter_hash="", avg_hash="")
    rows = [ResultRow(paradigm="independent", **base), ResultRow(paradigm="shared", **base)]
    with pytest.raises(ValueError):
        ablation_table(rows)


def test_throughput(small_models, small_data):
    lifter, pseudo, avg = small_models
    X = small_data[1].det2d
    ticks = iter(np.arange(0, 100, 0.5))
    rep = throughput_report(lifter, avg, pseudo.joint_prior(), X, [1, 200], n_samples=50, trials=3,
                            timer=lambda: next(ticks))
    assert [r["S"] for r in rep] == [1, 200]
    real = [throughput_report(lifter, avg, pseudo.joint_prior(), X, [1, 200], n_samples=1000, trials=5)
            for _ in range(2)]
    assert real[0][0]["samples_per_sec"] >= real[0][1]["samples_per_sec"]
    a, b = real[0][1]["samples_per_sec"], real[1][1]["samples_per_sec"]
    assert abs(a - b) / max(a, b) < 0.5


def test_cli_show_config(capsys):
    assert main(["show-config", "--alpha", "0.01"]) == 0
    assert "alphas = 0.01" in capsys.readouterr().out


def test_cli_errors(tmp_path, capsys):
    assert main(["eval"]) == 2
    assert "error [config]" in capsys.readouterr().err
    bad = tmp_path / "bad.ini"
    bad.write_text("[nope]\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["pseudo-labels", "--data", str(tmp_path), "--lifter", str(tmp_path / "x.ckpt")]) == 1


def test_cli_stage_error(tmp_path, capsys):
    (tmp_path / "train.jsonl").write_text("not json\n")
    (tmp_path / "test.jsonl").write_text("not json\n")
    cfg = tmp_path / "c.ini"
    cfg.write_text(f"[dataset]\npath = {tmp_path}\n[run]\nout = {tmp_path / 'o'}\n")
    assert main(["run", "--config", str(cfg)]) == 1
    assert "error [dataset]" in capsys.readouterr().err


def test_cli_entry_point_runs():
    r = subprocess.run([sys.executable, "-m", "prpose.harness.cli", "show-config"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "[sampling]" in r.stdout
