import os
import subprocess
import sys

import numpy as np
import pytest
import tomli
from hypothesis import given
from hypothesis import strategies as st

from duelgan.harness import cli
from duelgan.harness.config import ConfigError, ExperimentConfig, from_flat, load_config, schema_lines
from duelgan.harness.emit import (
    METRIC_COLUMNS, emit_metrics_csv, emit_samples, fmt, read_metrics_csv, read_samples,
)
from duelgan.harness.experiments import (
    RUN_FILES, ablate, compare, manifest_problems, run_single, worker_count,
)
from duelgan.trainer import MetricsRecord

TINY = dict(m=16, noise_dim=4, g_hidden=[8], d_hidden=[8], total_iters=6, eval_every=3)


def tiny(**kw):
    return ExperimentConfig().with_overrides(**{**TINY, **kw})


def record(i, x=0.1234567891234):
    return MetricsRecord(i, x, 2 * x, 3, 0.5, x, -x, 0.25, 0.75, x, 0.9)


# -- emitters ---------------------------------------------------------------------------

def test_metrics_header_and_columns(tmp_path):
    path = tmp_path / "m.csv"
    emit_metrics_csv([record(0), record(500)], path)
    lines = path.read_text().splitlines()
    assert lines[0] == ("iter,sym_kl,wasserstein,modes_captured,hq_fraction,agreement,d1_loss,"
                        "d2_loss,g_loss,alpha,beta")
    assert len(METRIC_COLUMNS) == 11
    assert all(len(line.split(",")) == 11 for line in lines)
    assert lines[1].split(",")[1] == "0.123456789"


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=5))
def test_metrics_round_trip_to_nine_digits(tmp_path_factory, xs):
    path = tmp_path_factory.mktemp("rt") / "m.csv"
    recs = [record(i, x) for i, x in enumerate(xs)]
    emit_metrics_csv(recs, path)
    back = read_metrics_csv(path)
    for a, b in zip(recs, back):
        assert a.iter == b.iter and a.modes_captured == b.modes_captured
        assert b.sym_kl == pytest.approx(a.sym_kl, rel=1e-8, abs=1e-300)
        assert fmt(b.sym_kl) == fmt(a.sym_kl)


def test_fmt():
    assert fmt(3) == "3" and fmt(np.int64(8)) == "8"
    assert fmt(1 / 3) == "0.333333333"
    assert fmt(1e-12) == "1e-12"


def test_metrics_reader_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("iter,loss\n0,1\n")
    with pytest.raises(ValueError):
        read_metrics_csv(path)


def test_samples_file_shape_and_reemission(tmp_path):
    pts = np.random.default_rng(0).normal(size=(512, 2))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    emit_samples(pts, a)
    lines = a.read_text().splitlines()
    assert lines[0] == "x,y" and len(lines) == 513
    emit_samples(read_samples(a), b)
    assert a.read_bytes() == b.read_bytes()
    with pytest.raises(ValueError):
        emit_samples(np.zeros((3, 3)), b)


# -- config -------------------------------------------------------------------------------

def test_defaults_match_reference_setup():
    cfg = ExperimentConfig()
    d = cfg.duel
    assert (d.m, d.noise_dim, d.g_hidden, d.d_hidden, d.lr, d.k) == (512, 256, (128, 128), (128, 128), 1e-4, 1)
    assert (d.alpha_max, d.beta_max, d.schedule) == (0.3, 0.5, "triangular")
    assert (cfg.total_iters, cfg.eval_every, cfg.n_modes, cfg.radius, cfg.variance) == (25_000, 500, 8, 2.0, 0.02)
    assert cfg.seeds == (0, 1, 2, 3, 4)


def test_toml_round_trip(tmp_path):
    cfg = tiny(alpha_max=0.3, seeds=[7])
    path = tmp_path / "c.toml"
    path.write_text(cfg.to_toml())
    assert load_config(str(path)) == cfg


def test_unknown_key_and_type_errors_are_all_reported():
    with pytest.raises(ConfigError) as exc:
        from_flat({"lerning_rate": 1e-3, "m": "big", "alpha_max": True})
    msgs = exc.value.problems
    assert any("lerning_rate" in p for p in msgs)
    assert any(p.startswith("m:") for p in msgs)
    assert any(p.startswith("alpha_max:") for p in msgs)


def test_range_errors_are_reported():
    with pytest.raises(ConfigError) as exc:
        from_flat({"alpha_max": 1.5, "beta_max": -0.1, "total_iters": 0})
    joined = " ".join(exc.value.problems)
    assert "alpha_max" in joined and "beta_max" in joined and "total_iters" in joined


def test_tables_rejected(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[duel]\nm = 3\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_schema_lists_every_key():
    keys = set(ExperimentConfig().to_flat())
    lines = schema_lines()
    assert {line.split(" ")[0] for line in lines} == keys


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("DUELGAN_WORKERS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("DUELGAN_WORKERS", "zero")
    with pytest.raises(ConfigError):
        worker_count()


# -- CLI exit codes -----------------------------------------------------------------------

def test_cli_bad_config_exits_2(tmp_path, capsys):
    path = tmp_path / "c.toml"
    path.write_text('frobnicate = 1\nlr = "fast"\n')
    assert cli.main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "frobnicate" in err and "lr" in err


def test_cli_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--iters", "many"])
    assert exc.value.code == 2
    assert cli.main([]) == 2


def test_cli_unwritable_output_exits_2(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["train", "--out", str(blocker / "sub")]) == 2


def test_cli_missing_checkpoint_exits_1(tmp_path, capsys):
    assert cli.main(["eval", str(tmp_path / "nope.ckpt")]) == 1
    assert "eval failed" in capsys.readouterr().err


def test_cli_print_schema(capsys):
    assert cli.main(["--print-schema"]) == 0
    assert "alpha_max" in capsys.readouterr().out


def test_cli_theory_check_passes():
    proc = subprocess.run([sys.executable, "-m", "duelgan", "theory-check", "--n-specs", "20"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    lines = proc.stdout.strip().splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)


def test_cli_train_and_eval(tmp_path, capsys):
    cfg_path = tmp_path / "c.toml"
    cfg_path.write_text(tiny().to_toml())
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(cfg_path), "--out", str(out), "--variant", "vanilla"]) == 0
    assert sorted(os.listdir(out)) == sorted(RUN_FILES + ("manifest.json",))
    capsys.readouterr()
    assert cli.main(["eval", str(out / "final.ckpt"), "--out", str(tmp_path / "e.csv")]) == 0
    header, row = capsys.readouterr().out.strip().splitlines()
    assert header == ",".join(METRIC_COLUMNS)
    # fresh eval draws: same iteration and schedule, nearby metrics
    fresh, last = read_metrics_csv(tmp_path / "e.csv")[0], read_metrics_csv(out / "metrics.csv")[-1]
    assert (fresh.iter, fresh.alpha, fresh.beta) == (last.iter, last.alpha, last.beta)
    assert fresh.sym_kl == pytest.approx(last.sym_kl, rel=0.2)


# -- compare / ablate ----------------------------------------------------------------------

def test_compare_is_reproducible_and_resumable(tmp_path):
    cfg = tiny(seeds=[0, 1])
    a = compare(cfg, str(tmp_path / "a"), workers=1)
    b = compare(cfg, str(tmp_path / "b"), workers=1)
    assert len(a) == 6
    sa = (tmp_path / "a" / "summary.csv").read_text()
    assert sa == (tmp_path / "b" / "summary.csv").read_text()
    assert len(sa.splitlines()) == 7
    stats = (tmp_path / "a" / "summary_stats.csv").read_text().splitlines()
    assert stats[0] == "variant,metric,n,median,min,max" and len(stats) == 1 + 3 * 5
    for r in a:
        assert manifest_problems(r.run_dir) == []
        assert len(read_metrics_csv(os.path.join(r.run_dir, "metrics.csv"))) == 6 // 3 + 1
    again = compare(cfg, str(tmp_path / "a"), workers=1)
    assert all(r.reused for r in again)
    assert (tmp_path / "a" / "summary.csv").read_text() == sa


def test_tampered_run_is_redone(tmp_path):
    cfg = tiny()
    run_dir = str(tmp_path / "r")
    first = run_single(cfg, "duelgan", 0, run_dir)
    with open(os.path.join(run_dir, "samples_512.csv"), "a") as fh:
        fh.write("0,0\n")
    assert manifest_problems(run_dir) == ["samples_512.csv: content does not match manifest"]
    second = run_single(cfg, "duelgan", 0, run_dir)
    assert not second.reused and second.final == first.final
    assert manifest_problems(run_dir) == []


def test_changed_config_is_not_reused(tmp_path):
    run_dir = str(tmp_path / "r")
    run_single(tiny(), "duelgan", 0, run_dir)
    assert run_single(tiny(), "duelgan", 0, run_dir).reused
    assert not run_single(tiny(alpha_max=0.2), "duelgan", 0, run_dir).reused


def test_ablation_grid(tmp_path):
    cfg = tiny(total_iters=2, eval_every=2, seeds=[3])
    results = ablate(cfg, str(tmp_path), workers=1)
    assert len(results) == 15
    rows = (tmp_path / "ablation.csv").read_text().splitlines()
    assert rows[0].startswith("alpha_max,beta_max,seed,iter")
    grid = {tuple(r.split(",")[:2]) for r in rows[1:]}
    assert grid == {(fmt(a), fmt(b)) for a in (0.1, 0.3, 0.5, 0.7, 0.9) for b in (0.25, 0.5, 0.75)}
    snap = tomli.loads((tmp_path / "alpha0.7_beta0.25_seed3" / "config.toml").read_text())
    assert (snap["alpha_max"], snap["beta_max"], snap["variant"]) == (0.7, 0.25, "duelgan")
