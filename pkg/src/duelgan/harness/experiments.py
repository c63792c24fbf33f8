"""Run directories, multi-seed comparisons and the alpha/beta ablation grid."""
from __future__ import annotations

import hashlib
import json
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from ..trainer import MetricsRecord, evaluate, load_checkpoint, save_checkpoint, train
from .config import ConfigError, ExperimentConfig
from .emit import METRIC_COLUMNS, emit_metrics_csv, emit_samples, emit_table, read_metrics_csv

RUN_FILES = ("config.toml", "metrics.csv", "samples_512.csv", "samples_10000.csv", "final.ckpt")
MANIFEST = "manifest.json"
WORKERS_ENV = "DUELGAN_WORKERS"
STAT_METRICS = ("sym_kl", "wasserstein", "modes_captured", "hq_fraction", "agreement")


@dataclass(frozen=True)
class RunResult:
    variant: str
    seed: int
    run_dir: str
    final: MetricsRecord
    reused: bool = False


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(run_dir: str) -> None:
    entries = {}
    for name in RUN_FILES:
        path = os.path.join(run_dir, name)
        entries[name] = {"bytes": os.path.getsize(path), "sha256": _sha256(path)}
    with open(os.path.join(run_dir, MANIFEST), "w") as fh:
        json.dump(entries, fh, indent=1, sort_keys=True)
        fh.write("\n")


def manifest_problems(run_dir: str) -> list[str]:
    """Empty when every expected file is present and matches the manifest."""
    path = os.path.join(run_dir, MANIFEST)
    if not os.path.exists(path):
        return ["manifest missing"]
    with open(path) as fh:
        entries = json.load(fh)
    out = []
    for name in RUN_FILES:
        fp = os.path.join(run_dir, name)
        if name not in entries:
            out.append(f"{name}: not listed in manifest")
        elif not os.path.exists(fp):
            out.append(f"{name}: missing")
        elif _sha256(fp) != entries[name]["sha256"]:
            out.append(f"{name}: content does not match manifest")
    return out


def run_config(cfg: ExperimentConfig, variant: str, seed: int) -> ExperimentConfig:
    """The resolved single-run config that gets snapshotted."""
    return cfg.with_overrides(variant=variant, seeds=[seed], output_dir=".")


def run_single(cfg: ExperimentConfig, variant: str, seed: int, run_dir: str,
               resume: bool = True, progress=None) -> RunResult:
    """Train one (variant, seed) into ``run_dir``; reuse it if already complete."""
    resolved = run_config(cfg, variant, seed)
    snapshot = resolved.to_toml()
    snap_path = os.path.join(run_dir, "config.toml")
    if resume and os.path.exists(snap_path) and not manifest_problems(run_dir):
        with open(snap_path) as fh:
            if fh.read() == snapshot:
                records = read_metrics_csv(os.path.join(run_dir, "metrics.csv"))
                return RunResult(variant, seed, run_dir, records[-1], reused=True)

    os.makedirs(run_dir, exist_ok=True)
    ckpt_dir = os.path.join(run_dir, "checkpoints") if cfg.checkpoint_every else None
    if ckpt_dir:
        os.makedirs(ckpt_dir, exist_ok=True)
    run = train(resolved.duel, resolved.target(), resolved.total_iters, resolved.eval_every, seed,
                checkpoint_dir=ckpt_dir, checkpoint_every=cfg.checkpoint_every or None,
                progress=progress)
    with open(snap_path, "w") as fh:
        fh.write(snapshot)
    emit_metrics_csv(run.records, os.path.join(run_dir, "metrics.csv"))
    emit_samples(run.final_samples[:512], os.path.join(run_dir, "samples_512.csv"))
    emit_samples(run.final_samples, os.path.join(run_dir, "samples_10000.csv"))
    save_checkpoint(run.state, os.path.join(run_dir, "final.ckpt"))
    write_manifest(run_dir)
    problems = manifest_problems(run_dir)
    if problems:
        raise RuntimeError(f"{run_dir}: post-run manifest check failed: {problems}")
    # the CSV is rounded to 9 digits; report what was written
    final = read_metrics_csv(os.path.join(run_dir, "metrics.csv"))[-1]
    return RunResult(variant, seed, run_dir, final)


def worker_count(default: int | None = None) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return default or min(4, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError([f"{WORKERS_ENV}: must be a positive integer, got {raw!r}"])
    return n


def _run_job(args):
    cfg, variant, seed, run_dir = args
    return run_single(cfg, variant, seed, run_dir)


def _run_all(jobs, workers: int) -> list[RunResult]:
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def summarize(results: list[RunResult], out_dir: str, key_cols=("variant", "seed"),
              keys=None, name: str = "summary") -> None:
    """One row per run, plus median/min/max per group across seeds."""
    keys = keys or [(r.variant, r.seed) for r in results]
    emit_table(key_cols + METRIC_COLUMNS,
               [list(k) + [getattr(r.final, c) for c in METRIC_COLUMNS] for k, r in zip(keys, results)],
               os.path.join(out_dir, f"{name}.csv"))
    groups: dict = {}
    for k, r in zip(keys, results):
        groups.setdefault(tuple(k[:-1]), []).append(r.final)
    rows = []
    for g, finals in groups.items():
        for metric in STAT_METRICS:
            vals = [getattr(f, metric) for f in finals]
            rows.append(list(g) + [metric, len(vals), float(statistics.median(vals)),
                                   float(min(vals)), float(max(vals))])
    emit_table(key_cols[:-1] + ("metric", "n", "median", "min", "max"), rows,
               os.path.join(out_dir, f"{name}_stats.csv"))


def compare(cfg: ExperimentConfig, out_dir: str, workers: int | None = None) -> list[RunResult]:
    os.makedirs(out_dir, exist_ok=True)
    jobs = [(cfg, v, s, os.path.join(out_dir, f"{v}_seed{s}")) for v in cfg.variants for s in cfg.seeds]
    results = _run_all(jobs, workers or worker_count())
    summarize(results, out_dir)
    return results


def ablate(cfg: ExperimentConfig, out_dir: str, seed: int | None = None,
           workers: int | None = None) -> list[RunResult]:
    """DuelGAN over the (alpha_max, beta_max) grid, one seed."""
    seed = cfg.seeds[0] if seed is None else seed
    os.makedirs(out_dir, exist_ok=True)
    jobs, keys = [], []
    for a in cfg.ablate_alpha:
        for b in cfg.ablate_beta:
            sub = cfg.with_overrides(alpha_max=a, beta_max=b)
            jobs.append((sub, "duelgan", seed, os.path.join(out_dir, f"alpha{a:g}_beta{b:g}_seed{seed}")))
            keys.append((a, b, seed))
    results = _run_all(jobs, workers or worker_count())
    summarize(results, out_dir, key_cols=("alpha_max", "beta_max", "seed"), keys=keys, name="ablation")
    return results


def eval_checkpoint(path: str, n: int = 10_000) -> tuple[MetricsRecord, object]:
    state = load_checkpoint(path)
    return evaluate(state, n=n)
