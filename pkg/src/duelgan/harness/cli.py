"""Command-line entry point: train, compare, theory-check, eval, ablate.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or usage.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from ..theory import run_identity_suite
from .config import ConfigError, ensure_writable, load_config, schema_lines
from .emit import METRIC_COLUMNS, emit_metrics_csv, fmt
from .experiments import ablate, compare, eval_checkpoint, run_single, worker_count

log = logging.getLogger("duelgan")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="duelgan", description=__doc__.splitlines()[0])
    p.add_argument("--print-schema", action="store_true", help="print config keys and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, single=True):
        sp.add_argument("--config", help="flat TOML config file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--iters", type=int, help="override total_iters")
        sp.add_argument("--eval-every", type=int, help="override eval_every")
        sp.add_argument("--seed", type=int, help="seed (overrides the config's seed list)")
        if single:
            sp.add_argument("--variant", choices=("duelgan", "vanilla", "d2gan"))

    common(sub.add_parser("train", help="run one configuration"))
    cp = sub.add_parser("compare", help="all variants x seeds, with a summary table")
    common(cp, single=False)
    cp.add_argument("--variant", action="append", choices=("duelgan", "vanilla", "d2gan"),
                    help="restrict to these variants (repeatable)")
    common(sub.add_parser("ablate", help="DuelGAN over the alpha_max x beta_max grid"), single=False)
    tc = sub.add_parser("theory-check", help="closed-form identities against brute-force oracles")
    tc.add_argument("--n-specs", type=int, default=100)
    tc.add_argument("--seed", type=int, default=0)
    ev = sub.add_parser("eval", help="recompute metrics from a checkpoint")
    ev.add_argument("checkpoint")
    ev.add_argument("--samples", type=int, default=10_000)
    ev.add_argument("--out", help="write the record as a metrics CSV here")
    return p


def _resolve(args, variants=None):
    cfg = load_config(args.config)
    overrides = {"total_iters": args.iters, "eval_every": args.eval_every}
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if variants:
        overrides["variants" if isinstance(variants, list) else "variant"] = variants
    cfg = cfg.with_overrides(**overrides)
    out = args.out or cfg.output_dir
    ensure_writable(out)
    return cfg, out


def _progress(variant, seed):
    def cb(rec):
        log.info("%s seed %d iter %d: sym_kl %.4f, W1 %.4f, modes %d, agreement %.3f",
                 variant, seed, rec.iter, rec.sym_kl, rec.wasserstein, rec.modes_captured, rec.agreement)
    return cb


def _cmd_train(args) -> int:
    cfg, out = _resolve(args, args.variant)
    variant, seed = cfg.duel.variant, cfg.seeds[0]
    res = run_single(cfg, variant, seed, out, resume=False, progress=_progress(variant, seed))
    print(f"{variant} seed {seed}: " + ", ".join(f"{c}={fmt(getattr(res.final, c))}" for c in METRIC_COLUMNS))
    print(f"wrote {res.run_dir}")
    return 0


def _cmd_compare(args) -> int:
    cfg, out = _resolve(args, args.variant)
    results = compare(cfg, out, worker_count())
    for r in results:
        tag = " (reused)" if r.reused else ""
        print(f"{r.variant:8s} seed {r.seed}: modes {r.final.modes_captured}, "
              f"sym_kl {fmt(r.final.sym_kl)}, W1 {fmt(r.final.wasserstein)}{tag}")
    print(f"wrote {os.path.join(out, 'summary.csv')}")
    return 0


def _cmd_ablate(args) -> int:
    cfg, out = _resolve(args)
    results = ablate(cfg, out, workers=worker_count())
    grid = [(a, b) for a in cfg.ablate_alpha for b in cfg.ablate_beta]
    for (a, b), r in zip(grid, results):
        print(f"alpha_max {a:g} beta_max {b:g}: modes {r.final.modes_captured}, sym_kl {fmt(r.final.sym_kl)}")
    print(f"wrote {os.path.join(out, 'ablation.csv')}")
    return 0


def _cmd_theory(args) -> int:
    results = run_identity_suite(args.n_specs, args.seed)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        extra = f"  ({r.note})" if r.note else ""
        print(f"{status}  {r.name}: residual {r.residual:.3e} (tolerance {r.tolerance:g}){extra}")
    return 0 if all(r.passed for r in results) else 1


def _cmd_eval(args) -> int:
    rec, _ = eval_checkpoint(args.checkpoint, args.samples)
    print(",".join(METRIC_COLUMNS))
    print(",".join(fmt(getattr(rec, c)) for c in METRIC_COLUMNS))
    if args.out:
        emit_metrics_csv([rec], args.out)
    return 0


COMMANDS = {"train": _cmd_train, "compare": _cmd_compare, "ablate": _cmd_ablate,
            "theory-check": _cmd_theory, "eval": _cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    if args.print_schema:
        print("\n".join(schema_lines()))
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"error: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
