"""DuelGAN over the (alpha_max, beta_max) grid on the ring, one seed.

    python scripts/run_ablation.py [--out results/ablation] [--seed 0] [--iters N]
"""
import sys

from duelgan.harness.cli import main

if __name__ == "__main__":
    args = sys.argv[1:]
    if "--out" not in args:
        args += ["--out", "results/ablation"]
    sys.exit(main(["-v", "ablate", *args]))
