"""Train vanilla, D2GAN and DuelGAN on the 8-Gaussian ring over five seeds.

Completed runs under the output directory are reused, so an interrupted sweep
picks up where it stopped. Set DUELGAN_WORKERS to run seeds in parallel.

    python scripts/run_ring_compare.py [--out results/ring_compare] [--iters N]
"""
import sys

from duelgan.harness.cli import main

if __name__ == "__main__":
    args = sys.argv[1:]
    if "--out" not in args:
        args += ["--out", "results/ring_compare"]
    sys.exit(main(["-v", "compare", *args]))
