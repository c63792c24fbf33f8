"""Check every closed-form identity against its brute-force oracle and print residuals."""
import sys

from duelgan.harness.cli import main

if __name__ == "__main__":
    sys.exit(main(["theory-check", *sys.argv[1:]]))
