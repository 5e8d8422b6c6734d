"""Which methods learn the 16-example task when one rule for ``b`` is missing.

    python scripts/missing_rule_study.py --seeds 10
"""

import argparse
import time

from kbrefine.experiments import EXAMPLE_THEORY, MISSING_RULE, missing_rule_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--kbann-epochs", type=int, default=500)
    ap.add_argument("--topgen-budget", type=int, default=50)
    ap.add_argument("--regent-budget", type=int, default=60)
    ap.add_argument("--regent-population", type=int, default=10)
    args = ap.parse_args()

    print("theory:\n" + EXAMPLE_THEORY + "target adds: " + MISSING_RULE)
    start = time.perf_counter()
    res = missing_rule_study(range(args.seeds), args.kbann_epochs, args.topgen_budget,
                             args.regent_budget, args.regent_population)
    print(f"{'seed':>4}  {'kbann':>6}  {'topgen':>6}  {'regent':>6}")
    for row in zip(res.seeds, res.kbann_perfect, res.topgen_perfect, res.regent_perfect):
        print(f"{row[0]:>4}  " + "  ".join(f"{'100%' if ok else '<100%':>6}" for ok in row[1:]))
    n = len(res.seeds)
    print(f"perfect: kbann {sum(res.kbann_perfect)}/{n}, topgen {sum(res.topgen_perfect)}/{n}, "
          f"regent {sum(res.regent_perfect)}/{n} ({time.perf_counter() - start:.1f}s)")


if __name__ == "__main__":
    main()
