"""Desk-scale CIFAR-10 experiment from a plan file.

Expects the binary batches (cifar-10-batches-bin) at the paths named in the
plan, by default under data/.

    python scripts/run_cifar_subset.py --plan scripts/plans/cifar_subset.plan --out results/cifar
"""

import argparse
import logging
from pathlib import Path

from ccpattack.harness import load_plan, run_experiment

HERE = Path(__file__).parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--plan", default=HERE / "plans" / "cifar_subset.plan")
    ap.add_argument("--out", default="results/cifar")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    plan = load_plan(args.plan)
    for p in (plan.train_path, plan.test_path):
        if not Path(p).exists():
            raise SystemExit(f"missing {p}; download the CIFAR-10 binary version first")
    results = run_experiment(plan, args.out, workers=args.workers)
    for name, res in results.models.items():
        print(f"[{name}] clean {res.clean_accuracy:.4f}")
        for rep in res.reports:
            print(f"[{name}] {rep.attack_name:9s} mean {rep.mean:.4f} std {rep.std:.4f} drop {rep.drop_percent:6.2f}%")


if __name__ == "__main__":
    main()
