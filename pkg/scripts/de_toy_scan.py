"""One-pixel DE against the exhaustive optimum on 2x2 toys.

Builds linear 2-class models (Flatten, Dense(2), Softmax) with different init
seeds, enumerates all 108 single-pixel candidates over the levels {0,128,255}
and counts how many of 100 seeded DE runs reach the best fitness.

    python scripts/de_toy_scan.py --models 10 --cr 0.1 0.9
"""

import argparse
import itertools

import numpy as np

from ccpattack.baselines import OnePixelParams, one_pixel_search
from ccpattack.model import Dense, Flatten, Softmax, init_model
from ccpattack.prng import Purpose, SeedPath

LEVELS = (0.0, 128.0, 255.0)


def optimum(model, image):
    cands = []
    for r, c in itertools.product(range(2), range(2)):
        for rgb in itertools.product(LEVELS, repeat=3):
            x = image.copy()
            x[:, r, c] = rgb
            cands.append(x)
    return model.forward(np.stack(cands))[:, 0].min()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--models", type=int, default=10)
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--cr", type=float, nargs="+", default=[0.1, 0.9])
    ap.add_argument("--pop", type=int, default=20)
    ap.add_argument("--iters", type=int, default=30)
    args = ap.parse_args()

    image = np.full((3, 2, 2), 128.0)
    models = [init_model([Flatten, Dense(2), Softmax], (3, 2, 2), seed=s) for s in range(args.models)]
    best = [optimum(m, image) for m in models]
    for cr in args.cr:
        params = OnePixelParams(population=args.pop, iterations=args.iters, de_CR=cr, levels=LEVELS)
        hits = [
            int(
                sum(
                    one_pixel_search(m, image, 0, params, SeedPath(s, 0, 0, Purpose.ATTACK_SEARCH)).fitness <= opt
                    for s in range(args.runs)
                )
            )
            for m, opt in zip(models, best)
        ]
        print(f"CR {cr:.2f}: hits per model {hits}  min {min(hits)}  models >= 95%: {sum(h >= 0.95 * args.runs for h in hits)}")


if __name__ == "__main__":
    main()
