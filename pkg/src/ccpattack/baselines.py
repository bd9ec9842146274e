"""Comparison attacks: single-step FGSM and the one-pixel DE attack."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import round_half_away, to_storage
from .model import Model
from .prng import SeedPath, derive


@dataclass(frozen=True)
class FgsmParams:
    epsilon: float = 8.0  # raw intensity units out of 255

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")


def fgsm_batch(model: Model, images: np.ndarray, labels, params: FgsmParams, batch_size: int = 128) -> np.ndarray:
    """Untargeted FGSM on a batch of storage-domain images.

    Samples do not interact in the loss, so batching only rescales each
    image's gradient by 1/N and leaves its sign unchanged.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if params.epsilon == 0:
        return images.copy()
    out = np.empty_like(images)
    for i in range(0, len(images), batch_size):
        x = images[i : i + batch_size]
        g = model.backward(x, labels[i : i + batch_size]).input_grad
        out[i : i + batch_size] = to_storage(x + params.epsilon * np.sign(g))
    return out


def fgsm_attack(model: Model, image: np.ndarray, label: int, params: FgsmParams) -> np.ndarray:
    return fgsm_batch(model, np.asarray(image)[None], [label], params)[0]


@dataclass(frozen=True)
class OnePixelParams:
    pixel_budget: int = 1
    population: int = 50
    iterations: int = 40
    de_F: float = 0.5
    de_CR: float = 0.9
    # Snap intensities to these levels instead of 0..255 (used for exhaustive checks).
    levels: tuple[float, ...] | None = None
    # Stop once the best candidate is misclassified.
    early_stop: bool = False

    def __post_init__(self):
        if self.pixel_budget < 1:
            raise ValueError("pixel_budget must be >= 1")
        if self.population < 4:
            raise ValueError(f"DE needs a population of at least 4, got {self.population}")
        if not 0.0 <= self.de_CR <= 1.0:
            raise ValueError(f"crossover rate {self.de_CR} outside [0, 1]")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


def candidate_bounds(shape: tuple[int, int, int], budget: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-gene bounds for ``budget`` (row, col, R, G, B) tuples.

    Positions span [-0.5, size - 0.5] so rounding hits every row/column
    equally often.
    """
    _, h, w = shape
    lo = np.tile([-0.5, -0.5, 0.0, 0.0, 0.0], budget)
    hi = np.tile([h - 0.5, w - 0.5, 255.0, 255.0, 255.0], budget)
    return lo, hi


def _snap(values: np.ndarray, levels) -> np.ndarray:
    if levels is None:
        return to_storage(values)
    lv = np.asarray(levels, dtype=np.float64)
    # nearest level, ties to the lower one
    return lv[np.abs(values[..., None] - lv).argmin(axis=-1)]


def decode(candidate: np.ndarray, shape, levels=None) -> list[tuple[int, int, np.ndarray]]:
    _, h, w = shape
    c = np.asarray(candidate, dtype=np.float64).reshape(-1, 5)
    rows = np.clip(round_half_away(c[:, 0]), 0, h - 1).astype(int)
    cols = np.clip(round_half_away(c[:, 1]), 0, w - 1).astype(int)
    rgb = _snap(c[:, 2:], levels)
    return [(int(r), int(q), v) for r, q, v in zip(rows, cols, rgb)]


def apply_candidate(image: np.ndarray, candidate: np.ndarray, levels=None) -> np.ndarray:
    out = np.array(image, dtype=np.float64)
    for r, c, rgb in decode(candidate, out.shape, levels):
        out[:, r, c] = rgb
    return out


@dataclass(frozen=True)
class OnePixelResult:
    image: np.ndarray
    candidate: np.ndarray
    fitness: float  # probability of the true label; lower is better
    generations: int


def one_pixel_search(model, image, label: int, params: OnePixelParams, seed_path: SeedPath) -> OnePixelResult:
    """DE/rand/1/bin minimising the true-label probability.

    ``model`` only needs ``forward(images) -> probabilities``. Generations are
    synchronous: all trial vectors are built, scored in one batch, then
    selection is applied.
    """
    image = np.asarray(image, dtype=np.float64)
    rng = derive(seed_path)
    pop_n = params.population
    lo, hi = candidate_bounds(image.shape, params.pixel_budget)
    dim = len(lo)

    def score(cands):
        batch = np.stack([apply_candidate(image, c, params.levels) for c in cands])
        probs = model.forward(batch)
        return probs[:, label], probs.argmax(axis=1)

    pop = lo + (hi - lo) * rng.uniform_array(pop_n * dim).reshape(pop_n, dim)
    fit, pred = score(pop)
    gen = 0
    for gen in range(1, params.iterations + 1):
        if params.early_stop and pred[int(np.argmin(fit))] != label:
            gen -= 1
            break
        trials = np.empty_like(pop)
        for i in range(pop_n):
            picks: list[int] = []
            while len(picks) < 3:
                j = rng.below(pop_n)
                if j != i and j not in picks:
                    picks.append(j)
            a, b, c = picks
            mutant = pop[a] + params.de_F * (pop[b] - pop[c])
            # out-of-range genes are redrawn uniformly; clipping piles mass on the bounds
            fresh = lo + (hi - lo) * rng.uniform_array(dim)
            mutant = np.where((mutant < lo) | (mutant > hi), fresh, mutant)
            cross = rng.uniform_array(dim) < params.de_CR
            cross[rng.below(dim)] = True
            trials[i] = np.where(cross, mutant, pop[i])
        tfit, tpred = score(trials)
        better = tfit <= fit
        pop[better] = trials[better]
        fit = np.where(better, tfit, fit)
        pred = np.where(better, tpred, pred)
    best = int(np.argmin(fit))
    return OnePixelResult(apply_candidate(image, pop[best], params.levels), pop[best].copy(), float(fit[best]), gen)


def one_pixel_attack(model, image, label: int, params: OnePixelParams, seed_path: SeedPath) -> np.ndarray:
    return one_pixel_search(model, image, label, params, seed_path).image
