"""Synthetic three-class image tasks.

``dominant`` images are uniform noise with one channel boosted; the label is
that channel. The class is carried by color alone, so a variable-scheme CCP
transform leaves no class information at all: the weight columns are i.i.d.,
so relabelling channels maps one class's transformed distribution exactly
onto another's.

``shape`` images draw a class-specific shape (horizontal bar, vertical bar,
hollow square) in the class's channel. Color and shape both predict the
label; CCP destroys the color cue but keeps the shape, so a model trained
with CCP augmentation can recover.
"""

from __future__ import annotations

import numpy as np

from .image import Dataset, to_storage
from .prng import Purpose, SeedPath, derive

NOISE_RANGE = (0.0, 60.0)
BOOST_RANGE = (120.0, 200.0)
NUM_CLASSES = 3


def dominant_channel_image(index: int, label: int, size: int, seed: int) -> np.ndarray:
    rng = derive(SeedPath(seed, 0, index, Purpose.DATASET))
    img = rng.uniform_array(3 * size * size, *NOISE_RANGE).reshape(3, size, size)
    img[label] += rng.uniform_array(size * size, *BOOST_RANGE).reshape(size, size)
    return to_storage(img)


def shape_image(index: int, label: int, size: int, seed: int) -> np.ndarray:
    if size < 10:
        raise ValueError("shape images need size >= 10")
    rng = derive(SeedPath(seed, 0, index, Purpose.DATASET))
    img = rng.uniform_array(3 * size * size, *NOISE_RANGE).reshape(3, size, size)
    r = rng.below(size - 8) + 2
    c = rng.below(size - 8) + 2
    mask = np.zeros((size, size), dtype=bool)
    if label == 0:
        mask[r : r + 2, 2 : size - 2] = True
    elif label == 1:
        mask[2 : size - 2, c : c + 2] = True
    else:
        mask[r : r + 6, c : c + 6] = True
        mask[r + 2 : r + 4, c + 2 : c + 4] = False
    boost = rng.uniform_array(size * size, *BOOST_RANGE).reshape(size, size)
    img[label] += boost * mask
    return to_storage(img)


TASKS = {"dominant": dominant_channel_image, "shape": shape_image}


def gen_synthetic(num_per_class: int, size: int = 32, seed: int = 0, task: str = "dominant") -> Dataset:
    """``3 * num_per_class`` images with labels cycling 0, 1, 2."""
    if task not in TASKS:
        raise ValueError(f"unknown synthetic task {task!r}")
    if size <= 0:
        raise ValueError(f"image size must be positive, got {size}")
    if num_per_class < 0:
        raise ValueError(f"num_per_class must be >= 0, got {num_per_class}")
    n = NUM_CLASSES * num_per_class
    labels = np.arange(n) % NUM_CLASSES
    images = np.zeros((n, 3, size, size))
    for i, y in enumerate(labels):
        images[i] = TASKS[task](i, int(y), size, seed)
    return Dataset(images, labels, NUM_CLASSES)


TEST_SEED_SALT = 0x5EED_7E57


def train_test_split(num_train_per_class: int, num_test_per_class: int, size: int = 32, seed: int = 0, task: str = "dominant"):
    """Disjoint train/test sets: the test set uses a salted seed."""
    train = gen_synthetic(num_train_per_class, size, seed, task)
    test = gen_synthetic(num_test_per_class, size, seed ^ TEST_SEED_SALT, task)
    return train, test
