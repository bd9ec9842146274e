"""Color channel perturbation: each output channel is a random mix of R, G, B.

For one image with weight rows ``alpha``, ``beta``, ``gamma``::

    R' = s * ((alpha_r*R + alpha_g*G + alpha_b*B) / 3) + b

and likewise G' from ``beta`` and B' from ``gamma``. The same weights apply to
every pixel of the image. The *fixed* scheme shares one weight matrix across
all images of a trial; the *variable* scheme draws a fresh matrix per image.

Arithmetic order is frozen (products summed left to right, then /3, then *s,
then +b) so that every code path here agrees to the last bit.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .image import Dataset, to_compute, to_storage
from .prng import Purpose, RngState, SeedPath, derive


class Scheme(str, Enum):
    FIXED = "fixed"
    VARIABLE = "variable"


@dataclass(frozen=True)
class CcpParams:
    scale: float = 2.0
    bias: float = 0.0
    lower: float = 0.0
    upper: float = 1.0
    scheme: Scheme = Scheme.VARIABLE

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError(f"lower bound {self.lower} exceeds upper bound {self.upper}")
        object.__setattr__(self, "scheme", Scheme(self.scheme))

    def with_scheme(self, scheme: Scheme | str) -> CcpParams:
        return CcpParams(self.scale, self.bias, self.lower, self.upper, Scheme(scheme))


# Scale/bias profiles: low-resolution (CIFAR-like) and high-resolution images.
PROFILES = {
    "cifar": {"scale": 2.0, "bias": 0.0},
    "highres": {"scale": 1.0, "bias": 30.0},
}


@dataclass(frozen=True)
class WeightMatrix:
    alpha: tuple[float, float, float]
    beta: tuple[float, float, float]
    gamma: tuple[float, float, float]

    @classmethod
    def from_sequence(cls, w) -> WeightMatrix:
        w = [float(x) for x in w]
        if len(w) != 9:
            raise ValueError(f"need 9 weights, got {len(w)}")
        return cls(tuple(w[0:3]), tuple(w[3:6]), tuple(w[6:9]))

    @classmethod
    def constant(cls, value: float) -> WeightMatrix:
        return cls.from_sequence([value] * 9)

    def as_array(self) -> np.ndarray:
        """Rows are output channels, columns are input channels."""
        return np.array([self.alpha, self.beta, self.gamma], dtype=np.float64)


@dataclass(frozen=True)
class CcpTrialPlan:
    params: CcpParams
    base_seed: int
    trial_index: int = 0


def draw_from(rng: RngState, lower: float, upper: float) -> WeightMatrix:
    """Nine draws in order alpha_rgb, beta_rgb, gamma_rgb."""
    return WeightMatrix.from_sequence(rng.uniform_in(lower, upper) for _ in range(9))


def draw_weights(plan: CcpTrialPlan, image_index: int) -> WeightMatrix:
    idx = image_index if plan.params.scheme is Scheme.VARIABLE else 0
    rng = derive(SeedPath(plan.base_seed, plan.trial_index, idx, Purpose.CCP_WEIGHTS))
    return draw_from(rng, plan.params.lower, plan.params.upper)


def _mix(images: np.ndarray, w: np.ndarray, scale: float, bias: float) -> np.ndarray:
    # images (N, 3, H, W); w (N, 3, 3)
    r, g, b = images[:, 0], images[:, 1], images[:, 2]
    out = np.empty_like(images)
    for k in range(3):
        wr = w[:, k, 0, None, None]
        wg = w[:, k, 1, None, None]
        wb = w[:, k, 2, None, None]
        out[:, k] = scale * (((wr * r + wg * g) + wb * b) / 3.0) + bias
    return out


def apply_ccp(image: np.ndarray, w: WeightMatrix, params: CcpParams) -> np.ndarray:
    """Transform one compute-domain ``(3, H, W)`` image. No clipping."""
    image = np.asarray(image, dtype=np.float64)
    return _mix(image[None], w.as_array()[None], params.scale, params.bias)[0]


def apply_ccp_batch(images: np.ndarray, weights: np.ndarray, params: CcpParams) -> np.ndarray:
    """Per-image weights ``(N, 3, 3)`` applied to ``(N, 3, H, W)`` images."""
    return _mix(np.asarray(images, dtype=np.float64), np.asarray(weights), params.scale, params.bias)


def trial_weights(plan: CcpTrialPlan, indices) -> np.ndarray:
    indices = list(indices)
    if plan.params.scheme is Scheme.FIXED:
        w = draw_weights(plan, 0).as_array()
        return np.broadcast_to(w, (len(indices), 3, 3)).copy()
    if not indices:
        return np.zeros((0, 3, 3))
    return np.stack([draw_weights(plan, i).as_array() for i in indices])


def _attack_chunk(ds: Dataset, plan: CcpTrialPlan, lo: int, hi: int) -> np.ndarray:
    w = trial_weights(plan, range(lo, hi))
    return to_storage(apply_ccp_batch(to_compute(ds.images[lo:hi]), w, plan.params))


def attack_dataset(ds: Dataset, plan: CcpTrialPlan, workers: int = 1, chunk: int = 256) -> Dataset:
    """CCP-transform every image of a storage-domain dataset.

    Image ``i`` always uses the stream for index ``i``, so the result does not
    depend on ``workers``.
    """
    n = len(ds)
    if n == 0:
        return ds
    bounds = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
    if workers <= 1 or len(bounds) == 1:
        parts = [_attack_chunk(ds, plan, lo, hi) for lo, hi in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: _attack_chunk(ds, plan, *b), bounds))
    return ds.with_images(np.concatenate(parts))
