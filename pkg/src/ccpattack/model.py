"""A small numpy CNN with exact backpropagation and Adam.

Inputs are raw-intensity images ``(N, 3, H, W)`` in [0, 255]; the model
divides by 255 on entry and that is the only place scaling happens. The
network ends in a softmax and is trained with categorical cross-entropy.
"""

from __future__ import annotations

import io
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .ccp import CcpParams, apply_ccp, draw_from
from .image import Dataset, to_storage
from .prng import Purpose, SeedPath, derive

log = logging.getLogger(__name__)

LAYER_KINDS = ("conv", "relu", "pool", "flatten", "dense", "softmax")

CHECKPOINT_MAGIC = b"CCPM"
CHECKPOINT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class SpecError(ValueError):
    """A layer sequence that does not type-check against its input shape."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    size: int | None = None  # output channels for conv, output width for dense

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise SpecError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("conv", "dense") and (self.size is None or self.size < 1):
            raise SpecError(f"{self.kind} layer needs a positive size")

    def __str__(self) -> str:
        return f"{self.kind}({self.size})" if self.size else self.kind


def Conv2D(out_ch: int) -> LayerSpec:
    return LayerSpec("conv", out_ch)


def Dense(out_dim: int) -> LayerSpec:
    return LayerSpec("dense", out_dim)


ReLU = LayerSpec("relu")
MaxPool2 = LayerSpec("pool")
Flatten = LayerSpec("flatten")
Softmax = LayerSpec("softmax")


def small_cnn(num_classes: int) -> list[LayerSpec]:
    return [Conv2D(16), ReLU, MaxPool2, Conv2D(32), ReLU, MaxPool2, Flatten, Dense(num_classes), Softmax]


def check_spec(layers: list[LayerSpec], input_shape: tuple[int, int, int]) -> list[tuple]:
    """Return the activation shape after each layer, or raise SpecError."""
    if not layers or layers[-1].kind != "softmax":
        raise SpecError("layer sequence must end with softmax")
    shape: tuple = tuple(input_shape)
    shapes = []
    for i, layer in enumerate(layers):
        if layer.kind == "softmax" and i != len(layers) - 1:
            raise SpecError("softmax must be the last layer")
        if layer.kind == "conv":
            if len(shape) != 3:
                raise SpecError(f"layer {i}: conv needs a (C, H, W) input, got {shape}")
            shape = (layer.size, shape[1], shape[2])
        elif layer.kind == "pool":
            if len(shape) != 3:
                raise SpecError(f"layer {i}: pool needs a (C, H, W) input, got {shape}")
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        elif layer.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif layer.kind == "dense":
            if len(shape) != 1:
                raise SpecError(f"layer {i}: dense must follow flatten")
            shape = (layer.size,)
        elif layer.kind == "softmax" and len(shape) != 1:
            raise SpecError("softmax needs a flat input")
        if min(shape) < 1:
            raise SpecError(f"layer {i} ({layer}) collapses the activation to {shape}")
        shapes.append(shape)
    return shapes


# --- layer kernels --------------------------------------------------------


def _im2col(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (N, C, H, W, 3, 3)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)


def _conv_forward(x, wt, b):
    n, _, h, w = x.shape
    cols = _im2col(x)
    out = cols @ wt.reshape(wt.shape[0], -1).T + b
    return out.reshape(n, h, w, -1).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, x, cols, wt):
    n, c, h, w = x.shape
    k = wt.shape[0]
    d = dout.transpose(0, 2, 3, 1).reshape(-1, k)
    dw = (d.T @ cols).reshape(wt.shape)
    db = d.sum(axis=0)
    dcols = (d @ wt.reshape(k, -1)).reshape(n, h, w, c, 3, 3)
    dxp = np.zeros((n, c, h + 2, w + 2))
    for i in range(3):
        for j in range(3):
            dxp[:, :, i : i + h, j : j + w] += dcols[..., i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dw, db


def _pool_windows(x):
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    x = x[:, :, : 2 * h2, : 2 * w2]
    return x.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)


def _pool_forward(x):
    win = _pool_windows(x)
    arg = win.argmax(axis=-1)  # first maximum wins ties
    return np.take_along_axis(win, arg[..., None], axis=-1)[..., 0], arg


def _pool_backward(dout, x_shape, arg):
    n, c, h, w = x_shape
    h2, w2 = h // 2, w // 2
    dwin = np.zeros((n, c, h2, w2, 4))
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dwin = dwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
    dx = np.zeros(x_shape)
    dx[:, :, : 2 * h2, : 2 * w2] = dwin
    return dx


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# --- model ----------------------------------------------------------------


class Backward(NamedTuple):
    loss: float
    grads: list[np.ndarray]
    input_grad: np.ndarray  # w.r.t. raw [0, 255] intensities
    probs: np.ndarray


@dataclass
class Model:
    layers: list[LayerSpec]
    input_shape: tuple[int, int, int]
    params: list[np.ndarray]
    adam_m: list[np.ndarray] = field(default_factory=list)
    adam_v: list[np.ndarray] = field(default_factory=list)
    adam_t: int = 0

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        self.shapes = check_spec(self.layers, self.input_shape)
        expected = param_shapes(self.layers, self.input_shape)
        got = [p.shape for p in self.params]
        if got != expected:
            raise SpecError(f"parameter shapes {got} do not match spec {expected}")
        if not self.adam_m:
            self.adam_m = [np.zeros_like(p) for p in self.params]
            self.adam_v = [np.zeros_like(p) for p in self.params]

    @property
    def num_classes(self) -> int:
        return self.shapes[-1][0]

    def _param_slots(self):
        """Yield (layer_index, index of weight in params) for parametrised layers."""
        k = 0
        for i, layer in enumerate(self.layers):
            if layer.kind in ("conv", "dense"):
                yield i, k
                k += 2

    def forward(self, images: np.ndarray) -> np.ndarray:
        """Class probabilities for raw-intensity images ``(N, 3, H, W)``."""
        return self._run(images, keep=False)[0]

    def _run(self, images: np.ndarray, keep: bool) -> tuple[np.ndarray, list]:
        x = np.asarray(images, dtype=np.float64)
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise SpecError(f"expected inputs of shape (N, {', '.join(map(str, self.input_shape))}), got {x.shape}")
        x = x / 255.0
        slots = dict(self._param_slots())
        cache = []
        for i, layer in enumerate(self.layers):
            inp = x
            if layer.kind == "conv":
                k = slots[i]
                x, aux = _conv_forward(x, self.params[k], self.params[k + 1])
            elif layer.kind == "relu":
                x, aux = np.maximum(x, 0.0), None
            elif layer.kind == "pool":
                x, aux = _pool_forward(x)
            elif layer.kind == "flatten":
                x, aux = x.reshape(len(x), -1), None
            elif layer.kind == "dense":
                k = slots[i]
                x, aux = x @ self.params[k] + self.params[k + 1], None
            else:
                x, aux = softmax(x), None
            if keep:
                cache.append((inp, aux))
        return x, cache

    def backward(self, images: np.ndarray, labels) -> Backward:
        """Mean cross-entropy, parameter gradients, and the gradient w.r.t. raw input.

        Runs its own forward pass so activations always match ``images``.
        """
        labels = np.asarray(labels, dtype=np.int64)
        probs, cache = self._run(images, keep=True)
        n, c = probs.shape
        if len(labels) != n:
            raise ValueError(f"{n} images but {len(labels)} labels")
        if n and (labels.min() < 0 or labels.max() >= c):
            raise ValueError(f"label out of range [0, {c})")
        picked = probs[np.arange(n), labels]
        loss = float(-np.mean(np.log(picked)))
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        d /= n  # gradient w.r.t. logits: (p - onehot) / N
        grads = [None] * len(self.params)
        slots = dict(self._param_slots())
        for i in range(len(self.layers) - 2, -1, -1):
            layer = self.layers[i]
            inp, aux = cache[i]
            if layer.kind == "dense":
                k = slots[i]
                grads[k] = inp.T @ d
                grads[k + 1] = d.sum(axis=0)
                d = d @ self.params[k].T
            elif layer.kind == "flatten":
                d = d.reshape(inp.shape)
            elif layer.kind == "relu":
                d = d * (inp > 0)
            elif layer.kind == "pool":
                d = _pool_backward(d, inp.shape, aux)
            elif layer.kind == "conv":
                k = slots[i]
                d, grads[k], grads[k + 1] = _conv_backward(d, inp, aux, self.params[k])
        return Backward(loss, grads, d / 255.0, probs)

    def loss(self, images: np.ndarray, labels) -> float:
        probs = self.forward(images)
        labels = np.asarray(labels, dtype=np.int64)
        return float(-np.mean(np.log(probs[np.arange(len(labels)), labels])))

    def copy(self) -> Model:
        return Model(
            list(self.layers),
            self.input_shape,
            [p.copy() for p in self.params],
            [m.copy() for m in self.adam_m],
            [v.copy() for v in self.adam_v],
            self.adam_t,
        )

    def predict(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Argmax class per image; ties go to the lowest class index."""
        out = [self.forward(images[i : i + batch_size]).argmax(axis=1) for i in range(0, len(images), batch_size)]
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def param_shapes(layers: list[LayerSpec], input_shape) -> list[tuple]:
    shapes = check_spec(layers, input_shape)
    prev = tuple(input_shape)
    out = []
    for layer, shape in zip(layers, shapes):
        if layer.kind == "conv":
            out += [(layer.size, prev[0], 3, 3), (layer.size,)]
        elif layer.kind == "dense":
            out += [(prev[0], layer.size), (layer.size,)]
        prev = shape
    return out


def init_model(layers: list[LayerSpec], input_shape=(3, 32, 32), seed: int = 0) -> Model:
    """He-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
    params = []
    for li, shape in enumerate(param_shapes(layers, input_shape)):
        if len(shape) == 1:
            params.append(np.zeros(shape))
            continue
        fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
        bound = np.sqrt(6.0 / fan_in)
        rng = derive(SeedPath(seed, 0, li, Purpose.MODEL_INIT))
        params.append(rng.uniform_array(int(np.prod(shape)), -bound, bound).reshape(shape))
    return Model(list(layers), tuple(input_shape), params)


def adam_step(model: Model, grads: list[np.ndarray], lr: float) -> None:
    model.adam_t += 1
    t = model.adam_t
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    for p, g, m, v in zip(model.params, grads, model.adam_m, model.adam_v):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


# --- training -------------------------------------------------------------


@dataclass(frozen=True)
class CcpAugmentation:
    """Replace each training image, with probability ``probability``, by a
    variable-scheme CCP transform drawn fresh for that image and epoch."""

    params: CcpParams = CcpParams(scale=1.0, bias=0.0)
    probability: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"augmentation probability {self.probability} outside [0, 1]")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr_schedule: tuple[tuple[int, float], ...] | None = None  # (epoch count, lr) stages
    learning_rate: float = 1e-3
    seed: int = 0
    augmentation: CcpAugmentation | None = None
    hflip: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr_schedule is not None:
            sched = tuple((int(n), float(lr)) for n, lr in self.lr_schedule)
            if sum(n for n, _ in sched) != self.epochs:
                raise ValueError(f"lr schedule covers {sum(n for n, _ in sched)} epochs, not {self.epochs}")
            object.__setattr__(self, "lr_schedule", sched)

    def lr_for_epoch(self, epoch: int) -> float:
        if self.lr_schedule is None:
            return self.learning_rate
        for count, lr in self.lr_schedule:
            if epoch < count:
                return lr
            epoch -= count
        raise IndexError(epoch)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    accuracy: float


@dataclass
class TrainingLog:
    epochs: list[EpochRecord] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epochs[-1].loss if self.epochs else float("nan")


def shuffled_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Fisher-Yates driven by the epoch's shuffle stream."""
    rng = derive(SeedPath(seed, epoch, 0, Purpose.SHUFFLE))
    u = rng.uniform_array(n)
    order = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = min(int(u[i] * (i + 1)), i)
        order[i], order[j] = order[j], order[i]
    return order


def augment_image(image: np.ndarray, index: int, epoch: int, config: TrainConfig) -> np.ndarray:
    aug = config.augmentation
    if aug is None and not config.hflip:
        return image
    rng = derive(SeedPath(config.seed, epoch, index, Purpose.AUGMENTATION))
    out = image
    if aug is not None:
        hit = rng.next_uniform() < aug.probability
        w = draw_from(rng, aug.params.lower, aug.params.upper)
        if hit:
            out = to_storage(apply_ccp(out, w, aug.params))
    if config.hflip and rng.next_uniform() < 0.5:
        out = out[:, :, ::-1]
    return out


def train(model: Model, ds: Dataset, config: TrainConfig) -> TrainingLog:
    """Train ``model`` in place."""
    if len(ds) == 0:
        raise ValueError("cannot train on an empty dataset")
    history = TrainingLog()
    n = len(ds)
    for epoch in range(config.epochs):
        lr = config.lr_for_epoch(epoch)
        order = shuffled_order(n, config.seed, epoch)
        total_loss, correct = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = ds.images[idx]
            if config.augmentation is not None or config.hflip:
                batch = np.stack([augment_image(ds.images[i], int(i), epoch, config) for i in idx])
            labels = ds.labels[idx]
            res = model.backward(batch, labels)
            total_loss += res.loss * len(idx)
            correct += int((res.probs.argmax(axis=1) == labels).sum())
            adam_step(model, res.grads, lr)
        # running accuracy over the epoch, measured before each update
        record = EpochRecord(epoch, lr, total_loss / n, correct / n)
        history.epochs.append(record)
        log.info("epoch %d lr=%g loss=%.4f acc=%.4f", epoch, lr, record.loss, record.accuracy)
    return history


def evaluate(model: Model, ds: Dataset, batch_size: int = 256) -> float:
    if len(ds) == 0:
        return float("nan")
    return float(np.mean(model.predict(ds.images, batch_size) == ds.labels))


# --- checkpoints ----------------------------------------------------------


def save_checkpoint(model: Model, path: str | os.PathLike) -> None:
    """``CCPM`` | u32 version | u32 spec length | JSON spec | float64 LE params."""
    spec = json.dumps(
        {
            "input_shape": list(model.input_shape),
            "layers": [[layer.kind, layer.size] for layer in model.layers],
        },
        sort_keys=True,
    ).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(spec)))
    buf.write(spec)
    for p in model.params:
        buf.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path: str | os.PathLike) -> Model:
    from .image import FormatError

    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a model checkpoint")
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header")
    version, n = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        spec = json.loads(raw[12 : 12 + n].decode("utf-8"))
        layers = [LayerSpec(kind, size) for kind, size in spec["layers"]]
        input_shape = tuple(spec["input_shape"])
        shapes = param_shapes(layers, input_shape)
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: bad model spec") from exc
    pos = 12 + n
    params = []
    for shape in shapes:
        count = int(np.prod(shape))
        chunk = raw[pos : pos + 8 * count]
        if len(chunk) != 8 * count:
            raise FormatError(f"{path}: parameter payload truncated")
        params.append(np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape))
        pos += 8 * count
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return Model(layers, input_shape, params)
