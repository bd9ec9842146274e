"""Images, datasets, and the CIFAR-binary / PPM file formats.

An image is a float64 array of shape ``(3, H, W)``: channel-planar, R then G
then B, each plane row-major. That is exactly the CIFAR-10 record order, so
pixel ``(r, c)`` of channel ``k`` sits at flat index ``k*H*W + r*W + c``.

Two value domains are used. *Storage* values are integers in [0, 255] held
as floats; *compute* values are arbitrary reals. Conversion to storage is the
only place clamping and rounding happen.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    """A file does not match the expected binary layout."""


class CorruptRecordError(FormatError):
    pass


def round_half_away(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    a = np.abs(x)
    fl = np.floor(a)
    r = np.where(a - fl >= 0.5, fl + 1.0, fl)
    return np.copysign(r, x)


def to_storage(image: np.ndarray) -> np.ndarray:
    """Clamp to [0, 255] and round half away from zero. Idempotent."""
    out = round_half_away(np.clip(image, 0.0, 255.0))
    # copysign leaves -0.0 for tiny negatives clipped to 0
    out += 0.0
    return out


def to_compute(image: np.ndarray) -> np.ndarray:
    return np.asarray(image, dtype=np.float64)


def make_image(data, height: int | None = None, width: int | None = None) -> np.ndarray:
    """Build an image from a ``(3, H, W)`` array or a flat planar sequence."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        if height is None or width is None:
            raise ValueError("flat image data needs height and width")
        if arr.size != 3 * height * width:
            raise ValueError(f"expected {3 * height * width} values, got {arr.size}")
        arr = arr.reshape(3, height, width)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"image must have shape (3, H, W), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (N, 3, H, W) float64
    labels: np.ndarray  # (N,) int64
    num_classes: int
    names: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValueError(f"images must have shape (N, 3, H, W), got {images.shape}")
        if len(images) != len(labels):
            raise ValueError(f"{len(images)} images but {len(labels)} labels")
        if len(labels) and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        images.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, indices) -> Dataset:
        idx = np.asarray(indices, dtype=np.int64)
        names = None if self.names is None else tuple(self.names[i] for i in idx)
        return Dataset(self.images[idx], self.labels[idx], self.num_classes, names)

    def with_images(self, images: np.ndarray) -> Dataset:
        return Dataset(images, self.labels, self.num_classes, self.names)

    @classmethod
    def empty(cls, size: int = 32, num_classes: int = 10) -> Dataset:
        return cls(np.zeros((0, 3, size, size)), np.zeros(0, dtype=np.int64), num_classes)


def record_size(size: int = 32) -> int:
    return 1 + 3 * size * size


def load_cifar_binary(
    path: str | os.PathLike,
    expected_count: int | None = None,
    num_classes: int = 10,
    size: int = 32,
) -> Dataset:
    """Read CIFAR-10 binary records: one label byte then ``3*size*size`` pixel bytes.

    If ``expected_count`` is None it is inferred from the file length, which
    must still be a whole number of records.
    """
    raw = Path(path).read_bytes()
    rec = record_size(size)
    if expected_count is None:
        if len(raw) % rec:
            raise FormatError(
                f"{path}: {len(raw)} bytes is not a multiple of the {rec}-byte record size"
            )
        expected_count = len(raw) // rec
    want = expected_count * rec
    if len(raw) != want:
        raise FormatError(f"{path}: expected {want} bytes ({expected_count} records), got {len(raw)}")
    buf = np.frombuffer(raw, dtype=np.uint8).reshape(expected_count, rec)
    labels = buf[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        i = int(bad[0])
        raise CorruptRecordError(f"{path}: record {i} has label byte {labels[i]} (> {num_classes - 1})")
    images = buf[:, 1:].reshape(expected_count, 3, size, size).astype(np.float64)
    return Dataset(images, labels, num_classes)


def write_cifar_binary(ds: Dataset, path: str | os.PathLike) -> None:
    if len(ds) and ds.labels.max() > 255:
        raise ValueError("labels above 255 do not fit a label byte")
    n = len(ds)
    pixels = to_storage(ds.images).astype(np.uint8).reshape(n, -1)
    out = np.concatenate([ds.labels.astype(np.uint8).reshape(n, 1), pixels], axis=1)
    Path(path).write_bytes(out.tobytes())


def write_ppm(image: np.ndarray, path: str | os.PathLike) -> None:
    img = to_storage(make_image(image)).astype(np.uint8)
    _, h, w = img.shape
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    # PPM is pixel-interleaved
    Path(path).write_bytes(header + img.transpose(1, 2, 0).tobytes())


def _ppm_tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header")
        tokens.append(raw[start:pos])
    # exactly one whitespace byte separates maxval from the payload
    return tokens, pos + 1


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:2] != b"P6":
        raise FormatError(f"{path}: not a binary PPM (magic {raw[:2]!r})")
    tokens, pos = _ppm_tokens(raw, 4)
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PPM header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported (need 255)")
    payload = raw[pos : pos + 3 * w * h]
    if len(payload) != 3 * w * h:
        raise FormatError(f"{path}: pixel payload truncated ({len(payload)} of {3 * w * h} bytes)")
    px = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return px.transpose(2, 0, 1).astype(np.float64)


def load_ppm_dir(path: str | os.PathLike, num_classes: int = 10) -> Dataset:
    """Load every ``*.ppm`` in a folder (sorted by name).

    Labels are taken from a ``<label>_`` filename prefix when present, else 0.
    """
    files = sorted(Path(path).glob("*.ppm"))
    if not files:
        raise FormatError(f"{path}: no .ppm files")
    images = [read_ppm(f) for f in files]
    if len({im.shape for im in images}) != 1:
        raise FormatError(f"{path}: images differ in size")
    labels = []
    for f in files:
        head = f.stem.split("_", 1)[0]
        labels.append(int(head) if head.isdigit() and "_" in f.stem else 0)
    return Dataset(np.stack(images), np.array(labels), num_classes, tuple(f.name for f in files))


def write_ppm_dir(ds: Dataset, path: str | os.PathLike) -> None:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    names = ds.names or tuple(f"{int(y)}_{i:05d}.ppm" for i, y in enumerate(ds.labels))
    for img, name in zip(ds.images, names):
        write_ppm(img, out / name)
