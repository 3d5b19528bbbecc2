"""Dense tensors, the global element type and seeded random streams.

Tensors are plain numpy arrays in row-major order. Clips use the (T, H, W, C)
layout and batches prepend a B axis. Every random draw goes through `Rng`,
a Philox4x64 counter-based stream keyed by a numpy SeedSequence; child
streams extend the spawn key, so a (seed, path) pair names a stream on any
platform.
"""
from contextlib import contextmanager
from typing import Iterator, List, Sequence, Tuple, Union
import logging
import zlib
import numpy as np
from app.core.exceptions import InvalidRangeError, InvalidShapeError, ShapeError

logger = logging.getLogger(__name__)

Shape = Union[int, Sequence[int]]

_dtype = np.float32


def get_dtype():
    return _dtype


def set_float64(enabled: bool) -> None:
    global _dtype
    _dtype = np.float64 if enabled else np.float32


@contextmanager
def float64_mode() -> Iterator[None]:
    """Run a block with 64-bit elements, e.g. for finite-difference checks."""
    previous = _dtype
    set_float64(True)
    try:
        yield
    finally:
        set_float64(previous == np.float64)


def _check_shape(shape: Shape) -> Tuple[int, ...]:
    dims = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
    if not dims or any(int(d) < 1 for d in dims):
        raise InvalidShapeError(f"Invalid shape {dims}: every dimension must be >= 1")
    return tuple(int(d) for d in dims)


class Rng:
    """Single-owner random stream; hand each worker its own child, never share one."""

    def __init__(self, seed: int, path: Tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        sequence = np.random.SeedSequence(self.seed & (2**64 - 1), spawn_key=self.path)
        self._generator = np.random.Generator(np.random.Philox(sequence))
        self._splits = 0

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path})"

    def split(self, k: int) -> List["Rng"]:
        """k independent children; repeated splits never reuse a child."""
        if k < 1:
            raise InvalidRangeError(f"split needs k >= 1, got {k}")
        children = [Rng(self.seed, self.path + (0x5EED0000, self._splits + i)) for i in range(k)]
        self._splits += k
        return children

    def child(self, label: str) -> "Rng":
        """Stream named by a label, independent of how much the parent was used."""
        return Rng(self.seed, self.path + (zlib.crc32(label.encode("utf-8")),))

    def fork(self, *indices: int) -> "Rng":
        """Stream addressed by integer indices, e.g. (epoch, sample id)."""
        return Rng(self.seed, self.path + tuple(int(i) for i in indices))

    def random(self, shape: Shape, dtype=None) -> np.ndarray:
        dtype = dtype or get_dtype()
        return self._generator.random(_check_shape(shape), dtype=dtype)

    def integers(self, lo: int, hi: int, size=None):
        """Uniform integers in [lo, hi)."""
        if hi <= lo:
            raise InvalidRangeError(f"Empty integer range [{lo}, {hi})")
        value = self._generator.integers(lo, hi, size=size)
        return int(value) if size is None else value

    def permutation(self, n: int) -> List[int]:
        return [int(i) for i in self._generator.permutation(n)]

    def choice(self, items: Sequence, k: int = 1) -> list:
        """k distinct items, in draw order."""
        if k > len(items):
            raise InvalidRangeError(f"Cannot draw {k} distinct items from {len(items)}")
        picks = self._generator.choice(len(items), size=k, replace=False)
        return [items[int(i)] for i in picks]


def zeros(shape: Shape) -> np.ndarray:
    return np.zeros(_check_shape(shape), dtype=get_dtype())


def rand_uniform(rng: Rng, shape: Shape, lo: float, hi: float) -> np.ndarray:
    """i.i.d. samples in [lo, hi)."""
    if not lo < hi:
        raise InvalidRangeError(f"Uniform range needs lo < hi, got [{lo}, {hi})")
    dtype = get_dtype()
    values = lo + (hi - lo) * rng.random(shape, dtype=np.float64)
    values = values.astype(dtype)
    # rounding into a narrower type can land exactly on hi
    return np.minimum(values, np.nextafter(dtype(hi), dtype(lo)))


def rand_gaussian(rng: Rng, shape: Shape, mean: float, sigma: float) -> np.ndarray:
    """Normal samples via Box-Muller over the uniform stream."""
    if not sigma > 0:
        raise InvalidRangeError(f"Gaussian sigma must be > 0, got {sigma}")
    dims = _check_shape(shape)
    n = int(np.prod(dims))
    pairs = (n + 1) // 2
    u1 = 1.0 - rng.random(pairs, dtype=np.float64)
    u2 = rng.random(pairs, dtype=np.float64)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    normals = np.empty(2 * pairs, dtype=np.float64)
    normals[0::2] = radius * np.cos(angle)
    normals[1::2] = radius * np.sin(angle)
    return (mean + sigma * normals[:n]).reshape(dims).astype(get_dtype())


_ELEMENTWISE = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def elementwise(a: np.ndarray, b: np.ndarray, op: str) -> np.ndarray:
    """Same-shape arithmetic; there is no broadcasting."""
    if op not in _ELEMENTWISE:
        raise InvalidRangeError(f"Unknown elementwise op '{op}'")
    if a.shape != b.shape:
        raise ShapeError(f"Elementwise {op} needs equal shapes, got {a.shape} and {b.shape}")
    return _ELEMENTWISE[op](a, b)


def clamp(x: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    return np.clip(x, lo, hi)


def ensure_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise InvalidRangeError(f"{what} contains NaN or Inf")
    return x
