"""Core types: images, detector contract, seeded RNG streams, inference accounting."""

from __future__ import annotations

import hashlib
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from PIL import Image

DEFAULT_THRESHOLD = 0.5  # probability-of-real at or above which an image counts as Real


class ConfigurationError(ValueError):
    """Invalid parameters, shapes, or config files."""


class OracleError(RuntimeError):
    """A detector failed to score a batch. Carries whatever batch context is known."""


class NotDeepfakeError(RuntimeError):
    """The pipeline was asked to explain an image the detector classifies as Real."""


class Label(Enum):
    REAL = "real"
    FAKE = "fake"


@dataclass(frozen=True)
class ImageTensor:
    """Dense C x H x W pixel array with float32 values in [0, 1].

    float32 storage is load-bearing: pixel data crosses the detector wire
    protocol as little-endian float32, and keeping the in-process
    representation identical makes remote and local scoring bit-equal.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ConfigurationError(f"image must be (C, H, W), got shape {arr.shape}")
        if arr.shape[0] not in (1, 3):
            raise ConfigurationError(f"channels must be 1 or 3, got {arr.shape[0]}")
        if arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ConfigurationError(f"empty image shape {arr.shape}")
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        if not np.all(np.isfinite(arr)):
            raise ConfigurationError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ConfigurationError(
                f"pixel values outside [0, 1]: min={arr.min()}, max={arr.max()}"
            )
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def to_bytes(self) -> bytes:
        """Little-endian float32, C order (channel, row, column)."""
        return self.data.astype("<f4", copy=False).tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes, shape: tuple[int, int, int]) -> "ImageTensor":
        c, h, w = shape
        arr = np.frombuffer(raw, dtype="<f4")
        if arr.size != c * h * w:
            raise ConfigurationError(
                f"payload has {arr.size} values, shape {shape} needs {c * h * w}"
            )
        return cls(arr.reshape(c, h, w).astype(np.float32))

    @classmethod
    def _wrap_validated(cls, arr: np.ndarray) -> "ImageTensor":
        # fast path for arrays already known to satisfy the invariants
        # (clipped float32 C-order), e.g. probe stacks built by clipping
        img = object.__new__(cls)
        arr.setflags(write=False)
        object.__setattr__(img, "data", arr)
        return img


@runtime_checkable
class DetectorOracle(Protocol):
    """Black-box scorer: batch of images -> probability-of-real per image.

    Implementations must be pure (identical batch -> identical scores) and
    preserve order: score i corresponds to image i.
    """

    name: str

    def score_batch(self, batch: Sequence[ImageTensor]) -> list[float]: ...


class RngStream:
    """Counter-based (Philox) random stream keyed by (seed, stream_id).

    Two streams built from the same key replay the same draw sequence on any
    platform; distinct stream_ids are statistically independent. ``split``
    derives child streams from string/int tokens so that parallel work
    (per module, per image, per iteration) never shares state.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if not 0 <= int(seed) < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        if not 0 <= int(stream_id) < 2**64:
            raise ConfigurationError("stream_id must be an unsigned 64-bit integer")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._gen = np.random.Generator(np.random.Philox(key=[self.seed, self.stream_id]))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def split(self, *tokens: int | str) -> "RngStream":
        """Child stream with an id derived by hashing (seed, stream_id, tokens)."""
        h = hashlib.blake2b(digest_size=8)
        h.update(f"{self.seed}:{self.stream_id}".encode())
        for t in tokens:
            h.update(b"/")
            h.update(str(t).encode())
        return RngStream(self.seed, int.from_bytes(h.digest(), "little"))

    def clone(self) -> "RngStream":
        """Fresh stream at the initial state of this one."""
        return RngStream(self.seed, self.stream_id)


def gaussian_noise(rng: RngStream, shape: tuple[int, ...]) -> np.ndarray:
    """I.i.d. standard-normal field, float64, deterministic in the stream state."""
    return rng.generator.standard_normal(shape)


def clamp_pixels(data: np.ndarray) -> np.ndarray:
    """Clip an arbitrary float field into the valid pixel range [0, 1]."""
    return np.clip(data, 0.0, 1.0)


@dataclass
class CounterSnapshot:
    forward_passes: int = 0
    batch_calls: int = 0
    wall_time: float = 0.0


class InferenceCounter:
    """Thread-safe accounting of single-image detector evaluations."""

    def __init__(self):
        self._lock = threading.Lock()
        self.forward_passes = 0
        self.batch_calls = 0
        self.wall_time = 0.0

    def add(self, n_images: int, seconds: float) -> None:
        with self._lock:
            self.forward_passes += n_images
            self.batch_calls += 1
            self.wall_time += seconds

    def snapshot(self) -> CounterSnapshot:
        with self._lock:
            return CounterSnapshot(self.forward_passes, self.batch_calls, self.wall_time)


class CountingDetector:
    """Detector wrapper that meters every score_batch call.

    Wrappers compose: stacking a local counter on an already-counting
    detector lets callers account for one operation while a global counter
    keeps run totals.
    """

    def __init__(self, inner: DetectorOracle, counter: InferenceCounter | None = None):
        self.inner = inner
        self.counter = counter if counter is not None else InferenceCounter()
        self.name = getattr(inner, "name", "detector")

    def score_batch(self, batch: Sequence[ImageTensor]) -> list[float]:
        t0 = time.perf_counter()
        scores = self.inner.score_batch(batch)
        elapsed = time.perf_counter() - t0
        if len(scores) != len(batch):
            raise OracleError(
                f"{self.name}: returned {len(scores)} scores for a batch of {len(batch)}"
            )
        self.counter.add(len(batch), elapsed)
        return scores


def classify(
    detector: DetectorOracle,
    image: ImageTensor,
    threshold: float = DEFAULT_THRESHOLD,
) -> tuple[float, Label]:
    """Score one image; Real iff probability-of-real >= threshold."""
    p = float(detector.score_batch([image])[0])
    if not 0.0 <= p <= 1.0:
        raise OracleError(f"{getattr(detector, 'name', 'detector')}: score {p} outside [0, 1]")
    return p, (Label.REAL if p >= threshold else Label.FAKE)


def score_stack(
    detector: DetectorOracle, stack: np.ndarray, batch_size: int = 32
) -> np.ndarray:
    """Score an (N, C, H, W) float32 stack of valid images in fixed-order batches."""
    scores = np.empty(stack.shape[0], dtype=np.float64)
    for start in range(0, stack.shape[0], batch_size):
        chunk = np.ascontiguousarray(stack[start : start + batch_size])
        batch = [ImageTensor._wrap_validated(chunk[i]) for i in range(chunk.shape[0])]
        scores[start : start + len(batch)] = detector.score_batch(batch)
    return scores


def read_png(path) -> ImageTensor:
    """Load an 8-bit PNG as float32 in [0, 1]; RGB and grayscale supported."""
    with Image.open(path) as im:
        if im.mode == "L":
            arr = np.asarray(im, dtype=np.float32) / 255.0
            return ImageTensor(arr[None, :, :])
        rgb = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        return ImageTensor(np.transpose(rgb, (2, 0, 1)))


def write_png(image: ImageTensor, path) -> None:
    """Write as 8-bit PNG (grayscale for 1 channel, RGB for 3)."""
    arr = np.clip(np.rint(image.data * 255.0), 0, 255).astype(np.uint8)
    if image.channels == 1:
        Image.fromarray(arr[0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(np.transpose(arr, (1, 2, 0)), mode="RGB").save(path, format="PNG")
