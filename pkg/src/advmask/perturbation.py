"""Perturbation masks and the replacement strategies they blend against.

A mask is a per-pixel keep coefficient in [0, 1]; an output pixel is
keep * original + (1 - keep) * replacement. Replacement sources cover the
classic occlusion family (black, constant, mean, blur, noise) plus
adversarial replacement, where masked-out regions come from an
adversarially-generated twin of the input.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from PIL import Image
from scipy import ndimage
from scipy.stats import qmc

from .core import ConfigurationError, ImageTensor, RngStream
from .segmentation import SegmentationMap


class MaskProvenance(Enum):
    SEGMENT_SUBSET = "segment_subset"
    LOW_RES_BINARY_UPSAMPLED = "low_res_binary_upsampled"
    LOW_RES_REAL_UPSAMPLED = "low_res_real_upsampled"


@dataclass(frozen=True)
class PerturbationMask:
    keep: np.ndarray
    provenance: MaskProvenance

    def __post_init__(self):
        arr = np.asarray(self.keep, dtype=np.float64)
        if arr.ndim != 2:
            raise ConfigurationError(f"mask must be H x W, got {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ConfigurationError("mask values must lie in [0, 1]")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "keep", arr)


class ReplacementKind(Enum):
    OCCLUDE_BLACK = "black"
    CONSTANT = "constant"
    MEAN_PIXEL = "mean"
    BLUR = "blur"
    GAUSSIAN_NOISE = "noise"
    ADVERSARIAL = "adversarial"


@dataclass
class ReplacementStrategy:
    kind: ReplacementKind
    value: float = 0.0  # CONSTANT fill level
    kernel_size: int = 128  # BLUR box-kernel edge, odd; clamped to image size
    noise_std: float = 0.1  # GAUSSIAN_NOISE sigma
    reference: ImageTensor | None = None  # ADVERSARIAL source image
    rng: RngStream | None = None  # GAUSSIAN_NOISE draws

    def __post_init__(self):
        if self.kind is ReplacementKind.ADVERSARIAL and self.reference is None:
            raise ConfigurationError("adversarial replacement requires a reference image")
        # the effective kernel is odd and >= 3: even requests (the classic
        # 128 default included) round down after clamping to the image size
        if self.kind is ReplacementKind.BLUR and self.kernel_size < 3:
            raise ConfigurationError("blur kernel_size must be >= 3")
        if self.kind is ReplacementKind.GAUSSIAN_NOISE and self.rng is None:
            raise ConfigurationError("gaussian-noise replacement requires an rng stream")

    @classmethod
    def black(cls) -> "ReplacementStrategy":
        return cls(ReplacementKind.OCCLUDE_BLACK)

    @classmethod
    def constant(cls, value: float) -> "ReplacementStrategy":
        return cls(ReplacementKind.CONSTANT, value=value)

    @classmethod
    def mean_pixel(cls) -> "ReplacementStrategy":
        return cls(ReplacementKind.MEAN_PIXEL)

    @classmethod
    def blur(cls, kernel_size: int = 128) -> "ReplacementStrategy":
        return cls(ReplacementKind.BLUR, kernel_size=kernel_size)

    @classmethod
    def gaussian_noise(cls, std: float, rng: RngStream) -> "ReplacementStrategy":
        return cls(ReplacementKind.GAUSSIAN_NOISE, noise_std=std, rng=rng)

    @classmethod
    def adversarial(cls, reference: ImageTensor) -> "ReplacementStrategy":
        return cls(ReplacementKind.ADVERSARIAL, reference=reference)


def _box_blur(data: np.ndarray, kernel: int) -> np.ndarray:
    # box filter iterated 3x approximates a Gaussian; reflect keeps borders unbiased
    out = data.astype(np.float64)
    for _ in range(3):
        out = ndimage.uniform_filter(out, size=(1, kernel, kernel), mode="reflect")
    return np.clip(out, 0.0, 1.0)


def replacement_field(image: ImageTensor, strategy: ReplacementStrategy) -> ImageTensor:
    """The full-image replacement R a mask blends toward."""
    c, h, w = image.shape
    kind = strategy.kind
    if kind is ReplacementKind.OCCLUDE_BLACK:
        return ImageTensor(np.zeros((c, h, w), dtype=np.float32))
    if kind is ReplacementKind.CONSTANT:
        if not 0.0 <= strategy.value <= 1.0:
            raise ConfigurationError(f"constant fill {strategy.value} outside [0, 1]")
        return ImageTensor(np.full((c, h, w), strategy.value, dtype=np.float32))
    if kind is ReplacementKind.MEAN_PIXEL:
        means = image.data.astype(np.float64).mean(axis=(1, 2))
        return ImageTensor(np.broadcast_to(means[:, None, None], (c, h, w)).astype(np.float32))
    if kind is ReplacementKind.BLUR:
        k = min(strategy.kernel_size, min(h, w))
        if k % 2 == 0:
            k -= 1
        k = max(k, 3)
        return ImageTensor(_box_blur(image.data, k).astype(np.float32))
    if kind is ReplacementKind.GAUSSIAN_NOISE:
        noise = strategy.rng.generator.standard_normal((c, h, w)) * strategy.noise_std
        return ImageTensor(np.clip(image.data.astype(np.float64) + noise, 0.0, 1.0).astype(np.float32))
    if kind is ReplacementKind.ADVERSARIAL:
        if strategy.reference.shape != image.shape:
            raise ConfigurationError(
                f"adversarial reference shape {strategy.reference.shape} "
                f"does not match image {image.shape}"
            )
        return strategy.reference
    raise ConfigurationError(f"unknown replacement kind {kind}")


def apply_mask(
    image: ImageTensor, mask: PerturbationMask, strategy: ReplacementStrategy
) -> ImageTensor:
    """Blend keep * image + (1 - keep) * replacement, per channel.

    The blend is convex between two float32 images, so outputs stay inside
    the per-pixel interval they span: keep=1 pixels are bit-identical to the
    input and keep=0 pixels to the replacement field.
    """
    if mask.keep.shape != (image.height, image.width):
        raise ConfigurationError(
            f"mask shape {mask.keep.shape} does not match image "
            f"{image.height}x{image.width}"
        )
    repl = replacement_field(image, strategy)
    keep = mask.keep[None, :, :]
    blended = keep * image.data.astype(np.float64) + (1.0 - keep) * repl.data.astype(np.float64)
    return ImageTensor(blended.astype(np.float32))


def apply_masks_batch(
    image: ImageTensor,
    keeps: np.ndarray,
    strategy: ReplacementStrategy,
    replacement: ImageTensor | None = None,
) -> np.ndarray:
    """Blend a (N, H, W) stack of keep fields; returns (N, C, H, W) float32.

    Equivalent to apply_mask per row but with one shared replacement field,
    which is what every explainer needs (noise replacement draws one field
    per batch here, so use apply_mask when per-mask noise matters). Pass a
    precomputed `replacement` to avoid rebuilding it per batch.
    """
    if keeps.ndim != 3 or keeps.shape[1:] != (image.height, image.width):
        raise ConfigurationError(f"keep stack must be (N, H, W), got {keeps.shape}")
    if replacement is None:
        replacement = replacement_field(image, strategy)
    repl = replacement.data.astype(np.float64)
    k = keeps[:, None, :, :]
    out = k * image.data.astype(np.float64)[None] + (1.0 - k) * repl[None]
    return out.astype(np.float32)


def segment_subset_mask(seg: SegmentationMap, on_segments) -> PerturbationMask:
    """Binary mask keeping exactly the listed segments."""
    ids = set(int(i) for i in on_segments)
    for i in ids:
        if not 0 <= i < seg.n_segments:
            raise ConfigurationError(f"segment id {i} out of range 0..{seg.n_segments - 1}")
    keep = np.isin(seg.labels, sorted(ids)).astype(np.float64)
    return PerturbationMask(keep, MaskProvenance.SEGMENT_SUBSET)


def coalition_keep_fields(seg: SegmentationMap, coalitions: np.ndarray) -> np.ndarray:
    """(N, S) binary coalition rows -> (N, H, W) keep fields via label lookup."""
    if coalitions.ndim != 2 or coalitions.shape[1] != seg.n_segments:
        raise ConfigurationError(
            f"coalitions must be (N, {seg.n_segments}), got {coalitions.shape}"
        )
    return coalitions.astype(np.float64)[:, seg.labels]


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) bilinear interpolation weights with half-pixel centers."""
    pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    i0 = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = np.clip(pos - i0, 0.0, 1.0)
    mat = np.zeros((n_out, n_in))
    np.add.at(mat, (np.arange(n_out), i0), 1.0 - frac)
    np.add.at(mat, (np.arange(n_out), i1), frac)
    return mat


def bilinear_resize(field: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear upsampling with half-pixel centers; batched over leading dims.

    Implemented as two matrix products against interpolation-weight
    matrices. When the output matches the input size the weights are the
    identity, so low-res fields pass through exactly.
    """
    in_h, in_w = field.shape[-2], field.shape[-1]
    wy = _interp_matrix(in_h, out_h)
    wx = _interp_matrix(in_w, out_w)
    return np.matmul(wy, field.astype(np.float64)) @ wx.T


def rise_random_mask(
    rng: RngStream, low_res: int, keep_prob: float, out_shape: tuple[int, int]
) -> PerturbationMask:
    """One RISE mask: s x s Bernoulli grid, bilinear upsample, random crop.

    The grid is upsampled to (H + cell) x (W + cell) and shifted by a random
    offset inside one cell before cropping, which decorrelates mask
    boundaries from the pixel grid.
    """
    if not 0.0 < keep_prob < 1.0:
        raise ConfigurationError("keep_prob must lie strictly between 0 and 1")
    if low_res < 1:
        raise ConfigurationError("low_res grid must be >= 1")
    h, w = out_shape
    keep = _rise_keep_stack(rng, low_res, keep_prob, h, w, count=1)[0]
    return PerturbationMask(keep, MaskProvenance.LOW_RES_BINARY_UPSAMPLED)


def _rise_keep_stack(
    rng: RngStream, low_res: int, keep_prob: float, h: int, w: int, count: int
) -> np.ndarray:
    """(count, H, W) RISE keep fields drawn as grid, then dy, then dx per mask."""
    cell_h = int(np.ceil(h / low_res))
    cell_w = int(np.ceil(w / low_res))
    gen = rng.generator
    grids = np.empty((count, low_res, low_res))
    offs = np.empty((count, 2), dtype=int)
    for i in range(count):
        grids[i] = (gen.uniform(size=(low_res, low_res)) < keep_prob).astype(np.float64)
        offs[i, 0] = gen.integers(0, cell_h)
        offs[i, 1] = gen.integers(0, cell_w)
    up = bilinear_resize(grids, h + cell_h, w + cell_w)
    out = np.empty((count, h, w))
    for i in range(count):
        out[i] = up[i, offs[i, 0] : offs[i, 0] + h, offs[i, 1] : offs[i, 1] + w]
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class SobolDesign:
    """A/B design matrices plus the AB_i hybrids for total-index estimation.

    Rows are flattened g x g cell fields in [0, 1]; ab(i) equals A with
    column i swapped from B, the pairing the Jansen estimator needs.
    """

    a: np.ndarray  # (N, g*g)
    b: np.ndarray  # (N, g*g)
    grid: int

    @property
    def n_designs(self) -> int:
        return self.a.shape[0]

    def ab(self, i: int) -> np.ndarray:
        out = self.a.copy()
        out[:, i] = self.b[:, i]
        return out

    def cell_field(self, row: np.ndarray) -> np.ndarray:
        return row.reshape(self.grid, self.grid)


def sobol_real_masks(grid: int, n_designs: int, rng: RngStream) -> SobolDesign:
    """Low-discrepancy real-valued mask designs from a scrambled Sobol sequence.

    Draws N points in dimension 2 g^2; the first g^2 coordinates form A and
    the rest form B, so A and B are independent low-discrepancy samples.
    """
    if grid < 1:
        raise ConfigurationError("grid must be >= 1")
    if n_designs < 2:
        raise ConfigurationError("n_designs must be >= 2")
    d = grid * grid
    seed = int(rng.generator.integers(0, 2**63 - 1))
    engine = qmc.Sobol(d=2 * d, scramble=True, seed=seed)
    points = engine.random(n_designs)
    return SobolDesign(a=points[:, :d].copy(), b=points[:, d:].copy(), grid=grid)


def upsampled_real_mask(cells: np.ndarray, out_shape: tuple[int, int]) -> PerturbationMask:
    """g x g real-valued cell field -> full-resolution mask."""
    keep = np.clip(bilinear_resize(cells, out_shape[0], out_shape[1]), 0.0, 1.0)
    return PerturbationMask(keep, MaskProvenance.LOW_RES_REAL_UPSAMPLED)


def mask_to_png(mask: PerturbationMask, path) -> None:
    """Grayscale visualization of the keep field."""
    arr = np.clip(np.rint(mask.keep * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")
