"""Four perturbation-based explainers, each parameterized by a replacement strategy.

Every method attributes the fake-class probability (1 - p_real): the
question being answered is which regions made the detector call the image
a deepfake. The classic variants use each method's traditional replacement
(mean pixel, blur, black); the adversarial-masking variants replace masked
regions with the matching pixels of an adversarially-generated sample that
the detector classifies as real.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import (
    ConfigurationError,
    CounterSnapshot,
    CountingDetector,
    DetectorOracle,
    ImageTensor,
    NotDeepfakeError,
    RngStream,
    score_stack,
)
from .nes import NesParams, generate_adversarial
from .perturbation import (
    ReplacementStrategy,
    apply_masks_batch,
    bilinear_resize,
    coalition_keep_fields,
    replacement_field,
    sobol_real_masks,
    _rise_keep_stack,
)
from .segmentation import SegmentationMap


class Variant(Enum):
    CLASSIC = "classic"
    ADVERSARIAL_MASKING = "adv"


@dataclass
class LimeConfig:
    n_perturbations: int = 2000
    kernel_width: float = 0.25
    ridge: float = 1.0


@dataclass
class ShapConfig:
    n_evaluations: int = 2000
    blur_kernel: int = 128
    exact: bool = False


@dataclass
class SobolConfig:
    grid: int = 8
    n_designs: int = 32
    blur_kernel: int = 128


@dataclass
class RiseConfig:
    n_masks: int = 4000
    grid: int = 7
    keep_prob: float = 0.5


@dataclass
class ExplainerConfig:
    lime: LimeConfig = field(default_factory=LimeConfig)
    shap: ShapConfig = field(default_factory=ShapConfig)
    sobol: SobolConfig = field(default_factory=SobolConfig)
    rise: RiseConfig = field(default_factory=RiseConfig)
    batch_size: int = 32

    def __post_init__(self):
        counts = (
            self.lime.n_perturbations,
            self.shap.n_evaluations,
            self.sobol.n_designs,
            self.sobol.grid,
            self.rise.n_masks,
            self.batch_size,
        )
        if any(c < 1 for c in counts):
            raise ConfigurationError("all explainer counts must be >= 1")


METHODS = ("lime", "shap", "sobol", "rise")


@dataclass
class SaliencyMap:
    scores: np.ndarray  # H x W, raw attribution values
    method: str
    variant: Variant
    budget: CounterSnapshot
    segment_values: np.ndarray | None = None  # per-segment weights / SHAP values
    cell_values: np.ndarray | None = None  # SOBOL total indices, g x g
    first_order_cells: np.ndarray | None = None  # SOBOL first-order diagnostics
    flags: dict = field(default_factory=dict)
    attack: dict | None = None
    attack_reference: ImageTensor | None = None  # the x_adv fed to the explainer

    def __post_init__(self):
        if not np.all(np.isfinite(self.scores)):
            raise ConfigurationError("saliency contains non-finite values")

    def normalized(self) -> np.ndarray:
        """min -> 0, max -> 1 for rendering; constant maps go to zero."""
        lo, hi = float(self.scores.min()), float(self.scores.max())
        if hi <= lo:
            return np.zeros_like(self.scores)
        return (self.scores - lo) / (hi - lo)


def classic_strategy(method: str, config: ExplainerConfig) -> ReplacementStrategy:
    """Each method's traditional replacement source."""
    if method == "lime":
        return ReplacementStrategy.mean_pixel()
    if method == "shap":
        return ReplacementStrategy.blur(config.shap.blur_kernel)
    if method == "sobol":
        return ReplacementStrategy.blur(config.sobol.blur_kernel)
    if method == "rise":
        return ReplacementStrategy.black()
    raise ConfigurationError(f"unknown method {method!r}")


def _fake_scores(det, stack: np.ndarray, batch_size: int) -> np.ndarray:
    return 1.0 - score_stack(det, stack, batch_size)


def _weighted_ridge(z: np.ndarray, y: np.ndarray, w: np.ndarray, penalty: float):
    """Weighted ridge with unpenalized intercept; returns (coefs, intercept, fallback)."""
    n, s = z.shape
    x = np.concatenate([np.ones((n, 1)), z], axis=1)
    xw = x * w[:, None]
    gram = x.T @ xw
    rhs = xw.T @ y
    lam = penalty
    for attempt in range(4):
        reg = gram.copy()
        reg[1:, 1:] += lam * np.eye(s)
        try:
            beta = np.linalg.solve(reg, rhs)
        except np.linalg.LinAlgError:
            beta = None
        if beta is not None and np.all(np.isfinite(beta)):
            return beta[1:], float(beta[0]), attempt > 0
        lam *= 10.0
    raise ConfigurationError("ridge system unsolvable even with inflated penalty")


def explain_lime(
    image: ImageTensor,
    detector: DetectorOracle,
    seg: SegmentationMap,
    strategy: ReplacementStrategy,
    config: ExplainerConfig,
    rng: RngStream,
) -> SaliencyMap:
    """Local surrogate: weighted ridge fit of fake-probability on segment on/off vectors.

    Coalition weights use the cosine proximity kernel
    exp(-(1 - cos(z, 1))^2 / kernel_width^2). Saliency of a pixel is the
    fitted coefficient of its segment. Costs exactly n_perturbations passes.
    """
    det = CountingDetector(detector)
    n, s = config.lime.n_perturbations, seg.n_segments
    z = rng.generator.integers(0, 2, size=(n, s)).astype(np.float64)

    y = np.empty(n, dtype=np.float64)
    bs = config.batch_size
    repl = replacement_field(image, strategy)
    for start in range(0, n, bs):
        keeps = coalition_keep_fields(seg, z[start : start + bs])
        stack = apply_masks_batch(image, keeps, strategy, replacement=repl)
        y[start : start + keeps.shape[0]] = _fake_scores(det, stack, bs)

    ones = z.sum(axis=1)
    cos = np.where(ones > 0, np.sqrt(ones / s), 0.0)
    weights = np.exp(-((1.0 - cos) ** 2) / config.lime.kernel_width**2)

    coefs, intercept, fell_back = _weighted_ridge(z, y, weights, config.lime.ridge)
    flags = {"ridge_fallback": fell_back} if fell_back else {}
    return SaliencyMap(
        scores=coefs[seg.labels],
        method="lime",
        variant=Variant.CLASSIC,
        budget=det.counter.snapshot(),
        segment_values=coefs,
        flags=flags,
    )


def _shapley_kernel_size_probs(s: int) -> np.ndarray:
    # subset-size distribution implied by the Shapley kernel
    sizes = np.arange(1, s)
    p = (s - 1) / (sizes * (s - sizes))
    return p / p.sum()


def _solve_constrained_wls(
    z: np.ndarray, y: np.ndarray, w: np.ndarray, f_base: float, delta: float
) -> np.ndarray:
    """Least squares for phi with the efficiency constraint sum(phi) = delta.

    Eliminates the last feature: with z_S fixed by the constraint, regress
    y - f_base - z_S * delta on columns z_i - z_S.
    """
    s = z.shape[1]
    t = y - f_base - z[:, -1] * delta
    x = z[:, :-1] - z[:, -1:]
    sw = np.sqrt(w)
    phi_rest, *_ = np.linalg.lstsq(x * sw[:, None], t * sw, rcond=None)
    return np.concatenate([phi_rest, [delta - phi_rest.sum()]])


def explain_kernel_shap(
    image: ImageTensor,
    detector: DetectorOracle,
    seg: SegmentationMap,
    strategy: ReplacementStrategy,
    config: ExplainerConfig,
    rng: RngStream,
) -> SaliencyMap:
    """Segment-level KernelSHAP of the fake probability.

    The baseline is the fully-replaced image, so the efficiency identity
    sum(phi) = F_fake(x) - F_fake(baseline) holds exactly by construction.
    Costs n_evaluations + 2 passes (sampled coalitions plus the two
    endpoints); with `exact` set and 2^S - 2 <= n_evaluations, all
    non-trivial coalitions are enumerated instead.
    """
    det = CountingDetector(detector)
    s = seg.n_segments
    if s < 2:
        raise ConfigurationError("kernel SHAP needs at least 2 segments")

    full = np.ones((1, s))
    empty = np.zeros((1, s))
    repl = replacement_field(image, strategy)
    endpoints = apply_masks_batch(
        image, coalition_keep_fields(seg, np.concatenate([full, empty])), strategy,
        replacement=repl,
    )
    f_full, f_base = _fake_scores(det, endpoints, config.batch_size)
    delta = f_full - f_base

    flags = {}
    if config.shap.exact and 2**s - 2 <= config.shap.n_evaluations:
        z = np.array(
            [[(m >> i) & 1 for i in range(s)] for m in range(1, 2**s - 1)],
            dtype=np.float64,
        )
        sizes = z.sum(axis=1)
        w = (s - 1) / (
            np.array([math.comb(s, int(k)) for k in sizes]) * sizes * (s - sizes)
        )
    else:
        if config.shap.exact:
            flags["estimator_fallback"] = True
        n = config.shap.n_evaluations
        gen = rng.generator
        sizes = gen.choice(np.arange(1, s), size=n, p=_shapley_kernel_size_probs(s))
        z = np.zeros((n, s), dtype=np.float64)
        for j in range(n):
            z[j, gen.permutation(s)[: sizes[j]]] = 1.0
        w = np.ones(n)

    y = np.empty(z.shape[0], dtype=np.float64)
    bs = config.batch_size
    for start in range(0, z.shape[0], bs):
        keeps = coalition_keep_fields(seg, z[start : start + bs])
        stack = apply_masks_batch(image, keeps, strategy, replacement=repl)
        y[start : start + keeps.shape[0]] = _fake_scores(det, stack, bs)

    phi = _solve_constrained_wls(z, y, w, f_base, delta)
    return SaliencyMap(
        scores=phi[seg.labels],
        method="shap",
        variant=Variant.CLASSIC,
        budget=det.counter.snapshot(),
        segment_values=phi,
        flags=flags,
    )


def explain_sobol(
    image: ImageTensor,
    detector: DetectorOracle,
    strategy: ReplacementStrategy,
    config: ExplainerConfig,
    rng: RngStream,
) -> SaliencyMap:
    """Total-order Sobol indices per grid cell via the Jansen estimator.

    S_T,i = E[(f_A - f_AB_i)^2] / (2 Var f), with variance taken over the
    combined A and B evaluations. Costs exactly N * (g^2 + 2) passes.
    """
    g, n = config.sobol.grid, config.sobol.n_designs
    det = CountingDetector(detector)
    design = sobol_real_masks(g, n, rng)
    h, w = image.height, image.width
    bs = config.batch_size
    repl = replacement_field(image, strategy)

    def evaluate(rows: np.ndarray) -> np.ndarray:
        keeps = np.clip(bilinear_resize(rows.reshape(-1, g, g), h, w), 0.0, 1.0)
        out = np.empty(rows.shape[0], dtype=np.float64)
        for start in range(0, rows.shape[0], bs):
            stack = apply_masks_batch(
                image, keeps[start : start + bs], strategy, replacement=repl
            )
            out[start : start + stack.shape[0]] = _fake_scores(det, stack, bs)
        return out

    f_a = evaluate(design.a)
    f_b = evaluate(design.b)
    f_ab = [evaluate(design.ab(i)) for i in range(g * g)]
    variance = float(np.var(np.concatenate([f_a, f_b])))

    total = np.zeros(g * g)
    first = np.zeros(g * g)
    flags = {}
    if variance <= 0.0:
        flags["zero_variance"] = True
    else:
        for i in range(g * g):
            total[i] = np.mean((f_a - f_ab[i]) ** 2) / (2.0 * variance)
            first[i] = 1.0 - np.mean((f_b - f_ab[i]) ** 2) / (2.0 * variance)

    cells = total.reshape(g, g)
    return SaliencyMap(
        scores=bilinear_resize(cells, h, w),
        method="sobol",
        variant=Variant.CLASSIC,
        budget=det.counter.snapshot(),
        cell_values=cells,
        first_order_cells=first.reshape(g, g),
        flags=flags,
    )


def explain_rise(
    image: ImageTensor,
    detector: DetectorOracle,
    strategy: ReplacementStrategy,
    config: ExplainerConfig,
    rng: RngStream,
) -> SaliencyMap:
    """Saliency = (1 / (N p)) * sum_i F_fake(masked_i) * keep_i, pixelwise.

    Costs exactly n_masks passes; the accumulation order is fixed so the
    result is bit-reproducible.
    """
    n = config.rise.n_masks
    s, p = config.rise.grid, config.rise.keep_prob
    det = CountingDetector(detector)
    h, w = image.height, image.width
    sal = np.zeros((h, w), dtype=np.float64)
    bs = config.batch_size
    repl = replacement_field(image, strategy)
    done = 0
    while done < n:
        count = min(bs, n - done)
        keeps = _rise_keep_stack(rng, s, p, h, w, count)
        stack = apply_masks_batch(image, keeps, strategy, replacement=repl)
        y = _fake_scores(det, stack, bs)
        sal += np.einsum("i,ihw->hw", y, keeps)
        done += count
    sal /= n * p
    return SaliencyMap(
        scores=sal,
        method="rise",
        variant=Variant.CLASSIC,
        budget=det.counter.snapshot(),
    )


def make_adversarial_variant(
    explain_op,
    image: ImageTensor,
    detector: DetectorOracle,
    nes_params: NesParams,
    config: ExplainerConfig,
    rng: RngStream,
    seg: SegmentationMap | None = None,
) -> SaliencyMap:
    """Run the global attack, then the wrapped explainer with adversarial replacement.

    The reported budget spans attack probes plus explanation passes. When
    the attack exhausts its iteration budget without flipping the detector,
    the best sample found still feeds the explainer and the saliency map is
    flagged with attack_converged=false.
    """
    det = CountingDetector(detector)
    result = generate_adversarial(image, det, nes_params)
    if result.success and result.iterations_used == 0:
        raise NotDeepfakeError(
            "input is already classified Real; explanations are produced for detected deepfakes"
        )
    strategy = ReplacementStrategy.adversarial(result.adversarial_image)
    if explain_op in (explain_lime, explain_kernel_shap):
        if seg is None:
            raise ConfigurationError(f"{explain_op.__name__} requires a segmentation")
        sal = explain_op(image, det, seg, strategy, config, rng)
    else:
        sal = explain_op(image, det, strategy, config, rng)
    sal.variant = Variant.ADVERSARIAL_MASKING
    sal.budget = det.counter.snapshot()
    sal.flags["attack_converged"] = result.success
    sal.attack = {
        "success": result.success,
        "iterations_used": result.iterations_used,
        "forward_passes": result.forward_passes,
        "final_p_real": result.final_p_real,
    }
    sal.attack_reference = result.adversarial_image
    return sal


_OPS = {
    "lime": explain_lime,
    "shap": explain_kernel_shap,
    "sobol": explain_sobol,
    "rise": explain_rise,
}


def explain(
    method: str,
    variant: Variant,
    image: ImageTensor,
    detector: DetectorOracle,
    config: ExplainerConfig,
    rng: RngStream,
    seg: SegmentationMap | None = None,
    nes_params: NesParams | None = None,
) -> SaliencyMap:
    """Dispatch one method/variant combination."""
    if method not in _OPS:
        raise ConfigurationError(f"unknown method {method!r}; choose from {METHODS}")
    op = _OPS[method]
    needs_seg = method in ("lime", "shap")
    if needs_seg and seg is None:
        raise ConfigurationError(f"{method} requires a segmentation")
    if variant is Variant.ADVERSARIAL_MASKING:
        if nes_params is None:
            raise ConfigurationError("adversarial variant requires NES parameters")
        return make_adversarial_variant(
            op, image, detector, nes_params, config, rng, seg=seg
        )
    strategy = classic_strategy(method, config)
    if needs_seg:
        return op(image, detector, seg, strategy, config, rng)
    return op(image, detector, strategy, config, rng)
