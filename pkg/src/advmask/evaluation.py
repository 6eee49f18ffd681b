"""Quantitative evaluation: segment importance, top-k attacks, accuracy and sufficiency.

An explanation is scored by how well its top-ranked segments localize the
detector's decision evidence: adversarial attacks restricted to those
segments should flip the decision (accuracy drop) and remove fake
probability mass (sufficiency). Evaluation attacks draw from streams that
are independent of explanation production and are paired across methods,
variants and k for variance reduction.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    DEFAULT_THRESHOLD,
    ConfigurationError,
    CountingDetector,
    DetectorOracle,
    ImageTensor,
    Label,
    RngStream,
    classify,
)
from .explainers import ExplainerConfig, SaliencyMap, Variant, explain
from .nes import AdversarialResult, AttackRegion, NesParams, generate_adversarial
from .segmentation import SegmentationMap, SlicParams, slic_segment


@dataclass
class SegmentScores:
    per_segment: list[tuple[int, float]]  # (segment id, mean raw saliency)
    ranking: list[int]  # ids sorted by score descending, ties by ascending id


def segment_scores(saliency: SaliencyMap, seg: SegmentationMap) -> SegmentScores:
    """Mean raw saliency per segment with a deterministic descending ranking."""
    if saliency.scores.shape != seg.labels.shape:
        raise ConfigurationError(
            f"saliency {saliency.scores.shape} does not match segmentation {seg.labels.shape}"
        )
    sums = np.bincount(seg.labels.ravel(), weights=saliency.scores.ravel(), minlength=seg.n_segments)
    counts = np.bincount(seg.labels.ravel(), minlength=seg.n_segments)
    means = sums / counts
    order = sorted(range(seg.n_segments), key=lambda i: (-means[i], i))
    return SegmentScores(
        per_segment=[(i, float(means[i])) for i in range(seg.n_segments)],
        ranking=order,
    )


def topk_region(seg_scores: SegmentScores, seg: SegmentationMap, k: int) -> AttackRegion:
    if not 1 <= k <= seg.n_segments:
        raise ConfigurationError(f"k={k} out of range 1..{seg.n_segments}")
    ids = seg_scores.ranking[:k]
    return AttackRegion(np.isin(seg.labels, ids))


def attack_topk(
    image: ImageTensor,
    detector: DetectorOracle,
    seg_scores: SegmentScores,
    seg: SegmentationMap,
    k: int,
    nes_params: NesParams,
    threshold: float = DEFAULT_THRESHOLD,
) -> AdversarialResult:
    """NES attack confined to the union of the top-k ranked segments."""
    return generate_adversarial(
        image, detector, nes_params, region=topk_region(seg_scores, seg, k), threshold=threshold
    )


def accuracy_at_k(results: list[tuple[Label, Label]]) -> float:
    """Fraction of originally-Fake images still classified Fake after the attack."""
    if not results:
        raise ConfigurationError("accuracy over an empty result set is undefined")
    return sum(1 for _, after in results if after is Label.FAKE) / len(results)


def sufficiency_at_k(pairs: list[tuple[float, float]]) -> float:
    """Mean clamped drop in fake probability: clamp(p_fake_before - p_fake_after, 0, 1)."""
    if not pairs:
        raise ConfigurationError("sufficiency over an empty result set is undefined")
    return float(np.mean([min(max(b - a, 0.0), 1.0) for b, a in pairs]))


def sufficiency_at_k_unclamped(pairs: list[tuple[float, float]]) -> float:
    """Raw mean drop, exported for sensitivity analysis."""
    if not pairs:
        raise ConfigurationError("sufficiency over an empty result set is undefined")
    return float(np.mean([b - a for b, a in pairs]))


@dataclass
class EvaluationReport:
    method: str
    variant: str
    per_k: dict[int, dict[str, float]]
    baseline_accuracy: float
    images_evaluated: int
    mean_inferences: float
    mean_seconds: float
    mean_batch_calls: float = 0.0
    mean_eval_attack_passes: dict[int, float] = field(default_factory=dict)
    failures: int = 0

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "variant": self.variant,
            "per_k": {str(k): v for k, v in sorted(self.per_k.items())},
            "baseline_accuracy": self.baseline_accuracy,
            "images_evaluated": self.images_evaluated,
            "mean_inferences": self.mean_inferences,
            "mean_seconds": self.mean_seconds,
            "mean_batch_calls": self.mean_batch_calls,
            "mean_eval_attack_passes": {
                str(k): v for k, v in sorted(self.mean_eval_attack_passes.items())
            },
            "failures": self.failures,
        }


@dataclass
class ImageOutcome:
    index: int
    skipped: bool = False
    error: str | None = None
    p_fake_before: float = 0.0
    # (method, variant) -> per-image record
    saliency: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)
    attacks: dict = field(default_factory=dict)  # (method, variant, k) -> AdversarialResult


def evaluate_image(
    index: int,
    image: ImageTensor,
    detector: DetectorOracle,
    methods: list[str],
    variants: list[Variant],
    ks: list[int],
    config: ExplainerConfig,
    slic: SlicParams,
    nes_explain: NesParams,
    nes_eval: NesParams,
    rng: RngStream,
    threshold: float = DEFAULT_THRESHOLD,
    measure_time: bool = True,
) -> ImageOutcome:
    """Explain and attack one image for every requested method/variant/k."""
    out = ImageOutcome(index=index)
    p0, label0 = classify(detector, image, threshold)
    if label0 is Label.REAL:
        out.skipped = True
        return out
    out.p_fake_before = 1.0 - p0

    seg = slic_segment(image, slic)
    for method in methods:
        for variant in variants:
            t0 = time.perf_counter()
            sal = explain(
                method,
                variant,
                image,
                detector,
                config,
                rng.split("explain", method, variant.value, index),
                seg=seg,
                nes_params=replace(nes_explain, rng=rng.split("explain-attack", index)),
            )
            out.seconds[(method, variant.value)] = (
                time.perf_counter() - t0 if measure_time else 0.0
            )
            out.saliency[(method, variant.value)] = sal
            ranking = segment_scores(sal, seg)
            for k in ks:
                # one stream per image, shared across methods/variants/k:
                # nested top-k regions then see identical probe noise
                res = attack_topk(
                    image,
                    detector,
                    ranking,
                    seg,
                    min(k, seg.n_segments),
                    replace(nes_eval, rng=rng.split("eval-attack", index)),
                    threshold,
                )
                out.attacks[(method, variant.value, k)] = res
    return out


def run_benchmark(
    dataset: list[ImageTensor],
    detector: DetectorOracle,
    methods: list[str],
    variants: list[Variant],
    ks: list[int],
    config: ExplainerConfig,
    slic: SlicParams,
    nes_explain: NesParams,
    nes_eval: NesParams,
    rng: RngStream,
    threshold: float = DEFAULT_THRESHOLD,
    jobs: int = 1,
    measure_time: bool = True,
) -> tuple[list[EvaluationReport], list[ImageOutcome]]:
    """Evaluate every method/variant over the Fake-classified subset of a dataset.

    Returns the aggregated reports plus per-image outcomes (skips and
    failures included) so callers can persist artifacts or drill down.
    Aggregation order is fixed by image index regardless of `jobs`.
    """
    det = CountingDetector(detector)

    def work(item):
        idx, image = item
        try:
            return evaluate_image(
                idx, image, det, methods, variants, ks, config, slic,
                nes_explain, nes_eval, rng, threshold, measure_time,
            )
        except Exception as exc:  # record, never silently drop
            return ImageOutcome(index=idx, error=f"{type(exc).__name__}: {exc}")

    items = list(enumerate(dataset))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(work, items))
    else:
        outcomes = [work(item) for item in items]
    outcomes.sort(key=lambda o: o.index)

    usable = [o for o in outcomes if not o.skipped and o.error is None]
    n_failures = sum(1 for o in outcomes if o.error is not None)
    baseline = len(usable) / len(dataset) if dataset else 0.0

    reports = []
    for method in methods:
        for variant in variants:
            key = (method, variant.value)
            per_k: dict[int, dict[str, float]] = {}
            eval_passes: dict[int, float] = {}
            for k in ks:
                labels = []
                pairs = []
                passes = []
                for o in usable:
                    res = o.attacks[(method, variant.value, k)]
                    labels.append(
                        (Label.FAKE, Label.REAL if res.success else Label.FAKE)
                    )
                    pairs.append((o.p_fake_before, 1.0 - res.final_p_real))
                    passes.append(res.forward_passes)
                if labels:
                    per_k[k] = {
                        "accuracy": accuracy_at_k(labels),
                        "sufficiency": sufficiency_at_k(pairs),
                        "sufficiency_unclamped": sufficiency_at_k_unclamped(pairs),
                    }
                    eval_passes[k] = float(np.mean(passes))
            budgets = [o.saliency[key].budget for o in usable]
            reports.append(
                EvaluationReport(
                    method=method,
                    variant=variant.value,
                    per_k=per_k,
                    baseline_accuracy=baseline,
                    images_evaluated=len(usable),
                    mean_inferences=(
                        float(np.mean([b.forward_passes for b in budgets])) if budgets else 0.0
                    ),
                    mean_seconds=(
                        float(np.mean([o.seconds[key] for o in usable])) if usable else 0.0
                    ),
                    mean_batch_calls=(
                        float(np.mean([b.batch_calls for b in budgets])) if budgets else 0.0
                    ),
                    mean_eval_attack_passes=eval_passes,
                    failures=n_failures,
                )
            )
    return reports, outcomes
