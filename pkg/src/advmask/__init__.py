"""advmask: adversarial-masking perturbation explanations for deepfake detectors.

Generates an adversarial counterpart of a detected deepfake with a
black-box NES attack, uses it as the replacement source inside four
perturbation-based explainers (LIME, KernelSHAP, Sobol attribution, RISE),
and scores explainers with a top-k segment attack evaluation framework.
"""

__version__ = "0.1.0"

from .core import (
    ConfigurationError,
    CountingDetector,
    DetectorOracle,
    ImageTensor,
    InferenceCounter,
    Label,
    NotDeepfakeError,
    OracleError,
    RngStream,
    clamp_pixels,
    classify,
    gaussian_noise,
    read_png,
    write_png,
)
from .detectors import (
    ConstantDetector,
    ExternalDetector,
    LinearLogisticDetector,
    PatchRegion,
    PlantedPatchDetector,
)
from .evaluation import (
    EvaluationReport,
    SegmentScores,
    accuracy_at_k,
    attack_topk,
    run_benchmark,
    segment_scores,
    sufficiency_at_k,
)
from .explainers import (
    ExplainerConfig,
    SaliencyMap,
    Variant,
    explain,
    explain_kernel_shap,
    explain_lime,
    explain_rise,
    explain_sobol,
    make_adversarial_variant,
)
from .nes import (
    AdversarialResult,
    AttackRegion,
    NesParams,
    generate_adversarial,
    nes_gradient_estimate,
    sign_step,
)
from .perturbation import (
    PerturbationMask,
    ReplacementStrategy,
    apply_mask,
    rise_random_mask,
    segment_subset_mask,
    sobol_real_masks,
)
from .segmentation import SegmentationMap, SlicParams, segment_pixel_sets, slic_segment

__all__ = [
    "AdversarialResult",
    "AttackRegion",
    "ConfigurationError",
    "ConstantDetector",
    "CountingDetector",
    "DetectorOracle",
    "EvaluationReport",
    "ExplainerConfig",
    "ExternalDetector",
    "ImageTensor",
    "InferenceCounter",
    "Label",
    "LinearLogisticDetector",
    "NesParams",
    "NotDeepfakeError",
    "OracleError",
    "PatchRegion",
    "PerturbationMask",
    "PlantedPatchDetector",
    "ReplacementStrategy",
    "RngStream",
    "SaliencyMap",
    "SegmentScores",
    "SegmentationMap",
    "SlicParams",
    "Variant",
    "accuracy_at_k",
    "apply_mask",
    "attack_topk",
    "clamp_pixels",
    "classify",
    "explain",
    "explain_kernel_shap",
    "explain_lime",
    "explain_rise",
    "explain_sobol",
    "gaussian_noise",
    "generate_adversarial",
    "make_adversarial_variant",
    "nes_gradient_estimate",
    "read_png",
    "rise_random_mask",
    "run_benchmark",
    "segment_pixel_sets",
    "segment_scores",
    "segment_subset_mask",
    "sign_step",
    "slic_segment",
    "sobol_real_masks",
    "sufficiency_at_k",
    "write_png",
]
