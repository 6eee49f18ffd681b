"""Run configuration: a strict single-document YAML tree.

Unknown keys are rejected so typos fail loudly, and the effective
configuration (defaults filled in) is always written next to a run's
outputs so it can be replayed bit-for-bit.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .core import DEFAULT_THRESHOLD, ConfigurationError, DetectorOracle
from .detectors import (
    ConstantDetector,
    ExternalDetector,
    LinearLogisticDetector,
    PatchRegion,
    PlantedPatchDetector,
)
from .explainers import ExplainerConfig, LimeConfig, RiseConfig, ShapConfig, SobolConfig
from .nes import EVAL_ITERS_DEFAULT, EXPLAIN_ITERS_DEFAULT, NesParams
from .segmentation import SlicParams

VALID_METHODS = ("lime", "shap", "sobol", "rise")
VALID_VARIANTS = ("classic", "adv")


@dataclass
class DetectorSpec:
    kind: str = "constant"
    # constant
    p_real: float = 0.2
    # linear_logistic
    weights_npy: str | None = None
    bias: float = 0.0
    # planted_patch
    region: list[int] | None = None  # [row0, col0, row1, col1], half-open
    reference_npy: str | None = None
    reference_value: float | None = None
    sensitivity: float = 25.0
    threshold_offset: float = 0.1
    # external
    command: list[str] | None = None
    timeout: float = 30.0


@dataclass
class NesSection:
    sigma: float = 0.001
    n_samples: int = 40
    learning_rate: float = 1.0 / 255.0
    max_distortion: float = 16.0 / 255.0
    explain_iters: int = EXPLAIN_ITERS_DEFAULT
    eval_iters: int = EVAL_ITERS_DEFAULT
    batch_size: int = 32
    step_clip_only: bool = False


@dataclass
class RunConfig:
    seed: int = 0
    threshold: float = DEFAULT_THRESHOLD
    jobs: int = 1
    # False reports 0.0 seconds everywhere so run outputs are byte-reproducible
    measure_time: bool = True
    save_artifacts: bool = False  # benchmark: write per-image saliency + overlays
    detector: DetectorSpec = field(default_factory=DetectorSpec)
    nes: NesSection = field(default_factory=NesSection)
    segmentation: SlicParams = field(default_factory=SlicParams)
    explainers: ExplainerConfig = field(default_factory=ExplainerConfig)
    methods: list[str] = field(default_factory=lambda: list(VALID_METHODS))
    variants: list[str] = field(default_factory=lambda: list(VALID_VARIANTS))
    ks: list[int] = field(default_factory=lambda: [1, 2, 3])

    def validate(self) -> None:
        for m in self.methods:
            if m not in VALID_METHODS:
                raise ConfigurationError(f"unknown method {m!r}; valid: {VALID_METHODS}")
        for v in self.variants:
            if v not in VALID_VARIANTS:
                raise ConfigurationError(f"unknown variant {v!r}; valid: {VALID_VARIANTS}")
        if not all(k >= 1 for k in self.ks):
            raise ConfigurationError("every k must be >= 1")
        if self.jobs < 1:
            raise ConfigurationError("jobs must be >= 1")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigurationError("threshold must lie in [0, 1]")

    def nes_explain(self) -> NesParams:
        return self._nes(self.nes.explain_iters)

    def nes_eval(self) -> NesParams:
        return self._nes(self.nes.eval_iters)

    def _nes(self, iters: int) -> NesParams:
        return NesParams(
            sigma=self.nes.sigma,
            n_samples=self.nes.n_samples,
            max_iters=iters,
            max_distortion=self.nes.max_distortion,
            learning_rate=self.nes.learning_rate,
            batch_size=self.nes.batch_size,
            step_clip_only=self.nes.step_clip_only,
        )


def _fill(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected a mapping, got {type(data).__name__}")
    fields = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    unknown = set(data) - fields
    if unknown:
        raise ConfigurationError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for f in cls.__dataclass_fields__.values():  # type: ignore[attr-defined]
        if f.name not in data:
            continue
        value = data[f.name]
        nested = _NESTED.get((cls, f.name))
        kwargs[f.name] = _fill(nested, value, f"{path}.{f.name}") if nested else value
    return cls(**kwargs)


_NESTED = {
    (RunConfig, "detector"): DetectorSpec,
    (RunConfig, "nes"): NesSection,
    (RunConfig, "segmentation"): SlicParams,
    (RunConfig, "explainers"): ExplainerConfig,
    (ExplainerConfig, "lime"): LimeConfig,
    (ExplainerConfig, "shap"): ShapConfig,
    (ExplainerConfig, "sobol"): SobolConfig,
    (ExplainerConfig, "rise"): RiseConfig,
}


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    cfg = _fill(RunConfig, data, "config")
    cfg.validate()
    return cfg


def config_to_yaml(cfg: RunConfig) -> str:
    def plain(obj):
        if hasattr(obj, "__dataclass_fields__"):
            return {
                name: plain(getattr(obj, name)) for name in obj.__dataclass_fields__
            }
        if isinstance(obj, (list, tuple)):
            return [plain(v) for v in obj]
        return obj

    return yaml.safe_dump(plain(cfg), sort_keys=True)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(config_to_yaml(cfg), encoding="utf-8")


def build_detector(spec: DetectorSpec, base_dir: Path | None = None) -> DetectorOracle:
    """Instantiate the detector a config names; paths resolve against base_dir."""

    def resolve(p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() or base_dir is None else base_dir / path

    if spec.kind == "constant":
        return ConstantDetector(spec.p_real)
    if spec.kind == "linear_logistic":
        if spec.weights_npy is None:
            raise ConfigurationError("linear_logistic detector requires weights_npy")
        weights = np.load(resolve(spec.weights_npy))
        return LinearLogisticDetector(weights, spec.bias)
    if spec.kind == "planted_patch":
        if spec.region is None or len(spec.region) != 4:
            raise ConfigurationError(
                "planted_patch detector requires region: [row0, col0, row1, col1]"
            )
        r0, c0, r1, c1 = (int(v) for v in spec.region)
        if spec.reference_npy is not None:
            reference = np.load(resolve(spec.reference_npy))
        elif spec.reference_value is not None:
            reference = np.full((r1 - r0, c1 - c0), float(spec.reference_value))
        else:
            raise ConfigurationError(
                "planted_patch detector requires reference_npy or reference_value"
            )
        return PlantedPatchDetector(
            PatchRegion(r0, c0, r1, c1),
            reference,
            sensitivity=spec.sensitivity,
            threshold_offset=spec.threshold_offset,
        )
    if spec.kind == "external":
        if not spec.command:
            raise ConfigurationError("external detector requires a command list")
        command = [sys.executable if tok == "{python}" else tok for tok in spec.command]
        return ExternalDetector(command, timeout=spec.timeout)
    raise ConfigurationError(f"unknown detector kind {spec.kind!r}")
