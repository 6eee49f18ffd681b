"""Command-line surface: explain, attack, benchmark, serve-stub.

Exit codes: 0 success; 2 usage error (argparse); 3 input not classified as
a deepfake; 4 detector/oracle failure; 5 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, build_detector, load_config, save_config
from .core import (
    ConfigurationError,
    ImageTensor,
    Label,
    NotDeepfakeError,
    OracleError,
    RngStream,
    classify,
    read_png,
    write_png,
)
from .detectors import serve_forever
from .evaluation import run_benchmark
from .explainers import Variant, explain
from .nes import generate_adversarial
from .render import (
    benchmark_figure,
    overlay_png,
    reports_to_csv,
    reports_to_json,
    saliency_binary,
    saliency_metadata,
)
from .segmentation import slic_segment

EXIT_OK = 0
EXIT_NOT_DEEPFAKE = 3
EXIT_ORACLE = 4
EXIT_CONFIG = 5


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advmask",
        description="Adversarial-masking perturbation explanations for deepfake detectors",
    )
    parser.add_argument("--version", action="version", version=f"advmask {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")

    p_explain = sub.add_parser("explain", help="produce a saliency map for one image")
    p_explain.add_argument("image", help="input PNG")
    common(p_explain)
    p_explain.add_argument("--method", choices=["lime", "shap", "sobol", "rise"], default=None)
    p_explain.add_argument("--variant", choices=["classic", "adv"], default=None)

    p_attack = sub.add_parser("attack", help="generate an adversarial image")
    p_attack.add_argument("image", help="input PNG")
    common(p_attack)

    p_bench = sub.add_parser("benchmark", help="evaluate explainers over an image directory")
    p_bench.add_argument("dataset", help="directory of PNG images")
    common(p_bench)
    p_bench.add_argument("--method", choices=["lime", "shap", "sobol", "rise"], default=None)
    p_bench.add_argument("--variant", choices=["classic", "adv"], default=None)
    p_bench.add_argument("--k", default=None, help="comma-separated k values, e.g. 1,2,3")
    p_bench.add_argument("--jobs", type=int, default=None, help="parallel images")

    p_stub = sub.add_parser("serve-stub", help="serve a synthetic detector over stdio")
    common(p_stub, needs_out=False)

    return parser


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "method", None):
        cfg.methods = [args.method]
    if getattr(args, "variant", None):
        cfg.variants = [args.variant]
    if getattr(args, "k", None):
        cfg.ks = [int(v) for v in args.k.split(",") if v]
    if getattr(args, "jobs", None):
        cfg.jobs = args.jobs
    cfg.validate()
    return cfg


def _prepare_out(out: str, cfg: RunConfig) -> Path:
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out_dir / "config.yaml")
    return out_dir


def cmd_explain(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    detector = build_detector(cfg.detector, Path(args.config).parent)
    image = read_png(args.image)
    p_real, label = classify(detector, image, cfg.threshold)
    if label is Label.REAL:
        print(
            f"input classified as Real (p_real={p_real:.4f}); "
            "explanations are produced for detected deepfakes only",
            file=sys.stderr,
        )
        return EXIT_NOT_DEEPFAKE

    method = cfg.methods[0]
    variant = Variant(cfg.variants[0])
    rng = RngStream(cfg.seed)
    seg = slic_segment(image, cfg.segmentation) if method in ("lime", "shap") else None
    sal = explain(
        method,
        variant,
        image,
        detector,
        cfg.explainers,
        rng.split("explain", method, variant.value, 0),
        seg=seg,
        nes_params=replace(cfg.nes_explain(), rng=rng.split("explain-attack", 0)),
    )

    out_dir = _prepare_out(args.out, cfg)
    (out_dir / "saliency.bin").write_bytes(saliency_binary(sal))
    (out_dir / "saliency.json").write_text(
        saliency_metadata(sal, {"image": str(args.image), "seed": cfg.seed, "p_real": p_real})
    )
    overlay_png(image, sal, out_dir / "overlay.png")
    print(f"wrote saliency.bin, saliency.json, overlay.png to {out_dir}")
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    detector = build_detector(cfg.detector, Path(args.config).parent)
    image = read_png(args.image)
    rng = RngStream(cfg.seed)
    params = replace(cfg.nes_explain(), rng=rng.split("explain-attack", 0))
    result = generate_adversarial(image, detector, params, threshold=cfg.threshold)

    out_dir = _prepare_out(args.out, cfg)
    write_png(result.adversarial_image, out_dir / "adversarial.png")
    delta = np.abs(
        result.adversarial_image.data.astype(np.float64) - image.data.astype(np.float64)
    )
    trace = result.trace_dict()
    trace["max_distortion"] = float(delta.max())
    trace["mean_distortion"] = float(delta.mean())
    (out_dir / "trace.json").write_text(json.dumps(trace, indent=2))
    print(
        f"attack {'succeeded' if result.success else 'failed'} after "
        f"{result.iterations_used} iterations (p_real={result.final_p_real:.4f}); "
        f"wrote adversarial.png, trace.json to {out_dir}"
    )
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    detector = build_detector(cfg.detector, Path(args.config).parent)

    dataset_dir = Path(args.dataset)
    paths = sorted(dataset_dir.glob("*.png"))
    images: list[ImageTensor] = []
    names: list[str] = []
    for p in paths:
        try:
            images.append(read_png(p))
            names.append(p.name)
        except Exception as exc:
            print(f"warning: skipping unreadable {p}: {exc}", file=sys.stderr)
    if not images:
        print(f"no usable PNG images in {dataset_dir}", file=sys.stderr)
        return EXIT_CONFIG

    rng = RngStream(cfg.seed)
    reports, outcomes = run_benchmark(
        images,
        detector,
        cfg.methods,
        [Variant(v) for v in cfg.variants],
        cfg.ks,
        cfg.explainers,
        cfg.segmentation,
        cfg.nes_explain(),
        cfg.nes_eval(),
        rng,
        threshold=cfg.threshold,
        jobs=cfg.jobs,
        measure_time=cfg.measure_time,
    )

    out_dir = _prepare_out(args.out, cfg)
    run_info = {
        "seed": cfg.seed,
        "dataset": str(dataset_dir),
        "images": names,
        "skipped_real": sum(1 for o in outcomes if o.skipped),
        "failed": [
            {"index": o.index, "image": names[o.index], "error": o.error}
            for o in outcomes
            if o.error
        ],
    }
    (out_dir / "report.json").write_text(reports_to_json(reports, run_info))
    (out_dir / "report.csv").write_text(reports_to_csv(reports))
    benchmark_figure(reports, out_dir / "report.png")

    if cfg.save_artifacts:
        art = out_dir / "artifacts"
        art.mkdir(exist_ok=True)
        for o in outcomes:
            if o.skipped or o.error:
                continue
            for (method, variant), sal in sorted(o.saliency.items()):
                stem = f"img{o.index:04d}_{method}_{variant}"
                (art / f"{stem}.bin").write_bytes(saliency_binary(sal))
                overlay_png(images[o.index], sal, art / f"{stem}.png")

    print(f"wrote report.json, report.csv, report.png to {out_dir}")
    return EXIT_OK


def cmd_serve_stub(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    detector = build_detector(cfg.detector, Path(args.config).parent)
    serve_forever(detector, sys.stdin, sys.stdout)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handlers = {
        "explain": cmd_explain,
        "attack": cmd_attack,
        "benchmark": cmd_benchmark,
        "serve-stub": cmd_serve_stub,
    }
    try:
        return handlers[args.command](args)
    except NotDeepfakeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_DEEPFAKE
    except OracleError as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
