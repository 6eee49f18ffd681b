import json

import numpy as np

from advmask import read_png
from advmask.core import CounterSnapshot
from advmask.evaluation import EvaluationReport
from advmask.explainers import SaliencyMap, Variant
from advmask.render import (
    benchmark_figure,
    heat_lut,
    overlay_png,
    reports_to_csv,
    reports_to_json,
    saliency_binary,
    saliency_metadata,
)
from synthetic import make_suite_image


def _sal(scores):
    return SaliencyMap(
        scores=np.asarray(scores, dtype=np.float64),
        method="rise",
        variant=Variant.CLASSIC,
        budget=CounterSnapshot(forward_passes=10, batch_calls=1),
    )


def _report():
    return EvaluationReport(
        method="lime",
        variant="classic",
        per_k={1: {"accuracy": 0.5, "sufficiency": 0.25, "sufficiency_unclamped": 0.2}},
        baseline_accuracy=1.0,
        images_evaluated=2,
        mean_inferences=200.0,
        mean_seconds=0.0,
        mean_eval_attack_passes={1: 33.0},
    )


def test_heat_lut_shape_and_endpoints():
    lut = heat_lut()
    assert lut.shape == (256, 3) and lut.dtype == np.uint8
    np.testing.assert_array_equal(lut[0], [0, 0, 0])
    np.testing.assert_array_equal(lut[-1], [255, 255, 255])


def test_overlay_has_input_dimensions(tmp_path):
    img = make_suite_image(0)
    gen = np.random.default_rng(0)
    overlay_png(img, _sal(gen.uniform(0, 1, (64, 64))), tmp_path / "o.png")
    out = read_png(tmp_path / "o.png")
    assert (out.channels, out.height, out.width) == (3, 64, 64)


def test_constant_saliency_normalizes_to_zero(tmp_path):
    sal = _sal(np.full((4, 4), 0.7))
    np.testing.assert_array_equal(sal.normalized(), np.zeros((4, 4)))


def test_saliency_binary_is_le_float32():
    sal = _sal(np.array([[0.1, 0.2], [0.3, 0.4]]))
    raw = saliency_binary(sal)
    back = np.frombuffer(raw, dtype="<f4").reshape(2, 2)
    np.testing.assert_allclose(back, sal.scores, rtol=1e-6)


def test_metadata_is_json():
    meta = json.loads(saliency_metadata(_sal(np.zeros((2, 2)))))
    assert meta["method"] == "rise"
    assert meta["budget"]["forward_passes"] == 10


def test_csv_and_json_agree():
    rep = _report()
    doc = json.loads(reports_to_json([rep]))
    lines = reports_to_csv([rep]).splitlines()
    assert lines[0] == "method,variant,k,accuracy,sufficiency,mean_inferences,mean_seconds"
    cells = lines[1].split(",")
    assert float(cells[3]) == doc["reports"][0]["per_k"]["1"]["accuracy"]
    assert float(cells[5]) == 233.0


def test_benchmark_figure_written_and_stable(tmp_path):
    rep = _report()
    benchmark_figure([rep], tmp_path / "a.png")
    benchmark_figure([rep], tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
