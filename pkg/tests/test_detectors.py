import json
import subprocess
import sys

import numpy as np
import pytest

from advmask import (
    ConfigurationError,
    ExternalDetector,
    ImageTensor,
    LinearLogisticDetector,
    PatchRegion,
    PlantedPatchDetector,
)
from synthetic import make_patch_detector, make_suite_image, sigmoid


class TestLinearLogistic:
    def test_zero_weights_give_half(self):
        det = LinearLogisticDetector(np.zeros((1, 2, 2)), 0.0)
        img = ImageTensor(np.random.default_rng(0).uniform(0, 1, (1, 2, 2)).astype(np.float32))
        assert det.score_batch([img]) == [0.5]

    def test_bias_saturation(self):
        det = LinearLogisticDetector(np.zeros((1, 2, 2)), 10.0)
        img = ImageTensor(np.zeros((1, 2, 2), dtype=np.float32))
        assert det.score_batch([img])[0] == pytest.approx(1.0, abs=1e-4)

    def test_hand_computed_example(self):
        # 2x2 grayscale {0.1, 0.2, 0.3, 0.4}, w = 1, b = -1 -> sigmoid(0) = 0.5
        img = ImageTensor(np.array([[[0.1, 0.2], [0.3, 0.4]]], dtype=np.float32))
        det = LinearLogisticDetector(np.ones((1, 2, 2)), -1.0)
        # float32 pixels do not sum to exactly 1.0; tolerance covers that
        assert det.score_batch([img])[0] == pytest.approx(0.5, abs=1e-7)

    def test_monotone_in_positive_weight_pixel(self):
        gen = np.random.default_rng(3)
        w = gen.uniform(0.01, 1.0, size=(1, 4, 4))
        det = LinearLogisticDetector(w, -2.0)
        base = gen.uniform(0.1, 0.8, size=(1, 4, 4)).astype(np.float32)
        for _ in range(25):
            r, c = gen.integers(0, 4, size=2)
            bumped = base.copy()
            bumped[0, r, c] += 0.1
            s0 = det.score_batch([ImageTensor(base)])[0]
            s1 = det.score_batch([ImageTensor(bumped)])[0]
            assert s1 > s0

    def test_layout_mismatch_is_config_error(self):
        det = LinearLogisticDetector(np.zeros((1, 2, 2)), 0.0)
        with pytest.raises(ConfigurationError):
            det.score_batch([ImageTensor(np.zeros((1, 3, 3), dtype=np.float32))])


class TestPlantedPatch:
    def test_matching_patch_score(self):
        det = make_patch_detector()
        img = make_suite_image(0)
        arr = np.asarray(img.data).copy()
        arr[0, 24:32, 32:40] = 76 / 255  # exact match -> discrepancy 0
        score = det.score_batch([ImageTensor(arr)])[0]
        assert score == pytest.approx(sigmoid(-25.0 * 0.1), abs=1e-9)

    def test_half_offset_score(self):
        det = PlantedPatchDetector(
            PatchRegion(0, 0, 2, 2), np.full((2, 2), 0.25), sensitivity=25.0, threshold_offset=0.1
        )
        arr = np.zeros((1, 4, 4), dtype=np.float32)
        arr[0, :2, :2] = 0.75  # reference + 0.5 everywhere in the region
        score = det.score_batch([ImageTensor(arr)])[0]
        assert score == pytest.approx(sigmoid(25.0 * (0.5 - 0.1)), abs=1e-9)

    def test_locality_is_bit_exact(self):
        det = make_patch_detector()
        base = make_suite_image(4)
        ref_score = det.score_batch([base])[0]
        gen = np.random.default_rng(11)
        outside = [
            (r, c)
            for r in range(64)
            for c in range(64)
            if not (24 <= r < 32 and 32 <= c < 40)
        ]
        picks = gen.choice(len(outside), size=1000, replace=True)
        for pick in picks:
            r, c = outside[pick]
            arr = np.asarray(base.data).copy()
            arr[0, r, c] = gen.uniform(0, 1)
            assert det.score_batch([ImageTensor(arr)])[0] == ref_score

    def test_region_out_of_bounds(self):
        det = PlantedPatchDetector(PatchRegion(0, 0, 10, 10), np.full((10, 10), 0.5))
        with pytest.raises(ConfigurationError):
            det.score_batch([ImageTensor(np.zeros((1, 4, 4), dtype=np.float32))])


def _write_stub_config(tmp_path, p_real=None):
    if p_real is not None:
        body = f"detector:\n  kind: constant\n  p_real: {p_real}\n"
    else:
        # reference must be the float32-exact value the local detector uses
        from synthetic import REF_VALUE

        body = (
            "detector:\n"
            "  kind: planted_patch\n"
            "  region: [24, 32, 32, 40]\n"
            f"  reference_value: {float(REF_VALUE)!r}\n"
        )
    cfg = tmp_path / "stub.yaml"
    cfg.write_text(body)
    return cfg


def _stub_command(cfg):
    return [sys.executable, "-m", "advmask", "serve-stub", "--config", str(cfg)]


class TestExternalDetector:
    def test_handshake_and_equivalence(self, tmp_path):
        cfg = _write_stub_config(tmp_path)
        local = make_patch_detector()
        with ExternalDetector(_stub_command(cfg)) as remote:
            assert remote.name == "planted_patch"
            gen = np.random.default_rng(0)
            for _ in range(20):
                batch = [
                    ImageTensor(gen.uniform(0, 1, (1, 64, 64)).astype(np.float32))
                    for _ in range(gen.integers(1, 5))
                ]
                np.testing.assert_array_equal(
                    remote.score_batch(batch), local.score_batch(batch)
                )

    def test_empty_batch(self, tmp_path):
        cfg = _write_stub_config(tmp_path, p_real=0.25)
        with ExternalDetector(_stub_command(cfg)) as remote:
            assert remote.score_batch([]) == []

    def test_order_preserved(self, tmp_path):
        cfg = _write_stub_config(tmp_path)
        local = make_patch_detector()
        batch = [make_suite_image(i) for i in range(3)]
        with ExternalDetector(_stub_command(cfg)) as remote:
            np.testing.assert_array_equal(remote.score_batch(batch), local.score_batch(batch))


class TestWireProtocol:
    def test_session_answers_every_id_once(self, tmp_path):
        cfg = _write_stub_config(tmp_path, p_real=0.5)
        proc = subprocess.Popen(
            _stub_command(cfg), stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True
        )
        try:
            img = make_suite_image(0)
            import base64

            lines = [json.dumps({"hello": 1})]
            for i in range(100):
                lines.append(
                    json.dumps(
                        {
                            "id": i,
                            "shape": list(img.shape),
                            "pixels": base64.b64encode(img.to_bytes()).decode(),
                        }
                    )
                )
            out, _ = proc.communicate("\n".join(lines) + "\n", timeout=60)
            replies = [json.loads(l) for l in out.strip().split("\n")]
            assert replies[0] == {"hello": 1, "name": "constant"}
            ids = [r["id"] for r in replies[1:]]
            assert sorted(ids) == list(range(100))
            assert all(r["p_real"] == 0.5 for r in replies[1:])
        finally:
            proc.kill()

    def test_malformed_request_keeps_serving(self, tmp_path):
        cfg = _write_stub_config(tmp_path, p_real=0.5)
        proc = subprocess.Popen(
            _stub_command(cfg), stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True
        )
        try:
            img = make_suite_image(0)
            import base64

            good = json.dumps(
                {
                    "id": 7,
                    "shape": list(img.shape),
                    "pixels": base64.b64encode(img.to_bytes()).decode(),
                }
            )
            bad = json.dumps({"id": 3, "shape": [1, 2, 2], "pixels": "not-base64!!"})
            payload = json.dumps({"hello": 1}) + "\n" + bad + "\n" + good + "\n"
            out, _ = proc.communicate(payload, timeout=60)
            replies = [json.loads(l) for l in out.strip().split("\n")]
            assert "error" in replies[1] and replies[1]["id"] == 3
            assert replies[2]["id"] == 7 and replies[2]["p_real"] == 0.5
        finally:
            proc.kill()
