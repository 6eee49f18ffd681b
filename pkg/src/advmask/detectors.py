"""Synthetic analytic detectors and the external-process detector adapter.

The synthetic oracles have closed-form scores so explainer and attack
behavior can be verified exactly. The external adapter speaks
newline-delimited JSON (protocol version 1) over a child process's
stdin/stdout; `serve_forever` is the matching server loop used by the
`serve-stub` CLI command.
"""

from __future__ import annotations

import base64
import json
import math
import os
import selectors
import subprocess
import threading
import time
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np

from .core import ConfigurationError, DetectorOracle, ImageTensor, OracleError

PROTOCOL_VERSION = 1


def _sigmoid(z: float) -> float:
    # branch to avoid overflow in exp for large |z|
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


class ConstantDetector:
    """Always returns the same probability-of-real. Smoke-test oracle."""

    def __init__(self, p_real: float, name: str = "constant"):
        if not 0.0 <= p_real <= 1.0:
            raise ConfigurationError(f"p_real must lie in [0,1], got {p_real}")
        self.p_real = float(p_real)
        self.name = name

    def score_batch(self, batch: Sequence[ImageTensor]) -> list[float]:
        return [self.p_real] * len(batch)


class LinearLogisticDetector:
    """p_real = sigmoid(<weights, image> + bias).

    The analytic gradient (sigmoid' * weights) makes this the reference
    oracle for gradient-estimator fidelity checks.
    """

    def __init__(self, weights: np.ndarray, bias: float, name: str = "linear_logistic"):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 3 or w.shape[0] not in (1, 3):
            raise ConfigurationError(f"weights must be (C, H, W), got shape {w.shape}")
        self.weights = w
        self.bias = float(bias)
        self.name = name

    def logit(self, image: ImageTensor) -> float:
        if image.shape != self.weights.shape:
            raise ConfigurationError(
                f"image shape {image.shape} does not match weights {self.weights.shape}"
            )
        return float(np.dot(self.weights.ravel(), image.data.astype(np.float64).ravel()) + self.bias)

    def gradient(self, image: ImageTensor) -> np.ndarray:
        """Analytic d p_real / d pixel."""
        p = _sigmoid(self.logit(image))
        return p * (1.0 - p) * self.weights

    def score_batch(self, batch: Sequence[ImageTensor]) -> list[float]:
        return [_sigmoid(self.logit(img)) for img in batch]


@dataclass(frozen=True)
class PatchRegion:
    """Half-open pixel rectangle [row0, row1) x [col0, col1)."""

    row0: int
    col0: int
    row1: int
    col1: int

    def __post_init__(self):
        if not (self.row0 < self.row1 and self.col0 < self.col1):
            raise ConfigurationError(f"degenerate patch region {self}")
        if min(self.row0, self.col0) < 0:
            raise ConfigurationError(f"negative patch coordinates {self}")


class PlantedPatchDetector:
    """Oracle whose score depends only on one known rectangle.

    p_real = sigmoid(sensitivity * (discrepancy - threshold_offset)) with
    discrepancy = mean |image - reference| inside the patch; a matching
    patch therefore scores Fake. Pixels outside the rectangle cannot move
    the score at all, which makes localization claims exactly testable.

    Defaults (sensitivity 25, threshold_offset 0.1) keep the decision
    flippable by an L-inf perturbation of 16/255 whenever the starting
    discrepancy exceeds 0.1 - 16/255.
    """

    def __init__(
        self,
        patch_region: PatchRegion,
        reference_patch: np.ndarray,
        sensitivity: float = 25.0,
        threshold_offset: float = 0.1,
        name: str = "planted_patch",
    ):
        if sensitivity <= 0:
            raise ConfigurationError("sensitivity must be positive")
        ref = np.asarray(reference_patch, dtype=np.float64)
        h = patch_region.row1 - patch_region.row0
        w = patch_region.col1 - patch_region.col0
        if ref.ndim == 2:
            ref = ref[None, :, :]
        if ref.shape[1:] != (h, w):
            raise ConfigurationError(
                f"reference patch shape {ref.shape} does not cover region {h}x{w}"
            )
        self.patch_region = patch_region
        self.reference_patch = ref
        self.sensitivity = float(sensitivity)
        self.threshold_offset = float(threshold_offset)
        self.name = name

    def _check_bounds(self, image: ImageTensor) -> None:
        r = self.patch_region
        if r.row1 > image.height or r.col1 > image.width:
            raise ConfigurationError(
                f"patch region {r} outside image {image.height}x{image.width}"
            )
        if self.reference_patch.shape[0] not in (1, image.channels):
            raise ConfigurationError(
                f"reference has {self.reference_patch.shape[0]} channels, "
                f"image has {image.channels}"
            )

    def discrepancy(self, image: ImageTensor) -> float:
        self._check_bounds(image)
        r = self.patch_region
        crop = image.data[:, r.row0 : r.row1, r.col0 : r.col1].astype(np.float64)
        return float(np.mean(np.abs(crop - self.reference_patch)))

    def score_batch(self, batch: Sequence[ImageTensor]) -> list[float]:
        return [
            _sigmoid(self.sensitivity * (self.discrepancy(img) - self.threshold_offset))
            for img in batch
        ]


# --- wire protocol (version 1): newline-delimited JSON over stdio ---------


def _encode_request(req_id: int, image: ImageTensor) -> str:
    return json.dumps(
        {
            "id": req_id,
            "shape": list(image.shape),
            "pixels": base64.b64encode(image.to_bytes()).decode("ascii"),
        }
    )


class ExternalDetector:
    """DetectorOracle backed by a detector process speaking protocol v1.

    Spawns the command, performs the hello handshake, then scores batches
    by writing one request line per image and collecting responses, which
    may arrive in any order. Requests are serialized per connection.
    """

    def __init__(self, command: Sequence[str], timeout: float = 30.0):
        self.command = list(command)
        self.timeout = float(timeout)
        self.protocol_version = PROTOCOL_VERSION
        self._lock = threading.Lock()
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
        )
        # raw fd + selector: a buffered reader would strand complete lines
        # in its internal buffer where select() cannot see them
        self._selector = selectors.DefaultSelector()
        self._selector.register(self._proc.stdout.fileno(), selectors.EVENT_READ)
        self._buffer = b""
        try:
            self._send_line(json.dumps({"hello": PROTOCOL_VERSION}))
            hello = json.loads(self._read_line())
        except OracleError:
            self.close()
            raise
        if hello.get("hello") != PROTOCOL_VERSION:
            self.close()
            raise OracleError(f"protocol version mismatch in handshake: {hello}")
        self.name = str(hello.get("name", "external"))

    def _send_line(self, line: str) -> None:
        if self._proc.poll() is not None:
            raise OracleError("external detector process has exited")
        try:
            self._proc.stdin.write(line.encode("utf-8") + b"\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise OracleError(f"external detector pipe failure: {exc}") from exc

    def _read_line(self) -> str:
        deadline = time.monotonic() + self.timeout
        while b"\n" not in self._buffer:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise OracleError(f"external detector timed out after {self.timeout}s")
            if self._selector.select(timeout=remaining):
                chunk = os.read(self._proc.stdout.fileno(), 1 << 16)
                if chunk == b"":
                    raise OracleError("external detector closed its output stream")
                self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line.decode("utf-8")

    def score_batch(self, batch: Sequence[ImageTensor]) -> list[float]:
        if not batch:
            return []
        with self._lock:
            for i, img in enumerate(batch):
                self._send_line(_encode_request(i, img))
            scores: dict[int, float] = {}
            while len(scores) < len(batch):
                try:
                    msg = json.loads(self._read_line())
                except json.JSONDecodeError as exc:
                    raise OracleError(f"malformed response from detector: {exc}") from exc
                if "error" in msg:
                    raise OracleError(
                        f"detector error for request {msg.get('id')}: {msg['error']}"
                    )
                rid, p = msg.get("id"), msg.get("p_real")
                if rid is None or rid in scores or not (0 <= rid < len(batch)):
                    raise OracleError(f"response id {rid} does not pair with a pending request")
                if not isinstance(p, (int, float)) or not 0.0 <= p <= 1.0:
                    raise OracleError(f"response for id {rid} has invalid p_real: {p}")
                scores[rid] = float(p)
            return [scores[i] for i in range(len(batch))]

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        self._selector.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve_forever(detector: DetectorOracle, stdin: TextIO, stdout: TextIO) -> None:
    """Serve protocol v1 over text streams until end-of-stream.

    Malformed requests get an error response with the request id when one
    could be parsed; the loop keeps running either way.
    """
    for raw in stdin:
        raw = raw.strip()
        if not raw:
            continue
        req_id = None
        try:
            msg = json.loads(raw)
            if "hello" in msg:
                if msg["hello"] != PROTOCOL_VERSION:
                    reply = {"error": f"unsupported protocol {msg['hello']}"}
                else:
                    reply = {"hello": PROTOCOL_VERSION, "name": detector.name}
                stdout.write(json.dumps(reply) + "\n")
                stdout.flush()
                continue
            req_id = msg["id"]
            shape = tuple(int(s) for s in msg["shape"])
            image = ImageTensor.from_bytes(base64.b64decode(msg["pixels"]), shape)
            p = float(detector.score_batch([image])[0])
            stdout.write(json.dumps({"id": req_id, "p_real": p}) + "\n")
        except Exception as exc:  # keep serving; report the failure to the client
            stdout.write(json.dumps({"id": req_id, "error": str(exc)}) + "\n")
        stdout.flush()
