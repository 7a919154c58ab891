"""Patch-level land-cover word assignment.

Two interchangeable labelers share the same duck-typed surface
(``vocabulary`` attribute plus ``label_batch(patches) -> list[str]``):

  * NativeSoftmaxLabeler: multinomial logistic regression over simple
    hand-crafted patch features (16x16 bilinear-resampled intensities per
    band concatenated with a 16-bin normalized histogram per band).
  * ExternalLabeler: client for a worker process speaking the wire
    protocol below, the plugin slot for CNN-based labelers.

Wire protocol (newline-delimited JSON over the worker's stdin/stdout,
UTF-8, exactly one object per line):

  handshake  worker -> {"type":"hello","vocabulary":[...]}
  request    client -> {"type":"label","id":N,"width":W,"height":H,
                        "bands":B,"pixels":"<base64 raw bytes>"}
  response   worker -> {"type":"result","id":N,"word":"...","probs":[...]}
  shutdown   {"type":"end"} in both directions.
"""

from __future__ import annotations

import base64
import json
import queue
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import ProtocolError, WorkerTimeoutError
from .sampler import PatchSample

RESAMPLE_SIDE = 16
HISTOGRAM_BINS = 16
FEATURE_LAYOUT = "resample16+hist16/v1"


def feature_length(bands: int) -> int:
    return bands * (RESAMPLE_SIDE * RESAMPLE_SIDE + HISTOGRAM_BINS)


def featurize_patch(patch: PatchSample) -> np.ndarray:
    """Deterministic fixed-length feature vector for one patch.

    Resampled intensities are scaled to [0, 1]; each histogram block sums
    to 1, so the vector is invariant to the patch's pixel count for
    constant content.
    """
    pixels = patch.pixels
    blocks = []
    for b in range(pixels.shape[2]):
        band = Image.fromarray(np.ascontiguousarray(pixels[:, :, b]))
        resampled = band.resize((RESAMPLE_SIDE, RESAMPLE_SIDE), Image.BILINEAR)
        blocks.append(np.asarray(resampled, dtype=np.float64).ravel() / 255.0)
    for b in range(pixels.shape[2]):
        hist = np.bincount(pixels[:, :, b].ravel() >> 4, minlength=HISTOGRAM_BINS)
        blocks.append(hist / pixels[:, :, b].size)
    return np.concatenate(blocks)


def softmax(z: np.ndarray) -> np.ndarray:
    """Class probabilities e^{z_j} / sum_k e^{z_k}, overflow-safe."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class SoftmaxModel:
    """Multinomial logistic model: one weight row per class, bias column last."""

    classes: tuple[str, ...]
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ValueError("model needs at least 2 classes")
        if self.weights.shape[0] != len(self.classes):
            raise ValueError("weight row count must equal the class count")

    @property
    def feature_count(self) -> int:
        return self.weights.shape[1] - 1

    def logits(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(features)
        if features.shape[1] != self.feature_count:
            raise ValueError(
                f"feature length {features.shape[1]} does not match model ({self.feature_count})"
            )
        return features @ self.weights[:, :-1].T + self.weights[:, -1]


def loss_and_gradient(
    weights: np.ndarray, features: np.ndarray, class_indices: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the (K, F+1) weight matrix."""
    n = features.shape[0]
    aug = np.hstack([features, np.ones((n, 1))])
    probs = softmax(aug @ weights.T)
    loss = float(-np.log(probs[np.arange(n), class_indices] + 1e-300).mean())
    probs[np.arange(n), class_indices] -= 1.0
    grad = probs.T @ aug / n
    return loss, grad


@dataclass(frozen=True)
class SoftmaxTraining:
    model: SoftmaxModel
    train_accuracy: float
    validation_accuracy: float | None


def train_softmax(
    features: np.ndarray,
    words: Sequence[str],
    *,
    learning_rate: float = 0.001,
    iterations: int = 10_000,
    batch_size: int = 100,
    rng: np.random.Generator | None = None,
    validation: tuple[np.ndarray, Sequence[str]] | None = None,
) -> SoftmaxTraining:
    """Mini-batch gradient descent on cross-entropy.

    Weights start at zero (the objective is convex) and the batch order is
    a fresh shuffle per epoch drawn from ``rng``, so a fixed seed fully
    determines the trajectory.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError("features must be a 2-D matrix with one row per patch")
    if features.shape[0] != len(words):
        raise ValueError("features and words must have equal length")
    classes = tuple(sorted(set(words)))
    if len(classes) < 2:
        raise ValueError("training needs at least 2 distinct classes")
    rng = rng if rng is not None else np.random.default_rng()

    index = {word: i for i, word in enumerate(classes)}
    y = np.asarray([index[w] for w in words])
    n, f = features.shape
    weights = np.zeros((len(classes), f + 1))

    steps = 0
    while steps < iterations:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            if steps >= iterations:
                break
            batch = order[start : start + batch_size]
            _, grad = loss_and_gradient(weights, features[batch], y[batch])
            weights -= learning_rate * grad
            steps += 1

    model = SoftmaxModel(classes=classes, weights=weights)
    train_acc = float((predict_indices(model, features) == y).mean())
    val_acc = None
    if validation is not None:
        val_x, val_words = validation
        val_y = np.asarray([index[w] for w in val_words])
        val_acc = float((predict_indices(model, np.asarray(val_x, dtype=np.float64)) == val_y).mean())
    return SoftmaxTraining(model=model, train_accuracy=train_acc, validation_accuracy=val_acc)


def predict_indices(model: SoftmaxModel, features: np.ndarray) -> np.ndarray:
    """Argmax class indices; ties resolve to the lowest class index."""
    return np.argmax(model.logits(features), axis=1)


def predict_word(model: SoftmaxModel, patch: PatchSample) -> str:
    return model.classes[int(predict_indices(model, featurize_patch(patch))[0])]


def split_dataset(items: Sequence, fractions=(0.8, 0.1, 0.1), rng: np.random.Generator | None = None):
    """Shuffled disjoint partition; floor sizing for the first two parts,
    remainder to the last."""
    if len(items) == 0:
        raise ValueError("cannot split an empty dataset")
    if abs(sum(fractions) - 1.0) > 1e-9 or len(fractions) != 3 or min(fractions) < 0:
        raise ValueError("fractions must be three non-negative values summing to 1")
    rng = rng if rng is not None else np.random.default_rng()
    order = rng.permutation(len(items))
    n = len(items)
    n_first = int(n * fractions[0])
    n_second = int(n * fractions[1])
    picked = [items[i] for i in order]
    return (
        picked[:n_first],
        picked[n_first : n_first + n_second],
        picked[n_first + n_second :],
    )


def save_model(model: SoftmaxModel, path: str | Path) -> None:
    doc = {
        "format": "parcelsense-softmax",
        "feature_layout": FEATURE_LAYOUT,
        "classes": list(model.classes),
        "weights": [[float(v) for v in row] for row in model.weights],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_model(path: str | Path) -> SoftmaxModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "parcelsense-softmax" or doc.get("feature_layout") != FEATURE_LAYOUT:
        raise ValueError(f"not a compatible softmax model file: {path}")
    return SoftmaxModel(classes=tuple(doc["classes"]), weights=np.asarray(doc["weights"], dtype=np.float64))


class NativeSoftmaxLabeler:
    """In-process labeler over a trained softmax model."""

    def __init__(self, model: SoftmaxModel):
        self.model = model
        self.vocabulary = model.classes

    def label_batch(self, patches: Sequence[PatchSample]) -> list[str]:
        if not patches:
            return []
        features = np.stack([featurize_patch(p) for p in patches])
        return [self.model.classes[i] for i in predict_indices(self.model, features)]


def encode_patch_request(request_id: int, patch: PatchSample) -> str:
    return json.dumps(
        {
            "type": "label",
            "id": request_id,
            "width": patch.width,
            "height": patch.height,
            "bands": patch.bands,
            "pixels": base64.b64encode(np.ascontiguousarray(patch.pixels).tobytes()).decode("ascii"),
        }
    )


def decode_patch_request(message: dict) -> np.ndarray:
    """Decode a label request's pixel payload to (height, width, bands) uint8."""
    raw = base64.b64decode(message["pixels"])
    shape = (message["height"], message["width"], message["bands"])
    expected = shape[0] * shape[1] * shape[2]
    if len(raw) != expected:
        raise ProtocolError(f"pixel payload is {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(shape)


class ExternalLabeler:
    """Client for a labeler worker subprocess.

    Access is serialized with an internal lock so one worker can safely be
    shared between threads.  Requests of a batch are written from a helper
    thread while responses are read, which keeps large batches from
    deadlocking on pipe buffers.
    """

    def __init__(self, command: Sequence[str], timeout: float = 30.0):
        self._timeout = timeout
        self._lock = threading.Lock()
        self._proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        hello = self._next_message()
        if hello.get("type") != "hello" or not isinstance(hello.get("vocabulary"), list):
            raise ProtocolError(f"expected hello handshake, got {hello!r}")
        self.vocabulary: tuple[str, ...] = tuple(hello["vocabulary"])
        if not self.vocabulary:
            raise ProtocolError("worker declared an empty vocabulary")

    def _read_loop(self):
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _next_message(self) -> dict:
        try:
            line = self._lines.get(timeout=self._timeout)
        except queue.Empty:
            raise WorkerTimeoutError(f"worker did not respond within {self._timeout}s") from None
        if line is None:
            raise ProtocolError("worker closed its output stream")
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"worker emitted invalid JSON: {line!r}") from exc
        if not isinstance(message, dict):
            raise ProtocolError(f"worker emitted a non-object line: {line!r}")
        return message

    def label_batch(self, patches: Sequence[PatchSample]) -> list[str]:
        """One word per patch, in request order."""
        if not patches:
            return []
        with self._lock:
            payload = "".join(encode_patch_request(i, p) + "\n" for i, p in enumerate(patches))
            writer = threading.Thread(target=self._write, args=(payload,), daemon=True)
            writer.start()
            words: list[str] = []
            for i in range(len(patches)):
                message = self._next_message()
                if message.get("type") != "result":
                    raise ProtocolError(f"expected result, got {message!r}")
                if message.get("id") != i:
                    raise ProtocolError(f"response id {message.get('id')} out of order (expected {i})")
                word = message.get("word")
                if word not in self.vocabulary:
                    raise ProtocolError(f"word {word!r} not in declared vocabulary")
                probs = message.get("probs")
                if probs is not None and abs(sum(probs) - 1.0) > 1e-6:
                    raise ProtocolError("response probs do not sum to 1")
                words.append(word)
            writer.join()
            return words

    def _write(self, payload: str):
        try:
            assert self._proc.stdin is not None
            self._proc.stdin.write(payload)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            pass  # surfaced as a missing response by the reader side

    def close(self):
        with self._lock:
            if self._proc.poll() is None:
                self._write('{"type":"end"}\n')
                try:
                    message = self._next_message()
                    if message.get("type") != "end":
                        raise ProtocolError(f"expected end acknowledgement, got {message!r}")
                except (WorkerTimeoutError, ProtocolError):
                    self._proc.kill()
                    raise
                finally:
                    try:
                        self._proc.stdin.close()  # type: ignore[union-attr]
                    except OSError:
                        pass
                    self._proc.wait(timeout=self._timeout)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def external_label_batch(worker: ExternalLabeler, patches: Sequence[PatchSample]) -> list[str]:
    """Label patches through a running worker endpoint (thin alias)."""
    return worker.label_batch(patches)


def check_worker_conformance(command: Sequence[str], timeout: float = 60.0) -> tuple[str, ...]:
    """Reference conformance check for labeler workers.

    Runs the handshake, a mixed-size batch, a larger ordered batch and the
    shutdown exchange, raising ProtocolError on the first violation.
    Returns the worker's declared vocabulary on success.
    """
    rng = np.random.default_rng(7)
    with ExternalLabeler(command, timeout=timeout) as worker:
        small = [
            PatchSample(parcel_id=0, x=0, y=0, pixels=rng.integers(0, 256, (h, w, 3)).astype(np.uint8))
            for h, w in [(1, 1), (5, 9), (32, 32)]
        ]
        words = worker.label_batch(small)
        if len(words) != len(small):
            raise ProtocolError("response count mismatch")
        bulk = [
            PatchSample(parcel_id=0, x=0, y=0, pixels=rng.integers(0, 256, (8, 8, 3)).astype(np.uint8))
            for _ in range(200)
        ]
        worker.label_batch(bulk)
        vocabulary = worker.vocabulary
    return vocabulary
