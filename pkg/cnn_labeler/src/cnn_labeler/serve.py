"""Wire-protocol worker loop.

Reads one JSON object per stdin line, answers one per stdout line:
hello on start, result per label request (order preserved), end on end.
Malformed request lines get an error response and the loop continues.
"""

from __future__ import annotations

import base64
import json
import sys

import numpy as np

from .model import LabelerModel


def decode_pixels(message: dict) -> np.ndarray:
    raw = base64.b64decode(message["pixels"])
    shape = (int(message["height"]), int(message["width"]), int(message["bands"]))
    expected = shape[0] * shape[1] * shape[2]
    if len(raw) != expected:
        raise ValueError(f"pixel payload is {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(shape)


def serve(model: LabelerModel, stdin=None, stdout=None) -> None:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout

    def emit(obj):
        stdout.write(json.dumps(obj) + "\n")
        stdout.flush()

    emit({"type": "hello", "vocabulary": list(model.classes)})
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            message = json.loads(line)
            if not isinstance(message, dict):
                raise ValueError("request is not a JSON object")
        except (json.JSONDecodeError, ValueError) as exc:
            emit({"type": "error", "message": f"malformed request: {exc}"})
            continue
        kind = message.get("type")
        if kind == "end":
            emit({"type": "end"})
            return
        if kind != "label":
            emit({"type": "error", "message": f"unexpected type {kind!r}"})
            continue
        try:
            pixels = decode_pixels(message)
            ((word, probs),) = model.predict([pixels])
        except Exception as exc:  # answer and keep serving
            emit({"type": "error", "message": str(exc)})
            continue
        emit({"type": "result", "id": message.get("id"), "word": word, "probs": probs})
