"""Minimal reference labeler worker for the wire protocol.

Declares a fixed vocabulary and answers every label request with a word
chosen by a trivial rule (first word, round-robin over ids, or the word
whose index matches the patch's mean intensity bucket).  Used as the
protocol conformance baseline and for exercising exec labelers end to end.

Run with:  python -m parcelsense.echo_worker --vocab a,b,c [--mode first]
"""

from __future__ import annotations

import argparse
import json
import sys

from .labeler import decode_patch_request


def serve(vocabulary: list[str], mode: str = "first") -> None:
    print(json.dumps({"type": "hello", "vocabulary": vocabulary}), flush=True)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            message = json.loads(line)
        except json.JSONDecodeError:
            print(json.dumps({"type": "error", "message": "invalid JSON"}), flush=True)
            continue
        kind = message.get("type")
        if kind == "end":
            print(json.dumps({"type": "end"}), flush=True)
            return
        if kind != "label":
            print(json.dumps({"type": "error", "message": f"unexpected type {kind!r}"}), flush=True)
            continue
        pixels = decode_patch_request(message)
        if mode == "roundrobin":
            word = vocabulary[message["id"] % len(vocabulary)]
        elif mode == "intensity":
            bucket = int(pixels.mean()) * len(vocabulary) // 256
            word = vocabulary[bucket]
        else:
            word = vocabulary[0]
        probs = [0.0] * len(vocabulary)
        probs[vocabulary.index(word)] = 1.0
        print(
            json.dumps({"type": "result", "id": message["id"], "word": word, "probs": probs}),
            flush=True,
        )


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="echo-stub labeler worker")
    parser.add_argument("--vocab", default="a", help="comma-separated vocabulary")
    parser.add_argument("--mode", choices=["first", "roundrobin", "intensity"], default="first")
    args = parser.parse_args(argv)
    serve([w for w in args.vocab.split(",") if w], mode=args.mode)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
