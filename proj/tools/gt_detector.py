#!/usr/bin/env python3
"""Reference external detector.

Speaks the line-delimited JSON protocol on stdin/stdout and answers every
request with the ground-truth cells intersecting the requested tile, in
patch-local coordinates. Useful as a protocol conformance stub and as a
template for wiring a real model process into `eiph run --detector external:`.

Usage: gt_detector.py ANNOTATIONS_JSONL
"""

import json
import sys


def load_cells(path):
    cells = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if "slide" in record:
                continue
            cells.append(record)
    return cells


def main():
    if len(sys.argv) != 2:
        print("usage: gt_detector.py ANNOTATIONS_JSONL", file=sys.stderr)
        return 2
    cells = load_cells(sys.argv[1])

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        req = json.loads(line)
        x, y, w, h = req["x"], req["y"], req["w"], req["h"]
        detections = []
        for cell in cells:
            if cell["x"] + cell["w"] <= x or cell["x"] >= x + w:
                continue
            if cell["y"] + cell["h"] <= y or cell["y"] >= y + h:
                continue
            probs = [0.0] * 5
            probs[cell["grade"]] = 1.0
            detections.append(
                {
                    "x": cell["x"] - x,
                    "y": cell["y"] - y,
                    "w": cell["w"],
                    "h": cell["h"],
                    "probs": probs,
                    "score": float(cell["grade"]),
                    "confidence": 1.0,
                }
            )
        print(json.dumps({"id": req["id"], "detections": detections}), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
