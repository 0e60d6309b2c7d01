"""Reference child process for :class:`shelfpipe.detector.ExternalExecutor`.

Runs the color-threshold detector on each request line::

    python -m shelfpipe.worker --empty-color 24,24,28
"""

from __future__ import annotations

import argparse
import json
import sys

from . import ppm
from .detector import color_threshold_detect, encode_response
from .synthgen import EMPTY_COLOR


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="python -m shelfpipe.worker")
    ap.add_argument("--empty-color", default=",".join(map(str, EMPTY_COLOR)))
    ap.add_argument("--tol", type=int, default=0)
    args = ap.parse_args(argv)
    color = tuple(int(c) for c in args.empty_color.split(","))
    for line in sys.stdin:
        if not line.strip():
            continue
        req = json.loads(line)
        try:
            dets = color_threshold_detect(ppm.from_b64(req["pixels"]), color, args.tol)
        except ppm.DecodeError:
            dets = []
        sys.stdout.write(encode_response(req["image_id"], dets) + "\n")
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
