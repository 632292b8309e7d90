"""Walkthrough: the command-line surface, end to end in a temp directory.

Equivalent shell session:
    headtrack gen-scenario --seed 1 --out-gt gt.txt --out-dets dets.txt
    headtrack stats --ann gt.txt
    headtrack track --dets dets.txt --mode byte --out tracked.txt
    headtrack evaluate --gt gt.txt --pred tracked.txt
    headtrack resample --ann gt.txt --factor 2 --out half.txt
"""
import json
import tempfile
from pathlib import Path

from headtrack.cli import main

with tempfile.TemporaryDirectory() as tmp:
    d = Path(tmp)
    gt, dets = d / "gt.txt", d / "dets.txt"
    tracked, half = d / "tracked.txt", d / "half.txt"

    steps = [
        ["gen-scenario", "--seed", "1", "--out-gt", str(gt), "--out-dets", str(dets)],
        ["stats", "--ann", str(gt)],
        ["track", "--dets", str(dets), "--mode", "byte", "--out", str(tracked)],
        ["evaluate", "--gt", str(gt), "--pred", str(tracked)],
        ["resample", "--ann", str(gt), "--factor", "2", "--out", str(half)],
    ]
    for argv in steps:
        print(f"\n$ headtrack {' '.join(argv)}")
        code = main(argv)
        assert code == 0, f"exit code {code}"

    # every writing command leaves a JSON manifest next to its output
    manifest = json.loads((d / "tracked.txt.manifest.json").read_text())
    print(f"\nrun manifest for track: command={manifest['command']!r}, "
          f"version={manifest['version']}")
