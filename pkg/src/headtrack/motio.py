"""Annotation file I/O, dataset statistics, and framerate resampling.

The on-disk format is one record per line, 9 comma-separated numeric fields.
Two field orders exist in the wild and both are supported:

  paper_order:    id, frame, left, top, width, height, conf, category, visibility
  standard_order: frame, id, left, top, width, height, conf, category, visibility

Numbers that are integral are written without a decimal point; fractional
values are written with fixed 2-decimal formatting, so write/parse round-trips
are exact on 2-decimal data.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator

from .geometry import BBox, aspect_ratio


class FieldOrder(Enum):
    paper_order = "paper_order"
    standard_order = "standard_order"


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotationRecord:
    frame: int
    track_id: int
    bbox: BBox
    confidence: float = 1.0
    category: int = 1
    visibility: float = 1.0

    def __post_init__(self):
        if self.frame < 1:
            raise AnnotationError(f"frame must be >= 1, got {self.frame}")
        if self.track_id < 1:
            raise AnnotationError(f"track_id must be >= 1, got {self.track_id}")


@dataclass(frozen=True)
class SequenceMeta:
    name: str
    fps: float
    frame_count: int
    resolution: tuple[int, int]
    view: str  # "slope" or "overhead"

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")
        if self.view not in ("slope", "overhead"):
            raise ValueError(f"view must be 'slope' or 'overhead', got {self.view!r}")


@dataclass
class DatasetStats:
    boxes: int
    frames: int
    density: float
    tracks: int
    ratio_histogram: dict[int, int] = field(default_factory=dict)  # bin index -> count, bin width 0.1
    _ratios: list[float] = field(default_factory=list, repr=False)

    def ratio_mass_in(self, lo: float, hi: float) -> float:
        """Fraction of boxes whose height/width ratio lies in [lo, hi]."""
        if not self._ratios:
            return 0.0
        n = sum(1 for r in self._ratios if lo <= r <= hi)
        return n / len(self._ratios)


def _format_number(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return f"{v:.2f}"


def parse_annotations(lines: Iterable[str],
                      order: FieldOrder = FieldOrder.paper_order) -> list[AnnotationRecord]:
    """Parse annotation lines into records, preserving file order.

    Raises AnnotationError with the 1-based line number on malformed input or
    on a duplicate (frame, track_id) pair.
    """
    records: list[AnnotationRecord] = []
    seen: set[tuple[int, int]] = set()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 9:
            raise AnnotationError(f"line {lineno}: expected 9 fields, got {len(fields)}")
        try:
            vals = [float(f) for f in fields]
        except ValueError as e:
            raise AnnotationError(f"line {lineno}: non-numeric field ({e})") from None
        if order is FieldOrder.paper_order:
            tid, frame = vals[0], vals[1]
        else:
            frame, tid = vals[0], vals[1]
        left, top, w, h, conf, cat, vis = vals[2:9]
        if frame != int(frame) or tid != int(tid):
            raise AnnotationError(f"line {lineno}: frame and id must be integers")
        key = (int(frame), int(tid))
        if key in seen:
            raise AnnotationError(f"line {lineno}: duplicate (frame, id) pair {key}")
        seen.add(key)
        try:
            rec = AnnotationRecord(int(frame), int(tid), BBox(left, top, w, h),
                                   conf, int(cat), vis)
        except ValueError as e:
            raise AnnotationError(f"line {lineno}: {e}") from None
        records.append(rec)
    return records


def write_annotations(records: Iterable[AnnotationRecord],
                      order: FieldOrder = FieldOrder.paper_order) -> Iterator[str]:
    """Yield one canonical text line (with trailing newline) per record."""
    for r in records:
        b = r.bbox
        if order is FieldOrder.paper_order:
            head = (r.track_id, r.frame)
        else:
            head = (r.frame, r.track_id)
        vals = (*head, b.left, b.top, b.width, b.height,
                r.confidence, r.category, r.visibility)
        yield ",".join(_format_number(float(v)) for v in vals) + "\n"


def read_annotation_file(path, order: FieldOrder = FieldOrder.paper_order) -> list[AnnotationRecord]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_annotations(f, order)


def write_annotation_file(path, records: Iterable[AnnotationRecord],
                          order: FieldOrder = FieldOrder.paper_order) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.writelines(write_annotations(records, order))


def compute_stats(records: list[AnnotationRecord], frame_count: int) -> DatasetStats:
    """Dataset statistics: box/track counts, per-frame density, ratio histogram."""
    max_frame = max((r.frame for r in records), default=1)
    if frame_count < max_frame:
        raise AnnotationError(
            f"frame_count {frame_count} below max frame index {max_frame}")
    ratios = [aspect_ratio(r.bbox) for r in records]
    # nudge by half an ulp-scale epsilon so ratios that are exact bin edges
    # in decimal (e.g. 1.2) land in the bin they name despite float rounding
    hist = Counter(int(math.floor(r * 10.0 + 1e-9)) for r in ratios)
    return DatasetStats(
        boxes=len(records),
        frames=frame_count,
        density=len(records) / frame_count,
        tracks=len({r.track_id for r in records}),
        ratio_histogram=dict(sorted(hist.items())),
        _ratios=ratios,
    )


def resample_framerate(records: list[AnnotationRecord], factor: int) -> list[AnnotationRecord]:
    """Keep every factor-th frame starting at frame 1 and renumber from 1.

    resample(resample(r, a), b) == resample(r, a*b); factor 1 is the identity.
    """
    if factor < 1:
        raise AnnotationError(f"resample factor must be >= 1, got {factor}")
    if factor == 1:
        return list(records)
    out = []
    for r in records:
        if (r.frame - 1) % factor == 0:
            out.append(AnnotationRecord((r.frame - 1) // factor + 1, r.track_id,
                                        r.bbox, r.confidence, r.category, r.visibility))
    return out


def split_frames(records: list[AnnotationRecord],
                 frame_count: int) -> tuple[list[AnnotationRecord], list[AnnotationRecord]]:
    """Per-sequence 1:1 frame split: first half of the frames is the train part."""
    cut = frame_count // 2
    train = [r for r in records if r.frame <= cut]
    test = [r for r in records if r.frame > cut]
    return train, test


def read_sequence_meta(path) -> SequenceMeta:
    """Read a key=value metadata file with keys name, fps, frames, width, height, view."""
    kv: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise AnnotationError(f"bad metadata line: {line!r}")
            k, v = line.split("=", 1)
            kv[k.strip()] = v.strip()
    try:
        return SequenceMeta(
            name=kv["name"],
            fps=float(kv["fps"]),
            frame_count=int(kv["frames"]),
            resolution=(int(kv["width"]), int(kv["height"])),
            view=kv["view"],
        )
    except KeyError as e:
        raise AnnotationError(f"missing metadata key {e}") from None


def write_sequence_meta(path, meta: SequenceMeta) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"name={meta.name}\n")
        f.write(f"fps={_format_number(meta.fps)}\n")
        f.write(f"frames={meta.frame_count}\n")
        f.write(f"width={meta.resolution[0]}\n")
        f.write(f"height={meta.resolution[1]}\n")
        f.write(f"view={meta.view}\n")
