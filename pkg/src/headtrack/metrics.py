"""CLEAR-MOT, identity metrics, track-quality counts, and AP50.

Per-frame matching is persistent: pairs matched in the previous frame are
kept while their IoU stays above the threshold, the rest go through a
minimum-cost assignment gated at the threshold. An ID switch is counted when
a ground-truth identity's matched prediction differs from its last-ever
matched prediction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import BBox, iou
from .motio import AnnotationRecord
from .tracker import hungarian

DEFAULT_IOU_THRESHOLD = 0.5
MT_COVERAGE = 0.8
ML_COVERAGE = 0.2


class MetricsError(ValueError):
    pass


@dataclass
class EvalAccumulator:
    """Running per-frame matching state for one sequence."""

    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    tp: int = 0
    fp: int = 0
    fn: int = 0
    idsw: int = 0
    total_gt: int = 0
    total_pred: int = 0
    gt_frames: dict[int, int] = field(default_factory=dict)   # gt id -> frames present
    gt_matched: dict[int, int] = field(default_factory=dict)  # gt id -> frames matched
    prev_pairs: dict[int, int] = field(default_factory=dict)  # matches in previous frame
    last_match: dict[int, int] = field(default_factory=dict)  # last-ever matched pred id

    def coverage(self) -> dict[int, float]:
        return {g: self.gt_matched.get(g, 0) / n for g, n in self.gt_frames.items()}


def match_frame(gt: list[tuple[int, BBox]], pred: list[tuple[int, BBox]],
                acc: EvalAccumulator) -> dict[int, int]:
    """Match one frame's boxes and fold the result into the accumulator.

    gt and pred are (id, bbox) lists. Returns the gt_id -> pred_id matching.
    """
    gt_ids = [g for g, _ in gt]
    pred_ids = [p for p, _ in pred]
    if len(set(gt_ids)) != len(gt_ids) or len(set(pred_ids)) != len(pred_ids):
        raise MetricsError("duplicate ids within a frame")
    gt_boxes = dict(gt)
    pred_boxes = dict(pred)
    thr = acc.iou_threshold

    pairs: dict[int, int] = {}
    for g, p in acc.prev_pairs.items():
        if g in gt_boxes and p in pred_boxes and iou(gt_boxes[g], pred_boxes[p]) >= thr:
            pairs[g] = p

    free_gt = [g for g in gt_ids if g not in pairs]
    used_pred = set(pairs.values())
    free_pred = [p for p in pred_ids if p not in used_pred]
    if free_gt and free_pred:
        cost = np.ones((len(free_gt), len(free_pred)))
        for i, g in enumerate(free_gt):
            for j, p in enumerate(free_pred):
                cost[i, j] = 1.0 - iou(gt_boxes[g], pred_boxes[p])
        for i, j in hungarian(cost).matches:
            if cost[i, j] <= 1.0 - thr:
                pairs[free_gt[i]] = free_pred[j]

    for g, p in pairs.items():
        if g in acc.last_match and acc.last_match[g] != p:
            acc.idsw += 1
        acc.last_match[g] = p
        acc.gt_matched[g] = acc.gt_matched.get(g, 0) + 1
    for g in gt_ids:
        acc.gt_frames[g] = acc.gt_frames.get(g, 0) + 1

    acc.tp += len(pairs)
    acc.fn += len(gt_ids) - len(pairs)
    acc.fp += len(pred_ids) - len(pairs)
    acc.total_gt += len(gt_ids)
    acc.total_pred += len(pred_ids)
    acc.prev_pairs = dict(pairs)
    return pairs


def clearmot(acc: EvalAccumulator) -> dict[str, float]:
    """MOTA, recall, precision, and the raw counts they derive from."""
    if acc.total_gt == 0:
        raise MetricsError("no ground-truth boxes")
    prcn = acc.tp / acc.total_pred if acc.total_pred else 0.0
    return {
        "MOTA": 1.0 - (acc.fn + acc.fp + acc.idsw) / acc.total_gt,
        "Rcll": acc.tp / acc.total_gt,
        "Prcn": prcn,
        "IDs": acc.idsw,
        "FP": acc.fp,
        "FN": acc.fn,
    }


def track_quality(coverage: dict[int, float]) -> tuple[int, int, int]:
    """(MT, PT, ML): mostly tracked >= 0.8 coverage, mostly lost <= 0.2."""
    mt = sum(1 for c in coverage.values() if c >= MT_COVERAGE)
    ml = sum(1 for c in coverage.values() if c <= ML_COVERAGE)
    return mt, len(coverage) - mt - ml, ml


def _trajectories(records: list[AnnotationRecord]) -> dict[int, dict[int, BBox]]:
    out: dict[int, dict[int, BBox]] = {}
    for r in records:
        out.setdefault(r.track_id, {})[r.frame] = r.bbox
    return out


def _id_counts(gt: list[AnnotationRecord], pred: list[AnnotationRecord],
               iou_threshold: float) -> tuple[int, int, int]:
    """(IDTP, IDFP, IDFN) from the optimal global trajectory pairing."""
    gt_traj = _trajectories(gt)
    pred_traj = _trajectories(pred)
    g_ids, p_ids = list(gt_traj), list(pred_traj)
    ng, np_ = len(g_ids), len(p_ids)
    total_gt, total_pred = len(gt), len(pred)

    overlap = np.zeros((ng, np_), dtype=np.int64)
    for i, g in enumerate(g_ids):
        for j, p in enumerate(p_ids):
            overlap[i, j] = sum(
                1 for f, gb in gt_traj[g].items()
                if f in pred_traj[p] and iou(gb, pred_traj[p][f]) >= iou_threshold)

    big = float(total_gt + total_pred + 1)
    n = ng + np_
    cost = np.full((n, n), big)
    for i, g in enumerate(g_ids):
        for j, p in enumerate(p_ids):
            cost[i, j] = len(gt_traj[g]) + len(pred_traj[p]) - 2 * overlap[i, j]
        cost[i, np_ + i] = len(gt_traj[g])     # leave this gt track unmatched
    for j, p in enumerate(p_ids):
        cost[ng + j, j] = len(pred_traj[p])    # leave this pred track unmatched
    cost[ng:, np_:] = 0.0

    idtp = 0
    for i, j in hungarian(cost).matches:
        if i < ng and j < np_:
            idtp += int(overlap[i, j])
    return idtp, total_pred - idtp, total_gt - idtp


def id_metrics(gt: list[AnnotationRecord], pred: list[AnnotationRecord],
               iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> dict[str, float]:
    idtp, idfp, idfn = _id_counts(gt, pred, iou_threshold)
    idf1 = 2 * idtp / (2 * idtp + idfp + idfn) if (idtp + idfp + idfn) else 1.0
    idp = idtp / (idtp + idfp) if (idtp + idfp) else 0.0
    idr = idtp / (idtp + idfn) if (idtp + idfn) else 0.0
    return {"IDF1": idf1, "IDP": idp, "IDR": idr,
            "IDTP": idtp, "IDFP": idfp, "IDFN": idfn}


def detection_ap(gt: dict[int, list[BBox]], preds: list[tuple[int, float, BBox]],
                 iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> float:
    """AP at the given IoU threshold with 101-point interpolation.

    gt maps frame -> boxes; preds are (frame, score, bbox) triples.
    """
    n_gt = sum(len(v) for v in gt.values())
    if n_gt == 0:
        raise MetricsError("empty ground truth")
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][1], preds[i][0], i))
    matched: dict[int, set[int]] = {f: set() for f in gt}
    tp_flags = []
    for i in order:
        frame, _, box = preds[i]
        best, best_j = 0.0, -1
        for j, gb in enumerate(gt.get(frame, [])):
            if j in matched.get(frame, set()):
                continue
            v = iou(box, gb)
            if v > best:
                best, best_j = v, j
        if best >= iou_threshold and best_j >= 0:
            matched[frame].add(best_j)
            tp_flags.append(1)
        else:
            tp_flags.append(0)
    tp_cum = np.cumsum(tp_flags)
    n = np.arange(1, len(tp_flags) + 1)
    precision = tp_cum / n if len(tp_flags) else np.array([])
    recall = tp_cum / n_gt if len(tp_flags) else np.array([])
    ap = 0.0
    for r in np.linspace(0.0, 1.0, 101):
        mask = recall >= r - 1e-12
        ap += precision[mask].max() if mask.any() else 0.0
    return ap / 101.0


@dataclass
class MotReport:
    """All Table-style metric columns for one sequence (or an aggregate)."""

    IDF1: float
    IDs: int
    IDP: float
    IDR: float
    MT: int
    PT: int
    ML: int
    Rcll: float
    Prcn: float
    MOTA: float
    FP: int
    FN: int

    COLUMNS = ("IDF1", "IDs", "IDP", "IDR", "MT", "PT", "ML", "Rcll", "Prcn", "MOTA")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in (*self.COLUMNS, "FP", "FN")}

    def to_json(self) -> str:
        return json.dumps(self.as_dict())

    def format_row(self, name: str = "") -> str:
        cells = []
        for k in self.COLUMNS:
            v = getattr(self, k)
            cells.append(f"{v:d}" if isinstance(v, int) else f"{100 * v:.2f}")
        return " ".join([f"{name:<16}"] + [f"{c:>8}" for c in cells])

    @staticmethod
    def header(label: str = "Sequence") -> str:
        return " ".join([f"{label:<16}"] + [f"{c:>8}" for c in MotReport.COLUMNS])


def evaluate(gt: list[AnnotationRecord], pred: list[AnnotationRecord],
             iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> MotReport:
    """Full sequence evaluation over the union of frames present in gt or pred."""
    acc = EvalAccumulator(iou_threshold=iou_threshold)
    by_frame_gt: dict[int, list[tuple[int, BBox]]] = {}
    by_frame_pred: dict[int, list[tuple[int, BBox]]] = {}
    for r in gt:
        by_frame_gt.setdefault(r.frame, []).append((r.track_id, r.bbox))
    for r in pred:
        by_frame_pred.setdefault(r.frame, []).append((r.track_id, r.bbox))
    for f in sorted(set(by_frame_gt) | set(by_frame_pred)):
        match_frame(by_frame_gt.get(f, []), by_frame_pred.get(f, []), acc)
    clear = clearmot(acc)
    mt, pt, ml = track_quality(acc.coverage())
    ids = id_metrics(gt, pred, iou_threshold)
    return MotReport(IDF1=ids["IDF1"], IDs=clear["IDs"], IDP=ids["IDP"], IDR=ids["IDR"],
                     MT=mt, PT=pt, ML=ml, Rcll=clear["Rcll"], Prcn=clear["Prcn"],
                     MOTA=clear["MOTA"], FP=clear["FP"], FN=clear["FN"])


def aggregate(per_sequence: list[tuple[list[AnnotationRecord], list[AnnotationRecord]]],
              iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> MotReport:
    """Boxes-weighted aggregate: raw counts are summed across sequences."""
    tp = fp = fn = idsw = total_gt = total_pred = 0
    idtp = idfp = idfn = 0
    mt = pt = ml = 0
    for gt, pred in per_sequence:
        acc = EvalAccumulator(iou_threshold=iou_threshold)
        by_f_gt: dict[int, list[tuple[int, BBox]]] = {}
        by_f_pred: dict[int, list[tuple[int, BBox]]] = {}
        for r in gt:
            by_f_gt.setdefault(r.frame, []).append((r.track_id, r.bbox))
        for r in pred:
            by_f_pred.setdefault(r.frame, []).append((r.track_id, r.bbox))
        for f in sorted(set(by_f_gt) | set(by_f_pred)):
            match_frame(by_f_gt.get(f, []), by_f_pred.get(f, []), acc)
        tp += acc.tp
        fp += acc.fp
        fn += acc.fn
        idsw += acc.idsw
        total_gt += acc.total_gt
        total_pred += acc.total_pred
        a, b, c = track_quality(acc.coverage())
        mt, pt, ml = mt + a, pt + b, ml + c
        ti, tf, tn = _id_counts(gt, pred, iou_threshold)
        idtp, idfp, idfn = idtp + ti, idfp + tf, idfn + tn
    if total_gt == 0:
        raise MetricsError("no ground-truth boxes")
    idf1 = 2 * idtp / (2 * idtp + idfp + idfn) if (idtp + idfp + idfn) else 1.0
    return MotReport(
        IDF1=idf1,
        IDs=idsw,
        IDP=idtp / (idtp + idfp) if (idtp + idfp) else 0.0,
        IDR=idtp / (idtp + idfn) if (idtp + idfn) else 0.0,
        MT=mt, PT=pt, ML=ml,
        Rcll=tp / total_gt,
        Prcn=tp / total_pred if total_pred else 0.0,
        MOTA=1.0 - (fn + fp + idsw) / total_gt,
        FP=fp, FN=fn)
