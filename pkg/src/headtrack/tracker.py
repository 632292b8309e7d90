"""Tracking-by-detection: constant-velocity Kalman filtering, minimum-cost
association, SORT-style single-stage and Byte-style two-stage matching, with
optional appearance (ReID) gating on consumed embeddings.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import BBox, iou
from .motio import AnnotationRecord

REID_IOU_WEIGHT = 0.98  # blend of IoU vs. cosine cost in sort_reid mode
FORBIDDEN_COST = 1e6


class TrackerError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    score: float
    embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise TrackerError("detection score must be finite")
        if self.embedding is not None:
            emb = np.asarray(self.embedding, dtype=np.float64)
            if abs(np.linalg.norm(emb) - 1.0) > 1e-6:
                raise TrackerError("embedding must be unit-norm")
            object.__setattr__(self, "embedding", emb)


class TrackStatus(Enum):
    tentative = "tentative"
    confirmed = "confirmed"
    lost = "lost"
    removed = "removed"


class Mode(Enum):
    sort = "sort"
    byte = "byte"
    sort_reid = "sort_reid"


@dataclass
class TrackerConfig:
    high_score_thresh: float = 0.6
    low_score_thresh: float = 0.1
    iou_gate: float = 0.3
    max_age: int = 30
    n_init: int = 3
    mode: Mode = Mode.sort
    embedding_gate: float = 0.4  # cosine distance cap in sort_reid mode

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = Mode(self.mode)
        if not (0 <= self.low_score_thresh < self.high_score_thresh <= 1):
            raise TrackerError("need 0 <= low < high <= 1")
        if not (0 < self.iou_gate < 1):
            raise TrackerError("iou_gate must be in (0, 1)")
        if self.max_age < 1 or self.n_init < 1:
            raise TrackerError("max_age and n_init must be >= 1")


def _bbox_to_z(b: BBox) -> np.ndarray:
    cx, cy = b.center
    return np.array([cx, cy, b.width / b.height, b.height])


def _z_to_bbox(z: np.ndarray) -> BBox:
    h = max(z[3], 1e-6)
    w = max(z[2] * h, 1e-6)
    return BBox(z[0] - w / 2.0, z[1] - h / 2.0, w, h)


class KalmanModel:
    """Constant-velocity filter on (cx, cy, aspect, height) + velocities.

    Noise scales are proportional to the box height, following the
    SORT/DeepSORT convention. F, Q, R can be overridden for testing.
    """

    STD_POS = 1.0 / 20.0
    STD_VEL = 1.0 / 160.0

    def __init__(self, F: np.ndarray | None = None,
                 Q: np.ndarray | None = None, R: np.ndarray | None = None):
        self.F = np.eye(8) if F is None else np.asarray(F, dtype=np.float64)
        if F is None:
            self.F[:4, 4:] = np.eye(4)
        self.H = np.eye(4, 8)
        self.Q = Q if Q is None else np.asarray(Q, dtype=np.float64)
        self.R = R if R is None else np.asarray(R, dtype=np.float64)

    def initiate(self, b: BBox) -> tuple[np.ndarray, np.ndarray]:
        mean = np.zeros(8)
        mean[:4] = _bbox_to_z(b)
        h = b.height
        std = [2 * self.STD_POS * h, 2 * self.STD_POS * h, 1e-2, 2 * self.STD_POS * h,
               10 * self.STD_VEL * h, 10 * self.STD_VEL * h, 1e-5, 10 * self.STD_VEL * h]
        return mean, np.diag(np.square(std))

    def _process_noise(self, h: float) -> np.ndarray:
        if self.Q is not None:
            return self.Q
        std = [self.STD_POS * h, self.STD_POS * h, 1e-2, self.STD_POS * h,
               self.STD_VEL * h, self.STD_VEL * h, 1e-5, self.STD_VEL * h]
        return np.diag(np.square(std))

    def _obs_noise(self, h: float) -> np.ndarray:
        if self.R is not None:
            return self.R
        std = [self.STD_POS * h, self.STD_POS * h, 1e-1, self.STD_POS * h]
        return np.diag(np.square(std))

    def predict(self, mean: np.ndarray, cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mean = self.F @ mean
        cov = self.F @ cov @ self.F.T + self._process_noise(mean[3])
        return mean, (cov + cov.T) / 2.0

    def update(self, mean: np.ndarray, cov: np.ndarray,
               measurement: BBox) -> tuple[np.ndarray, np.ndarray]:
        z = _bbox_to_z(measurement)
        R = self._obs_noise(mean[3])
        S = self.H @ cov @ self.H.T + R
        try:
            K = np.linalg.solve(S.T, (cov @ self.H.T).T).T
        except np.linalg.LinAlgError as e:
            raise TrackerError(f"singular innovation covariance: {e}") from None
        mean = mean + K @ (z - self.H @ mean)
        ikh = np.eye(8) - K @ self.H
        cov = ikh @ cov @ ikh.T + K @ R @ K.T  # Joseph form keeps PSD
        return mean, (cov + cov.T) / 2.0


@dataclass
class TrackState:
    track_id: int
    mean: np.ndarray
    cov: np.ndarray
    status: TrackStatus = TrackStatus.tentative
    hits: int = 1
    time_since_update: int = 0
    embedding: Optional[np.ndarray] = None
    last_detection: Optional[Detection] = None

    @property
    def bbox(self) -> BBox:
        return _z_to_bbox(self.mean[:4])


class Assignment(NamedTuple):
    matches: list[tuple[int, int]]      # (track index, detection index)
    unmatched_tracks: list[int]
    unmatched_dets: list[int]


def hungarian(cost: np.ndarray) -> Assignment:
    """Minimum-cost assignment on a (possibly rectangular) finite cost matrix."""
    cost = np.atleast_2d(np.asarray(cost, dtype=np.float64))
    if cost.size and not np.all(np.isfinite(cost)):
        raise TrackerError("cost matrix must be finite")
    if 0 in cost.shape:
        return Assignment([], list(range(cost.shape[0])), list(range(cost.shape[1])))
    rows, cols = linear_sum_assignment(cost)
    matches = sorted(zip(rows.tolist(), cols.tolist()))
    return Assignment(matches,
                      [r for r in range(cost.shape[0]) if r not in set(rows)],
                      [c for c in range(cost.shape[1]) if c not in set(cols)])


def _cost_matrix(tracks: Sequence[TrackState], dets: Sequence[Detection],
                 cfg: TrackerConfig) -> np.ndarray:
    cost = np.zeros((len(tracks), len(dets)))
    for ti, t in enumerate(tracks):
        tb = t.bbox
        for di, d in enumerate(dets):
            c = 1.0 - iou(tb, d.bbox)
            if (cfg.mode is Mode.sort_reid and t.embedding is not None
                    and d.embedding is not None):
                cos_dist = 1.0 - float(t.embedding @ d.embedding)
                if cos_dist > cfg.embedding_gate:
                    c = FORBIDDEN_COST
                else:
                    c = REID_IOU_WEIGHT * c + (1.0 - REID_IOU_WEIGHT) * cos_dist
            cost[ti, di] = c
    return cost


def associate(tracks: Sequence[TrackState], dets: Sequence[Detection],
              cfg: TrackerConfig) -> Assignment:
    """Hungarian on 1 - IoU; assigned pairs below the IoU gate are unmatched."""
    cost = _cost_matrix(tracks, dets, cfg)
    result = hungarian(cost)
    matches, um_t, um_d = [], list(result.unmatched_tracks), list(result.unmatched_dets)
    for ti, di in result.matches:
        if cost[ti, di] >= FORBIDDEN_COST or iou(tracks[ti].bbox, dets[di].bbox) < cfg.iou_gate:
            um_t.append(ti)
            um_d.append(di)
        else:
            matches.append((ti, di))
    return Assignment(matches, sorted(um_t), sorted(um_d))


def byte_associate(tracks: Sequence[TrackState], dets: Sequence[Detection],
                   cfg: TrackerConfig) -> Assignment:
    """Two-stage association: high-score detections first, then the low-score
    band against the remaining tracks. Detections below the low threshold are
    discarded; only leftover high-score detections may spawn tracks.
    """
    high_idx = [i for i, d in enumerate(dets) if d.score >= cfg.high_score_thresh]
    low_idx = [i for i, d in enumerate(dets)
               if cfg.low_score_thresh <= d.score < cfg.high_score_thresh]
    stage1 = associate(tracks, [dets[i] for i in high_idx], cfg)
    matches = [(ti, high_idx[di]) for ti, di in stage1.matches]
    remaining = stage1.unmatched_tracks
    stage2 = associate([tracks[i] for i in remaining], [dets[i] for i in low_idx], cfg)
    matches += [(remaining[ti], low_idx[di]) for ti, di in stage2.matches]
    unmatched_tracks = [remaining[i] for i in stage2.unmatched_tracks]
    spawnable = [high_idx[i] for i in stage1.unmatched_dets]
    return Assignment(sorted(matches), sorted(unmatched_tracks), sorted(spawnable))


class TrackOutput(NamedTuple):
    frame: int
    track_id: int
    bbox: BBox
    score: float


class Tracker:
    """Single-sequence tracker; step() must be called with increasing frames."""

    def __init__(self, cfg: TrackerConfig | None = None,
                 kalman: KalmanModel | None = None):
        self.cfg = cfg or TrackerConfig()
        self.kalman = kalman or KalmanModel()
        self.tracks: list[TrackState] = []
        self._next_id = 1
        self._last_frame = 0

    def _spawn(self, det: Detection) -> None:
        mean, cov = self.kalman.initiate(det.bbox)
        self.tracks.append(TrackState(self._next_id, mean, cov,
                                      embedding=det.embedding, last_detection=det))
        self._next_id += 1

    def step(self, frame: int, detections: Sequence[Detection]) -> list[TrackOutput]:
        """Predict, associate, update, and run the track lifecycle for one frame.

        Returns (frame, track_id, bbox) outputs for tracks matched this frame
        that are confirmed (or still inside the initial n_init warm-up frames).
        """
        if frame <= self._last_frame:
            raise TrackerError(f"out-of-order frame {frame} (last {self._last_frame})")
        self._last_frame = frame

        for t in self.tracks:
            t.mean, t.cov = self.kalman.predict(t.mean, t.cov)
            if not np.all(np.isfinite(t.mean)):
                t.status = TrackStatus.removed
        self.tracks = [t for t in self.tracks if t.status is not TrackStatus.removed]

        if self.cfg.mode is Mode.byte:
            result = byte_associate(self.tracks, detections, self.cfg)
        else:
            keep = [i for i, d in enumerate(detections)
                    if d.score >= self.cfg.high_score_thresh]
            sub = associate(self.tracks, [detections[i] for i in keep], self.cfg)
            result = Assignment([(ti, keep[di]) for ti, di in sub.matches],
                                sub.unmatched_tracks,
                                [keep[i] for i in sub.unmatched_dets])

        outputs: list[TrackOutput] = []
        for ti, di in result.matches:
            t, d = self.tracks[ti], detections[di]
            t.mean, t.cov = self.kalman.update(t.mean, t.cov, d.bbox)
            t.hits += 1
            t.time_since_update = 0
            t.last_detection = d
            if d.embedding is not None:
                e = d.embedding if t.embedding is None else 0.9 * t.embedding + 0.1 * d.embedding
                t.embedding = e / np.linalg.norm(e)
            if t.status is TrackStatus.tentative and t.hits >= self.cfg.n_init:
                t.status = TrackStatus.confirmed
            elif t.status is TrackStatus.lost:
                t.status = TrackStatus.confirmed
            if t.status is TrackStatus.confirmed or frame <= self.cfg.n_init:
                outputs.append(TrackOutput(frame, t.track_id, d.bbox, d.score))

        for ti in result.unmatched_tracks:
            t = self.tracks[ti]
            t.time_since_update += 1
            if t.status is TrackStatus.tentative:
                t.status = TrackStatus.removed
            elif t.status is TrackStatus.confirmed:
                t.status = TrackStatus.lost
            if t.status is TrackStatus.lost and t.time_since_update > self.cfg.max_age:
                t.status = TrackStatus.removed

        for di in result.unmatched_dets:
            self._spawn(detections[di])
            t = self.tracks[-1]
            if frame <= self.cfg.n_init:  # warm-up: emit fresh tracks too
                outputs.append(TrackOutput(frame, t.track_id,
                                           detections[di].bbox, detections[di].score))

        self.tracks = [t for t in self.tracks if t.status is not TrackStatus.removed]
        return sorted(outputs, key=lambda o: o.track_id)


def run_tracker(frames: dict[int, list[Detection]],
                cfg: TrackerConfig | None = None) -> list[TrackOutput]:
    """Track a whole sequence given per-frame detections keyed by frame index."""
    tracker = Tracker(cfg)
    out: list[TrackOutput] = []
    for frame in sorted(frames):
        out.extend(tracker.step(frame, frames[frame]))
    return out


def outputs_to_records(outputs: list[TrackOutput]) -> list[AnnotationRecord]:
    """Serialize tracker outputs as annotation records (category 1, full visibility)."""
    return [AnnotationRecord(o.frame, o.track_id, o.bbox,
                             confidence=o.score, category=1, visibility=1.0)
            for o in outputs]
