"""Trajectory-control metrics: mIoU, AP50, coverage and centroid distance.

Detections come from an external open-vocabulary detector and are read
from a JSON-lines file; ground truth is the interpolated bbox track of
each scene layer. All boxes are normalized ``[x0, y0, x1, y1]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from layervid.scene import BBoxTrack, Box, SceneError, SceneSpec

IOU_THRESHOLD = 0.5


class DetectionFormatError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Detection:
    box: Box
    confidence: float


@dataclass
class DetectionTrack:
    """Best detection (or ``None``) for each frame of one object in one video."""

    frames: list[Optional[Detection]]
    video: str = "0"
    object_id: int = 1

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def detected(self) -> int:
        return sum(d is not None for d in self.frames)


@dataclass
class MetricsReport:
    miou: float
    ap50: float
    coverage: float
    cd: Optional[float]
    per_object: list[dict] = field(default_factory=list)

    def to_document(self) -> dict:
        return {
            "miou": self.miou,
            "ap50": self.ap50,
            "coverage": self.coverage,
            "cd": self.cd,
            "per_object": self.per_object,
        }


def iou(a: Box, b: Box) -> float:
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def _check_lengths(pred: DetectionTrack, gt: BBoxTrack) -> None:
    if len(pred) != len(gt):
        raise ValueError(f"detection track has {len(pred)} frames, ground truth has {len(gt)}")


def miou_track(pred: DetectionTrack, gt: BBoxTrack, missing_iou: float = 0.0) -> float:
    """Mean IoU over all frames; a missing detection scores ``missing_iou``."""
    _check_lengths(pred, gt)
    scores = [missing_iou if d is None else iou(d.box, g) for d, g in zip(pred.frames, gt.boxes)]
    return float(np.mean(scores))


def centroid_distance(pred: DetectionTrack, gt: BBoxTrack) -> Optional[float]:
    """Mean centre distance over frames that have a detection, else ``None``."""
    _check_lengths(pred, gt)
    dists = [
        math.dist(d.box.center, g.center) for d, g in zip(pred.frames, gt.boxes) if d is not None
    ]
    return float(np.mean(dists)) if dists else None


def video_covered(tracks: Sequence[DetectionTrack]) -> bool:
    # strictly more than half the frames, for every object in the video
    return all(2 * tr.detected > len(tr) for tr in tracks)


def coverage(videos: Sequence[Sequence[DetectionTrack]]) -> float:
    """Fraction of videos in which every object is detected in most frames."""
    if not videos:
        raise ValueError("coverage needs at least one video")
    return sum(video_covered(v) for v in videos) / len(videos)


def average_precision(scored: Sequence[tuple[float, bool]], n_positives: int) -> float:
    """All-point interpolated AP of ``(confidence, is_true_positive)`` pairs."""
    if n_positives <= 0 or not scored:
        return 0.0
    order = sorted(range(len(scored)), key=lambda i: -scored[i][0])
    tp = np.array([scored[i][1] for i in order], dtype=float)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / n_positives
    precision = ctp / (ctp + cfp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def ap50(preds: Sequence[DetectionTrack], gts: Sequence[BBoxTrack]) -> float:
    """AP at IoU 0.5 pooled over every frame of every (video, object) pair.

    Each ground-truth frame holds one box, and a track carries at most one
    detection per frame, so a detection is a true positive exactly when
    its IoU with that frame's box reaches the threshold.
    """
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} detection tracks paired with {len(gts)} ground-truth tracks")
    scored: list[tuple[float, bool]] = []
    n_pos = 0
    for pred, gt in zip(preds, gts):
        _check_lengths(pred, gt)
        n_pos += len(gt)
        matched = set()
        for i, (d, g) in enumerate(zip(pred.frames, gt.boxes)):
            if d is None:
                continue
            hit = iou(d.box, g) >= IOU_THRESHOLD and i not in matched
            if hit:
                matched.add(i)
            scored.append((d.confidence, hit))
    return average_precision(scored, n_pos)


# -------------------------------------------------------------- ingestion


@dataclass(frozen=True)
class DetectionRecord:
    video: str
    object: int | str
    frame: int
    box: Box
    confidence: float
    line: int = 0


def parse_detection_line(text: str, line: int) -> DetectionRecord:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DetectionFormatError(line, f"invalid JSON ({exc.msg})") from None
    if not isinstance(rec, Mapping):
        raise DetectionFormatError(line, "record must be an object")
    missing = [k for k in ("video", "object", "frame", "box", "confidence") if k not in rec]
    if missing:
        raise DetectionFormatError(line, f"missing field {missing[0]!r}")
    frame = rec["frame"]
    if isinstance(frame, bool) or not isinstance(frame, int):
        raise DetectionFormatError(line, "frame must be an integer")
    obj = rec["object"]
    if isinstance(obj, bool) or not isinstance(obj, (int, str)):
        raise DetectionFormatError(line, "object must be a layer number or prompt")
    conf = rec["confidence"]
    if isinstance(conf, bool) or not isinstance(conf, (int, float)) or not 0.0 <= conf <= 1.0:
        raise DetectionFormatError(line, "confidence must be a number in [0, 1]")
    try:
        box = Box.from_seq(rec["box"])
    except (SceneError, TypeError, ValueError) as exc:
        raise DetectionFormatError(line, f"bad box: {exc}") from None
    return DetectionRecord(str(rec["video"]), obj, frame, box, float(conf), line)


def load_detections(path: str | Path) -> list[DetectionRecord]:
    records = []
    with open(path) as fh:
        for n, text in enumerate(fh, start=1):
            if text.strip():
                records.append(parse_detection_line(text, n))
    return records


def build_tracks(
    records: Iterable[DetectionRecord], gts: Sequence[BBoxTrack], prompts: Sequence[str] = ()
) -> dict[str, list[DetectionTrack]]:
    """Group detection records into per-video, per-object tracks.

    Objects are addressed by 1-based layer number or by layer prompt. When
    several records hit the same frame the most confident one is kept.
    Without any records a single empty video is assumed.
    """
    by_prompt = {p: i + 1 for i, p in enumerate(prompts)}
    videos: dict[str, list[DetectionTrack]] = {}

    def tracks_for(video: str) -> list[DetectionTrack]:
        if video not in videos:
            videos[video] = [DetectionTrack([None] * len(g), video, j + 1) for j, g in enumerate(gts)]
        return videos[video]

    for rec in records:
        obj = by_prompt.get(rec.object) if isinstance(rec.object, str) else rec.object
        if obj is None or not 1 <= obj <= len(gts):
            raise DetectionFormatError(rec.line, f"unknown object {rec.object!r}")
        track = tracks_for(rec.video)[obj - 1]
        if not 1 <= rec.frame <= len(track):
            raise DetectionFormatError(rec.line, f"frame {rec.frame} outside [1, {len(track)}]")
        cur = track.frames[rec.frame - 1]
        if cur is None or rec.confidence > cur.confidence:
            track.frames[rec.frame - 1] = Detection(rec.box, rec.confidence)
    if not videos:
        tracks_for("0")
    return dict(sorted(videos.items()))


def evaluate(
    videos: Mapping[str, Sequence[DetectionTrack]],
    gts: Sequence[BBoxTrack],
    missing_iou: float = 0.0,
) -> MetricsReport:
    """Aggregate the four trajectory metrics over every video and object."""
    if not gts:
        raise ValueError("nothing to evaluate: the scene has no foreground layers")
    preds, pairs, per_object = [], [], []
    for video, tracks in videos.items():
        for tr, gt in zip(tracks, gts, strict=True):
            preds.append(tr)
            pairs.append(gt)
            per_object.append(
                {
                    "video": video,
                    "object": tr.object_id,
                    "miou": miou_track(tr, gt, missing_iou),
                    "cd": centroid_distance(tr, gt),
                    "detected_frames": tr.detected,
                    "frames": len(tr),
                }
            )
    mious = [o["miou"] for o in per_object]
    cds = [o["cd"] for o in per_object if o["cd"] is not None]
    return MetricsReport(
        miou=float(np.mean(mious)),
        ap50=ap50(preds, pairs),
        coverage=coverage(list(videos.values())),
        cd=float(np.mean(cds)) if cds else None,
        per_object=per_object,
    )


def evaluate_scene(
    records: Iterable[DetectionRecord], scene: SceneSpec, missing_iou: float = 0.0
) -> MetricsReport:
    gts = scene.tracks()
    videos = build_tracks(records, gts, [layer.prompt for layer in scene.layers])
    return evaluate(videos, gts, missing_iou)
