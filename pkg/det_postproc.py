"""Detections, top-k truncation, greedy NMS and the detection-head shape."""
import math
from dataclasses import dataclass
from typing import List, Tuple

from det_geometry import BBox, iou

DEFAULT_NMS_THRESH = 0.45
DEFAULT_TOPK = 400
ANCHORS_PER_CELL = 3
BOX_VALUES = 4
OBJECTNESS_VALUES = 1


class InvalidDetectionError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    label: str
    confidence: float
    box: BBox

    def __post_init__(self):
        if not self.label or any(c.isspace() for c in self.label):
            raise InvalidDetectionError(f"label must be a non-empty word, got {self.label!r}")
        if not (math.isfinite(self.confidence) and 0.0 <= self.confidence <= 1.0):
            raise InvalidDetectionError(f"confidence out of range: {self.confidence}")

    def to_line(self) -> str:
        b = self.box
        return (f"{self.label} {self.confidence:.3f} "
                f"{b.left:.2f} {b.top:.2f} {b.right:.2f} {b.bottom:.2f}")


@dataclass(frozen=True)
class NmsConfig:
    nms_thresh: float = DEFAULT_NMS_THRESH
    topk: int = DEFAULT_TOPK
    class_agnostic: bool = False

    def __post_init__(self):
        if not 0.0 < self.nms_thresh <= 1.0:
            raise InvalidDetectionError(f"thresh must be in (0,1], got {self.nms_thresh}")
        if self.topk < 1:
            raise InvalidDetectionError(f"topk must be a positive integer, got {self.topk}")


@dataclass(frozen=True)
class HeadShape:
    grid_n: int
    num_classes_m: int
    anchors_per_cell: int
    channels: int

    @property
    def cells(self) -> int:
        return self.grid_n * self.grid_n

    def as_tuple(self) -> Tuple[int, int, int]:
        return (self.grid_n, self.grid_n, self.channels)


def head_output_shape(n: int, m: int) -> HeadShape:
    """
    Output shape N x N x [3 * (4 + 1 + M)] of one detection head: three
    anchors per cell, each predicting four box offsets, one objectness score
    and M class scores.
    """
    if n < 1:
        raise ValueError(f"grid size must be >= 1, got {n}")
    if m < 1:
        raise ValueError(f"number of classes must be >= 1, got {m}")
    channels = ANCHORS_PER_CELL * (BOX_VALUES + OBJECTNESS_VALUES + m)
    return HeadShape(grid_n=n, num_classes_m=m, anchors_per_cell=ANCHORS_PER_CELL, channels=channels)


def topk_filter(dets: List[Detection], k: int) -> List[Detection]:
    """The k most confident detections; equal confidences keep input order."""
    if k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")
    return sorted(dets, key=lambda d: -d.confidence)[:k]


def nms(dets: List[Detection], cfg: NmsConfig = NmsConfig()) -> List[Detection]:
    """
    Greedy non-maximum suppression after top-k truncation.

    Walking candidates by falling confidence, a detection is kept unless a
    kept detection of the same label (any label when class_agnostic) overlaps
    it with IoU strictly above the threshold.
    """
    kept: List[Detection] = []
    for candidate in topk_filter(dets, cfg.topk):
        suppressed = any(
            (cfg.class_agnostic or k.label == candidate.label)
            and iou(k.box, candidate.box) > cfg.nms_thresh
            for k in kept
        )
        if not suppressed:
            kept.append(candidate)
    return kept
