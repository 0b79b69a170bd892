"""Axis-aligned boxes and the overlap measures used by the losses and NMS."""
import math
from dataclasses import dataclass
from typing import Tuple


class InvalidBoxError(ValueError):
    pass


@dataclass(frozen=True)
class BBox:
    """Box in continuous pixel coordinates; zero-area boxes are allowed."""
    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self):
        coords = (self.left, self.top, self.right, self.bottom)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidBoxError(f"box coordinates must be finite: {coords}")
        if self.right < self.left:
            raise InvalidBoxError(f"box has right < left: {coords}")
        if self.bottom < self.top:
            raise InvalidBoxError(f"box has bottom < top: {coords}")

    @property
    def width(self) -> float:
        return self.right - self.left

    @property
    def height(self) -> float:
        return self.bottom - self.top

    def to_tuple(self) -> Tuple[float, float, float, float]:
        return (self.left, self.top, self.right, self.bottom)

    def translate(self, dx: float, dy: float) -> "BBox":
        return BBox(self.left + dx, self.top + dy, self.right + dx, self.bottom + dy)

    def scale(self, s: float) -> "BBox":
        if s <= 0:
            raise InvalidBoxError(f"scale factor must be positive, got {s}")
        return BBox(self.left * s, self.top * s, self.right * s, self.bottom * s)


@dataclass(frozen=True)
class OverlapReport:
    intersection_area: float
    union_area: float
    enclosing_area: float
    iou: float
    giou: float


def area(b: BBox) -> float:
    return (b.right - b.left) * (b.bottom - b.top)


def intersection_area(a: BBox, b: BBox) -> float:
    w = min(a.right, b.right) - max(a.left, b.left)
    h = min(a.bottom, b.bottom) - max(a.top, b.top)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def enclosing_box(a: BBox, b: BBox) -> BBox:
    """Smallest box containing both a and b."""
    return BBox(min(a.left, b.left), min(a.top, b.top),
                max(a.right, b.right), max(a.bottom, b.bottom))


def overlap_report(a: BBox, b: BBox) -> OverlapReport:
    """
    Compute every term of IoU and GIoU for a pair of boxes.

    IoU is 0 when the union is empty (two zero-area boxes). GIoU falls back
    to IoU when the enclosing box has zero area, as for two points or two
    segments on one line. Two parallel segments apart from each other have an
    empty union inside a non-empty enclosing box, so their GIoU is exactly -1.
    """
    inter = intersection_area(a, b)
    union = area(a) + area(b) - inter
    enclosing = area(enclosing_box(a, b))

    # clamps absorb rounding when one box contains the other
    iou_value = min(1.0, inter / union) if union > 0 else 0.0
    if enclosing > 0:
        giou_value = iou_value - max(0.0, enclosing - union) / enclosing
    else:
        giou_value = iou_value
    return OverlapReport(
        intersection_area=inter,
        union_area=union,
        enclosing_area=enclosing,
        iou=iou_value,
        giou=giou_value,
    )


def iou(a: BBox, b: BBox) -> float:
    return overlap_report(a, b).iou


def giou(a: BBox, b: BBox) -> float:
    return overlap_report(a, b).giou
