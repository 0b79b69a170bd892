"""Stable BCE with logits, the GIoU box loss and the three-part loss breakdown."""
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from det_geometry import BBox, InvalidBoxError, giou


class LossInputError(ValueError):
    pass


BoxTerm = Tuple[BBox, BBox]
LogitTerm = Tuple[float, float]


@dataclass(frozen=True)
class LossBreakdown:
    l_box: float
    l_obj: float
    l_cls: float
    total: float

    @classmethod
    def from_parts(cls, l_box: float, l_obj: float, l_cls: float) -> "LossBreakdown":
        return cls(l_box=l_box, l_obj=l_obj, l_cls=l_cls, total=l_box + l_obj + l_cls)


def _check_target(z: float):
    if not 0.0 <= z <= 1.0:
        raise LossInputError(f"target must be in [0, 1], got {z}")


def bce_with_logits(x: float, z: float) -> float:
    """
    Binary cross-entropy computed from a logit.

    Uses max(x, 0) - x * z + log(1 + exp(-|x|)), which never exponentiates a
    positive number and so stays finite for any finite logit.

    Raises:
        LossInputError: If z is outside [0, 1] or x is not finite
    """
    _check_target(z)
    if not math.isfinite(x):
        raise LossInputError(f"logit must be finite, got {x}")
    return max(x, 0.0) - x * z + math.log1p(math.exp(-abs(x)))


def bce_with_logits_batch(x, z) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if np.any((z < 0) | (z > 1)):
        raise LossInputError("targets must be in [0, 1]")
    if not np.all(np.isfinite(x)):
        raise LossInputError("logits must be finite")
    return np.clip(x, 0, None) - x * z + np.log1p(np.exp(-np.abs(x)))


def giou_loss(pred: BBox, target: BBox) -> float:
    return 1.0 - giou(pred, target)


def _mean(values) -> float:
    values = list(values)
    if not values:
        return 0.0
    # fsum is exactly rounded, so the mean does not depend on term order
    return math.fsum(values) / len(values)


def _mean_bce(terms: Sequence[LogitTerm]) -> float:
    if not terms:
        return 0.0
    x, z = zip(*terms)
    return _mean(bce_with_logits_batch(x, z).tolist())


def compose_loss(box_terms: Sequence[BoxTerm],
                 obj_terms: Sequence[LogitTerm],
                 cls_terms: Sequence[LogitTerm]) -> LossBreakdown:
    """Mean GIoU loss over box terms plus mean BCE over objectness and class terms."""
    l_box = _mean(giou_loss(pred, target) for pred, target in box_terms)
    return LossBreakdown.from_parts(l_box, _mean_bce(obj_terms), _mean_bce(cls_terms))


def parse_loss_terms(text: str) -> Tuple[List[BoxTerm], List[LogitTerm], List[LogitTerm]]:
    """
    Read loss terms, one per line.

    Lines look like ``box <pred l t r b> <target l t r b>``, ``obj <logit> <target>``
    or ``cls <logit> <target>``. Blank lines and ``#`` comments are skipped.

    Raises:
        LossInputError: On an unknown kind, wrong field count or bad number,
            with the line number in the message
    """
    box_terms: List[BoxTerm] = []
    obj_terms: List[LogitTerm] = []
    cls_terms: List[LogitTerm] = []
    expected = {'box': 9, 'obj': 3, 'cls': 3}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        kind = fields[0]
        if kind not in expected:
            raise LossInputError(f"line {lineno}: unknown term kind '{kind}'")
        if len(fields) != expected[kind]:
            raise LossInputError(
                f"line {lineno}: '{kind}' expects {expected[kind] - 1} numbers, "
                f"got {len(fields) - 1}")
        try:
            numbers = [float(v) for v in fields[1:]]
        except ValueError:
            raise LossInputError(f"line {lineno}: non-numeric field in '{line}'")

        try:
            if kind == 'box':
                box_terms.append((BBox(*numbers[:4]), BBox(*numbers[4:])))
            else:
                _check_target(numbers[1])
                (obj_terms if kind == 'obj' else cls_terms).append((numbers[0], numbers[1]))
        except (InvalidBoxError, LossInputError) as e:
            raise LossInputError(f"line {lineno}: {e}")

    return box_terms, obj_terms, cls_terms
