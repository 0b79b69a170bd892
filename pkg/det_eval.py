"""Per-image detection files and the baseline-vs-improved confidence comparison."""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import pandas as pd

from det_geometry import BBox, InvalidBoxError
from det_netpbm import PathLike
from det_postproc import Detection, InvalidDetectionError

logger = logging.getLogger(__name__)

FIELDS = ('label', 'confidence', 'left', 'top', 'right', 'bottom')
CLAIMED_BAND = (0.01, 0.02)

# Whole-test-set reference figures; recomputing them needs the full test set and trained
# weights, so nothing here asserts against them.
REFERENCE_TEST_IMAGES = 689
REFERENCE_BASELINE_CONFIDENCE = 0.966
REFERENCE_IMPROVED_CONFIDENCE = 0.982


class DetectionParseError(ValueError):
    def __init__(self, message: str, line: int, source: str = ''):
        self.line = line
        self.reason = message
        prefix = f"{source} line {line}" if source else f"line {line}"
        super().__init__(f"{prefix}: {message}")


class EvaluationError(ValueError):
    pass


@dataclass
class DetectionFile:
    image_id: str
    detections: List[Detection] = field(default_factory=list)

    def to_text(self) -> str:
        return ''.join(d.to_line() + '\n' for d in self.detections)


@dataclass(frozen=True)
class ImageComparison:
    image_id: str
    baseline_mean_conf: Optional[float]
    improved_mean_conf: Optional[float]
    delta: Optional[float]
    baseline_count: int = 0
    improved_count: int = 0


@dataclass(frozen=True)
class LabelComparison:
    label: str
    baseline_mean_conf: Optional[float]
    improved_mean_conf: Optional[float]
    delta: Optional[float]


@dataclass
class ComparisonReport:
    per_image: List[ImageComparison]
    global_baseline_mean: float
    global_improved_mean: float
    global_delta: float
    matched_pairs: int
    unmatched: List[str] = field(default_factory=list)
    per_label: List[LabelComparison] = field(default_factory=list)


def write_detection_file(f: DetectionFile, out: PathLike):
    """Write one line per detection with LF endings; no detections gives an empty file."""
    Path(out).write_bytes(f.to_text().encode('utf-8'))


def parse_detection_file(text: str, image_id: str = '') -> DetectionFile:
    """
    Parse "Label Confidence Left Top Right Bottom" lines.

    Runs of spaces, blank lines and trailing whitespace are tolerated.

    Raises:
        DetectionParseError: On a wrong field count, a non-numeric field, a
            confidence outside [0, 1] or an inverted box
    """
    detections = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        fields = raw.split()
        if not fields:
            continue
        if len(fields) != len(FIELDS):
            raise DetectionParseError(f"expected {len(FIELDS)} fields, got {len(fields)}", lineno)
        label = fields[0]
        try:
            confidence, left, top, right, bottom = (float(v) for v in fields[1:])
        except ValueError:
            raise DetectionParseError(f"non-numeric field in '{raw.strip()}'", lineno)
        if not 0.0 <= confidence <= 1.0:
            raise DetectionParseError(f"confidence out of range: {fields[1]}", lineno)
        try:
            detections.append(Detection(label, confidence, BBox(left, top, right, bottom)))
        except (InvalidBoxError, InvalidDetectionError) as e:
            raise DetectionParseError(str(e), lineno)
    return DetectionFile(image_id=image_id, detections=detections)


def read_detection_file(path: PathLike) -> DetectionFile:
    path = Path(path)
    try:
        return parse_detection_file(path.read_text(encoding='utf-8'), image_id=path.stem)
    except DetectionParseError as e:
        raise DetectionParseError(e.reason, e.line, source=path.name)


def load_detection_dir(directory: PathLike) -> Dict[str, DetectionFile]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"detection directory not found: {directory}")
    files = {p.stem: read_detection_file(p) for p in sorted(directory.glob('*.txt'))}
    logger.info("Loaded %d detection file(s) from %s", len(files), directory)
    return files


def _confidence_frame(files: Dict[str, DetectionFile], stems: List[str]) -> pd.DataFrame:
    rows = [(stem, d.label, d.confidence) for stem in stems for d in files[stem].detections]
    return pd.DataFrame(rows, columns=['image_id', 'label', 'confidence'])


def _means(frame: pd.DataFrame, key: str) -> Dict[str, Tuple[float, int]]:
    if frame.empty:
        return {}
    grouped = frame.groupby(key, sort=True)['confidence'].agg(['mean', 'count'])
    return {str(k): (float(row['mean']), int(row['count'])) for k, row in grouped.iterrows()}


def _delta(baseline: Optional[float], improved: Optional[float]) -> Optional[float]:
    if baseline is None or improved is None:
        return None
    return improved - baseline


def compare_runs(baseline_dir: PathLike, improved_dir: PathLike) -> ComparisonReport:
    """
    Compare mean detection confidence between two runs over the same images.

    Images are matched by file stem; stems found in only one directory are
    listed as unmatched and left out of every mean. Global means weight each
    detection equally.

    Raises:
        EvaluationError: If no stems match, or the matched images hold no
            detections on one side
    """
    baseline = load_detection_dir(baseline_dir)
    improved = load_detection_dir(improved_dir)
    matched = sorted(set(baseline) & set(improved))
    unmatched = sorted(set(baseline) ^ set(improved))
    if not matched:
        raise EvaluationError("no matched pairs between the two detection directories")
    for stem in unmatched:
        logger.warning("Image %s has detections in only one run; excluded", stem)

    base_frame = _confidence_frame(baseline, matched)
    impr_frame = _confidence_frame(improved, matched)
    if base_frame.empty or impr_frame.empty:
        raise EvaluationError("matched images hold no detections in one of the runs")

    base_images, impr_images = _means(base_frame, 'image_id'), _means(impr_frame, 'image_id')
    per_image = []
    for stem in matched:
        b_mean, b_count = base_images.get(stem, (None, 0))
        i_mean, i_count = impr_images.get(stem, (None, 0))
        per_image.append(ImageComparison(stem, b_mean, i_mean, _delta(b_mean, i_mean), b_count, i_count))

    base_labels, impr_labels = _means(base_frame, 'label'), _means(impr_frame, 'label')
    per_label = []
    for label in sorted(set(base_labels) | set(impr_labels)):
        b_mean = base_labels.get(label, (None, 0))[0]
        i_mean = impr_labels.get(label, (None, 0))[0]
        per_label.append(LabelComparison(label, b_mean, i_mean, _delta(b_mean, i_mean)))

    global_baseline = float(base_frame['confidence'].mean())
    global_improved = float(impr_frame['confidence'].mean())
    return ComparisonReport(
        per_image=per_image,
        global_baseline_mean=global_baseline,
        global_improved_mean=global_improved,
        global_delta=global_improved - global_baseline,
        matched_pairs=len(matched),
        unmatched=unmatched,
        per_label=per_label,
    )


def within_claimed_band(delta: float, band: Tuple[float, float] = CLAIMED_BAND) -> bool:
    low, high = band
    return low <= delta <= high


def _fmt(value: Optional[float], signed: bool = False) -> str:
    if value is None:
        return '-'
    return f"{value:+.6f}" if signed else f"{value:.6f}"


def report_to_table(report: ComparisonReport) -> str:
    rows = [['image', 'baseline', 'improved', 'delta']]
    rows += [[c.image_id, _fmt(c.baseline_mean_conf), _fmt(c.improved_mean_conf), _fmt(c.delta, True)]
             for c in report.per_image]
    rows += [['[overall]', _fmt(report.global_baseline_mean), _fmt(report.global_improved_mean),
              _fmt(report.global_delta, True)]]
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = ['  '.join([r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])])
             for r in rows]
    for c in report.per_label:
        lines.append(f"label {c.label}: {_fmt(c.baseline_mean_conf)} -> "
                     f"{_fmt(c.improved_mean_conf)} ({_fmt(c.delta, True)})")
    lines.append(f"matched {report.matched_pairs}, unmatched {len(report.unmatched)}")
    band = 'inside' if within_claimed_band(report.global_delta) else 'outside'
    lines.append(f"delta {_fmt(report.global_delta, True)} is {band} the "
                 f"[{CLAIMED_BAND[0]}, {CLAIMED_BAND[1]}] improvement band")
    return '\n'.join(lines) + '\n'


def report_to_json_lines(report: ComparisonReport) -> str:
    lines = [json.dumps({
        'image_id': c.image_id,
        'baseline_mean_conf': c.baseline_mean_conf,
        'improved_mean_conf': c.improved_mean_conf,
        'delta': c.delta,
        'baseline_count': c.baseline_count,
        'improved_count': c.improved_count,
    }, sort_keys=True) for c in report.per_image]
    lines.append(json.dumps({
        'global_baseline_mean': report.global_baseline_mean,
        'global_improved_mean': report.global_improved_mean,
        'global_delta': report.global_delta,
        'matched_pairs': report.matched_pairs,
        'unmatched': report.unmatched,
        'within_claimed_band': within_claimed_band(report.global_delta),
    }, sort_keys=True))
    return '\n'.join(lines) + '\n'
