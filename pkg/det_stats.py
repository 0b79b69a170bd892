"""VOC-style annotation parsing and the per-class dataset statistics."""
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional
from xml.etree import ElementTree as ET
from xml.parsers import expat

import pandas as pd

from det_geometry import BBox, InvalidBoxError
from det_netpbm import PathLike

logger = logging.getLogger(__name__)

STATS_COLUMNS = ('class', 'count', 'proportion', 'mean_width', 'mean_height',
                 'mean_area', 'mean_area_fraction')


class AnnotationParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class AnnotatedObject(NamedTuple):
    class_label: str
    box: BBox


@dataclass
class AnnotationRecord:
    image_id: str
    image_width: int
    image_height: int
    objects: List[AnnotatedObject] = field(default_factory=list)


@dataclass(frozen=True)
class ClassStats:
    class_label: str
    count: int
    proportion: float
    mean_width: float
    mean_height: float
    mean_area: float
    mean_area_fraction: float


@dataclass
class ImbalanceReport:
    per_class: List[ClassStats] = field(default_factory=list)
    majority: Optional[str] = None
    minority: Optional[str] = None
    imbalance_ratio: Optional[float] = None
    image_count: int = 0
    object_count: int = 0


def _parse_with_lines(text: str):
    """Build an element tree while remembering the line each element starts on."""
    builder = ET.TreeBuilder()
    lines: Dict[ET.Element, int] = {}
    parser = expat.ParserCreate()

    def start(tag, attrs):
        lines[builder.start(tag, attrs)] = parser.CurrentLineNumber

    parser.StartElementHandler = start
    parser.EndElementHandler = builder.end
    parser.CharacterDataHandler = builder.data
    try:
        parser.Parse(text, True)
    except expat.ExpatError as e:
        raise AnnotationParseError(f"malformed markup: {expat.ErrorString(e.code)}", e.lineno)
    return builder.close(), lines


def _child_text(parent: ET.Element, tag: str, lines) -> str:
    child = parent.find(tag)
    if child is None or child.text is None or not child.text.strip():
        raise AnnotationParseError(f"missing <{tag}> in <{parent.tag}>", lines.get(parent))
    return child.text.strip()


def _child_number(parent: ET.Element, tag: str, lines) -> float:
    text = _child_text(parent, tag, lines)
    try:
        value = float(text)
    except ValueError:
        value = math.nan
    if not math.isfinite(value):
        raise AnnotationParseError(f"<{tag}> is not a number: '{text}'", lines.get(parent.find(tag)))
    return value


def parse_annotation(text: str, image_id: str = '') -> AnnotationRecord:
    """
    Parse one VOC-style annotation document.

    The document needs a <size> with <width>/<height> and may hold any number
    of <object> elements, each with <name> and <bndbox> (xmin, ymin, xmax,
    ymax). <filename>, when present, supplies the image id.

    Raises:
        AnnotationParseError: For malformed markup, a missing size, an
            inverted box or a box outside the image, with the line number
    """
    root, lines = _parse_with_lines(text)

    size = root.find('size')
    if size is None:
        raise AnnotationParseError("missing <size>", lines.get(root))
    width = _child_number(size, 'width', lines)
    height = _child_number(size, 'height', lines)
    if width <= 0 or height <= 0 or not width.is_integer() or not height.is_integer():
        raise AnnotationParseError(f"image size must be positive integers, got {width}x{height}",
                                   lines.get(size))

    filename = root.find('filename')
    if filename is not None and filename.text and filename.text.strip():
        image_id = Path(filename.text.strip()).stem

    record = AnnotationRecord(image_id=image_id, image_width=int(width), image_height=int(height))
    for obj in root.iter('object'):
        line = lines.get(obj)
        name = _child_text(obj, 'name', lines)
        bndbox = obj.find('bndbox')
        if bndbox is None:
            raise AnnotationParseError(f"object '{name}' has no <bndbox>", line)
        coords = [_child_number(bndbox, tag, lines) for tag in ('xmin', 'ymin', 'xmax', 'ymax')]
        try:
            box = BBox(*coords)
        except InvalidBoxError as e:
            raise AnnotationParseError(str(e), lines.get(bndbox))
        if box.left < 0 or box.top < 0 or box.right > record.image_width \
                or box.bottom > record.image_height:
            raise AnnotationParseError(
                f"box outside image: {box.to_tuple()} in {record.image_width}x{record.image_height}",
                lines.get(bndbox))
        record.objects.append(AnnotatedObject(name, box))
    return record


def _format_number(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def serialize_annotation(record: AnnotationRecord) -> str:
    root = ET.Element('annotation')
    if record.image_id:
        ET.SubElement(root, 'filename').text = record.image_id
    size = ET.SubElement(root, 'size')
    ET.SubElement(size, 'width').text = str(record.image_width)
    ET.SubElement(size, 'height').text = str(record.image_height)
    for label, box in record.objects:
        obj = ET.SubElement(root, 'object')
        ET.SubElement(obj, 'name').text = label
        bndbox = ET.SubElement(obj, 'bndbox')
        for tag, value in zip(('xmin', 'ymin', 'xmax', 'ymax'), box.to_tuple()):
            ET.SubElement(bndbox, tag).text = _format_number(value)
    ET.indent(root)
    return ET.tostring(root, encoding='unicode') + '\n'


def _load_one(path: Path) -> AnnotationRecord:
    try:
        return parse_annotation(path.read_text(encoding='utf-8'), image_id=path.stem)
    except AnnotationParseError as e:
        raise AnnotationParseError(f"{path.name}: {e}")


def load_annotations(directory: PathLike, workers: Optional[int] = None) -> List[AnnotationRecord]:
    """Parse every *.xml file in a directory, in file-name order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"annotation directory not found: {directory}")
    paths = sorted(directory.glob('*.xml'))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        records = list(pool.map(_load_one, paths))
    logger.info("Parsed %d annotation file(s) from %s", len(records), directory)
    return records


def _objects_frame(records: List[AnnotationRecord]) -> pd.DataFrame:
    rows = []
    for record in records:
        image_area = record.image_width * record.image_height
        for label, box in record.objects:
            rows.append({
                'class': label,
                'width': box.width,
                'height': box.height,
                'area': box.width * box.height,
                'area_fraction': box.width * box.height / image_area,
            })
    return pd.DataFrame(rows, columns=['class', 'width', 'height', 'area', 'area_fraction'])


def _ranked(per_class: List[ClassStats]) -> List[ClassStats]:
    """Descending count, ties broken alphabetically."""
    return sorted(per_class, key=lambda s: (-s.count, s.class_label))


def compute_stats(records: List[AnnotationRecord]) -> ImbalanceReport:
    """
    Aggregate per-class counts, proportions and mean box geometry.

    "Length" is reported as mean box height and "width" as mean box width.
    mean_area_fraction averages box area over image area per object.
    """
    frame = _objects_frame(records)
    report = ImbalanceReport(image_count=len(records), object_count=len(frame))
    if frame.empty:
        return report

    grouped = frame.groupby('class', sort=True).agg(
        count=('width', 'size'),
        mean_width=('width', 'mean'),
        mean_height=('height', 'mean'),
        mean_area=('area', 'mean'),
        mean_area_fraction=('area_fraction', 'mean'),
    )
    per_class = [
        ClassStats(
            class_label=str(label),
            count=int(row['count']),
            proportion=int(row['count']) / report.object_count,
            mean_width=float(row['mean_width']),
            mean_height=float(row['mean_height']),
            mean_area=float(row['mean_area']),
            mean_area_fraction=float(row['mean_area_fraction']),
        )
        for label, row in grouped.iterrows()
    ]
    report.per_class = _ranked(per_class)
    report.majority = report.per_class[0].class_label
    minority = min(report.per_class, key=lambda s: (s.count, s.class_label))
    report.minority = minority.class_label
    report.imbalance_ratio = report.per_class[0].count / minority.count
    return report


def balance_plan(report: ImbalanceReport) -> Dict[str, int]:
    """Extra samples each class needs to reach the majority count."""
    if not report.per_class:
        return {}
    target = report.per_class[0].count
    return {s.class_label: target - s.count for s in report.per_class}


def images_with_label(records: List[AnnotationRecord], label: str) -> List[str]:
    return sorted({r.image_id for r in records if any(o.class_label == label for o in r.objects)})


def stats_to_report(report: ImbalanceReport) -> str:
    """Render the per-class table; the same report always renders to the same text."""
    rows = [list(STATS_COLUMNS)]
    for s in _ranked(report.per_class):
        rows.append([
            s.class_label,
            str(s.count),
            f"{s.proportion:.4f}",
            f"{s.mean_width:.2f}",
            f"{s.mean_height:.2f}",
            f"{s.mean_area:.2f}",
            f"{s.mean_area_fraction:.4f}",
        ])
    widths = [max(len(row[i]) for row in rows) for i in range(len(STATS_COLUMNS))]
    lines = []
    for row in rows:
        cells = [row[0].ljust(widths[0])] + [cell.rjust(w) for cell, w in zip(row[1:], widths[1:])]
        lines.append('  '.join(cells).rstrip())
    if report.per_class:
        lines.append('')
        lines.append(f"images {report.image_count}, objects {report.object_count}, "
                     f"majority {report.majority}, minority {report.minority}, "
                     f"imbalance ratio {report.imbalance_ratio:.2f}")
    return '\n'.join(lines) + '\n'


def stats_to_json_lines(report: ImbalanceReport) -> str:
    lines = [json.dumps({
        'class': s.class_label,
        'count': s.count,
        'proportion': s.proportion,
        'mean_width': s.mean_width,
        'mean_height': s.mean_height,
        'mean_area': s.mean_area,
        'mean_area_fraction': s.mean_area_fraction,
    }, sort_keys=True) for s in _ranked(report.per_class)]
    lines.append(json.dumps({
        'images': report.image_count,
        'objects': report.object_count,
        'majority': report.majority,
        'minority': report.minority,
        'imbalance_ratio': report.imbalance_ratio,
    }, sort_keys=True))
    return '\n'.join(lines) + '\n'
