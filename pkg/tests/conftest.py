import pytest

from det_eval import DetectionFile, write_detection_file
from det_geometry import BBox
from det_postproc import Detection
from voc_fixtures import annotation_xml

# One test image as detected by a baseline and an improved run
BASELINE_ROWS = [
    ('hat', 0.981, 598.40, 5.74, 718.82, 143.52),
    ('hat', 0.965, 106.98, 74.34, 188.41, 177.79),
    ('hat', 0.968, 314.11, 60.32, 395.96, 158.78),
]
IMPROVED_ROWS = [
    ('hat', 0.999, 598.08, 5.79, 718.31, 143.43),
    ('hat', 0.995, 106.91, 74.47, 188.49, 177.79),
    ('hat', 0.977, 314.10, 60.35, 395.93, 158.73),
]

def rows_to_detections(rows):
    return [Detection(label, conf, BBox(l, t, r, b)) for label, conf, l, t, r, b in rows]

@pytest.fixture
def baseline_detections():
    return rows_to_detections(BASELINE_ROWS)

@pytest.fixture
def improved_detections():
    return rows_to_detections(IMPROVED_ROWS)

@pytest.fixture
def table_runs(tmp_path, baseline_detections, improved_detections):
    """Baseline and improved run directories holding the one-image table fixtures."""
    baseline_dir = tmp_path / "baseline"
    improved_dir = tmp_path / "improved"
    baseline_dir.mkdir()
    improved_dir.mkdir()
    write_detection_file(DetectionFile("test_image", baseline_detections), baseline_dir / "test_image.txt")
    write_detection_file(DetectionFile("test_image", improved_detections), improved_dir / "test_image.txt")
    return baseline_dir, improved_dir

@pytest.fixture
def annotation_dir(tmp_path):
    """Three hats and one person over two images."""
    directory = tmp_path / "annotations"
    directory.mkdir()
    (directory / "img1.xml").write_text(annotation_xml(
        800, 600, [('hat', (10, 20, 110, 140)), ('hat', (200, 200, 260, 280)),
                   ('person', (0, 0, 400, 600))]))
    (directory / "img2.xml").write_text(annotation_xml(
        640, 480, [('hat', (50, 50, 90, 100))]))
    return directory
