"""Test the stable BCE, the GIoU loss and loss composition"""
import math

import numpy as np
import pytest

from det_geometry import BBox
from det_losses import (LossBreakdown, LossInputError, bce_with_logits,
                        bce_with_logits_batch, compose_loss, giou_loss,
                        parse_loss_terms)


def naive_bce(x, z):
    """
    Textbook BCE on the sigmoid output.

    1 - sigmoid(x) is taken as sigmoid(-x) so the reference does not lose
    precision to cancellation at large positive logits.
    """
    sigmoid = 1.0 / (1.0 + math.exp(-x))
    complement = 1.0 / (1.0 + math.exp(x))
    return -z * math.log(sigmoid) - (1.0 - z) * math.log(complement)


def test_bce_examples():
    """Test the stable form on known values"""
    assert bce_with_logits(0.0, 0.0) == pytest.approx(0.693147, abs=1e-6)
    assert bce_with_logits(0.0, 1.0) == pytest.approx(math.log(2), abs=1e-12)
    assert bce_with_logits(-2.0, 1.0) == pytest.approx(2.126928, abs=1e-6)


def test_bce_large_logits_stay_finite():
    """Test that extreme logits produce finite, non-negative losses"""
    for x in (1e6, -1e6):
        for z in (0.0, 0.5, 1.0):
            value = bce_with_logits(x, z)
            assert math.isfinite(value)
            assert value >= 0.0
    assert bce_with_logits(1e6, 1.0) == 0.0
    assert bce_with_logits(-1e6, 1.0) == pytest.approx(1e6)


def test_bce_matches_naive_reference():
    """Test the stable form against the naive one on a dense grid"""
    xs = np.linspace(-30.0, 30.0, 10_000)
    for z in (0.0, 0.5, 1.0):
        batch = bce_with_logits_batch(xs, np.full_like(xs, z))
        for x, from_batch in zip(xs, batch):
            expected = naive_bce(float(x), z)
            assert bce_with_logits(float(x), z) == pytest.approx(expected, abs=1e-9)
            assert from_batch == pytest.approx(expected, abs=1e-9)


def test_bce_is_minimised_at_target():
    """Test that the loss is smallest where sigmoid(x) equals z"""
    for z in (0.1, 0.5, 0.9):
        x_star = math.log(z / (1 - z))
        at_min = bce_with_logits(x_star, z)
        assert at_min <= bce_with_logits(x_star + 0.1, z)
        assert at_min <= bce_with_logits(x_star - 0.1, z)


def test_bce_rejects_bad_input():
    """Test that targets outside [0, 1] and non-finite logits are rejected"""
    with pytest.raises(LossInputError):
        bce_with_logits(0.0, 1.5)
    with pytest.raises(LossInputError):
        bce_with_logits(0.0, -0.1)
    with pytest.raises(LossInputError):
        bce_with_logits(float('nan'), 0.5)
    with pytest.raises(LossInputError):
        bce_with_logits_batch([0.0, 1.0], [0.5, 2.0])


def test_giou_loss_range():
    """Test the box loss at its extremes"""
    box = BBox(0, 0, 1, 1)
    assert giou_loss(box, box) == 0.0
    assert giou_loss(box, BBox(2, 2, 3, 3)) == pytest.approx(1.777778, abs=1e-6)
    # the upper bound is closed: disjoint zero-area segments reach it exactly
    assert giou_loss(BBox(0, 0, 0, 4), BBox(2, 0, 2, 4)) == 2.0
    rng = np.random.default_rng(3)
    for _ in range(200):
        l1, r1 = sorted(rng.uniform(0, 50, 2))
        t1, b1 = sorted(rng.uniform(0, 50, 2))
        l2, r2 = sorted(rng.uniform(0, 50, 2))
        t2, b2 = sorted(rng.uniform(0, 50, 2))
        value = giou_loss(BBox(l1, t1, r1, b1), BBox(l2, t2, r2, b2))
        assert 0.0 <= value <= 2.0


def test_compose_loss_example():
    """Test the three-part breakdown on one term of each kind"""
    result = compose_loss(
        [(BBox(0, 0, 1, 1), BBox(2, 2, 3, 3))],
        [(0.0, 1.0)],
        [(0.0, 0.0)],
    )
    assert result.l_box == pytest.approx(1.7778, abs=1e-4)
    assert result.l_obj == pytest.approx(0.6931, abs=1e-4)
    assert result.l_cls == pytest.approx(0.6931, abs=1e-4)
    assert result.total == pytest.approx(3.1641, abs=1e-4)
    assert result.total == pytest.approx(result.l_box + result.l_obj + result.l_cls, abs=1e-12)


def test_compose_loss_empty_terms():
    """Test that an empty term list contributes zero"""
    assert compose_loss([], [], []) == LossBreakdown(0.0, 0.0, 0.0, 0.0)


def test_compose_loss_permutation_invariance():
    """Test that reordering the terms leaves every mean unchanged"""
    rng = np.random.default_rng(5)
    boxes = []
    for _ in range(30):
        l1, r1 = sorted(rng.uniform(0, 20, 2))
        t1, b1 = sorted(rng.uniform(0, 20, 2))
        l2, r2 = sorted(rng.uniform(0, 20, 2))
        t2, b2 = sorted(rng.uniform(0, 20, 2))
        boxes.append((BBox(l1, t1, r1, b1), BBox(l2, t2, r2, b2)))
    obj = [(float(x), float(z)) for x, z in zip(rng.normal(0, 5, 40), rng.random(40))]
    cls = [(float(x), float(z)) for x, z in zip(rng.normal(0, 5, 40), rng.integers(0, 2, 40))]

    expected = compose_loss(boxes, obj, cls)
    for _ in range(5):
        shuffled = compose_loss(
            [boxes[i] for i in rng.permutation(len(boxes))],
            [obj[i] for i in rng.permutation(len(obj))],
            [cls[i] for i in rng.permutation(len(cls))],
        )
        assert shuffled == expected


def test_parse_loss_terms():
    """Test reading a small terms file"""
    text = (
        "# one term of each kind\n"
        "box 0 0 1 1 2 2 3 3\n"
        "\n"
        "obj 0.0 1   # positive anchor\n"
        "cls 0 0\n"
    )
    box_terms, obj_terms, cls_terms = parse_loss_terms(text)
    assert box_terms == [(BBox(0, 0, 1, 1), BBox(2, 2, 3, 3))]
    assert obj_terms == [(0.0, 1.0)]
    assert cls_terms == [(0.0, 0.0)]
    assert compose_loss(box_terms, obj_terms, cls_terms).total == pytest.approx(3.1641, abs=1e-4)


@pytest.mark.parametrize("text, fragment", [
    ("wh 1 2\n", "line 1: unknown term kind 'wh'"),
    ("obj 0 1\nbox 0 0 1 1\n", "line 2: 'box' expects 8 numbers, got 4"),
    ("cls zero 1\n", "line 1: non-numeric field"),
    ("obj 0 2\n", "line 1: target must be in [0, 1]"),
    ("\nbox 0 0 1 1 3 3 2 2\n", "line 2:"),
])
def test_parse_loss_terms_errors(text, fragment):
    """Test that malformed lines are reported with their line number"""
    with pytest.raises(LossInputError) as excinfo:
        parse_loss_terms(text)
    assert fragment in str(excinfo.value)
