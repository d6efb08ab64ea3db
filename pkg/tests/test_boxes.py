import pytest

from datamodel.boxes import area, clip_box, iou, is_valid_box
from datamodel.errors import ContractError


def test_iou_identical_boxes():
    assert iou((1, 2, 30, 40), (1, 2, 30, 40)) == 1.0


def test_iou_disjoint_boxes():
    assert iou((0, 0, 10, 10), (20, 20, 30, 30)) == 0.0


def test_iou_touching_edges_is_zero():
    assert iou((0, 0, 10, 10), (10, 0, 20, 10)) == 0.0


def test_iou_half_overlap():
    assert iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(1 / 3, abs=1e-12)


def test_iou_is_symmetric_and_bounded():
    a, b = (0, 0, 7, 9), (3, 4, 12, 10)
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) < 1.0


def test_degenerate_box_rejected():
    with pytest.raises(ContractError):
        iou((5, 0, 5, 10), (0, 0, 10, 10))
    with pytest.raises(ContractError):
        area((0, 10, 10, 0))


def test_clip_box_to_frame():
    assert clip_box((-5, -1, 120, 50), 100, 80) == (0.0, 0.0, 100.0, 50.0)
    assert not is_valid_box(clip_box((110, 0, 130, 10), 100, 80))
