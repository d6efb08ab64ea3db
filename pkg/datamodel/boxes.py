"""
Axis-aligned box geometry.

Boxes are half-open pixel corners (x1, y1, x2, y2): a box covers
x1 <= x < x2 and y1 <= y < y2, so its area is (x2 - x1) * (y2 - y1).
"""

from typing import Sequence, Tuple

from datamodel.errors import ContractError

Box = Tuple[float, float, float, float]


def is_valid_box(box: Sequence[float]) -> bool:
    if len(box) != 4:
        return False
    x1, y1, x2, y2 = box
    return x1 < x2 and y1 < y2


def _require_valid(box: Sequence[float], name: str) -> None:
    if not is_valid_box(box):
        raise ContractError(f"degenerate rectangle {name}={tuple(box)}: need x1 < x2 and y1 < y2")


def area(box: Sequence[float]) -> float:
    _require_valid(box, "box")
    return (box[2] - box[0]) * (box[3] - box[1])


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two valid rectangles, in [0, 1]."""
    _require_valid(a, "a")
    _require_valid(b, "b")
    if tuple(a) == tuple(b):
        return 1.0
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    # distinct boxes can still round to 1.0 in float arithmetic
    return min(inter / union, 1.0 - 1e-12)


def clip_box(box: Sequence[float], width: float, height: float) -> Box:
    """Clip to the frame [0, width) x [0, height). The result may be degenerate."""
    x1, y1, x2, y2 = box
    return (
        float(min(max(x1, 0.0), width)),
        float(min(max(y1, 0.0), height)),
        float(min(max(x2, 0.0), width)),
        float(min(max(y2, 0.0), height)),
    )
