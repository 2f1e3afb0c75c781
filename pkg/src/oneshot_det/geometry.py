"""Box arithmetic, box parameterizations, IoU and non-maximum suppression.

Boxes live in continuous image pixel coordinates with the origin at the
top-left corner: ``(x1, y1)`` is the top-left corner, ``(x2, y2)`` the
bottom-right corner, and ``x1 < x2``, ``y1 < y2`` always hold.

Two regression parameterizations are provided:

* :class:`LtrbTarget` — per-location distances to the four box edges, used
  by the anchor-free first stage.
* :class:`DeltaTarget` — scale-invariant center translation plus log-space
  extent shift relative to a proposal, used by the second-stage refiner.

All functions here are pure and operate on Python scalars / small numpy
arrays; vectorized helpers (``iou_matrix``, ``nms_arrays``) exist for the
hot paths in proposal generation and evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

# Conventional guard on log-space extent shifts before exponentiation.
DELTA_CLAMP = math.log(1000.0 / 16.0)


class DegenerateBoxError(ValueError):
    """Raised when an operation would produce a box without positive extent."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with positive width and height."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise DegenerateBoxError(f"non-finite coordinates: {coords}")
        if self.x2 <= self.x1 or self.y2 <= self.y1:
            raise DegenerateBoxError(f"box has non-positive extent: {coords}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def clip(self, width: float, height: float) -> "BoundingBox":
        """Clip to image bounds ``[0, width] x [0, height]``.

        Raises :class:`DegenerateBoxError` if the box lies entirely outside.
        """
        x1 = min(max(self.x1, 0.0), width)
        y1 = min(max(self.y1, 0.0), height)
        x2 = min(max(self.x2, 0.0), width)
        y2 = min(max(self.y2, 0.0), height)
        if x2 <= x1 or y2 <= y1:
            raise DegenerateBoxError(
                f"box {self} is empty after clipping to {width}x{height}"
            )
        return BoundingBox(x1, y1, x2, y2)

    def contains(self, x: float, y: float) -> bool:
        """True if the point lies strictly inside the box."""
        return self.x1 < x < self.x2 and self.y1 < y < self.y2

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "BoundingBox":
        return cls(x, y, x + w, y + h)

    def to_xywh(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.width, self.height)


class LtrbTarget(NamedTuple):
    """Distances from a location to the left/top/right/bottom box edges."""

    l: float
    t: float
    r: float
    b: float

    @property
    def is_positive(self) -> bool:
        """True iff the originating location lies inside the box."""
        return self.l > 0 and self.t > 0 and self.r > 0 and self.b > 0


class DeltaTarget(NamedTuple):
    """Center translation (relative to extent) and log-space extent shift."""

    tx: float
    ty: float
    tw: float
    th: float


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area, in [0, 1]."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def encode_ltrb(location: tuple[float, float], box: BoundingBox) -> LtrbTarget:
    """Edge distances of ``box`` as seen from ``location``.

    Components are negative when the location lies outside the box, which
    the target assigner uses to reject locations.
    """
    x, y = location
    return LtrbTarget(x - box.x1, y - box.y1, box.x2 - x, box.y2 - y)


def decode_ltrb(location: tuple[float, float], target: LtrbTarget) -> BoundingBox:
    """Exact inverse of :func:`encode_ltrb`.

    Raises :class:`DegenerateBoxError` when the decoded box would have
    non-positive extent (``l + r <= 0`` or ``t + b <= 0``).
    """
    x, y = location
    return BoundingBox(x - target.l, y - target.t, x + target.r, y + target.b)


def encode_deltas(proposal: BoundingBox, target: BoundingBox) -> DeltaTarget:
    """R-CNN-style deltas mapping ``proposal`` onto ``target``."""
    px, py = proposal.center
    gx, gy = target.center
    return DeltaTarget(
        (gx - px) / proposal.width,
        (gy - py) / proposal.height,
        math.log(target.width / proposal.width),
        math.log(target.height / proposal.height),
    )


def decode_deltas(
    proposal: BoundingBox, delta: DeltaTarget, clamp: float = DELTA_CLAMP
) -> BoundingBox:
    """Apply deltas to a proposal; inverse of :func:`encode_deltas`.

    Log-space shifts are clamped to ``+-clamp`` before exponentiation so
    unconstrained regression outputs can never overflow.
    """
    tw = min(max(delta.tw, -clamp), clamp)
    th = min(max(delta.th, -clamp), clamp)
    px, py = proposal.center
    gx = px + delta.tx * proposal.width
    gy = py + delta.ty * proposal.height
    gw = proposal.width * math.exp(tw)
    gh = proposal.height * math.exp(th)
    return BoundingBox(gx - 0.5 * gw, gy - 0.5 * gh, gx + 0.5 * gw, gy + 0.5 * gh)


def nms(
    boxes: Sequence[BoundingBox],
    scores: Sequence[float],
    iou_threshold: float,
) -> list[int]:
    """Greedy non-maximum suppression.

    Boxes are visited in descending score order (ties broken by lower
    original index); a box is suppressed iff it overlaps an already kept
    box with IoU strictly above ``iou_threshold``. Returns kept indices
    in visit order.
    """
    if len(boxes) != len(scores):
        raise ValueError("boxes and scores must have the same length")
    if not all(math.isfinite(s) for s in scores):
        raise ValueError("scores must be finite")
    if not boxes:
        return []
    arr = np.stack([b.as_array() for b in boxes])
    return nms_arrays(arr, np.asarray(scores, dtype=np.float64), iou_threshold).tolist()


# ---------------------------------------------------------------------------
# Vectorized helpers on (N, 4) arrays in (x1, y1, x2, y2) form.


def boxes_to_array(boxes: Sequence[BoundingBox]) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.stack([b.as_array() for b in boxes])


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) box arrays, giving (N, M)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    ix = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(ix, 0, None) * np.clip(iy, 0, None)
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0, inter / union, 0.0)


def nms_arrays(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> np.ndarray:
    """Array form of :func:`nms`; returns kept indices as an int array."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if boxes.shape[0] == 0:
        return np.zeros((0,), dtype=np.int64)
    # Stable sort on negated scores: equal scores keep ascending index order.
    order = np.argsort(-scores, kind="stable")
    x1, y1, x2, y2 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    areas = (x2 - x1) * (y2 - y1)
    keep: list[int] = []
    while order.size > 0:
        i = order[0]
        keep.append(int(i))
        if order.size == 1:
            break
        rest = order[1:]
        ix = np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest])
        iy = np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest])
        inter = np.clip(ix, 0, None) * np.clip(iy, 0, None)
        overlap = np.where(inter > 0, inter / (areas[i] + areas[rest] - inter), 0.0)
        order = rest[overlap <= iou_threshold]
    return np.asarray(keep, dtype=np.int64)


def clip_boxes_array(boxes: np.ndarray, width: float, height: float) -> np.ndarray:
    """Clip an (N, 4) box array to image bounds (may produce empty boxes)."""
    out = np.asarray(boxes, dtype=np.float64).copy().reshape(-1, 4)
    out[:, 0] = np.clip(out[:, 0], 0, width)
    out[:, 1] = np.clip(out[:, 1], 0, height)
    out[:, 2] = np.clip(out[:, 2], 0, width)
    out[:, 3] = np.clip(out[:, 3], 0, height)
    return out
