"""Detection filtering, region cropping, and global/local score fusion.

An open-vocabulary detector proposes labeled boxes on the reconstruction;
`filter_boxes` reduces them to at most `k_max` informative regions through
five stages:

1. confidence threshold, then greedy NMS within each label,
2. label blocklist (textureless or amorphous regions),
3. aspect-ratio and normalized-area limits,
4. cross-label overlap dedup keeping the larger box,
5. diversity top-K by lowest mean pairwise IoU.

NMS runs per label because detectors emit near-duplicate boxes under
different phrasings; those duplicates survive stage 1 by design and are
collapsed by stage 4, which is why its IoU threshold sits above the NMS
one. Surviving regions are scored alongside the full image and fused by
pixel area in `fuse_scores`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from PIL import Image

__all__ = [
    "Box",
    "Detection",
    "Crop",
    "CropSet",
    "FilterConfig",
    "DEFAULT_BLOCKLIST",
    "iou",
    "clamp_box",
    "filter_detections",
    "filter_boxes",
    "fuse_scores",
    "crop_regions",
    "map_box_to_lr",
    "parse_detection_file",
]

Box = tuple[float, float, float, float]

DEFAULT_BLOCKLIST = ("sky", "clouds", "water surfaces", "snow", "fog")


@dataclass(frozen=True)
class Detection:
    """A labeled detector box in pixel coordinates (x0, y0, x1, y1)."""

    label: str
    confidence: float
    box: Box

    def __post_init__(self) -> None:
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence!r}")
        x0, y0, x1, y1 = self.box
        if any(not math.isfinite(v) for v in self.box):
            raise ValueError("box coordinates must be finite")
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"box must have positive width and height, got {self.box}")

    @property
    def area(self) -> float:
        x0, y0, x1, y1 = self.box
        return (x1 - x0) * (y1 - y0)


@dataclass(frozen=True)
class Crop:
    """A region selected for local scoring; `score` is filled after scoring."""

    box: Box
    area: float
    score: float | None = None


@dataclass(frozen=True)
class CropSet:
    """The scoring plan for one image: the global frame plus local regions."""

    global_area: float
    crops: tuple[Crop, ...] = ()
    global_score: float | None = None

    def __post_init__(self) -> None:
        if self.global_area <= 0:
            raise ValueError("global area must be positive")
        for crop in self.crops:
            if crop.area <= 0:
                raise ValueError("crop areas must be positive")


@dataclass(frozen=True)
class FilterConfig:
    """Thresholds for the five-stage box filter."""

    tau_box: float = 0.25
    nms_iou: float = 0.5
    blocklist: tuple[str, ...] = DEFAULT_BLOCKLIST
    max_aspect: float = 4.5
    area_range: tuple[float, float] = (0.1, 0.7)
    dedup_iou: float = 0.7
    k_max: int = 4

    def __post_init__(self) -> None:
        if not (0.0 <= self.tau_box <= 1.0):
            raise ValueError("tau_box must lie in [0, 1]")
        for name, v in (("nms_iou", self.nms_iou), ("dedup_iou", self.dedup_iou)):
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.max_aspect < 1.0:
            raise ValueError("max_aspect must be at least 1")
        lo, hi = self.area_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError("area_range must be an ordered pair within [0, 1]")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; both must have positive area."""
    for box in (a, b):
        x0, y0, x1, y1 = box
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"degenerate box {box}")
    ix0, iy0 = max(a[0], b[0]), max(a[1], b[1])
    ix1, iy1 = min(a[2], b[2]), min(a[3], b[3])
    inter = max(0.0, ix1 - ix0) * max(0.0, iy1 - iy0)
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def clamp_box(box: Box, width: float, height: float) -> Box:
    x0, y0, x1, y1 = box
    return (
        min(max(x0, 0.0), width),
        min(max(y0, 0.0), height),
        min(max(x1, 0.0), width),
        min(max(y1, 0.0), height),
    )


def _area(box: Box) -> float:
    return (box[2] - box[0]) * (box[3] - box[1])


def filter_detections(
    detections: Sequence[Detection],
    image_width: int,
    image_height: int,
    config: FilterConfig | None = None,
) -> list[Detection]:
    """Apply the five-stage filter and return the surviving detections in
    input order. Boxes are clamped to the image first; boxes that clamp to
    zero area are dropped."""
    cfg = config or FilterConfig()
    if image_width <= 0 or image_height <= 0:
        raise ValueError("image dimensions must be positive")

    clamped: list[tuple[int, Detection]] = []
    for idx, det in enumerate(detections):
        box = clamp_box(det.box, image_width, image_height)
        if box[2] <= box[0] or box[3] <= box[1]:
            continue
        clamped.append((idx, replace(det, box=box)))

    # Stage 1: confidence gate, then greedy per-label NMS. Ties in the
    # greedy order break by larger area, then by input index.
    confident = [(idx, det) for idx, det in clamped if det.confidence >= cfg.tau_box]
    order = sorted(confident, key=lambda e: (-e[1].confidence, -e[1].area, e[0]))
    kept_nms: list[tuple[int, Detection]] = []
    suppressed: set[int] = set()
    for pos, (idx, det) in enumerate(order):
        if idx in suppressed:
            continue
        kept_nms.append((idx, det))
        for other_idx, other in order[pos + 1 :]:
            if other_idx in suppressed:
                continue
            if other.label == det.label and iou(det.box, other.box) > cfg.nms_iou:
                suppressed.add(other_idx)
    kept_nms.sort(key=lambda e: e[0])

    # Stage 2: label blocklist, case-insensitive substring match.
    terms = [t.lower() for t in cfg.blocklist]
    survivors = [
        (idx, det)
        for idx, det in kept_nms
        if not any(term in det.label.lower() for term in terms)
    ]

    # Stage 3: aspect ratio and normalized area limits (inclusive bounds).
    image_area = float(image_width) * float(image_height)
    lo, hi = cfg.area_range
    kept_geom: list[tuple[int, Detection]] = []
    for idx, det in survivors:
        x0, y0, x1, y1 = det.box
        w, h = x1 - x0, y1 - y0
        if max(w / h, h / w) > cfg.max_aspect:
            continue
        frac = det.area / image_area
        if not (lo <= frac <= hi):
            continue
        kept_geom.append((idx, det))

    # Stage 4: overlap dedup across labels. Processing boxes by descending
    # area (ties by input index) and keeping a box only if it does not
    # overlap an already-kept one beyond dedup_iou reaches the fixed point
    # of "drop the smaller of any violating pair" in one pass.
    by_area = sorted(kept_geom, key=lambda e: (-e[1].area, e[0]))
    deduped: list[tuple[int, Detection]] = []
    for idx, det in by_area:
        if all(iou(det.box, kept.box) <= cfg.dedup_iou for _, kept in deduped):
            deduped.append((idx, det))
    deduped.sort(key=lambda e: e[0])

    # Stage 5: if more than k_max remain, keep the k_max with the lowest
    # mean IoU against all other survivors; ties prefer larger area, then
    # smaller input index.
    if len(deduped) > cfg.k_max:
        n = len(deduped)
        means = []
        for i, (_, det) in enumerate(deduped):
            vals = [iou(det.box, other.box) for j, (_, other) in enumerate(deduped) if j != i]
            means.append(sum(vals) / len(vals))
        ranked = sorted(range(n), key=lambda i: (means[i], -deduped[i][1].area, deduped[i][0]))
        chosen = sorted(ranked[: cfg.k_max])
        deduped = [deduped[i] for i in chosen]

    return [det for _, det in deduped]


def filter_boxes(
    detections: Sequence[Detection],
    image_width: int,
    image_height: int,
    config: FilterConfig | None = None,
) -> CropSet:
    """Run the five-stage filter and package the survivors as an unscored
    CropSet for the full image geometry."""
    kept = filter_detections(detections, image_width, image_height, config)
    return CropSet(
        global_area=float(image_width) * float(image_height),
        crops=tuple(Crop(box=d.box, area=d.area) for d in kept),
    )


def fuse_scores(global_score: float, global_area: float, crops: Sequence[Crop]) -> float:
    """Area-weighted fusion of the global score with local region scores:

        (A_g * S_g + sum_i A_i * S_i) / (A_g + sum_i A_i)

    Every crop must carry a score; the result lies between the minimum and
    maximum participating score.
    """
    if global_area <= 0:
        raise ValueError("global area must be positive")
    if not math.isfinite(global_score):
        raise ValueError("global score must be finite")
    num = global_score * global_area
    den = float(global_area)
    for n, crop in enumerate(crops):
        if crop.score is None:
            raise ValueError(f"crop {n} has no score")
        if crop.area <= 0:
            raise ValueError(f"crop {n} has non-positive area")
        num += crop.score * crop.area
        den += crop.area
    return num / den


def crop_regions(image: Image.Image | str | Path, boxes: Sequence[Box]) -> list[Image.Image]:
    """Cut the given pixel-coordinate boxes out of the image. Coordinates
    are rounded to integers; each box must fall within the image."""
    img = Image.open(image) if isinstance(image, (str, Path)) else image
    out: list[Image.Image] = []
    for box in boxes:
        x0, y0, x1, y1 = (int(round(v)) for v in box)
        if not (0 <= x0 < x1 <= img.width and 0 <= y0 < y1 <= img.height):
            raise ValueError(f"box {box} does not fit a {img.width}x{img.height} image")
        out.append(img.crop((x0, y0, x1, y1)))
    return out


def map_box_to_lr(box: Box, scale: float, lr_width: int, lr_height: int) -> Box:
    """Map an HR-space box to the corresponding LR region.

    The LR box is grown outward to whole pixels (floor the near corner,
    ceil the far one) so the LR crop always covers the full HR region, then
    clamped to the LR frame.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    if lr_width <= 0 or lr_height <= 0:
        raise ValueError("LR dimensions must be positive")
    x0, y0, x1, y1 = box
    mapped = (
        math.floor(x0 / scale),
        math.floor(y0 / scale),
        math.ceil(x1 / scale),
        math.ceil(y1 / scale),
    )
    out = clamp_box(mapped, lr_width, lr_height)
    if out[2] <= out[0] or out[3] <= out[1]:
        raise ValueError(f"box {box} maps to an empty LR region at scale {scale}")
    return out


def parse_detection_file(data: dict) -> tuple[str, int, int, list[Detection]]:
    """Parse the detection ingestion payload:

        {"image": path, "width": W, "height": H,
         "detections": [{"label", "confidence", "box": [x0,y0,x1,y1],
                         "normalized": bool}, ...]}

    Normalized boxes are scaled to pixels using width/height.
    """
    try:
        image = data["image"]
        width = int(data["width"])
        height = int(data["height"])
        raw = data["detections"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed detection payload: {exc}") from exc
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    if not isinstance(raw, list):
        raise ValueError("detections must be a list")
    detections: list[Detection] = []
    for n, entry in enumerate(raw):
        try:
            label = str(entry["label"])
            confidence = float(entry["confidence"])
            box = tuple(float(v) for v in entry["box"])
            normalized = bool(entry.get("normalized", False))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"detection {n}: malformed entry: {exc}") from exc
        if len(box) != 4:
            raise ValueError(f"detection {n}: box must have four coordinates")
        if normalized:
            box = (box[0] * width, box[1] * height, box[2] * width, box[3] * height)
        detections.append(Detection(label=label, confidence=confidence, box=box))
    return image, width, height, detections
