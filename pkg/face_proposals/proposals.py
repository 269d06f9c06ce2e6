"""Face proposals from heatmaps: peak extraction, part templates and the part box merge"""

# Standard
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, Tuple

# Installed
import numpy as np

# Own
from face_proposals.network import BACKGROUND_CLASS, DEFAULT_CLASS_NAMES, FACE_CLASS, HeatmapSet

log = logging.getLogger(__name__)


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class BBox(object):
    """Box in original image pixels with the heatmap score it came from"""

    x1: float
    y1: float
    x2: float
    y2: float
    score: float = 0.0
    source: int = FACE_CLASS
    level_scale: float = 1.0

    @property
    def coords(self):
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def width(self):
        return self.x2 - self.x1

    @property
    def height(self):
        return self.y2 - self.y1

    @property
    def area(self):
        return max(self.width, 0.0) * max(self.height, 0.0)

    def sort_key(self):
        """Score descending, then coordinates ascending"""
        return (-self.score, self.x1, self.y1, self.x2, self.y2)

    def clamped(self, image_size):
        """Clip to an image of (height, width); None when nothing of the box is left"""
        if image_size is None:
            return self
        height, width = image_size
        box = replace(
            self,
            x1=min(max(self.x1, 0.0), width),
            y1=min(max(self.y1, 0.0), height),
            x2=min(max(self.x2, 0.0), width),
            y2=min(max(self.y2, 0.0), height),
        )
        if box.x2 <= box.x1 or box.y2 <= box.y1:
            return None
        return box


@dataclass(frozen=True)
class PartTemplate(object):
    """Face box rule for one part: the part centre sits at (ax, ay) of a face of side k * part window"""

    part: int
    ax: float
    ay: float
    k: float

    def __post_init__(self):
        if not (0 <= self.ax <= 1 and 0 <= self.ay <= 1):
            raise TemplateError(f"Template anchor ({self.ax}, {self.ay}) must lie in the unit square")
        if self.k <= 0:
            raise TemplateError(f"Template face ratio must be positive, got {self.k}")


EYE, NOSE, MOUTH = (DEFAULT_CLASS_NAMES.index(name) for name in ("eye", "nose", "mouth"))

DEFAULT_TEMPLATES = (
    PartTemplate(EYE, 0.31, 0.40, 3.0),
    PartTemplate(EYE, 0.69, 0.40, 3.0),
    PartTemplate(NOSE, 0.50, 0.62, 3.0),
    PartTemplate(MOUTH, 0.50, 0.80, 3.0),
)


def load_templates(path, names=DEFAULT_CLASS_NAMES):
    """Read "part_name ax ay k" lines; a part may appear on several lines"""
    templates = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_nr, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 4:
                raise TemplateError(f"{path}:{line_nr}: expected 'part_name ax ay k', got {line!r}")
            name = fields[0]
            if name not in names or names.index(name) in (BACKGROUND_CLASS, FACE_CLASS):
                raise TemplateError(f"{path}:{line_nr}: {name!r} is not a facial part class")
            try:
                ax, ay, k = (float(value) for value in fields[1:])
                templates.append(PartTemplate(names.index(name), ax, ay, k))
            except ValueError as e:
                raise TemplateError(f"{path}:{line_nr}: {e}")
    log.info(f"Loaded {len(templates)} part template(s) from {path}")
    return tuple(templates)


@dataclass(frozen=True)
class ProposalConfig(object):
    tau_face: float = 0.6
    tau_part: float = 0.7
    tau_iou: float = 0.3
    peak_radius: int = 2
    face_nms_iou: float = 0.5
    cross_scale_nms_iou: float = 0.7
    max_proposals: int = 20000
    use_parts: bool = True
    # Overrides of tau_part keyed by class id
    part_thresholds: Dict[int, float] = field(default_factory=dict, hash=False)

    def __post_init__(self):
        thresholds = {
            "tau_face": self.tau_face,
            "tau_part": self.tau_part,
            "tau_iou": self.tau_iou,
            "face_nms_iou": self.face_nms_iou,
            "cross_scale_nms_iou": self.cross_scale_nms_iou,
        }
        thresholds.update({f"tau_part[{cid}]": tau for cid, tau in self.part_thresholds.items()})
        for name, value in thresholds.items():
            if not 0 < value < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        if self.peak_radius < 1:
            raise ValueError(f"peak_radius must be at least 1, got {self.peak_radius}")
        if self.max_proposals < 1:
            raise ValueError(f"max_proposals must be at least 1, got {self.max_proposals}")

    def part_threshold(self, class_id):
        return self.part_thresholds.get(class_id, self.tau_part)


def extract_peaks(grid, tau, radius):
    """Greedy NMS on a score grid.

    Returns (row, col, score) for cells >= tau, highest first, where no two
    returned cells are within Chebyshev distance radius of each other.
    """
    if radius < 1:
        raise ValueError(f"Peak radius must be at least 1, got {radius}")
    grid = np.asarray(grid, dtype=np.float64)
    rows, cols = np.nonzero(grid >= tau)
    scores = grid[rows, cols]
    order = np.lexsort((cols, rows, -scores))

    suppressed = np.zeros(grid.shape, dtype=bool)
    peaks = []
    for i in order:
        r, c = int(rows[i]), int(cols[i])
        if suppressed[r, c]:
            continue
        peaks.append((r, c, float(scores[i])))
        suppressed[max(r - radius, 0) : r + radius + 1, max(c - radius, 0) : c + radius + 1] = True
    return peaks


def iou(a: BBox, b: BBox) -> float:
    inter_w = min(a.x2, b.x2) - max(a.x1, b.x1)
    inter_h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def nms(boxes, iou_thresh):
    """Keep the best box, drop boxes overlapping a kept one by more than iou_thresh"""
    kept = []
    for box in sorted(boxes, key=BBox.sort_key):
        if all(iou(box, other) <= iou_thresh for other in kept):
            kept.append(box)
    return kept


def cell_window(heatmaps: HeatmapSet, row, col):
    """Level window (x1, y1, x2, y2) of a heatmap cell"""
    x1 = heatmaps.stride * col
    y1 = heatmaps.stride * row
    return x1, y1, x1 + heatmaps.window, y1 + heatmaps.window


def face_boxes(heatmaps: HeatmapSet, cfg: ProposalConfig, image_size=None):
    """One box per face-class peak, suppressed with greedy NMS"""
    s = heatmaps.level_scale
    boxes = []
    for row, col, score in extract_peaks(heatmaps.class_map(FACE_CLASS), cfg.tau_face, cfg.peak_radius):
        x1, y1, x2, y2 = cell_window(heatmaps, row, col)
        box = BBox(x1 / s, y1 / s, x2 / s, y2 / s, score, FACE_CLASS, s).clamped(image_size)
        if box is not None:
            boxes.append(box)
    return nms(boxes, cfg.face_nms_iou)


def group_templates(templates):
    grouped = defaultdict(list)
    for template in templates:
        grouped[template.part].append(template)
    return grouped


def part_boxes(heatmaps: HeatmapSet, templates, cfg: ProposalConfig, image_size=None, part_classes=None):
    """Face boxes inferred from part peaks, one per (peak, template of that part).

    part_classes restricts the scanned classes; by default every non-face class is scanned and
    peaks in a class without a template raise TemplateError.
    """
    grouped = group_templates(templates)
    s = heatmaps.level_scale
    part_side = heatmaps.window / s
    boxes = []
    for part in range(heatmaps.num_classes) if part_classes is None else sorted(part_classes):
        if part in (BACKGROUND_CLASS, FACE_CLASS):
            continue
        peaks = extract_peaks(heatmaps.class_map(part), cfg.part_threshold(part), cfg.peak_radius)
        if not peaks:
            continue
        if part not in grouped:
            raise TemplateError(f"No face template for part class {part}, which has {len(peaks)} peak(s)")
        for row, col, score in peaks:
            x1, y1, x2, y2 = cell_window(heatmaps, row, col)
            cx = (x1 + x2) / 2 / s
            cy = (y1 + y2) / 2 / s
            for template in grouped[part]:
                side = template.k * part_side
                left = cx - template.ax * side
                top = cy - template.ay * side
                box = BBox(left, top, left + side, top + side, score, part, s).clamped(image_size)
                if box is not None:
                    boxes.append(box)
    return boxes


@dataclass(frozen=True)
class MergeCluster(object):
    members: Tuple[BBox, ...]
    merged_box: BBox
    merged_score: float


def combine_scores(scores):
    """Probability that at least one of several independent detections is right"""
    return 1.0 - math.prod(1.0 - p for p in scores)


def merge_part_boxes(boxes, tau_iou):
    """Repeatedly take the best remaining box, average it with every remaining box overlapping it by
    more than tau_iou, and combine their scores; clusters come out in emission order.
    """
    remaining = sorted(boxes, key=BBox.sort_key)
    clusters = []
    while remaining:
        seed, rest = remaining[0], remaining[1:]
        members = [seed]
        remaining = []
        for box in rest:
            if iou(seed, box) > tau_iou:
                members.append(box)
            else:
                remaining.append(box)

        n = len(members)
        coords = [sum(getattr(m, axis) for m in members) / n for axis in ("x1", "y1", "x2", "y2")]
        score = combine_scores(m.score for m in members)
        merged = BBox(*coords, score=score, source=FACE_CLASS, level_scale=seed.level_scale)
        clusters.append(MergeCluster(tuple(members), merged, score))
    return clusters


def level_boxes(heatmaps: HeatmapSet, templates, cfg: ProposalConfig, image_size=None, part_classes=None):
    """(face boxes, part boxes) of one level; levels are independent of each other"""
    faces = face_boxes(heatmaps, cfg, image_size)
    parts = part_boxes(heatmaps, templates, cfg, image_size, part_classes) if cfg.use_parts else []
    log.debug(f"Level {heatmaps.level_scale:.4g}: {len(faces)} face box(es), {len(parts)} part box(es)")
    return faces, parts


def generate_proposals(
    per_level_heatmaps, templates, cfg: ProposalConfig, image_size=None, executor=None, part_classes=None
):
    """Union of face boxes and merged part clusters over all levels, then a cross-scale NMS"""

    def boxes(hm):
        return level_boxes(hm, templates, cfg, image_size, part_classes)

    if executor is None:
        per_level = [boxes(hm) for hm in per_level_heatmaps]
    else:
        per_level = list(executor.map(boxes, per_level_heatmaps))

    faces = [box for level_faces, _ in per_level for box in level_faces]
    parts = sorted((box for _, level_parts in per_level for box in level_parts), key=BBox.sort_key)
    clusters = merge_part_boxes(parts, cfg.tau_iou)

    proposals = nms(faces + [cluster.merged_box for cluster in clusters], cfg.cross_scale_nms_iou)
    if len(proposals) > cfg.max_proposals:
        log.info(f"Keeping the best {cfg.max_proposals} of {len(proposals)} proposals")
        proposals = proposals[: cfg.max_proposals]
    return proposals
