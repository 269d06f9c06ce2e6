"""Synthetic scenes, detection metrics and pyramid benchmarks"""

# Standard
import logging
import math
import os
import statistics
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

# Installed
import numpy as np

# Own
from face_proposals import image_io, network, proposals
from face_proposals.detector import ProposalDetector
from face_proposals.network import FACE_CLASS, HeatmapSet
from face_proposals.proposals import BBox, iou
from face_proposals.pyramid import PyramidError, plan_levels, pyramid_workload, round_half_up

log = logging.getLogger(__name__)

# A level owns a face whose size is within this factor range of the 12 pixel window
LEVEL_MATCH = (0.8, 1.25)
RECOVERY_IOU = 0.7
REQUIRED_RECOVERY = 0.95


class SceneError(ValueError):
    pass


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class GroundTruthScene(object):
    height: int
    width: int
    faces: Tuple[BBox, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "faces", tuple(self.faces))
        for face in self.faces:
            if face.x1 < 0 or face.y1 < 0 or face.x2 > self.width or face.y2 > self.height:
                raise SceneError(f"Face {face.coords} lies outside the {self.width}x{self.height} scene")


@dataclass(frozen=True)
class Placement(object):
    """Where a face is planted: by its own peak or by its part peaks, at one level"""

    mode: str
    level: int


def _match(size, scale):
    ratio = size * scale / network.WINDOW
    if LEVEL_MATCH[0] <= ratio <= LEVEL_MATCH[1]:
        return abs(math.log(ratio))
    return None


def mean_face_ratio(templates):
    return statistics.fmean(template.k for template in templates) if templates else None


def place_face(face: BBox, levels, templates) -> Optional[Placement]:
    """Best level for the face peak; failing that, best level for the part peaks"""
    side = max(face.width, face.height)
    for mode, size in (("face", side), ("parts", side / (mean_face_ratio(templates) or math.inf))):
        matches = [(_match(size, level.scale), i) for i, level in enumerate(levels)]
        matches = [(error, i) for error, i in matches if error is not None]
        if matches:
            return Placement(mode, min(matches)[1])
    return None


def _nearest_cell(x, y, scale, rows, cols):
    half = network.WINDOW / 2
    col = round_half_up((x * scale - half) / network.STRIDE)
    row = round_half_up((y * scale - half) / network.STRIDE)
    return min(max(row, 0), rows - 1), min(max(col, 0), cols - 1)


def _plant(foreground, class_id, row, col, value):
    """Set one class at a cell, shrinking the other classes so the cell stays a distribution"""
    cell = foreground[:, row, col]
    cell[class_id - 1] = 0.0
    others = cell.sum()
    if others > 1.0 - value:
        cell *= (1.0 - value) / others
    cell[class_id - 1] = value


def plant_heatmaps(
    scene: GroundTruthScene,
    levels,
    templates=proposals.DEFAULT_TEMPLATES,
    noise=0.0,
    seed=0,
    num_classes=network.DEFAULT_NUM_CLASSES,
    peak_range=(0.85, 0.99),
):
    """Heatmaps that a perfect network would produce for the scene, plus uniform background noise.

    levels holds LevelGeometry (or PyramidLevel) entries. Raises SceneError for a
    face that no level can represent.
    """
    rng = np.random.default_rng(seed)
    shapes = [network.heatmap_shape(level.height, level.width) for level in levels]
    foreground = []
    for rows, cols in shapes:
        fg = rng.uniform(0.0, noise, size=(num_classes - 1, rows, cols)) if noise > 0 else np.zeros(
            (num_classes - 1, rows, cols)
        )
        total = fg.sum(axis=0)
        fg /= np.maximum(total, 1.0)
        foreground.append(fg)

    for face in scene.faces:
        placement = place_face(face, levels, templates)
        if placement is None:
            raise SceneError(f"Face {face.coords} is representable at no level, neither by itself nor by its parts")
        level = levels[placement.level]
        rows, cols = shapes[placement.level]
        fg = foreground[placement.level]
        side = max(face.width, face.height)
        if placement.mode == "face":
            cx, cy = (face.x1 + face.x2) / 2, (face.y1 + face.y2) / 2
            row, col = _nearest_cell(cx, cy, level.scale, rows, cols)
            _plant(fg, FACE_CLASS, row, col, rng.uniform(*peak_range))
        else:
            for template in templates:
                px, py = face.x1 + template.ax * side, face.y1 + template.ay * side
                row, col = _nearest_cell(px, py, level.scale, rows, cols)
                _plant(fg, template.part, row, col, rng.uniform(*peak_range))
        log.debug(f"Planted face {face.coords} by {placement.mode} at level {level.scale:.4g}")

    heatmaps = []
    for level, fg in zip(levels, foreground):
        background = np.clip(1.0 - fg.sum(axis=0), 0.0, 1.0)
        heatmaps.append(
            HeatmapSet(
                np.concatenate([background[np.newaxis], fg]), level.scale, level_size=(level.height, level.width)
            )
        )
    return heatmaps


def random_scene(
    rng,
    height,
    width,
    levels,
    templates=proposals.DEFAULT_TEMPLATES,
    max_faces=3,
    face_jitter=(0.92, 1.08),
    part_jitter=(0.92, 1.05),
    attempts=50,
):
    """Non-overlapping square faces, each sized to be owned by exactly one level"""
    k = mean_face_ratio(templates)
    options = [("face", i, network.WINDOW / level.scale) for i, level in enumerate(levels)]
    if k is not None:
        options += [("parts", i, network.WINDOW * k / level.scale) for i, level in enumerate(levels)]

    faces = []
    for _ in range(int(rng.integers(1, max_faces + 1))):
        for _ in range(attempts):
            mode, index, nominal = options[int(rng.integers(len(options)))]
            side = nominal * rng.uniform(*(face_jitter if mode == "face" else part_jitter))
            margin = 0.45 * side + 2 * network.STRIDE / levels[index].scale
            if side + 2 * margin >= min(width, height):
                continue
            x = rng.uniform(margin, width - margin - side)
            y = rng.uniform(margin, height - margin - side)
            face = BBox(x, y, x + side, y + side, score=1.0)
            if place_face(face, levels, templates) != Placement(mode, index):
                continue
            if any(_too_close(face, other) for other in faces):
                continue
            faces.append(face)
            break
    return GroundTruthScene(height, width, tuple(faces))


def _too_close(a: BBox, b: BBox):
    gap = 0.5 * (a.width + b.width)
    return not (a.x2 + gap <= b.x1 or b.x2 + gap <= a.x1 or a.y2 + gap <= b.y1 or b.y2 + gap <= a.y1)


def recovered_faces(found, faces, iou_thresh=RECOVERY_IOU):
    """Faces with at least one proposal at IoU >= iou_thresh"""
    return [face for face in faces if any(iou(face, box) >= iou_thresh for box in found)]


### METRICS ###
@dataclass(frozen=True)
class EvalReport(object):
    true_positives: int = 0
    false_positives: int = 0
    num_truth: int = 0
    iou_thresh: float = 0.5
    images: int = 0
    # Measurements, only filled in by benchmarks
    seconds_per_image: Optional[float] = None
    level_counts: Tuple[int, ...] = ()
    workload_cells: int = 0

    @property
    def num_detections(self):
        return self.true_positives + self.false_positives

    @property
    def recall(self):
        return self.true_positives / self.num_truth if self.num_truth else 1.0

    @property
    def precision(self):
        return self.true_positives / self.num_detections if self.num_detections else 1.0

    def __add__(self, other):
        return EvalReport(
            self.true_positives + other.true_positives,
            self.false_positives + other.false_positives,
            self.num_truth + other.num_truth,
            self.iou_thresh,
            self.images + other.images,
        )

    def as_record(self):
        return {
            "images": self.images,
            "true_positives": self.true_positives,
            "false_positives": self.false_positives,
            "num_truth": self.num_truth,
            "recall": self.recall,
            "precision": self.precision,
            "iou_thresh": self.iou_thresh,
        }


def evaluate(detections, truth, iou_thresh=0.5) -> EvalReport:
    """Greedy matching, best detection first; each truth box is matched at most once"""
    truth = sorted(truth, key=lambda box: box.coords)
    matched = [False] * len(truth)
    true_positives = 0
    for det in sorted(detections, key=BBox.sort_key):
        best, best_iou = None, iou_thresh
        for i, gt in enumerate(truth):
            if matched[i]:
                continue
            overlap = iou(det, gt)
            if overlap >= best_iou and (best is None or overlap > best_iou):
                best, best_iou = i, overlap
        if best is not None:
            matched[best] = True
            true_positives += 1
    return EvalReport(true_positives, len(detections) - true_positives, len(truth), iou_thresh, images=1)


### FILE FORMATS ###
def format_detection(path, box: BBox):
    return f"{path} {box.x1:.4f} {box.y1:.4f} {box.x2:.4f} {box.y2:.4f} {box.score:.4f} {box.source}"


def load_detections(path) -> Dict[str, List[BBox]]:
    """Parse "<path> x1 y1 x2 y2 score source" lines, grouped by image path"""
    detections = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_nr, line in enumerate(fh, start=1):
            fields = line.rsplit(None, 6)
            if not line.strip():
                continue
            if len(fields) != 7:
                raise AnnotationError(f"{path}:{line_nr}: expected '<path> x1 y1 x2 y2 score source'")
            try:
                x1, y1, x2, y2, score = (float(v) for v in fields[1:6])
                box = BBox(x1, y1, x2, y2, score, int(fields[6]))
            except ValueError as e:
                raise AnnotationError(f"{path}:{line_nr}: {e}")
            detections.setdefault(fields[0], []).append(box)
    return detections


def load_annotations(path) -> Dict[str, List[BBox]]:
    """Parse blocks of "<relative-path> <n>" followed by n lines "x1 y1 x2 y2" """
    annotations = {}
    with open(path, "r", encoding="utf-8") as fh:
        lines = [(nr, line.strip()) for nr, line in enumerate(fh, start=1) if line.strip()]

    pos = 0
    while pos < len(lines):
        line_nr, header = lines[pos]
        fields = header.rsplit(None, 1)
        if len(fields) != 2 or not fields[1].isdigit():
            raise AnnotationError(f"{path}:{line_nr}: expected '<relative-path> <n>', got {header!r}")
        image_path, count = fields[0], int(fields[1])
        boxes = []
        for offset in range(1, count + 1):
            if pos + offset >= len(lines):
                raise AnnotationError(f"{path}:{line_nr}: {image_path} announces {count} box(es), found {offset - 1}")
            box_nr, box_line = lines[pos + offset]
            values = box_line.split()
            try:
                if len(values) != 4:
                    raise ValueError(f"expected 'x1 y1 x2 y2', got {box_line!r}")
                x1, y1, x2, y2 = (float(v) for v in values)
            except ValueError as e:
                raise AnnotationError(f"{path}:{box_nr}: {e}")
            if not (x1 < x2 and y1 < y2):
                raise AnnotationError(f"{path}:{box_nr}: box ({x1}, {y1}, {x2}, {y2}) has no area")
            boxes.append(BBox(x1, y1, x2, y2, score=1.0))
        annotations[image_path] = boxes
        pos += count + 1
    return annotations


def format_annotations(annotations):
    lines = []
    for image_path, boxes in annotations.items():
        lines.append(f"{image_path} {len(boxes)}")
        lines += [f"{b.x1:.4f} {b.y1:.4f} {b.x2:.4f} {b.y2:.4f}" for b in boxes]
    return "".join(f"{line}\n" for line in lines)


def annotation_key(annotations, image_path):
    """The annotation path an image path refers to, relative annotation paths match by suffix"""
    if image_path in annotations:
        return image_path
    normalized = os.path.normpath(image_path)
    for relative in annotations:
        normalized_relative = os.path.normpath(relative)
        if normalized == normalized_relative or normalized.endswith(os.sep + normalized_relative):
            return relative
    return None


def lookup_truth(annotations, image_path):
    key = annotation_key(annotations, image_path)
    return None if key is None else annotations[key]


### BENCHMARKS ###
@dataclass(frozen=True)
class ConfigRun(object):
    name: str
    pyramid_cfg: object
    report: EvalReport
    run_seconds: Tuple[float, ...] = ()
    level_scales: Tuple[Tuple[float, ...], ...] = ()

    @property
    def median_seconds(self):
        return statistics.median(self.run_seconds) if self.run_seconds else None

    def as_record(self):
        record = {
            "config": self.name,
            "scale_factor": self.pyramid_cfg.scale_factor,
            "min_face": self.pyramid_cfg.min_face,
            "extra_layer": self.pyramid_cfg.extra_layer,
            "images": self.report.images,
            "median_set_seconds": self.median_seconds,
            "seconds_per_image": self.report.seconds_per_image,
            "level_counts": list(self.report.level_counts),
            "level_scales": [list(scales) for scales in self.level_scales],
            "workload_cells": self.report.workload_cells,
        }
        if self.report.num_truth or self.report.num_detections:
            record.update(recall=self.report.recall, precision=self.report.precision)
        return record


@dataclass(frozen=True)
class BenchReport(object):
    dense: ConfigRun
    sparse: ConfigRun
    skipped: Tuple[str, ...] = ()

    @property
    def workload_ratio(self):
        if not self.dense.report.workload_cells:
            return None
        return self.sparse.report.workload_cells / self.dense.report.workload_cells


def time_runs(function, repeats):
    """One warm-up call, then repeats timed calls on the monotonic clock"""
    function()
    timings = []
    for _ in range(repeats):
        start = time.perf_counter()
        function()
        timings.append(time.perf_counter() - start)
    return tuple(timings)


def _run_config(name, detector, images, annotations, iou_thresh, repeats):
    results = {}

    def detect_all():
        for path, image in images:
            results[path] = detector.detect(image)

    timings = time_runs(detect_all, repeats) if images else ()
    report = EvalReport(iou_thresh=iou_thresh)
    has_truth = False
    for path, _ in images:
        truth = lookup_truth(annotations, path) if annotations else None
        if truth is not None:
            has_truth = True
            report = report + evaluate(results[path].proposals, truth, iou_thresh)

    levels = [results[path].levels for path, _ in images]
    per_image = statistics.median(timings) / len(images) if timings else None
    report = EvalReport(
        report.true_positives if has_truth else 0,
        report.false_positives if has_truth else 0,
        report.num_truth,
        iou_thresh,
        images=len(images),
        seconds_per_image=per_image,
        level_counts=tuple(len(image_levels) for image_levels in levels),
        workload_cells=sum(pyramid_workload(image_levels) for image_levels in levels),
    )
    log.info(f"{name}: {len(images)} image(s), workload {report.workload_cells} cells")
    level_scales = tuple(tuple(level.scale for level in image_levels) for image_levels in levels)
    return ConfigRun(name, detector.pyramid_cfg, report, timings, level_scales)


def bench_pyramids(
    image_paths,
    weights,
    cfg_dense,
    cfg_sparse,
    proposal_cfg,
    templates=proposals.DEFAULT_TEMPLATES,
    annotations=None,
    iou_thresh=0.5,
    repeats=5,
    dense_proposal_cfg=None,
) -> BenchReport:
    """Time the full proposal stage on the same images under a dense and a sparse pyramid"""
    images, skipped = [], []
    for path in image_paths:
        try:
            image = image_io.load_image(path)
        except (OSError, image_io.ImageFormatError) as e:
            log.warning(f"Skipping unreadable image {path}: {e}")
            skipped.append(path)
            continue
        try:
            for cfg in (cfg_dense, cfg_sparse):
                plan_levels(image.height, image.width, cfg)
        except PyramidError as e:
            log.warning(f"Skipping {path}: {e}")
            skipped.append(path)
            continue
        images.append((path, image))

    dense = ProposalDetector(weights, cfg_dense, dense_proposal_cfg or proposal_cfg, templates)
    sparse = ProposalDetector(weights, cfg_sparse, proposal_cfg, templates)
    return BenchReport(
        _run_config("dense", dense, images, annotations, iou_thresh, repeats),
        _run_config("sparse", sparse, images, annotations, iou_thresh, repeats),
        tuple(skipped),
    )


### SYNTHETIC RECOVERY ###
@dataclass(frozen=True)
class SceneOutcome(object):
    index: int
    faces: int
    recovered: int
    proposals: int

    @property
    def passed(self):
        return self.recovered == self.faces

    def as_record(self):
        return {
            "scene": self.index,
            "faces": self.faces,
            "recovered": self.recovered,
            "proposals": self.proposals,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class SynthReport(object):
    seed: int
    noise: float
    outcomes: Tuple[SceneOutcome, ...] = ()
    rejected: int = 0

    @property
    def scenes(self):
        return len(self.outcomes)

    @property
    def passed(self):
        return sum(outcome.passed for outcome in self.outcomes)

    @property
    def pass_rate(self):
        return self.passed / self.scenes if self.scenes else 1.0

    @property
    def required_rate(self):
        return 1.0 if self.noise == 0 else REQUIRED_RECOVERY

    @property
    def success(self):
        return self.pass_rate >= self.required_rate


def run_synthetic(
    scenes,
    seed,
    levels,
    height,
    width,
    proposal_cfg,
    noise=0.3,
    templates=proposals.DEFAULT_TEMPLATES,
    num_classes=network.DEFAULT_NUM_CLASSES,
):
    """Plant random scenes into heatmaps and check that the proposals recover every face"""
    outcomes = []
    rejected = 0
    for index in range(scenes):
        rng = np.random.default_rng([seed, index])
        scene = random_scene(rng, height, width, levels, templates)
        try:
            heatmaps = plant_heatmaps(scene, levels, templates, noise, int(rng.integers(2**32)), num_classes)
        except SceneError as e:
            log.warning(f"Scene {index} rejected: {e}")
            rejected += 1
            continue
        found = proposals.generate_proposals(heatmaps, templates, proposal_cfg, image_size=(height, width))
        recovered = recovered_faces(found, scene.faces)
        outcome = SceneOutcome(index, len(scene.faces), len(recovered), len(found))
        if not outcome.passed:
            log.debug(f"Scene {index}: recovered {len(recovered)} of {len(scene.faces)} face(s)")
        outcomes.append(outcome)
    return SynthReport(seed, noise, tuple(outcomes), rejected)
