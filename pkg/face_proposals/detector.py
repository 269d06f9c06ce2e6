"""Runs the proposal stage on one image: pyramid, network, proposals"""

# Standard
import logging
from dataclasses import dataclass
from typing import List

# Own
from face_proposals import network, proposals, pyramid
from face_proposals.proposals import BBox

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectionResult(object):
    proposals: List[BBox]
    levels: List[pyramid.LevelGeometry]

    @property
    def workload(self):
        return pyramid.pyramid_workload(self.levels)


class ProposalDetector(object):
    """Holds the read-only weights and configuration shared by all images"""

    def __init__(self, weights, pyramid_cfg, proposal_cfg, templates=proposals.DEFAULT_TEMPLATES):
        self.weights = weights
        self.pyramid_cfg = pyramid_cfg
        self.proposal_cfg = proposal_cfg
        self.templates = tuple(templates)

        covered = {template.part for template in self.templates}
        part_ids = [
            cid for cid in range(weights.num_classes) if cid not in (network.BACKGROUND_CLASS, network.FACE_CLASS)
        ]
        missing = [weights.class_names[cid] for cid in part_ids if cid not in covered]
        # None scans every part class
        self.part_classes = None
        if missing and proposal_cfg.use_parts:
            log.warning(f"No templates for part class(es) {', '.join(missing)}; their peaks are ignored")
            self.part_classes = tuple(cid for cid in part_ids if cid in covered)

    def heatmaps(self, image):
        levels = pyramid.build_pyramid(image, self.pyramid_cfg)
        return levels, [network.forward_fcn(self.weights, level.image, level.scale) for level in levels]

    def detect(self, image, executor=None):
        levels, heatmaps = self.heatmaps(image)
        boxes = proposals.generate_proposals(
            heatmaps,
            self.templates,
            self.proposal_cfg,
            image_size=(image.height, image.width),
            executor=executor,
            part_classes=self.part_classes,
        )
        log.debug(f"{len(boxes)} proposal(s) from {len(levels)} level(s)")
        return DetectionResult(boxes, [level.geometry for level in levels])
