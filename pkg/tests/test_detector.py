import concurrent.futures
import logging

import numpy as np
import pytest

from face_proposals import network, proposals, pyramid
from face_proposals.detector import ProposalDetector
from face_proposals.image_io import Image
from face_proposals.network import FACE_CLASS
from face_proposals.proposals import NOSE, ProposalConfig, TemplateError
from face_proposals.pyramid import PyramidConfig


def scene(seed=0, height=60, width=80):
    return Image(np.random.default_rng(seed).uniform(-1, 1, size=(height, width, 3)))


def test_uniform_weights_give_no_proposals(uniform_weights):
    cfg = PyramidConfig(scale_factor=0.5, min_face=12)
    result = ProposalDetector(uniform_weights, cfg, ProposalConfig()).detect(scene())
    assert result.proposals == []
    assert result.levels == pyramid.plan_levels(60, 80, cfg)
    assert result.workload == 60 * 80 + 30 * 40 + 15 * 20


def test_heatmaps_per_level(weights):
    detector = ProposalDetector(weights, PyramidConfig(scale_factor=0.5, min_face=12), ProposalConfig())
    levels, heatmaps = detector.heatmaps(scene(1))
    assert [h.level_scale for h in heatmaps] == [level.scale for level in levels]
    assert [(h.rows, h.cols) for h in heatmaps] == [network.heatmap_shape(l.height, l.width) for l in levels]


def test_detect_is_deterministic(weights):
    detector = ProposalDetector(weights, PyramidConfig(scale_factor=0.5, min_face=12), ProposalConfig(tau_face=0.3))
    image = scene(2)
    first = detector.detect(image)
    with concurrent.futures.ThreadPoolExecutor(max_workers=3) as pool:
        second = detector.detect(image, executor=pool)
    assert first == second
    for box in first.proposals:
        assert 0 <= box.x1 <= box.x2 <= 80
        assert 0 <= box.y1 <= box.y2 <= 60


def test_warns_about_parts_without_template(caplog):
    weights = network.random_weights(0, num_classes=7)
    with caplog.at_level(logging.WARNING):
        ProposalDetector(weights, PyramidConfig(), ProposalConfig())
    assert "No templates for part class(es) class5, class6" in caplog.text

    caplog.clear()
    with caplog.at_level(logging.WARNING):
        ProposalDetector(weights, PyramidConfig(), ProposalConfig(use_parts=False))
    assert caplog.text == ""


def test_untemplated_part_class_is_ignored(biased_weights):
    weights = biased_weights(5, num_classes=8)
    image = scene(3, height=40, width=40)
    result = ProposalDetector(weights, PyramidConfig(), ProposalConfig()).detect(image)
    assert result.proposals == []

    # Without the detector's restriction the same heatmaps carry peaks no template can explain
    levels, heatmaps = ProposalDetector(weights, PyramidConfig(), ProposalConfig()).heatmaps(image)
    with pytest.raises(TemplateError, match="part class 5"):
        proposals.generate_proposals(heatmaps, proposals.DEFAULT_TEMPLATES, ProposalConfig())


def test_templated_part_class_still_proposes(biased_weights):
    weights = biased_weights(NOSE, num_classes=8)
    result = ProposalDetector(weights, PyramidConfig(), ProposalConfig()).detect(scene(3, height=40, width=40))
    assert result.proposals
    assert all(box.source == FACE_CLASS for box in result.proposals)
