import math
import warnings

import numpy as np
import pytest
import torch

from semcom import enhancement as E
from semcom.channel import AwgnChannel
from semcom.codec import BaseCodec
from semcom.core import BoundingBox, ChannelConfig


def test_net_shape_and_zero_init():
    net = E.EnhancementNet(width=0.0625)
    x = torch.rand(3, 32, 48)
    out = net(x)
    assert out.shape == x.shape and torch.equal(out, torch.zeros_like(x))
    assert net(torch.rand(2, 3, 16, 16)).shape == (2, 3, 16, 16)


def test_sidecar_roundtrip(tmp_path):
    boxes = [BoundingBox(1, 2, 30, 40, "panel", 0.8), BoundingBox(0, 0, 16, 16, "gauge", 1.0)]
    p = tmp_path / "a.txt"
    E.write_sidecar(p, boxes)
    assert E.read_sidecar(p) == boxes
    p.write_text("# comment\n\npanel 1 2 3\n")
    with pytest.raises(ValueError):
        E.read_sidecar(p)


def test_detect_rois_clamps_and_expands():
    x = torch.rand(3, 64, 64)
    det = E.FixtureDetector()
    det.register(x, [BoundingBox(50, 3, 90, 20, "p", 0.9), BoundingBox(70, 70, 80, 80)])
    res = E.detect_rois(x, det)
    assert not res.failed and len(res.boxes) == 1
    b = res.boxes[0]
    assert (b.x0, b.x1, b.width % 16, b.height % 16) == (48, 64, 0, 0)


def test_detector_failure_degrades():
    def broken(_):
        raise RuntimeError("model crashed")

    with pytest.warns(RuntimeWarning):
        res = E.detect_rois(torch.rand(3, 32, 32), broken)
    assert res.failed and res.boxes == []


def test_callable_detector_adapter():
    det = E.CallableDetector(lambda arr: [(0, 0, 10.2, 12, "panel", 0.9), (0, 0, 5, 5, "x", 0.1)],
                             min_confidence=0.5)
    boxes = det(torch.rand(3, 32, 32))
    assert boxes == [BoundingBox(0, 0, 11, 12, "panel", 0.9)]


def test_roi_diff_shape_check():
    with pytest.raises(ValueError):
        E.roi_diff(torch.rand(3, 32, 32), torch.rand(3, 8, 8), BoundingBox(0, 0, 16, 16))


def _scenario(seed=0):
    g = torch.Generator().manual_seed(seed)
    x_prime = torch.rand(3, 64, 64, generator=g)
    boxes = [BoundingBox(0, 0, 32, 32, confidence=0.5), BoundingBox(16, 16, 48, 48, confidence=0.9)]
    subs = [torch.rand(3, 32, 32, generator=g) for _ in boxes]
    return x_prime, boxes, subs


def test_negation_net_restores_roi():
    x_prime, boxes, subs = _scenario()
    b = boxes[0]
    diff = E.roi_diff(x_prime, subs[0], b)
    out = E.enhance_and_compose(x_prime, diff, b, lambda d: -d)
    assert torch.allclose(E.crop(out, b), subs[0], atol=1e-6)
    mask = torch.ones(64, 64, dtype=torch.bool)
    mask[b.slices()] = False
    assert torch.equal(out[:, mask], x_prime[:, mask])


def test_zero_net_is_identity():
    x_prime, boxes, subs = _scenario(1)
    diffs = [E.roi_diff(x_prime, s, b) for s, b in zip(subs, boxes)]
    out = E.enhance_and_compose(x_prime, diffs, boxes, E.EnhancementNet(0.0625))
    assert torch.equal(out, x_prime)


def test_overlapping_boxes_accumulate_in_confidence_order():
    x_prime = torch.full((3, 64, 64), 0.5)
    boxes = [BoundingBox(0, 0, 32, 32, confidence=0.2), BoundingBox(16, 16, 48, 48, confidence=0.8)]
    diffs = [torch.full((3, 32, 32), 0.1), torch.full((3, 32, 32), 0.2)]
    out = E.enhance_and_compose(x_prime, diffs, boxes, lambda d: d, clamp=False)
    assert torch.allclose(out[:, 20, 20], torch.full((3,), 0.8))
    assert torch.allclose(out[:, 5, 5], torch.full((3,), 0.6))
    assert E.by_confidence(boxes) == [1, 0]


def test_transmit_roi_requires_multiple_of_16(tiny_config):
    codec = BaseCodec.from_config(tiny_config)
    with pytest.raises(ValueError):
        E.transmit_roi(torch.rand(3, 64, 64), BoundingBox(0, 0, 20, 32), codec, AwgnChannel())


def test_enhanced_transmission_paths(tiny_config):
    torch.manual_seed(0)
    codec = BaseCodec.from_config(tiny_config)
    x = torch.rand(3, 64, 64)
    det = E.FixtureDetector()
    det.register(x, [BoundingBox(10, 10, 30, 40)])
    ch = AwgnChannel(ChannelConfig(math.inf))
    out = E.enhanced_transmission(x, codec, ch, det, E.EnhancementNet(0.0625), config=tiny_config)
    assert len(out.boxes) == 1 and torch.equal(out.x_final, out.x_prime)
    assert out.rate.roi_side_info_bits == 64 and out.rate.roi_latent_bits > 0
    plain = E.enhanced_transmission(x, codec, ch, det, None, config=tiny_config)
    assert plain.boxes == [] and plain.rate.roi_latent_bits == 0
