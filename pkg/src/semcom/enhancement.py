"""Region-of-interest enhancement: detection, separate ROI transmission,
difference computation, enhancement network and composition."""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Protocol, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from . import core
from .channel import AwgnChannel, LdpcCode
from .codec import BaseCodec, scaled
from .core import BoundingBox, ExperimentConfig, RateReport, compute_bpp
from .pipeline import ANALOG, transmit_image


class EnhancementNet(nn.Module):
    """Ten stride-1 convolutions; output has the input's shape.

    The last layer starts at zero so an untrained net leaves the
    reconstruction untouched.
    """

    widths = (64, 128, 256, 512, 1024, 512, 256, 128, 64)

    def __init__(self, width: float = 1.0, zero_init: bool = True):
        super().__init__()
        c = [scaled(v, width) for v in self.widths]
        layers: list[nn.Module] = [nn.Conv2d(3, c[0], 7, 1, 3), nn.LeakyReLU(0.2)]
        for cin, cout in zip(c, c[1:]):
            layers += [nn.Conv2d(cin, cout, 3, 1, 1), nn.LeakyReLU(0.2)]
        last = nn.Conv2d(c[-1], 3, 7, 1, 3)
        if zero_init:
            nn.init.zeros_(last.weight)
            nn.init.zeros_(last.bias)
        layers.append(last)
        self.net = nn.Sequential(*layers)

    def forward(self, x: Tensor) -> Tensor:
        single = x.dim() == 3
        out = self.net(x.unsqueeze(0) if single else x)
        return out[0] if single else out


# ---------------------------------------------------------------------------
# detection
# ---------------------------------------------------------------------------


class Detector(Protocol):
    def __call__(self, image: Tensor) -> list[BoundingBox]: ...


def image_key(image: Tensor) -> str:
    """Content hash of an image at 8-bit precision."""
    arr = np.round(image.detach().cpu().double().clamp(0, 1).numpy() * 255).astype(np.uint8)
    return hashlib.sha1(arr.tobytes() + str(arr.shape).encode()).hexdigest()


class FixtureDetector:
    """Returns annotated boxes for images it has been told about."""

    def __init__(self) -> None:
        self._boxes: dict[str, list[BoundingBox]] = {}

    def register(self, image: Tensor, boxes: Iterable[BoundingBox]) -> None:
        self._boxes[image_key(image)] = list(boxes)

    def __call__(self, image: Tensor) -> list[BoundingBox]:
        return list(self._boxes.get(image_key(image), []))


class CallableDetector:
    """Adapter for an external model returning ``(x0, y0, x1, y1, label, conf)``
    rows for an HxWx3 uint8 array."""

    def __init__(self, model: Callable[[np.ndarray], Iterable[Sequence]], min_confidence: float = 0.0):
        self.model = model
        self.min_confidence = min_confidence

    def __call__(self, image: Tensor) -> list[BoundingBox]:
        arr = np.round(image.detach().cpu().clamp(0, 1).numpy().transpose(1, 2, 0) * 255).astype(np.uint8)
        boxes = []
        for x0, y0, x1, y1, label, conf in self.model(arr):
            if conf >= self.min_confidence:
                boxes.append(BoundingBox(int(x0), int(y0), int(np.ceil(x1)), int(np.ceil(y1)), str(label), float(conf)))
        return boxes


def read_sidecar(path: str | Path) -> list[BoundingBox]:
    """Parse ``label x0 y0 x1 y1 confidence`` lines; blank/# lines skipped."""
    boxes = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
        label, *coords, conf = parts
        x0, y0, x1, y1 = (int(round(float(v))) for v in coords)
        boxes.append(BoundingBox(x0, y0, x1, y1, label, float(conf)))
    return boxes


def write_sidecar(path: str | Path, boxes: Iterable[BoundingBox]) -> None:
    lines = [f"{b.label} {b.x0} {b.y0} {b.x1} {b.y1} {b.confidence:g}" for b in boxes]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


class RoiDetection(NamedTuple):
    boxes: list[BoundingBox]
    failed: bool


def detect_rois(x: Tensor, det: Detector) -> RoiDetection:
    """Run the detector, clamp to the image and grow boxes to multiples of 16.

    A detector exception yields no boxes and ``failed=True``; transmission
    carries on without enhancement.
    """
    h, w = x.shape[-2:]
    try:
        raw = det(x)
    except Exception as exc:  # noqa: BLE001 - any detector fault degrades to no ROIs
        warnings.warn(f"detector failed: {exc}", RuntimeWarning, stacklevel=2)
        return RoiDetection([], True)
    boxes = []
    for box in raw:
        clamped = box.clamp(w, h)
        if clamped is not None:
            boxes.append(clamped.expand_to_multiple(w, h))
    return RoiDetection(boxes, False)


# ---------------------------------------------------------------------------
# ROI transmission and composition
# ---------------------------------------------------------------------------


def crop(x: Tensor, box: BoundingBox) -> Tensor:
    ys, xs = box.slices()
    return x[..., ys, xs]


def transmit_roi(
    x: Tensor,
    box: BoundingBox,
    codec: BaseCodec,
    ch: AwgnChannel,
    **kw,
) -> Tensor:
    """Send the ROI crop through the base codec on its own."""
    if box.width % 16 or box.height % 16:
        raise ValueError(f"ROI {box.width}x{box.height} is not a multiple of 16")
    return transmit_image(crop(x, box), codec, ch, **kw).reconstruction


def roi_diff(x_prime: Tensor, x_sub_prime: Tensor, box: BoundingBox) -> Tensor:
    """ROI cut from the full reconstruction minus the separately sent ROI."""
    cut = crop(x_prime, box)
    if cut.shape != x_sub_prime.shape:
        raise ValueError(f"ROI shape {tuple(x_sub_prime.shape)} != crop {tuple(cut.shape)}")
    return cut - x_sub_prime


def by_confidence(boxes: Sequence[BoundingBox]) -> list[int]:
    return sorted(range(len(boxes)), key=lambda i: -boxes[i].confidence)


def enhance_and_compose(
    x_prime: Tensor,
    x_diffs: Tensor | Sequence[Tensor],
    boxes: BoundingBox | Sequence[BoundingBox],
    net: Callable[[Tensor], Tensor],
    *,
    clamp: bool = True,
) -> Tensor:
    """Add the enhanced differences back into their boxes.

    Boxes are applied in descending confidence; overlapping regions
    accumulate. Pixels outside every box are copied from ``x_prime``.
    """
    if isinstance(boxes, BoundingBox):
        boxes, x_diffs = [boxes], [x_diffs]
    out = x_prime
    for i in by_confidence(boxes):
        box, diff = boxes[i], x_diffs[i]
        if diff.shape[-2:] != (box.height, box.width):
            raise ValueError("difference image does not match its box")
        delta = net(diff)
        h, w = x_prime.shape[-2:]
        padded = F.pad(delta, (box.x0, w - box.x1, box.y0, h - box.y1))
        out = out + padded
    return out.clamp(0.0, 1.0) if clamp else out


@dataclass
class EnhancedTransmission:
    x_prime: Tensor
    x_final: Tensor
    boxes: list[BoundingBox]
    roi_reconstructions: list[Tensor]
    rate: RateReport | None = None
    detector_failed: bool = False


def enhanced_transmission(
    x: Tensor,
    codec: BaseCodec,
    ch: AwgnChannel,
    detector: Detector,
    net: nn.Module | Callable[[Tensor], Tensor] | None,
    *,
    config: ExperimentConfig | None = None,
    transport: str = ANALOG,
    code: LdpcCode | None = None,
    snr_db: float | None = None,
    requantize: bool = False,
) -> EnhancedTransmission:
    """Full transmitter/receiver path for one (3, H, W) image."""
    kw = dict(transport=transport, code=code, snr_db=snr_db, requantize=requantize)
    x_prime = transmit_image(x, codec, ch, **kw).reconstruction
    det = detect_rois(x, detector) if net is not None else RoiDetection([], False)
    subs = [transmit_roi(x, b, codec, ch, **kw) for b in det.boxes]
    if det.boxes:
        diffs = [roi_diff(x_prime, s, b) for s, b in zip(subs, det.boxes)]
        with torch.no_grad():
            x_final = enhance_and_compose(x_prime, diffs, det.boxes, net)
    else:
        x_final = x_prime
    rate = None
    if config is not None:
        rate = compute_bpp(config, det.boxes, x.shape[-2:], mode=core.DIGITAL if transport != ANALOG else core.ANALOG)
    return EnhancedTransmission(x_prime, x_final, det.boxes, subs, rate, det.failed)
