"""Domain types, experiment configuration and exact rate accounting."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import torch
import yaml

MULTIPLE = 16
ROI_SIDE_INFO_BITS = 64  # 4 coordinates x 16 bits

ANALOG = "analog_jscc"
DIGITAL = "digital_ldpc"


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuantizerCodebook:
    """Ordered scalar quantization centers."""

    centers: tuple[float, ...]

    def __post_init__(self) -> None:
        c = tuple(float(v) for v in self.centers)
        object.__setattr__(self, "centers", c)
        if len(c) < 2:
            raise ValueError("codebook needs at least 2 centers")
        if not all(math.isfinite(v) for v in c):
            raise ValueError("codebook centers must be finite")
        if any(b <= a for a, b in zip(c, c[1:])):
            raise ValueError("codebook centers must be strictly increasing")

    @classmethod
    def uniform(cls, size: int = 16, low: float = -2.0, high: float = 2.0) -> "QuantizerCodebook":
        return cls(tuple(np.linspace(low, high, size).tolist()))

    def __len__(self) -> int:
        return len(self.centers)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.centers, dtype=np.float64)

    @property
    def is_power_of_two(self) -> bool:
        n = len(self.centers)
        return n & (n - 1) == 0

    @property
    def bits_per_index(self) -> int:
        """Fixed-length code width; exact when the size is a power of two."""
        return (len(self.centers) - 1).bit_length()


@dataclass(frozen=True)
class BoundingBox:
    """Half-open pixel rectangle ``[x0, x1) x [y0, y1)``."""

    x0: int
    y0: int
    x1: int
    y1: int
    label: str = "roi"
    confidence: float = 1.0

    def __post_init__(self) -> None:
        for name in ("x0", "y0", "x1", "y1"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise ValueError(f"empty box {self}")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"negative box coordinates {self}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def validate(self, width: int, height: int) -> None:
        if self.x1 > width or self.y1 > height:
            raise ValueError(f"{self} exceeds image bounds {width}x{height}")

    def clamp(self, width: int, height: int) -> "BoundingBox | None":
        """Clip to the image; ``None`` when nothing is left."""
        x0, y0 = max(self.x0, 0), max(self.y0, 0)
        x1, y1 = min(self.x1, width), min(self.y1, height)
        if x1 <= x0 or y1 <= y0:
            return None
        return dataclasses.replace(self, x0=x0, y0=y0, x1=x1, y1=y1)

    def expand_to_multiple(self, width: int, height: int, multiple: int = MULTIPLE) -> "BoundingBox":
        """Grow (never shrink) to a multiple of ``multiple`` on both sides.

        Growth goes right/down first and shifts left/up when the image
        border is hit. The image must itself be a multiple of ``multiple``.
        """
        x0, x1 = _expand_span(self.x0, self.x1, width, multiple)
        y0, y1 = _expand_span(self.y0, self.y1, height, multiple)
        return dataclasses.replace(self, x0=x0, y0=y0, x1=x1, y1=y1)

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y1), slice(self.x0, self.x1)


def _expand_span(a: int, b: int, limit: int, multiple: int) -> tuple[int, int]:
    size = -(-(b - a) // multiple) * multiple
    if size > limit:
        raise ValueError(f"cannot fit a span of {size} in {limit} pixels")
    b = a + size
    if b > limit:
        a, b = limit - size, limit
    return a, b


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float = 10.0
    gain: float = 1.0
    mode: str = ANALOG

    def __post_init__(self) -> None:
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ValueError("snr_db must be finite (or +inf to disable noise)")
        if not self.gain > 0:
            raise ValueError("channel gain must be positive")
        if self.mode not in (ANALOG, DIGITAL):
            raise ValueError(f"unknown channel mode {self.mode!r}")

    @property
    def noiseless(self) -> bool:
        return self.snr_db == math.inf


@dataclass(frozen=True)
class RateReport:
    latent_bits: int
    roi_side_info_bits: int
    roi_latent_bits: int
    total_pixels: int
    bpp: float = field(default=float("nan"))

    def __post_init__(self) -> None:
        if self.total_pixels <= 0:
            raise ValueError("total_pixels must be positive")
        exact = self.total_bits / self.total_pixels
        if math.isnan(self.bpp):
            object.__setattr__(self, "bpp", exact)
        elif self.bpp != exact:
            raise ValueError(f"bpp {self.bpp} inconsistent with bit counts ({exact})")

    @property
    def total_bits(self) -> int:
        return self.latent_bits + self.roi_side_info_bits + self.roi_latent_bits

    @property
    def bpp_fraction(self) -> Fraction:
        return Fraction(self.total_bits, self.total_pixels)


# ---------------------------------------------------------------------------
# experiment configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CodebookConfig:
    size: int = 16
    low: float = -2.0
    high: float = 2.0

    def build(self) -> QuantizerCodebook:
        return QuantizerCodebook.uniform(self.size, self.low, self.high)


@dataclass(frozen=True)
class ModelConfig:
    latent_channels: int = 3
    width: float = 1.0
    rrdb_blocks: int = 9
    rrdb_growth: int = 32
    rrdb_scale: float = 0.2


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0  # perceptual weight, base system
    beta: float = 0.15  # adversarial weight, final phase
    enhancement_alpha: float = 0.5  # SSIM weight, enhancement objective

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "enhancement_alpha"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 8
    crop: int = 256
    initial_steps: int = 1000
    final_steps: int = 1000
    enhancement_steps: int = 500
    enhancement_lr: float = 1e-4
    finetune_lr: float = 1e-5


@dataclass(frozen=True)
class ChannelSettings:
    snr_range: tuple[float, float] = (0.0, 10.0)
    gain: float = 1.0
    mode: str = ANALOG
    requantize: bool = False
    ldpc_n: int = 1024
    ldpc_max_iter: int = 50
    ldpc_seed: int = 0


@dataclass(frozen=True)
class DataConfig:
    train_dir: str | None = None
    eval_dir: str | None = None
    policy: str = "pad"


@dataclass(frozen=True)
class ExperimentConfig:
    codebook: CodebookConfig = field(default_factory=CodebookConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    channel: ChannelSettings = field(default_factory=ChannelSettings)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "ExperimentConfig":
        return _build(cls, data or {})

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        text = Path(path).read_text(encoding="utf-8")
        return cls.from_dict(yaml.safe_load(text))

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True), encoding="utf-8")

    def override(self, **dotted: Any) -> "ExperimentConfig":
        """Return a copy with ``section.field`` style overrides applied."""
        data = self.to_dict()
        for key, value in dotted.items():
            node = data
            *parents, leaf = key.replace("__", ".").split(".")
            for p in parents:
                if p not in node or not isinstance(node[p], dict):
                    raise KeyError(f"unknown config section {p!r} in {key!r}")
                node = node[p]
            if leaf not in node:
                raise KeyError(f"unknown config field {key!r}")
            node[leaf] = value
        return type(self).from_dict(data)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls: type, data: dict[str, Any]) -> Any:
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise KeyError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for name, value in data.items():
        f = known[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value or {})
        elif isinstance(default, tuple):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Preprocessed:
    """A (3, H, W) float tensor plus the pre-padding size needed to undo it."""

    tensor: torch.Tensor
    original_size: tuple[int, int]  # (height, width)

    def restore(self, image: torch.Tensor | None = None) -> torch.Tensor:
        h, w = self.original_size
        t = self.tensor if image is None else image
        return t[..., :h, :w]


def _next_multiple(n: int, multiple: int = MULTIPLE) -> int:
    return -(-n // multiple) * multiple


def as_hwc_float(image: Any) -> np.ndarray:
    """Normalise PIL images / arrays to float64 HWC in [0, 1]."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected a 3-channel HxWx3 image, got shape {arr.shape}")
    if arr.shape[0] <= 0 or arr.shape[1] <= 0:
        raise ValueError("image must have positive dimensions")
    if np.issubdtype(arr.dtype, np.integer):
        return arr.astype(np.float64) / 255.0
    return np.clip(arr.astype(np.float64), 0.0, 1.0)


def preprocess(image: Any, policy: str = "pad") -> Preprocessed:
    """Convert a decoded image to a (3, H, W) tensor with H, W multiples of 16.

    ``pad`` reflect-pads bottom/right and remembers the original size;
    ``center_crop`` cuts the largest centred multiple-of-16 window.
    """
    arr = as_hwc_float(image)
    h, w = arr.shape[:2]
    if policy == "pad":
        ph, pw = _next_multiple(h) - h, _next_multiple(w) - w
        if ph or pw:
            mode = "reflect" if h > 1 and w > 1 else "edge"
            arr = np.pad(arr, ((0, ph), (0, pw), (0, 0)), mode=mode)
        size = (h, w)
    elif policy == "center_crop":
        ch, cw = h // MULTIPLE * MULTIPLE, w // MULTIPLE * MULTIPLE
        if ch == 0 or cw == 0:
            raise ValueError(f"image {h}x{w} is smaller than {MULTIPLE} pixels")
        top, left = (h - ch) // 2, (w - cw) // 2
        arr = arr[top : top + ch, left : left + cw]
        size = (ch, cw)
    else:
        raise ValueError(f"unknown preprocessing policy {policy!r}")
    t = torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).float()
    return Preprocessed(t, size)


def check_image(x: torch.Tensor, *, multiple: int | None = MULTIPLE) -> None:
    if x.dim() not in (3, 4) or x.shape[-3] != 3:
        raise ValueError(f"expected (3, H, W) or (B, 3, H, W) image, got {tuple(x.shape)}")
    if multiple and (x.shape[-1] % multiple or x.shape[-2] % multiple):
        raise ValueError(
            f"image dims {tuple(x.shape[-2:])} not divisible by {multiple}; preprocess first"
        )


def load_image(path: str | Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def to_uint8(x: torch.Tensor) -> np.ndarray:
    """(3, H, W) tensor in [0, 1] to HxWx3 uint8."""
    arr = x.detach().clamp(0, 1).cpu().double().numpy().transpose(1, 2, 0)
    return np.round(arr * 255.0).astype(np.uint8)


def save_png(x: torch.Tensor, path: str | Path) -> None:
    from PIL import Image

    Image.fromarray(to_uint8(x)).save(path, format="PNG")


# ---------------------------------------------------------------------------
# rate accounting
# ---------------------------------------------------------------------------


def latent_bits_for(height: int, width: int, latent_channels: int, codebook_size: int) -> int:
    if height % MULTIPLE or width % MULTIPLE:
        raise ValueError(f"dims {height}x{width} not divisible by {MULTIPLE}")
    bits = (codebook_size - 1).bit_length()
    return latent_channels * (height // MULTIPLE) * (width // MULTIPLE) * bits


def compute_bpp(
    config: ExperimentConfig,
    boxes: Iterable[BoundingBox],
    image_dims: Sequence[int],
    *,
    mode: str | None = None,
) -> RateReport:
    """Bits per pixel of one transmission: latent indices plus ROI payloads.

    Each index costs ``ceil(log2(|centers|))`` bits. Every ROI adds 64 bits
    of coordinates and the latent of its (multiple-of-16) crop.
    """
    mode = mode or config.channel.mode
    size = config.codebook.size
    if mode == DIGITAL and size & (size - 1):
        raise ValueError("digital transport needs a power-of-two codebook")
    h, w = int(image_dims[0]), int(image_dims[1])
    c_lat = config.model.latent_channels
    latent = latent_bits_for(h, w, c_lat, size)
    roi_latent = side = 0
    for box in boxes:
        box.validate(w, h)
        roi_latent += latent_bits_for(box.height, box.width, c_lat, size)
        side += ROI_SIDE_INFO_BITS
    return RateReport(latent, side, roi_latent, h * w)
