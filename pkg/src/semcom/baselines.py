"""Classical JPEG / JPEG2000 comparators, optionally over the LDPC link."""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, features

from .channel import AwgnChannel, LdpcCode, LinkStats, send_bits
from .core import RateReport, to_uint8

JPEG = "jpeg"
JPEG2000 = "jpeg2000"


class CodecUnavailable(RuntimeError):
    pass


def available(kind: str) -> bool:
    if kind == JPEG:
        return bool(features.check("jpg"))
    if kind == JPEG2000:
        return bool(features.check("jpg_2000"))
    return False


@dataclass(frozen=True)
class ClassicalCodec:
    """``quality`` is the JPEG quality factor (1-95) or, for JPEG2000, the
    target rate in bits per pixel. Larger always means more bytes."""

    kind: str
    quality: float

    def __post_init__(self) -> None:
        if self.kind not in (JPEG, JPEG2000):
            raise ValueError(f"unknown classical codec {self.kind!r}")
        if self.quality <= 0:
            raise ValueError("quality must be positive")

    @property
    def name(self) -> str:
        return f"{self.kind}@{self.quality:g}"

    def compress(self, x: torch.Tensor) -> bytes:
        if not available(self.kind):
            raise CodecUnavailable(f"{self.kind} backend not available in Pillow")
        im = Image.fromarray(to_uint8(x))
        buf = io.BytesIO()
        if self.kind == JPEG:
            im.save(buf, format="JPEG", quality=int(self.quality), optimize=False)
        else:
            ratio = max(24.0 / float(self.quality), 1.0)
            im.save(buf, format="JPEG2000", quality_mode="rates", quality_layers=[ratio], irreversible=True)
        return buf.getvalue()

    @staticmethod
    def decompress(data: bytes, shape: tuple[int, ...] | None = None) -> torch.Tensor:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            arr = np.asarray(im.convert("RGB"))
        t = torch.from_numpy(arr.transpose(2, 0, 1).astype(np.float32) / 255.0)
        if shape is not None and tuple(t.shape) != tuple(shape):
            raise ValueError(f"decoded shape {tuple(t.shape)} != {tuple(shape)}")
        return t


def rate_for_bytes(nbytes: int, height: int, width: int) -> RateReport:
    return RateReport(8 * nbytes, 0, 0, height * width)


class CompressionCache:
    """On-disk store of compressed streams keyed by (image hash, codec, quality)."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(x: torch.Tensor, codec: ClassicalCodec) -> str:
        h = hashlib.sha256(to_uint8(x).tobytes() + str(tuple(x.shape)).encode()).hexdigest()[:16]
        return f"{h}_{codec.kind}_{codec.quality:g}.bin"

    def get_or_compress(self, x: torch.Tensor, codec: ClassicalCodec) -> bytes:
        path = self.root / self.key(x, codec)
        if path.exists():
            return path.read_bytes()
        data = codec.compress(x)
        path.write_bytes(data)
        return data


def _compressed(x, codec, cache):
    return cache.get_or_compress(x, codec) if cache is not None else codec.compress(x)


def classical_rd_point(
    x: torch.Tensor,
    codec: ClassicalCodec,
    cache: CompressionCache | None = None,
) -> tuple[torch.Tensor, RateReport]:
    """Round-trip through the codec; bpp is ``8 * bytes / (H * W)``."""
    data = _compressed(x, codec, cache)
    out = codec.decompress(data, tuple(x.shape))
    return out, rate_for_bytes(len(data), *x.shape[-2:])


def bytes_to_bits(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))


def bits_to_bytes(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


@dataclass
class ChannelOutcome:
    image: torch.Tensor | None
    rate: RateReport
    link: LinkStats

    @property
    def failed(self) -> bool:
        return self.image is None


def classical_over_channel(
    x: torch.Tensor,
    codec: ClassicalCodec,
    code: LdpcCode,
    ch: AwgnChannel,
    *,
    snr_db: float | None = None,
    cache: CompressionCache | None = None,
) -> ChannelOutcome:
    """Compressed stream over LDPC/BPSK/AWGN; ``image`` is None when the
    received stream no longer parses as an image of the right size."""
    data = _compressed(x, codec, cache)
    rx_bits, link = send_bits(bytes_to_bits(data), code, ch, snr_db)
    rate = rate_for_bytes(len(data), *x.shape[-2:])
    try:
        image = codec.decompress(bits_to_bytes(rx_bits), tuple(x.shape))
    except Exception:  # noqa: BLE001 - any parser failure is a lost image
        image = None
    return ChannelOutcome(image, rate, link)


FAILED_PSNR = 0.0
FAILED_SSIM = 0.0


def nominal_snr(snr_db: float) -> str:
    return "inf" if snr_db == math.inf else f"{snr_db:g}"
