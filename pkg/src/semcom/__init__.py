"""Learned semantic image transmission over noisy channels.

Modules: ``core`` (types, config, preprocessing, rate accounting),
``codec`` (encoder / quantizer / generator / discriminator), ``channel``
(AWGN and LDPC), ``objectives``, ``enhancement`` (ROI path), ``training``,
``baselines`` (JPEG / JPEG2000) and ``evaluation`` (sweeps and reports).
"""

from .core import (
    BoundingBox,
    ChannelConfig,
    ExperimentConfig,
    QuantizerCodebook,
    RateReport,
    compute_bpp,
    preprocess,
)

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "ChannelConfig",
    "ExperimentConfig",
    "QuantizerCodebook",
    "RateReport",
    "compute_bpp",
    "preprocess",
]
