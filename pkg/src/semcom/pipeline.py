"""End-to-end transmission of an image through the learned codec."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .channel import AwgnChannel, LdpcCode, LinkStats, transmit_analog, transmit_digital
from .codec import BaseCodec, quantize

ANALOG = "analog"
DIGITAL = "digital"


@dataclass
class Transmission:
    latent: Tensor
    quantized: Tensor
    indices: Tensor
    received: Tensor
    reconstruction: Tensor
    link: LinkStats | None = None


def send_latent(
    y_q: Tensor,
    indices: Tensor,
    codec: BaseCodec,
    ch: AwgnChannel,
    *,
    transport: str = ANALOG,
    code: LdpcCode | None = None,
    requantize: bool = False,
    snr_db: float | None = None,
    link: LinkStats | None = None,
) -> Tensor:
    """Move a quantized latent across the channel.

    ``requantize`` snaps the noisy analog reception back onto the codebook
    before decoding; the digital transport always lands on centers.
    """
    if transport == ANALOG:
        rx = transmit_analog(y_q, ch, snr_db)
        if requantize:
            rx = quantize(rx, codec.codebook)[0]
        return rx
    if transport == DIGITAL:
        if code is None:
            raise ValueError("digital transport needs an LDPC code")
        rx = transmit_digital(indices, code, ch, codec.codebook, snr_db, stats=link)
        return rx.to(y_q.dtype).to(y_q.device)
    raise ValueError(f"unknown transport {transport!r}")


@torch.no_grad()
def transmit_image(
    x: Tensor,
    codec: BaseCodec,
    ch: AwgnChannel,
    *,
    transport: str = ANALOG,
    code: LdpcCode | None = None,
    requantize: bool = False,
    snr_db: float | None = None,
) -> Transmission:
    """encode -> quantize -> channel -> decode for one image or a batch."""
    was_training = codec.training
    codec.eval()
    try:
        y = codec.encode(x)
        y_q, idx = codec.quantize(y)
        link = LinkStats() if transport == DIGITAL else None
        rx = send_latent(
            y_q, idx, codec, ch, transport=transport, code=code,
            requantize=requantize, snr_db=snr_db, link=link,
        )
        x_rec = codec.decode(rx)
    finally:
        codec.train(was_training)
    return Transmission(y, y_q, idx, rx, x_rec, link)
