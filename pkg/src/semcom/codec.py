"""Learned base codec: encoder, nearest-center quantizer, RRDB generator and
latent-conditioned discriminator."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from . import _kernels
from .core import MULTIPLE, ExperimentConfig, ModelConfig, QuantizerCodebook, check_image


def scaled(channels: int, width: float) -> int:
    return max(1, int(round(channels * width)))


class ChannelNorm2d(nn.Module):
    """Per-pixel normalisation across channels with a learned affine."""

    def __init__(self, channels: int, eps: float = 1e-3):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(1, channels, 1, 1))
        self.bias = nn.Parameter(torch.zeros(1, channels, 1, 1))

    def forward(self, x: Tensor) -> Tensor:
        mean = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        return (x - mean) * torch.rsqrt(var + self.eps) * self.weight + self.bias


def conv(cin: int, cout: int, k: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, k, stride, k // 2)


def _act(channels: int) -> list[nn.Module]:
    return [ChannelNorm2d(channels), nn.LeakyReLU(0.2)]


class Encoder(nn.Module):
    def __init__(self, latent_channels: int = 3, width: float = 1.0):
        super().__init__()
        c = [scaled(v, width) for v in (64, 128, 256, 512, 1024)]
        layers: list[nn.Module] = [conv(3, c[0], 7), *_act(c[0])]
        for cin, cout in zip(c, c[1:]):
            layers += [conv(cin, cout, 3, 2), *_act(cout)]
        layers.append(conv(c[-1], latent_channels, 3))  # linear output
        self.net = nn.Sequential(*layers)
        self.latent_channels = latent_channels

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class DenseBlock(nn.Module):
    def __init__(self, channels: int, growth: int = 32, depth: int = 5, scale: float = 0.2):
        super().__init__()
        self.scale = scale
        self.convs = nn.ModuleList(
            conv(channels + i * growth, growth if i < depth - 1 else channels, 3) for i in range(depth)
        )

    def forward(self, x: Tensor) -> Tensor:
        feats = [x]
        for i, layer in enumerate(self.convs):
            out = layer(torch.cat(feats, 1))
            if i < len(self.convs) - 1:
                out = F.leaky_relu(out, 0.2)
                feats.append(out)
        return x + self.scale * out


class RRDB(nn.Module):
    """Residual-in-residual dense block.

    ``x + scale * (chain(x) - x)`` with ``chain`` three residual dense blocks,
    so an all-zero block is exactly the identity.
    """

    def __init__(self, channels: int, growth: int = 32, n_dense: int = 3, scale: float = 0.2):
        super().__init__()
        self.scale = scale
        self.blocks = nn.Sequential(*[DenseBlock(channels, growth, scale=scale) for _ in range(n_dense)])

    def forward(self, x: Tensor) -> Tensor:
        return x + self.scale * (self.blocks(x) - x)


class Generator(nn.Module):
    def __init__(
        self,
        latent_channels: int = 3,
        width: float = 1.0,
        n_rrdb: int = 9,
        growth: int = 32,
        rrdb_scale: float = 0.2,
    ):
        super().__init__()
        c = [scaled(v, width) for v in (1024, 1024, 512, 256, 128)]
        g = scaled(growth, width)
        self.latent_channels = latent_channels
        self.head = nn.Sequential(conv(latent_channels, c[0], 3), *_act(c[0]))
        self.trunk = nn.Sequential(*[RRDB(c[0], g, scale=rrdb_scale) for _ in range(n_rrdb)])
        ups: list[nn.Module] = []
        for cin, cout in zip(c, c[1:]):
            ups += [nn.ConvTranspose2d(cin, cout, 3, 2, 1, output_padding=1), *_act(cout)]
        self.up = nn.Sequential(*ups)
        self.tail = nn.Conv2d(c[-1], 3, 7, 1, 3)

    def forward(self, y: Tensor) -> Tensor:
        h = self.trunk(self.head(y))
        return torch.sigmoid(self.tail(self.up(h))).clamp(0.0, 1.0)


class Discriminator(nn.Module):
    """Scores (image, latent) pairs; the latent is nearest-upsampled x16."""

    def __init__(self, latent_channels: int = 3, width: float = 1.0):
        super().__init__()
        c = [scaled(v, width) for v in (64, 128, 256, 512)]
        layers: list[nn.Module] = []
        cin = 3 + latent_channels
        for cout in c:
            layers += [conv(cin, cout, 3, 2), *_act(cout)]
            cin = cout
        layers.append(nn.Conv2d(cin, 1, 1))
        self.net = nn.Sequential(*layers)
        self.latent_channels = latent_channels

    def logits(self, x: Tensor, y: Tensor) -> Tensor:
        up = F.interpolate(y, scale_factor=MULTIPLE, mode="nearest")
        if up.shape[-2:] != x.shape[-2:]:
            raise ValueError(f"upsampled latent {tuple(up.shape[-2:])} != image {tuple(x.shape[-2:])}")
        return self.net(torch.cat([up, x], 1))

    def forward(self, x: Tensor, y: Tensor) -> Tensor:
        """Per-sample probability: mean of the sigmoid logit map."""
        return torch.sigmoid(self.logits(x, y)).mean(dim=(1, 2, 3))


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------


class _NearestCenter(torch.autograd.Function):
    @staticmethod
    def forward(ctx, y: Tensor, centers: Tensor) -> tuple[Tensor, Tensor]:
        idx = nearest_index_torch(y, centers)
        ctx.mark_non_differentiable(idx)
        return centers[idx], idx

    @staticmethod
    def backward(ctx, grad_q: Tensor, grad_idx: Tensor):
        return grad_q, None  # straight-through


def nearest_index_torch(y: Tensor, centers: Tensor) -> Tensor:
    hi = torch.searchsorted(centers, y.detach().contiguous(), right=False).clamp(1, len(centers) - 1)
    lo = hi - 1
    pick_lo = (y - centers[lo]).abs() <= (y - centers[hi]).abs()
    return torch.where(pick_lo, lo, hi)


def quantize(y, codebook: QuantizerCodebook):
    """Snap every element to its nearest center.

    Accepts a tensor (differentiable, straight-through gradient) or a numpy
    array (kernel path). Returns ``(quantized, indices)``; ties go to the
    lower center.
    """
    if isinstance(y, np.ndarray):
        idx = _kernels.nearest_center(y, codebook.array)
        return codebook.array[idx], idx
    centers = torch.as_tensor(codebook.centers, dtype=y.dtype, device=y.device)
    return _NearestCenter.apply(y, centers)


# ---------------------------------------------------------------------------
# functional API
# ---------------------------------------------------------------------------


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    return (x, False) if x.dim() == 4 else (x.unsqueeze(0), True)


def encode(x: Tensor, net: Encoder) -> Tensor:
    check_image(x)
    xb, single = _batched(x)
    y = net(xb)
    return y[0] if single else y


def decode(y: Tensor, net: Generator) -> Tensor:
    if y.shape[-3] != net.latent_channels:
        raise ValueError(f"latent has {y.shape[-3]} channels, generator expects {net.latent_channels}")
    yb, single = _batched(y)
    x = net(yb)
    return x[0] if single else x


def discriminate(x: Tensor, y: Tensor, net: Discriminator) -> Tensor:
    check_image(x)
    xb, single = _batched(x)
    yb, _ = _batched(y)
    p = net(xb, yb)
    return p[0] if single else p


class BaseCodec(nn.Module):
    """Encoder, generator and discriminator built from one config."""

    def __init__(self, model: ModelConfig | None = None, codebook: QuantizerCodebook | None = None):
        super().__init__()
        model = model or ModelConfig()
        self.model_config = model
        self.codebook = codebook or QuantizerCodebook.uniform()
        kw = dict(latent_channels=model.latent_channels, width=model.width)
        self.encoder = Encoder(**kw)
        self.generator = Generator(
            **kw, n_rrdb=model.rrdb_blocks, growth=model.rrdb_growth, rrdb_scale=model.rrdb_scale
        )
        self.discriminator = Discriminator(**kw)

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> "BaseCodec":
        return cls(config.model, config.codebook.build())

    def encode(self, x: Tensor) -> Tensor:
        return encode(x, self.encoder)

    def quantize(self, y: Tensor) -> tuple[Tensor, Tensor]:
        return quantize(y, self.codebook)

    def decode(self, y: Tensor) -> Tensor:
        return decode(y, self.generator)

    def discriminate(self, x: Tensor, y: Tensor) -> Tensor:
        return discriminate(x, y, self.discriminator)

    def latent_shape(self, height: int, width: int) -> tuple[int, int, int]:
        return (self.model_config.latent_channels, height // MULTIPLE, width // MULTIPLE)

    def eg_parameters(self):
        yield from self.encoder.parameters()
        yield from self.generator.parameters()


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
