"""Losses and image quality metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import Tensor, nn

EPS = 1e-7
PSNR_CAP = 100.0
INITIAL = "initial"
FINAL = "final"


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.15

    def __post_init__(self) -> None:
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


def _check_pair(x: Tensor, x2: Tensor) -> None:
    if x.shape != x2.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x2.shape)}")


def mse(x: Tensor, x2: Tensor) -> Tensor:
    _check_pair(x, x2)
    return ((x - x2) ** 2).mean()


def psnr(x: Tensor, x2: Tensor) -> float:
    """PSNR in dB for [0, 1] images; identical inputs give ``PSNR_CAP``."""
    err = float(mse(x.detach().double(), x2.detach().double()))
    if err == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / err))


def gaussian_window(size: int = 11, sigma: float = 1.5, dtype=torch.float64) -> Tensor:
    ax = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    g = torch.exp(-(ax**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(
    x: Tensor,
    x2: Tensor,
    *,
    window_size: int = 11,
    sigma: float = 1.5,
    data_range: float = 1.0,
    reduction: str = "mean",
) -> Tensor:
    """Structural similarity with a Gaussian window over valid positions.

    Works on (C, H, W) or (B, C, H, W). ``reduction="none"`` returns one
    value per batch item.
    """
    _check_pair(x, x2)
    if x.shape[-1] < window_size or x.shape[-2] < window_size:
        raise ValueError(f"image {tuple(x.shape[-2:])} smaller than the {window_size}px window")
    single = x.dim() == 3
    a = x.unsqueeze(0) if single else x
    b = x2.unsqueeze(0) if single else x2
    ch = a.shape[1]
    w = gaussian_window(window_size, sigma, a.dtype).to(a.device).expand(ch, 1, -1, -1)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def filt(t: Tensor) -> Tensor:
        return F.conv2d(t, w, groups=ch)

    mu_a, mu_b = filt(a), filt(b)
    s_aa = filt(a * a) - mu_a**2
    s_bb = filt(b * b) - mu_b**2
    s_ab = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (s_aa + s_bb + c2)
    per_item = (num / den).flatten(1).mean(1)
    if reduction == "none":
        return per_item[0] if single else per_item
    return per_item.mean()


def adversarial_losses(d_fake: Tensor, d_real: Tensor) -> tuple[Tensor, Tensor]:
    """Generator and discriminator losses from discriminator probabilities.

    ``L_G = -log D(fake)``, ``L_D = -log(1 - D(fake)) - log D(real)``;
    probabilities are clamped to ``[EPS, 1 - EPS]`` and batch-averaged.
    """
    d_fake = torch.as_tensor(d_fake, dtype=torch.float64 if not torch.is_tensor(d_fake) else None)
    d_real = torch.as_tensor(d_real, dtype=torch.float64 if not torch.is_tensor(d_real) else None)
    f = d_fake.clamp(EPS, 1 - EPS)
    r = d_real.clamp(EPS, 1 - EPS)
    loss_g = (-torch.log(f)).mean()
    loss_d = (-torch.log1p(-f) - torch.log(r)).mean()
    return loss_g, loss_d


# ---------------------------------------------------------------------------
# perceptual distance
# ---------------------------------------------------------------------------


class StandInExtractor(nn.Module):
    """Fixed random conv stack used when no pretrained weights are available."""

    def __init__(self, channels: Sequence[int] = (16, 32, 64), seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.stages = nn.ModuleList()
        cin = 3
        for i, cout in enumerate(channels):
            layer = nn.Conv2d(cin, cout, 3, 1 if i == 0 else 2, 1)
            with torch.no_grad():
                bound = math.sqrt(6.0 / (cin * 9))
                layer.weight.copy_(torch.rand(layer.weight.shape, generator=gen) * 2 * bound - bound)
                layer.bias.zero_()
            self.stages.append(layer)
            cin = cout
        self.channels = list(channels)

    def forward(self, x: Tensor) -> list[Tensor]:
        feats = []
        for layer in self.stages:
            x = F.leaky_relu(layer(x), 0.2)
            feats.append(x)
        return feats


class VGGExtractor(nn.Module):
    """VGG16 feature taps at relu1_2, relu2_2, relu3_3, relu4_3, relu5_3."""

    taps = (4, 9, 16, 23, 30)
    channels = [64, 128, 256, 512, 512]

    def __init__(self, state_dict: dict | None = None):
        super().__init__()
        from torchvision.models import vgg16

        features = vgg16(weights=None).features
        if state_dict is not None:
            features.load_state_dict(state_dict)
        self.features = features
        self.register_buffer("shift", torch.tensor([-0.030, -0.088, -0.188]).view(1, 3, 1, 1))
        self.register_buffer("scale", torch.tensor([0.458, 0.448, 0.450]).view(1, 3, 1, 1))

    def forward(self, x: Tensor) -> list[Tensor]:
        x = (x - self.shift) / self.scale
        out = []
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in self.taps:
                out.append(x)
            if i >= self.taps[-1]:
                break
        return out


class PerceptualMetric(nn.Module):
    """LPIPS-style distance: unit-normalised features, weighted squared
    differences, spatial mean, summed over layers. Frozen after construction."""

    def __init__(self, extractor: nn.Module | None, lin_weights: Sequence[Tensor] | None = None):
        super().__init__()
        self.extractor = extractor
        if extractor is not None:
            chans = list(extractor.channels)
            # without learned weights each layer contributes at most 1/len(chans)
            weights = lin_weights or [torch.full((c,), 0.25 / len(chans)) for c in chans]
            if len(weights) != len(chans):
                raise ValueError("need one linear weight vector per feature layer")
            self.lin = nn.ParameterList(
                nn.Parameter(torch.as_tensor(w, dtype=torch.float32).reshape(1, -1, 1, 1).clone())
                for w in weights
            )
        else:
            self.lin = nn.ParameterList()
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    @classmethod
    def standin(cls, seed: int = 0) -> "PerceptualMetric":
        return cls(StandInExtractor(seed=seed))

    @classmethod
    def vgg(cls, vgg_weights: str | Path, lin_weights: str | Path | None = None) -> "PerceptualMetric":
        """Pretrained VGG16 features (torchvision layout) and optional LPIPS
        linear-layer weights (``lin{i}.model.1.weight`` keys)."""
        ext = VGGExtractor(_load_features(vgg_weights))
        lins = None
        if lin_weights is not None:
            sd = torch.load(lin_weights, map_location="cpu", weights_only=True)
            lins = [sd[f"lin{i}.model.1.weight"].flatten() for i in range(5)]
        return cls(ext, lins)

    def train(self, mode: bool = True) -> "PerceptualMetric":
        return super().train(False)

    def forward(self, x: Tensor, x2: Tensor) -> Tensor:
        if self.extractor is None:
            raise RuntimeError("perceptual metric has no feature extractor loaded")
        f1 = self.extractor(x * 2 - 1)
        f2 = self.extractor(x2 * 2 - 1)
        total = x.new_zeros(x.shape[0])
        for a, b, w in zip(f1, f2, self.lin):
            a = a / (a.pow(2).sum(1, keepdim=True).sqrt() + 1e-10)
            b = b / (b.pow(2).sum(1, keepdim=True).sqrt() + 1e-10)
            d = ((a - b) ** 2 * w.to(a.dtype)).sum(1)
            total = total + d.mean(dim=(1, 2))
        return total


def _load_features(path: str | Path) -> dict:
    sd = torch.load(path, map_location="cpu", weights_only=True)
    if any(k.startswith("features.") for k in sd):
        sd = {k[len("features.") :]: v for k, v in sd.items() if k.startswith("features.")}
    return sd


def lpips(x: Tensor, x2: Tensor, metric: PerceptualMetric | None) -> Tensor:
    _check_pair(x, x2)
    if metric is None or metric.extractor is None:
        raise RuntimeError("perceptual metric has no feature extractor loaded")
    single = x.dim() == 3
    a = x.unsqueeze(0) if single else x
    b = x2.unsqueeze(0) if single else x2
    if next(metric.parameters()).dtype != a.dtype:
        metric = metric.to(a.dtype)
    return metric(a, b).mean()


# ---------------------------------------------------------------------------
# composed objectives
# ---------------------------------------------------------------------------


def eg_loss_terms(
    x: Tensor,
    x_rec: Tensor,
    d_fake: Tensor | None,
    weights: LossWeights,
    phase: str,
    metric: PerceptualMetric | None,
) -> dict[str, Tensor]:
    if phase not in (INITIAL, FINAL):
        raise ValueError(f"unknown training phase {phase!r}")
    terms = {"mse": mse(x, x_rec)}
    terms["lpips"] = lpips(x, x_rec, metric) if weights.alpha or metric is not None else x.new_zeros(())
    if phase == FINAL:
        if d_fake is None:
            raise ValueError("final phase needs discriminator output")
        terms["adv"] = adversarial_losses(d_fake, d_fake.detach())[0]
    total = terms["mse"] + weights.alpha * terms["lpips"]
    if phase == FINAL:
        total = total + weights.beta * terms["adv"]
    terms["total"] = total
    return terms


def total_eg_loss(
    x: Tensor,
    x_rec: Tensor,
    d_fake: Tensor | None,
    weights: LossWeights,
    phase: str,
    metric: PerceptualMetric | None = None,
) -> Tensor:
    """Encoder/generator objective: ``mse + alpha*lpips`` in the initial
    phase, plus ``beta * -log D(fake)`` in the final phase."""
    return eg_loss_terms(x, x_rec, d_fake, weights, phase, metric)["total"]


def enhancement_loss(x: Tensor, x_final: Tensor, weights: LossWeights, **ssim_kw) -> Tensor:
    """``mse + alpha * (1 - ssim)``; zero exactly when the images match."""
    _check_pair(x, x_final)
    return mse(x, x_final) + weights.alpha * (1.0 - ssim(x, x_final, **ssim_kw))
