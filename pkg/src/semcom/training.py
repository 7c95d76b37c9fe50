"""Two-phase base-system training and enhancement-model training."""

from __future__ import annotations

import hashlib
import json
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from . import checkpoint as ckio
from .channel import AwgnChannel, transmit_analog
from .codec import BaseCodec
from .core import BoundingBox, ChannelConfig, ExperimentConfig, QuantizerCodebook
from .enhancement import EnhancementNet, Detector, crop, detect_rois, enhance_and_compose, roi_diff
from .objectives import FINAL, INITIAL, LossWeights, PerceptualMetric, adversarial_losses, eg_loss_terms, enhancement_loss

log = logging.getLogger(__name__)

ENHANCEMENT = "enhancement"
PHASES = (INITIAL, FINAL, ENHANCEMENT)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    """Weights, config, codebook, phase tag and resumable training state."""

    config: ExperimentConfig
    phase: str
    codec: BaseCodec
    enhancer: EnhancementNet | None = None
    step: int = 0
    optimizers: dict[str, dict] = field(default_factory=dict)
    rng: dict[str, Any] = field(default_factory=dict)
    rng_tensors: dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")

    def to_bytes(self) -> bytes:
        tensors: dict[str, Tensor] = {}
        for k, v in self.codec.state_dict().items():
            tensors[f"codec.{k}"] = v
        if self.enhancer is not None:
            for k, v in self.enhancer.state_dict().items():
                tensors[f"enhancer.{k}"] = v
        groups = {}
        for name, sd in sorted(self.optimizers.items()):
            groups[name] = sd["param_groups"]
            for pid, st in sorted(sd["state"].items()):
                for key, val in sorted(st.items()):
                    tensors[f"optim.{name}.{pid}.{key}"] = torch.as_tensor(val)
        for k, v in sorted(self.rng_tensors.items()):
            tensors[f"rng.{k}"] = v
        meta = {
            "format": "semcom-checkpoint",
            "phase": self.phase,
            "step": self.step,
            "config": self.config.to_dict(),
            "codebook": list(self.codec.codebook.centers),
            "has_enhancer": self.enhancer is not None,
            "optim_groups": groups,
            "rng": self.rng,
        }
        return ckio.dumps(tensors, meta)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes, expect: ExperimentConfig | None = None) -> "Checkpoint":
        tensors, meta = ckio.loads(data)
        config = ExperimentConfig.from_dict(meta["config"])
        if expect is not None:
            check_compatible(config, expect)
        codebook = QuantizerCodebook(tuple(meta["codebook"]))
        codec = BaseCodec(config.model, codebook)
        codec.load_state_dict(_section(tensors, "codec."))
        enhancer = None
        if meta["has_enhancer"]:
            enhancer = EnhancementNet(config.model.width)
            enhancer.load_state_dict(_section(tensors, "enhancer."))
        optimizers = {}
        for name, groups in meta["optim_groups"].items():
            state: dict[int, dict[str, Tensor]] = {}
            for key, val in _section(tensors, f"optim.{name}.").items():
                pid, field_name = key.split(".", 1)
                state.setdefault(int(pid), {})[field_name] = val
            optimizers[name] = {"state": state, "param_groups": groups}
        return cls(
            config=config,
            phase=meta["phase"],
            codec=codec,
            enhancer=enhancer,
            step=int(meta["step"]),
            optimizers=optimizers,
            rng=meta["rng"],
            rng_tensors=_section(tensors, "rng."),
        )

    @classmethod
    def load(cls, path: str | Path, expect: ExperimentConfig | None = None) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes(), expect)


def _section(tensors: dict[str, Tensor], prefix: str) -> dict[str, Tensor]:
    return {k[len(prefix) :]: v for k, v in tensors.items() if k.startswith(prefix)}


def check_compatible(found: ExperimentConfig, expect: ExperimentConfig) -> None:
    """Architecture and codebook must match; training knobs may differ."""
    for section in ("model", "codebook"):
        a, b = getattr(found, section), getattr(expect, section)
        if a != b:
            raise ValueError(f"checkpoint {section} config {a} incompatible with {b}")


def module_digest(module: nn.Module) -> str:
    h = hashlib.sha256()
    for k, v in sorted(module.state_dict().items()):
        h.update(k.encode())
        h.update(v.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


class CropSampler:
    """Random square crops (multiple of 16) from a fixed image list."""

    def __init__(self, images: Sequence[Tensor], crop: int, batch_size: int, rng: np.random.Generator):
        if not images:
            raise ValueError("training set is empty")
        self.images = list(images)
        smallest = min(min(im.shape[-2:]) for im in self.images)
        self.crop = min(crop, smallest) // 16 * 16
        if self.crop == 0:
            raise ValueError("images are smaller than 16 pixels")
        self.batch_size = batch_size
        self.rng = rng

    def batch(self) -> Tensor:
        picks = self.rng.integers(len(self.images), size=self.batch_size)
        out = []
        for i in picks:
            im = self.images[i]
            h, w = im.shape[-2:]
            top = int(self.rng.integers(h - self.crop + 1))
            left = int(self.rng.integers(w - self.crop + 1))
            out.append(im[:, top : top + self.crop, left : left + self.crop])
        return torch.stack(out)


# ---------------------------------------------------------------------------
# base system
# ---------------------------------------------------------------------------


def _adam(params, config: ExperimentConfig, lr: float | None = None) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr or config.train.lr, betas=tuple(config.train.betas))


class JsonlLog:
    def __init__(self, path: str | Path | None):
        self.fh = open(path, "a", encoding="utf-8") if path else None

    def write(self, record: dict[str, Any]) -> None:
        if self.fh:
            self.fh.write(json.dumps(record, sort_keys=True) + "\n")
            self.fh.flush()

    def close(self) -> None:
        if self.fh:
            self.fh.close()


class BaseTrainer:
    """Stateful trainer for the encoder/generator (and discriminator in the
    final phase). One ``step`` consumes one batch and one SNR draw."""

    def __init__(
        self,
        images: Sequence[Tensor],
        config: ExperimentConfig,
        phase: str = INITIAL,
        codec: BaseCodec | None = None,
        metric: PerceptualMetric | None = None,
        lr: float | None = None,
    ):
        if phase not in (INITIAL, FINAL):
            raise ValueError(f"base training phase must be initial or final, not {phase!r}")
        self.config = config
        self.phase = phase
        if codec is None:
            torch.manual_seed(config.seed)
            codec = BaseCodec.from_config(config)
        self.codec = codec
        self.weights = LossWeights(config.loss.alpha, config.loss.beta)
        if metric is None and self.weights.alpha > 0:
            metric = PerceptualMetric.standin()
        self.metric = metric
        self.rng = np.random.default_rng(config.seed)
        self.sampler = CropSampler(images, config.train.crop, config.train.batch_size, self.rng)
        self.channel = AwgnChannel(ChannelConfig(gain=config.channel.gain), seed=config.seed + 1)
        self.opt_eg = _adam(list(codec.eg_parameters()), config, lr)
        self.opt_d = _adam(codec.discriminator.parameters(), config, lr) if phase == FINAL else None
        self.step_count = 0
        self.history: list[dict[str, float]] = []

    # -- state -------------------------------------------------------------

    def checkpoint(self) -> Checkpoint:
        opts = {"eg": self.opt_eg.state_dict()}
        if self.opt_d is not None:
            opts["d"] = self.opt_d.state_dict()
        return Checkpoint(
            config=self.config,
            phase=self.phase,
            codec=self.codec,
            step=self.step_count,
            optimizers=opts,
            rng={"numpy": _jsonable(self.rng.bit_generator.state)},
            rng_tensors={"channel": self.channel.generator.get_state()},
        )

    def restore(self, ckpt: Checkpoint) -> None:
        """Resume inside the same phase: optimizer moments and RNG streams."""
        if ckpt.phase != self.phase:
            raise ValueError("can only restore a checkpoint of the same phase")
        self.step_count = ckpt.step
        if "eg" in ckpt.optimizers:
            self.opt_eg.load_state_dict(ckpt.optimizers["eg"])
        if self.opt_d is not None and "d" in ckpt.optimizers:
            self.opt_d.load_state_dict(ckpt.optimizers["d"])
        if "numpy" in ckpt.rng:
            self.rng.bit_generator.state = ckpt.rng["numpy"]
        if "channel" in ckpt.rng_tensors:
            self.channel.generator.set_state(ckpt.rng_tensors["channel"])

    # -- steps -------------------------------------------------------------

    def draw(self) -> tuple[Tensor, float]:
        x = self.sampler.batch()
        lo, hi = self.config.channel.snr_range
        return x, float(self.rng.uniform(lo, hi))

    def forward(self, x: Tensor, snr_db: float) -> tuple[Tensor, Tensor]:
        y = self.codec.encoder(x)
        y_q, _ = self.codec.quantize(y)
        rx = transmit_analog(y_q, self.channel, snr_db)
        return self.codec.generator(rx), rx

    def eg_step(self, x: Tensor, x_rec: Tensor, rx: Tensor) -> dict[str, float]:
        d_fake = None
        disc = self.codec.discriminator
        if self.phase == FINAL:
            disc.requires_grad_(False)
            d_fake = disc(x_rec, rx)
        terms = eg_loss_terms(x, x_rec, d_fake, self.weights, self.phase, self.metric)
        self.opt_eg.zero_grad(set_to_none=True)
        terms["total"].backward()
        self.opt_eg.step()
        disc.requires_grad_(True)
        return {k: float(v.detach()) for k, v in terms.items()}

    def d_step(self, x: Tensor, x_rec: Tensor, rx: Tensor) -> dict[str, float]:
        disc = self.codec.discriminator
        d_fake = disc(x_rec.detach(), rx.detach())
        d_real = disc(x, rx.detach())
        _, loss_d = adversarial_losses(d_fake, d_real)
        self.opt_d.zero_grad(set_to_none=True)
        loss_d.backward()
        self.opt_d.step()
        return {"loss_d": float(loss_d.detach()), "d_fake": float(d_fake.detach().mean()), "d_real": float(d_real.detach().mean())}

    def step(self) -> dict[str, float]:
        self.codec.train()
        x, snr = self.draw()
        x_rec, rx = self.forward(x, snr)
        record: dict[str, float] = {}
        if self.phase == FINAL:
            record.update(self.d_step(x, x_rec, rx))
        record.update(self.eg_step(x, x_rec, rx))
        self.step_count += 1
        record["snr_db"] = snr
        return record

    def run(self, steps: int, log_path: str | Path | None = None, callback: Callable | None = None) -> Checkpoint:
        sink = JsonlLog(log_path)
        try:
            for _ in range(steps):
                t0 = time.perf_counter()
                rec = self.step()
                rec_out = {"step": self.step_count, "phase": self.phase, **rec, "seconds": time.perf_counter() - t0}
                self.history.append(rec)
                sink.write(rec_out)
                if callback is not None:
                    callback(self, rec_out)
                if self.step_count % 100 == 0:
                    log.info("%s step %d loss %.5f", self.phase, self.step_count, rec["total"])
        finally:
            sink.close()
        return self.checkpoint()


def _jsonable(obj: Any) -> Any:
    return json.loads(json.dumps(obj))


def train_base_initial(
    data: Sequence[Tensor],
    config: ExperimentConfig,
    *,
    steps: int | None = None,
    metric: PerceptualMetric | None = None,
    log_path: str | Path | None = None,
    resume: Checkpoint | None = None,
    lr: float | None = None,
) -> Checkpoint:
    """Encoder + generator on ``mse + alpha * lpips`` with the channel in the loop."""
    if not data:
        raise ValueError("training set is empty")
    codec = resume.codec if resume is not None else None
    trainer = BaseTrainer(data, config, INITIAL, codec=codec, metric=metric, lr=lr)
    if resume is not None:
        if resume.phase != INITIAL:
            raise ValueError("initial training can only resume an initial checkpoint")
        trainer.restore(resume)
    return trainer.run(config.train.initial_steps if steps is None else steps, log_path)


def train_base_final(
    data: Sequence[Tensor],
    config: ExperimentConfig,
    init_ckpt: Checkpoint | None,
    *,
    steps: int | None = None,
    metric: PerceptualMetric | None = None,
    log_path: str | Path | None = None,
    lr: float | None = None,
) -> Checkpoint:
    """Alternating discriminator / encoder-generator updates.

    Requires an initial-phase checkpoint; a final-phase checkpoint resumes.
    """
    if init_ckpt is None:
        raise ValueError("final training needs an initial-phase checkpoint")
    if init_ckpt.phase not in (INITIAL, FINAL):
        raise ValueError(f"cannot start final training from a {init_ckpt.phase!r} checkpoint")
    if not data:
        raise ValueError("training set is empty")
    trainer = BaseTrainer(data, config, FINAL, codec=init_ckpt.codec, metric=metric, lr=lr)
    if init_ckpt.phase == FINAL:
        trainer.restore(init_ckpt)
    return trainer.run(config.train.final_steps if steps is None else steps, log_path)


def finetune(
    data: Sequence[Tensor],
    ckpt: Checkpoint,
    *,
    steps: int,
    metric: PerceptualMetric | None = None,
    log_path: str | Path | None = None,
) -> Checkpoint:
    """Continue the checkpoint's phase on a new dataset at the fine-tuning rate."""
    lr = ckpt.config.train.finetune_lr
    if ckpt.phase == INITIAL:
        out = train_base_initial(data, ckpt.config, steps=steps, metric=metric, log_path=log_path, lr=lr,
                                 resume=Checkpoint(ckpt.config, INITIAL, ckpt.codec))
    elif ckpt.phase == FINAL:
        out = train_base_final(data, ckpt.config, Checkpoint(ckpt.config, INITIAL, ckpt.codec),
                               steps=steps, metric=metric, log_path=log_path, lr=lr)
    else:
        raise ValueError("fine-tuning applies to base-system checkpoints")
    return out


# ---------------------------------------------------------------------------
# enhancement
# ---------------------------------------------------------------------------


@dataclass
class RoiSample:
    image: Tensor
    boxes: list[BoundingBox]


def prepare_roi_samples(images: Sequence[Tensor], detector: Detector) -> list[RoiSample]:
    return [RoiSample(im, detect_rois(im, detector).boxes) for im in images]


class EnhancementTrainer:
    """Optimises only the enhancement net; detector and base codec stay frozen."""

    def __init__(
        self,
        samples: Sequence[RoiSample],
        config: ExperimentConfig,
        codec: BaseCodec,
        net: EnhancementNet | None = None,
        snr_db: float | None = None,
    ):
        self.config = config
        self.codec = codec
        codec.eval()
        codec.requires_grad_(False)
        if net is None:
            torch.manual_seed(config.seed + 7)
            net = EnhancementNet(config.model.width)
        self.net = net
        self.samples = list(samples)
        self.active = [s for s in self.samples if s.boxes]
        if not self.active:
            raise ValueError("no training image yields any ROI")
        self.weights = LossWeights(alpha=config.loss.enhancement_alpha)
        self.rng = np.random.default_rng(config.seed + 3)
        self.channel = AwgnChannel(ChannelConfig(gain=config.channel.gain), seed=config.seed + 5)
        self.fixed_snr = snr_db
        self.opt = torch.optim.Adam(net.parameters(), lr=config.train.enhancement_lr, betas=tuple(config.train.betas))
        self.step_count = 0
        self.history: list[dict[str, float]] = []

    def _snr(self) -> float:
        if self.fixed_snr is not None:
            return self.fixed_snr
        lo, hi = self.config.channel.snr_range
        return float(self.rng.uniform(lo, hi))

    @torch.no_grad()
    def receive(self, sample: RoiSample, snr_db: float) -> tuple[Tensor, list[Tensor]]:
        """Base-system reconstruction of the full image and of each ROI."""
        def send(img: Tensor) -> Tensor:
            y_q, _ = self.codec.quantize(self.codec.encode(img))
            return self.codec.decode(transmit_analog(y_q, self.channel, snr_db))

        x_prime = send(sample.image)
        subs = [send(crop(sample.image, b)) for b in sample.boxes]
        return x_prime, [roi_diff(x_prime, s, b) for s, b in zip(subs, sample.boxes)]

    def loss(self, sample: RoiSample, snr_db: float) -> Tensor:
        x_prime, diffs = self.receive(sample, snr_db)
        x_final = enhance_and_compose(x_prime, diffs, sample.boxes, self.net) if sample.boxes else x_prime
        return enhancement_loss(sample.image, x_final, self.weights)

    def step(self) -> dict[str, float]:
        self.net.train()
        bs = min(self.config.train.batch_size, len(self.active))
        picks = self.rng.choice(len(self.active), size=bs, replace=False)
        snr = self._snr()
        total = sum(self.loss(self.active[i], snr) for i in picks) / bs
        self.opt.zero_grad(set_to_none=True)
        total.backward()
        self.opt.step()
        self.step_count += 1
        return {"total": float(total.detach()), "snr_db": snr}

    def run(self, steps: int, log_path: str | Path | None = None) -> Checkpoint:
        sink = JsonlLog(log_path)
        try:
            for _ in range(steps):
                t0 = time.perf_counter()
                rec = self.step()
                self.history.append(rec)
                sink.write({"step": self.step_count, "phase": ENHANCEMENT, **rec,
                            "seconds": time.perf_counter() - t0})
        finally:
            sink.close()
        return Checkpoint(
            config=self.config,
            phase=ENHANCEMENT,
            codec=self.codec,
            enhancer=self.net,
            step=self.step_count,
            optimizers={"enh": self.opt.state_dict()},
            rng={"numpy": _jsonable(self.rng.bit_generator.state)},
            rng_tensors={"channel": self.channel.generator.get_state()},
        )


def train_enhancement(
    data: Sequence[Tensor],
    config: ExperimentConfig,
    base_ckpt: Checkpoint,
    detector: Detector,
    *,
    steps: int | None = None,
    snr_db: float | None = None,
    log_path: str | Path | None = None,
) -> Checkpoint:
    """Train the enhancement net on ``mse + alpha * (1 - ssim)`` of the final image."""
    if base_ckpt.phase == INITIAL:
        warnings.warn("enhancement trained on an initial-phase base checkpoint", RuntimeWarning, stacklevel=2)
    elif base_ckpt.phase != FINAL:
        raise ValueError(f"enhancement needs a base checkpoint, got phase {base_ckpt.phase!r}")
    samples = prepare_roi_samples(data, detector)
    trainer = EnhancementTrainer(samples, config, base_ckpt.codec, snr_db=snr_db)
    return trainer.run(config.train.enhancement_steps if steps is None else steps, log_path)
