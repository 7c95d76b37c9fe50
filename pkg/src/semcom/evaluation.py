"""Dataset ingestion, rate-distortion / SNR / ROI sweeps and report emission.

CSV columns (fixed)::

    system,image,bpp,snr_db,psnr,ssim,roi_psnr,roi_ssim,failed,seed,config_hash

``system`` names carry the operating point (``jpeg@q50``,
``learned-analog``). ``roi_*`` are empty when the image has no annotated
region. Failed decodes score PSNR 0 dB and SSIM 0.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import Tensor

from . import core
from .baselines import (
    FAILED_PSNR,
    FAILED_SSIM,
    ClassicalCodec,
    CodecUnavailable,
    CompressionCache,
    available,
    classical_over_channel,
    classical_rd_point,
)
from .channel import AwgnChannel, LdpcCode
from .codec import BaseCodec
from .core import BoundingBox, ChannelConfig, ExperimentConfig, compute_bpp, load_image, preprocess
from .enhancement import Detector, FixtureDetector, crop, detect_rois, enhanced_transmission, read_sidecar
from .objectives import psnr, ssim
from .pipeline import ANALOG, DIGITAL, transmit_image

COLUMNS = ("system", "image", "bpp", "snr_db", "psnr", "ssim", "roi_psnr", "roi_ssim", "failed", "seed", "config_hash")
METRICS = ("bpp", "psnr", "ssim", "roi_psnr", "roi_ssim")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".ppm")
SIG_DIGITS = 6  # metric precision in reports


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------


@dataclass
class Sample:
    name: str  # path relative to the dataset root, posix separators
    image: Tensor  # preprocessed (3, H, W), multiples of 16
    original_size: tuple[int, int]
    boxes: list[BoundingBox] | None = None  # None: no sidecar

    @property
    def original(self) -> Tensor:
        h, w = self.original_size
        return self.image[:, :h, :w]


def load_dataset(root: str | Path, policy: str = "pad", limit: int | None = None) -> list[Sample]:
    """Recursive scan in lexicographic order of relative path.

    A ``.txt`` file next to an image is read as its annotation sidecar.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    paths = sorted(
        (p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.relative_to(root).as_posix(),
    )
    if limit is not None:
        paths = paths[:limit]
    samples = []
    for p in paths:
        pre = preprocess(load_image(p), policy)
        side = p.with_suffix(".txt")
        boxes = read_sidecar(side) if side.exists() else None
        samples.append(Sample(p.relative_to(root).as_posix(), pre.tensor, pre.original_size, boxes))
    return samples


def fixture_detector(samples: Iterable[Sample]) -> FixtureDetector:
    """Detector answering with each sample's sidecar boxes."""
    det = FixtureDetector()
    for s in samples:
        if s.boxes:
            det.register(s.image, s.boxes)
    return det


def derive_seed(master: int, *parts: object) -> int:
    blob = json.dumps([int(master), *map(str, parts)]).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:4], "little")


# ---------------------------------------------------------------------------
# systems
# ---------------------------------------------------------------------------


@dataclass
class LearnedSystem:
    """A trained base codec with a transport and optional ROI enhancement."""

    name: str
    codec: BaseCodec | None  # None: checkpoint missing, system is skipped
    config: ExperimentConfig
    transport: str = ANALOG
    enhancer: torch.nn.Module | None = None
    detector: Detector | None = None
    requantize: bool = False


@dataclass
class ClassicalSystem:
    """JPEG / JPEG2000, optionally through the LDPC link."""

    kind: str
    params: tuple[float, ...] = ()
    over_channel: bool = False

    @property
    def family(self) -> str:
        return f"{self.kind}+ldpc" if self.over_channel else self.kind

    def name(self, param: float) -> str:
        tag = "q" if self.kind == "jpeg" else "r"
        return f"{self.family}@{tag}{param:g}"


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------


def _sig(v: float | None) -> float | None:
    if v is None or not math.isfinite(v):
        return v
    return float(f"{v:.{SIG_DIGITS}g}")


@dataclass
class SweepRecord:
    system: str
    image: str
    bpp: float
    snr_db: float
    psnr: float
    ssim: float
    roi_psnr: float | None
    roi_ssim: float | None
    failed: bool
    seed: int
    config_hash: str

    def __post_init__(self) -> None:
        # rounded once so CSV text and in-memory aggregates agree exactly
        for name in ("psnr", "ssim", "roi_psnr", "roi_ssim"):
            setattr(self, name, _sig(getattr(self, name)))

    def row(self) -> list[str]:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, bool):
                return str(int(v))
            if isinstance(v, float):
                return "inf" if v == math.inf else repr(v)
            return str(v)

        return [fmt(getattr(self, c)) for c in COLUMNS]


@dataclass
class SweepResult:
    kind: str  # "rd" | "snr" | "roi"
    records: list[SweepRecord] = field(default_factory=list)
    config_hash: str = ""
    seed: int = 0
    skipped: list[dict[str, str]] = field(default_factory=list)

    def aggregates(self) -> list[dict]:
        """Per (system, snr) means over images; failures count as scored."""
        groups: dict[tuple[str, float], list[SweepRecord]] = {}
        for r in self.records:
            groups.setdefault((r.system, r.snr_db), []).append(r)
        out = []
        for (system, snr), rows in groups.items():
            agg = {"system": system, "snr_db": snr, "count": len(rows),
                   "failure_rate": sum(r.failed for r in rows) / len(rows)}
            for m in METRICS:
                vals = [getattr(r, m) for r in rows if getattr(r, m) is not None]
                agg[m] = float(np.mean(vals)) if vals else None
            out.append(agg)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.records:
            w.writerow(r.row())
        return buf.getvalue()


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# per-image evaluation
# ---------------------------------------------------------------------------


def _roi_boxes(sample: Sample) -> list[BoundingBox]:
    if not sample.boxes:
        return []
    h, w = sample.image.shape[-2:]
    out = []
    for b in sample.boxes:
        c = b.clamp(w, h)
        if c is not None:
            out.append(c.expand_to_multiple(w, h))
    return out


def _metrics(sample: Sample, rec: Tensor | None) -> tuple[float, float, float | None, float | None]:
    boxes = _roi_boxes(sample)
    if rec is None:
        roi = (FAILED_PSNR, FAILED_SSIM) if boxes else (None, None)
        return FAILED_PSNR, FAILED_SSIM, *roi
    h, w = sample.original_size
    x, r = sample.image[:, :h, :w], rec[:, :h, :w]
    p, s = psnr(x, r), float(ssim(x, r))
    if not boxes:
        return p, s, None, None
    rp = [psnr(crop(sample.image, b), crop(rec, b)) for b in boxes]
    rs = [float(ssim(crop(sample.image, b), crop(rec, b))) for b in boxes]
    return p, s, float(np.mean(rp)), float(np.mean(rs))


def _channel(config: ExperimentConfig, snr_db: float, seed: int) -> AwgnChannel:
    return AwgnChannel(ChannelConfig(snr_db, config.channel.gain), seed=seed)


class _Codes:
    """LDPC codes built once per (n, seed, iterations)."""

    def __init__(self) -> None:
        self._codes: dict[tuple[int, int, int], LdpcCode] = {}

    def get(self, config: ExperimentConfig) -> LdpcCode:
        c = config.channel
        key = (c.ldpc_n, c.ldpc_seed, c.ldpc_max_iter)
        if key not in self._codes:
            self._codes[key] = LdpcCode.regular(c.ldpc_n, seed=c.ldpc_seed, max_iter=c.ldpc_max_iter)
        return self._codes[key]


def _learned_record(sys: LearnedSystem, sample: Sample, snr_db: float, master: int, codes: _Codes,
                    config_hash: str) -> SweepRecord:
    seed = derive_seed(master, sys.name, sample.name, snr_db)
    ch = _channel(sys.config, snr_db, seed)
    code = codes.get(sys.config) if sys.transport == DIGITAL else None
    mode = core.DIGITAL if sys.transport == DIGITAL else core.ANALOG
    if sys.enhancer is not None:
        det = sys.detector or fixture_detector([sample])
        out = enhanced_transmission(sample.image, sys.codec, ch, det, sys.enhancer, config=sys.config,
                                    transport=sys.transport, code=code, snr_db=snr_db, requantize=sys.requantize)
        rec, rate = out.x_final, out.rate
    else:
        rec = transmit_image(sample.image, sys.codec, ch, transport=sys.transport, code=code,
                             snr_db=snr_db, requantize=sys.requantize).reconstruction
        rate = compute_bpp(sys.config, [], sample.image.shape[-2:], mode=mode)
    p, s, rp, rs = _metrics(sample, rec)
    return SweepRecord(sys.name, sample.name, rate.bpp, snr_db, p, s, rp, rs, False, seed, config_hash)


def _classical_record(sys: ClassicalSystem, param: float, sample: Sample, snr_db: float, master: int,
                      config: ExperimentConfig, codes: _Codes, cache: CompressionCache | None,
                      config_hash: str) -> SweepRecord:
    name = sys.name(param)
    seed = derive_seed(master, name, sample.name, snr_db)
    codec = ClassicalCodec(sys.kind, param)
    x = sample.original
    if sys.over_channel:
        out = classical_over_channel(x, codec, codes.get(config), _channel(config, snr_db, seed),
                                     snr_db=snr_db, cache=cache)
        rec, rate = out.image, out.rate
    else:
        rec, rate = classical_rd_point(x, codec, cache)
    if rec is not None and rec.shape != sample.image.shape:
        full = sample.image.clone()
        full[:, : rec.shape[-2], : rec.shape[-1]] = rec
        rec = full
    p, s, rp, rs = _metrics(sample, rec)
    return SweepRecord(name, sample.name, rate.bpp, snr_db, p, s, rp, rs, rec is None, seed, config_hash)


def _ordered_map(fn, items: Sequence, workers: int) -> list:
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def _sweep(
    kind: str,
    dataset: Sequence[Sample],
    systems: Sequence[LearnedSystem | ClassicalSystem],
    snr_grid: Sequence[float],
    config: ExperimentConfig,
    *,
    seed: int | None,
    cache: CompressionCache | None,
    workers: int,
) -> SweepResult:
    if not dataset:
        raise ValueError("dataset is empty")
    if not systems:
        raise ValueError("no systems to evaluate")
    master = config.seed if seed is None else seed
    result = SweepResult(kind, config_hash=config.config_hash(), seed=master)
    codes = _Codes()
    jobs = []
    for sys in systems:
        if isinstance(sys, LearnedSystem):
            if sys.codec is None:
                result.skipped.append({"system": sys.name, "reason": "checkpoint missing"})
                continue
            for snr in snr_grid:
                jobs.append((sys, None, snr))
        else:
            if not available(sys.kind):
                result.skipped.append({"system": sys.family, "reason": f"{sys.kind} backend unavailable"})
                continue
            for param in sys.params:
                for snr in snr_grid:
                    jobs.append((sys, param, snr))

    def one(args):
        sys, param, snr, sample = args
        if isinstance(sys, LearnedSystem):
            return _learned_record(sys, sample, snr, master, codes, result.config_hash)
        return _classical_record(sys, param, sample, snr, master, config, codes, cache, result.config_hash)

    # build codes up front so worker threads never race on construction
    if any(getattr(s, "transport", None) == DIGITAL or getattr(s, "over_channel", False) for s, _, _ in jobs):
        codes.get(config)
        for s, _, _ in jobs:
            if isinstance(s, LearnedSystem):
                codes.get(s.config)
    tasks = [(s, p, snr, sample) for s, p, snr in jobs for sample in dataset]
    try:
        result.records = _ordered_map(one, tasks, workers)
    except CodecUnavailable as exc:  # backend vanished mid-run
        raise RuntimeError(str(exc)) from exc
    return result


def run_rd_sweep(
    dataset: Sequence[Sample],
    systems: Sequence[LearnedSystem | ClassicalSystem],
    config: ExperimentConfig,
    *,
    snr_db: float = math.inf,
    seed: int | None = None,
    cache: CompressionCache | None = None,
    workers: int = 1,
) -> SweepResult:
    """One row per (system operating point, image) at a fixed SNR.

    The bpp grid is given by each classical system's ``params`` (JPEG
    quality, or JPEG2000 target bpp); learned systems contribute the rate of
    their checkpoint.
    """
    return _sweep("rd", dataset, systems, [snr_db], config, seed=seed, cache=cache, workers=workers)


def run_snr_sweep(
    dataset: Sequence[Sample],
    systems: Sequence[LearnedSystem | ClassicalSystem],
    snr_grid: Sequence[float],
    config: ExperimentConfig,
    *,
    seed: int | None = None,
    cache: CompressionCache | None = None,
    workers: int = 1,
) -> SweepResult:
    """One row per (system, SNR, image) at each system's fixed rate."""
    if not snr_grid:
        raise ValueError("empty SNR grid")
    return _sweep("snr", dataset, systems, list(snr_grid), config, seed=seed, cache=cache, workers=workers)


def run_roi_report(
    dataset: Sequence[Sample],
    codec: BaseCodec,
    enhancer: torch.nn.Module,
    config: ExperimentConfig,
    detector: Detector | None = None,
    *,
    snr_db: float = math.inf,
    seed: int | None = None,
) -> SweepResult:
    """Per-ROI metrics of the base reconstruction and the enhanced one.

    Rows come in pairs, ``base`` (X') and ``enhanced`` (X_final), with
    ``image`` set to ``<name>#roi<k>``; ``psnr``/``ssim`` are full-image.
    """
    master = config.seed if seed is None else seed
    result = SweepResult("roi", config_hash=config.config_hash(), seed=master)
    det = detector or fixture_detector(dataset)
    for sample in dataset:
        s = derive_seed(master, "roi", sample.name, snr_db)
        out = enhanced_transmission(sample.image, codec, _channel(config, snr_db, s), det, enhancer,
                                    config=config, snr_db=snr_db)
        if not out.boxes:
            continue
        base_rate = compute_bpp(config, [], sample.image.shape[-2:], mode=core.ANALOG).bpp
        h, w = sample.original_size
        x = sample.image[:, :h, :w]
        for label, img, bpp in (("base", out.x_prime, base_rate), ("enhanced", out.x_final, out.rate.bpp)):
            full_p, full_s = psnr(x, img[:, :h, :w]), float(ssim(x, img[:, :h, :w]))
            for k, b in enumerate(out.boxes):
                result.records.append(SweepRecord(
                    label, f"{sample.name}#roi{k}", bpp, snr_db, full_p, full_s,
                    psnr(crop(sample.image, b), crop(img, b)), float(ssim(crop(sample.image, b), crop(img, b))),
                    False, s, result.config_hash,
                ))
    if not result.records:
        warnings.warn("no ROIs found in the dataset; ROI report is empty", RuntimeWarning, stacklevel=2)
    result.records.sort(key=lambda r: (r.system, r.image))
    return result


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def _json_num(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return v


def summary(result: SweepResult) -> dict:
    aggs = [{k: _json_num(v) for k, v in a.items()} for a in result.aggregates()]
    return {
        "kind": result.kind,
        "config_hash": result.config_hash,
        "seed": result.seed,
        "records": len(result.records),
        "columns": list(COLUMNS),
        "aggregates": aggs,
        "skipped": result.skipped,
    }


def _family(system: str) -> str:
    return system.split("@", 1)[0]


def _plot(result: SweepResult, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    aggs = result.aggregates()
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, metric in zip(axes, ("ssim", "psnr")):
        series: dict[str, list[tuple[float, float]]] = {}
        for a in aggs:
            xval = a["bpp"] if result.kind == "rd" else a["snr_db"]
            key = _family(a["system"]) if result.kind == "rd" else a["system"]
            if result.kind == "roi":
                metric_key, xval, key = "roi_" + metric, 0.0 if a["system"] == "base" else 1.0, "roi"
            else:
                metric_key = metric
            if a[metric_key] is not None and math.isfinite(xval):
                series.setdefault(key, []).append((xval, a[metric_key]))
        for key in sorted(series):
            pts = sorted(series[key])
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=key)
        ax.set_xlabel({"rd": "bits per pixel", "snr": "SNR (dB)", "roi": "base (0) / enhanced (1)"}[result.kind])
        ax.set_ylabel(metric.upper())
        ax.grid(True, alpha=0.3)
        if series:
            ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=80, metadata={"Software": None})
    plt.close(fig)


def emit_reports(result: SweepResult, outdir: str | Path, stem: str | None = None) -> dict[str, Path]:
    """Write ``<stem>.csv``, ``<stem>.json`` and ``<stem>.png``."""
    if not result.records:
        raise ValueError("nothing to report: the sweep produced no records")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = stem or result.kind
    paths = {"csv": outdir / f"{stem}.csv", "json": outdir / f"{stem}.json", "plot": outdir / f"{stem}.png"}
    paths["csv"].write_text(result.to_csv(), encoding="utf-8")
    paths["json"].write_text(json.dumps(summary(result), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _plot(result, paths["plot"])
    return paths


def save_reconstructions(result_dir: str | Path, items: Iterable[tuple[str, Tensor]]) -> None:
    """Lossless PNG copies of reconstructions for audit."""
    root = Path(result_dir)
    for name, img in items:
        p = root / (name.replace("#", "_") + ".png")
        p.parent.mkdir(parents=True, exist_ok=True)
        core.save_png(img, p)
