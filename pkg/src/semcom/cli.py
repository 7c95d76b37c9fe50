"""Command-line entry point: ``semcom <verb> ...``.

Exit status is 0 on success, 1 on a runtime error and 2 on bad usage.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import yaml

from .baselines import JPEG, JPEG2000, CompressionCache
from .core import ExperimentConfig, load_image, preprocess, save_png
from .evaluation import (
    ClassicalSystem,
    LearnedSystem,
    emit_reports,
    fixture_detector,
    load_dataset,
    run_roi_report,
    run_rd_sweep,
    run_snr_sweep,
)
from .pipeline import ANALOG, DIGITAL

log = logging.getLogger("semcom")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _parse_set(items: Sequence[str]) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise argparse.ArgumentTypeError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(value)
    return out


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = _parse_set(args.set or [])
    return cfg.override(**overrides) if overrides else cfg


def _images(root: str, cfg: ExperimentConfig):
    samples = load_dataset(root, cfg.data.policy)
    if not samples:
        raise ValueError(f"no images found under {root}")
    return samples


def _load_ckpt(path: str | None):
    from .training import Checkpoint

    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        log.warning("checkpoint %s not found; learned system skipped", p)
        return None
    return Checkpoint.load(p)


def _metric(args):
    from .objectives import PerceptualMetric

    if getattr(args, "vgg_weights", None):
        return PerceptualMetric.vgg(args.vgg_weights, getattr(args, "lin_weights", None))
    return None


# ---------------------------------------------------------------------------
# verbs
# ---------------------------------------------------------------------------


def cmd_train_base(args, cfg: ExperimentConfig) -> None:
    from .training import Checkpoint, train_base_final, train_base_initial

    data = [s.image for s in _images(args.data, cfg)]
    metric = _metric(args)
    ckpt = Checkpoint.load(args.init, expect=cfg) if args.init else None
    if args.phase in ("initial", "both"):
        resume = ckpt if ckpt is not None and ckpt.phase == "initial" and args.phase == "initial" else None
        ckpt = train_base_initial(data, cfg, steps=args.steps, metric=metric, log_path=args.log, resume=resume)
    if args.phase in ("final", "both"):
        ckpt = train_base_final(data, cfg, ckpt, steps=args.steps, metric=metric, log_path=args.log)
    ckpt.save(args.out)
    print(f"saved {ckpt.phase} checkpoint at step {ckpt.step} to {args.out}")


def cmd_train_enhance(args, cfg: ExperimentConfig) -> None:
    from .training import Checkpoint, train_enhancement

    samples = _images(args.data, cfg)
    base = Checkpoint.load(args.base, expect=cfg)
    det = fixture_detector(samples)
    ckpt = train_enhancement([s.image for s in samples], cfg, base, det,
                             steps=args.steps, snr_db=args.snr, log_path=args.log)
    ckpt.save(args.out)
    print(f"saved enhancement checkpoint at step {ckpt.step} to {args.out}")


def _learned(args, cfg) -> list[LearnedSystem]:
    systems = []
    for path in args.ckpt or []:
        ck = _load_ckpt(path)
        stem = Path(path).stem
        codec = ck.codec if ck is not None else None
        model_cfg = ck.config if ck is not None else cfg
        transports = [ANALOG, DIGITAL] if args.digital else [ANALOG]
        for t in transports:
            suffix = "analog" if t == ANALOG else "digital"
            systems.append(LearnedSystem(f"learned-{suffix}:{stem}", codec, model_cfg, transport=t,
                                         requantize=cfg.channel.requantize))
    return systems


def _classical(args, over_channel: bool) -> list[ClassicalSystem]:
    systems = []
    if args.jpeg:
        systems.append(ClassicalSystem(JPEG, tuple(_floats(args.jpeg)), over_channel))
    if args.jpeg2000:
        systems.append(ClassicalSystem(JPEG2000, tuple(_floats(args.jpeg2000)), over_channel))
    return systems


def _report(result, args) -> None:
    for entry in result.skipped:
        print(f"skipped {entry['system']}: {entry['reason']}", file=sys.stderr)
    paths = emit_reports(result, args.out)
    for kind, p in paths.items():
        print(f"{kind}: {p}")


def cmd_rd_sweep(args, cfg: ExperimentConfig) -> None:
    samples = _images(args.data, cfg)
    systems = [*_learned(args, cfg), *_classical(args, over_channel=False)]
    cache = CompressionCache(args.cache) if args.cache else None
    result = run_rd_sweep(samples, systems, cfg, snr_db=args.snr, seed=args.seed, cache=cache, workers=args.workers)
    _report(result, args)


def cmd_snr_sweep(args, cfg: ExperimentConfig) -> None:
    samples = _images(args.data, cfg)
    systems = [*_learned(args, cfg), *_classical(args, over_channel=True)]
    cache = CompressionCache(args.cache) if args.cache else None
    result = run_snr_sweep(samples, systems, _floats(args.snr_grid), cfg, seed=args.seed, cache=cache,
                           workers=args.workers)
    _report(result, args)


def cmd_roi_report(args, cfg: ExperimentConfig) -> None:
    samples = [s for s in _images(args.data, cfg) if s.boxes]
    ck = _load_ckpt(args.ckpt)
    if ck is None or ck.enhancer is None:
        raise ValueError(f"{args.ckpt} is not an enhancement checkpoint")
    result = run_roi_report(samples, ck.codec, ck.enhancer, ck.config, snr_db=args.snr, seed=args.seed)
    if not result.records:
        print("no ROIs found; nothing to report", file=sys.stderr)
        return
    paths = emit_reports(result, args.out)
    for kind, p in paths.items():
        print(f"{kind}: {p}")


def cmd_transmit(args, cfg: ExperimentConfig) -> None:
    from .channel import AwgnChannel, LdpcCode
    from .core import ChannelConfig, compute_bpp
    from .enhancement import enhanced_transmission, read_sidecar
    from .enhancement import FixtureDetector
    from .objectives import psnr, ssim

    ck = _load_ckpt(args.ckpt)
    if ck is None:
        raise FileNotFoundError(f"checkpoint {args.ckpt} not found")
    pre = preprocess(load_image(args.image), ck.config.data.policy)
    x = pre.tensor
    det = FixtureDetector()
    if args.boxes:
        det.register(x, read_sidecar(args.boxes))
    transport = DIGITAL if args.digital else ANALOG
    c = ck.config.channel
    code = LdpcCode.regular(c.ldpc_n, seed=c.ldpc_seed, max_iter=c.ldpc_max_iter) if args.digital else None
    ch = AwgnChannel(ChannelConfig(args.snr, c.gain), seed=args.seed)
    out = enhanced_transmission(x, ck.codec, ch, det, ck.enhancer, config=ck.config, transport=transport,
                                code=code, snr_db=args.snr, requantize=c.requantize)
    rec = pre.restore(out.x_final)
    save_png(rec, args.out)
    orig = pre.restore(x)
    rate = out.rate or compute_bpp(ck.config, [], x.shape[-2:])
    print(f"bpp {rate.bpp:.6f}  psnr {psnr(orig, rec):.3f} dB  ssim {float(ssim(orig, rec)):.4f}  "
          f"rois {len(out.boxes)}  -> {args.out}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _snr(text: str) -> float:
    return math.inf if text.lower() in ("inf", "+inf", "none") else float(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config field, e.g. --set train.lr=3e-4 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="semcom", description="Semantic image transmission toolkit.")
    sub = p.add_subparsers(dest="verb", required=True)

    tb = sub.add_parser("train-base", parents=[common], help="train encoder/generator (and discriminator)")
    tb.add_argument("--data", required=True)
    tb.add_argument("--out", required=True)
    tb.add_argument("--phase", choices=("initial", "final", "both"), default="both")
    tb.add_argument("--init", help="checkpoint to resume or to start the final phase from")
    tb.add_argument("--steps", type=int, help="steps per phase (default from config)")
    tb.add_argument("--log", help="JSONL training log")
    tb.add_argument("--vgg-weights", help="torchvision VGG16 state dict for the perceptual loss")
    tb.add_argument("--lin-weights", help="LPIPS linear-layer weights")
    tb.set_defaults(fn=cmd_train_base)

    te = sub.add_parser("train-enhance", parents=[common], help="train the ROI enhancement network")
    te.add_argument("--data", required=True, help="images with .txt annotation sidecars")
    te.add_argument("--base", required=True)
    te.add_argument("--out", required=True)
    te.add_argument("--steps", type=int)
    te.add_argument("--snr", type=_snr, help="fixed training SNR (default: drawn from snr_range)")
    te.add_argument("--log")
    te.set_defaults(fn=cmd_train_enhance)

    def sweep_args(sp):
        sp.add_argument("--data", required=True)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--ckpt", action="append", help="learned-system checkpoint (repeatable)")
        sp.add_argument("--digital", action="store_true", help="also send learned latents over LDPC")
        sp.add_argument("--jpeg", help="comma-separated JPEG qualities")
        sp.add_argument("--jpeg2000", help="comma-separated JPEG2000 target bpp values")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--cache", help="directory for cached compressed streams")
        sp.add_argument("--workers", type=int, default=1)

    rd = sub.add_parser("rd-sweep", parents=[common], help="rate-distortion sweep")
    sweep_args(rd)
    rd.add_argument("--snr", type=_snr, default=math.inf)
    rd.set_defaults(fn=cmd_rd_sweep)

    sn = sub.add_parser("snr-sweep", parents=[common], help="quality versus channel SNR")
    sweep_args(sn)
    sn.add_argument("--snr-grid", default="-5,0,5,10")
    sn.set_defaults(fn=cmd_snr_sweep)

    rr = sub.add_parser("roi-report", parents=[common], help="ROI metrics with and without enhancement")
    rr.add_argument("--data", required=True)
    rr.add_argument("--ckpt", required=True, help="enhancement checkpoint")
    rr.add_argument("--out", required=True)
    rr.add_argument("--snr", type=_snr, default=math.inf)
    rr.add_argument("--seed", type=int)
    rr.set_defaults(fn=cmd_roi_report)

    tr = sub.add_parser("transmit", parents=[common], help="send one image end to end")
    tr.add_argument("--ckpt", required=True)
    tr.add_argument("--image", required=True)
    tr.add_argument("--out", required=True, help="output PNG")
    tr.add_argument("--snr", type=_snr, default=10.0)
    tr.add_argument("--digital", action="store_true")
    tr.add_argument("--boxes", help="annotation sidecar for ROI enhancement")
    tr.add_argument("--seed", type=int, default=0)
    tr.set_defaults(fn=cmd_transmit)
    return p


def _join_list_values(argv: Sequence[str]) -> list[str]:
    # argparse reads "-5,0,5" as an option; bind it to its flag explicitly
    out: list[str] = []
    it = iter(argv)
    for tok in it:
        if tok in _LIST_FLAGS:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


_LIST_FLAGS = ("--snr-grid",)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(_join_list_values(sys.argv[1:] if argv is None else argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args)
        args.fn(args, cfg)
    except (argparse.ArgumentTypeError, KeyError) as exc:
        print(f"semcom: usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - surfaced as exit status
        if args.verbose:
            raise
        print(f"semcom: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
