import json
import math

import numpy as np
import pytest
import torch

from semcom import evaluation as EV
from semcom.baselines import JPEG
from semcom.codec import BaseCodec
from semcom.core import compute_bpp
from semcom.enhancement import EnhancementNet
from semcom.objectives import psnr, ssim


@pytest.fixture
def dataset(synthetic_dir):
    return EV.load_dataset(synthetic_dir)


@pytest.fixture
def learned(tiny_config):
    torch.manual_seed(0)
    return BaseCodec.from_config(tiny_config)


def test_ingestion_order_and_sidecars(synthetic_dir, tmp_path):
    ds = EV.load_dataset(synthetic_dir)
    assert [s.name for s in ds] == sorted(s.name for s in ds)
    assert all(s.boxes for s in ds)
    nested = tmp_path / "b" / "a"
    nested.mkdir(parents=True)
    (tmp_path / "z.png").write_bytes((synthetic_dir / "scene_00.png").read_bytes())
    (nested / "y.png").write_bytes((synthetic_dir / "scene_01.png").read_bytes())
    names = [s.name for s in EV.load_dataset(tmp_path)]
    assert names == ["b/a/y.png", "z.png"]
    with pytest.raises(FileNotFoundError):
        EV.load_dataset(tmp_path / "missing")


def test_derived_seeds_differ():
    assert EV.derive_seed(0, "a", 1) == EV.derive_seed(0, "a", 1)
    assert EV.derive_seed(0, "a", 1) != EV.derive_seed(0, "b", 1)


def test_jpeg_sweep_accounting(dataset, tiny_config):
    sys = EV.ClassicalSystem(JPEG, (10, 30, 50, 70, 90))
    res = EV.run_rd_sweep(dataset, [sys], tiny_config)
    assert len(res.records) == len(dataset) * 5
    for agg in res.aggregates():
        rows = [r for r in res.records if r.system == agg["system"]]
        assert agg["ssim"] == pytest.approx(np.mean([r.ssim for r in rows]), abs=1e-12)
        assert agg["count"] == len(dataset)


def test_learned_bpp_matches_compute_bpp(dataset, learned, tiny_config):
    sys = EV.LearnedSystem("learned", learned, tiny_config)
    res = EV.run_rd_sweep(dataset, [sys], tiny_config)
    for r in res.records:
        assert r.bpp == compute_bpp(tiny_config, [], (64, 64)).bpp
        assert r.config_hash == tiny_config.config_hash()


def test_missing_checkpoint_skipped(dataset, tiny_config):
    res = EV.run_rd_sweep(dataset, [EV.LearnedSystem("gone", None, tiny_config),
                                    EV.ClassicalSystem(JPEG, (50,))], tiny_config)
    assert res.skipped == [{"system": "gone", "reason": "checkpoint missing"}]
    assert {r.system for r in res.records} == {"jpeg@q50"}


def test_noise_free_snr_point_equals_rd_point(dataset, learned, tiny_config):
    sys = EV.LearnedSystem("learned", learned, tiny_config)
    rd = EV.run_rd_sweep(dataset, [sys], tiny_config)
    sn = EV.run_snr_sweep(dataset, [sys], [math.inf, 0.0], tiny_config)
    inf_rows = [r for r in sn.records if r.snr_db == math.inf]
    assert [(r.psnr, r.ssim) for r in inf_rows] == [(r.psnr, r.ssim) for r in rd.records]


def test_digital_high_snr_equals_noiseless(dataset, learned, tiny_config):
    sys = EV.LearnedSystem("dig", learned, tiny_config, transport="digital")
    res = EV.run_snr_sweep(dataset[:2], [sys], [math.inf, 30.0], tiny_config)
    by = {(r.image, r.snr_db): r for r in res.records}
    for s in dataset[:2]:
        assert by[(s.name, 30.0)].psnr == by[(s.name, math.inf)].psnr


def test_metrics_match_direct_calls(dataset, learned, tiny_config):
    from semcom.channel import AwgnChannel
    from semcom.core import ChannelConfig
    from semcom.pipeline import transmit_image

    sys = EV.LearnedSystem("learned", learned, tiny_config)
    res = EV.run_rd_sweep(dataset[:1], [sys], tiny_config)
    s = dataset[0]
    rec = transmit_image(s.image, learned, AwgnChannel(ChannelConfig(math.inf))).reconstruction
    assert res.records[0].psnr == pytest.approx(psnr(s.image, rec), rel=1e-5)
    assert res.records[0].ssim == pytest.approx(float(ssim(s.image, rec)), rel=1e-5)


def test_zero_enhancer_roi_report(dataset, learned, tiny_config):
    res = EV.run_roi_report(dataset, learned, EnhancementNet(0.0625), tiny_config)
    base = {r.image: r for r in res.records if r.system == "base"}
    enh = {r.image: r for r in res.records if r.system == "enhanced"}
    assert base.keys() == enh.keys() and base
    for k in base:
        assert (base[k].roi_psnr, base[k].roi_ssim) == (enh[k].roi_psnr, enh[k].roi_ssim)
        assert enh[k].bpp > base[k].bpp


def test_roi_report_without_rois_warns(dataset, learned, tiny_config):
    for s in dataset:
        s.boxes = None
    with pytest.warns(RuntimeWarning):
        res = EV.run_roi_report(dataset, learned, EnhancementNet(0.0625), tiny_config)
    assert res.records == []


def test_emit_reports(dataset, tiny_config, tmp_path):
    res = EV.run_rd_sweep(dataset, [EV.ClassicalSystem(JPEG, (20, 60))], tiny_config)
    paths = EV.emit_reports(res, tmp_path / "out")
    rows = EV.read_csv(paths["csv"])
    assert len(rows) == len(res.records)
    assert list(rows[0].keys()) == list(EV.COLUMNS)
    summary = json.loads(paths["json"].read_text())
    assert summary["config_hash"] == tiny_config.config_hash()
    for agg in summary["aggregates"]:
        mine = [r for r in rows if r["system"] == agg["system"]]
        for m in ("bpp", "psnr", "ssim", "roi_ssim"):
            assert abs(np.mean([float(r[m]) for r in mine]) - agg[m]) < 1e-9
    assert paths["plot"].stat().st_size > 0
    with pytest.raises(ValueError):
        EV.emit_reports(EV.SweepResult("rd"), tmp_path / "empty")


def test_workers_do_not_change_results(dataset, learned, tiny_config):
    systems = [EV.LearnedSystem("learned", learned, tiny_config), EV.ClassicalSystem(JPEG, (50,))]
    a = EV.run_snr_sweep(dataset, systems, [0.0, 5.0], tiny_config, workers=1).to_csv()
    b = EV.run_snr_sweep(dataset, systems, [0.0, 5.0], tiny_config, workers=3).to_csv()
    assert a == b


def test_failed_rows_score_zero(dataset, tiny_config):
    sys = EV.ClassicalSystem(JPEG, (50,), over_channel=True)
    res = EV.run_snr_sweep(dataset, [sys], [-5.0], tiny_config)
    for r in res.records:
        if r.failed:
            assert (r.psnr, r.ssim) == (0.0, 0.0)
