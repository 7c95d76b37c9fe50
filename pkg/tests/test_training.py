import math

import numpy as np
import pytest
import torch

from semcom import checkpoint as ckio
from semcom import training as T
from semcom.enhancement import FixtureDetector
from semcom.core import BoundingBox


@pytest.fixture
def images():
    g = torch.Generator().manual_seed(0)
    return [torch.rand(3, 32, 32, generator=g) for _ in range(3)]


@pytest.fixture
def cfg(tiny_config):
    return tiny_config.override(**{"loss.alpha": 0.0})


def test_container_roundtrip_bytes():
    tensors = {"a": torch.arange(6, dtype=torch.float32).reshape(2, 3), "b": torch.tensor([True, False])}
    blob = ckio.dumps(tensors, {"x": 1})
    back, meta = ckio.loads(blob)
    assert meta == {"x": 1} and torch.equal(back["a"], tensors["a"]) and torch.equal(back["b"], tensors["b"])
    assert ckio.dumps(back, meta) == blob
    with pytest.raises(ckio.CheckpointError):
        ckio.loads(b"nonsense")


def test_checkpoint_roundtrip(images, cfg, tmp_path):
    ck = T.train_base_initial(images, cfg, steps=2)
    path = tmp_path / "a.ckpt"
    ck.save(path)
    back = T.Checkpoint.load(path, expect=cfg)
    assert back.to_bytes() == ck.to_bytes()
    assert back.phase == "initial" and back.step == 2
    assert T.module_digest(back.codec) == T.module_digest(ck.codec)


def test_checkpoint_rejects_incompatible_config(images, cfg, tmp_path):
    ck = T.train_base_initial(images, cfg, steps=1)
    with pytest.raises(ValueError):
        T.Checkpoint.from_bytes(ck.to_bytes(), expect=cfg.override(**{"model.latent_channels": 4}))
    # training knobs may differ
    T.Checkpoint.from_bytes(ck.to_bytes(), expect=cfg.override(**{"train.lr": 1e-3}))


def test_resume_is_bit_identical(images, cfg):
    straight = T.train_base_initial(images, cfg, steps=4)
    half = T.train_base_initial(images, cfg, steps=2)
    resumed = T.train_base_initial(images, cfg, steps=2, resume=T.Checkpoint.from_bytes(half.to_bytes()))
    assert resumed.step == 4
    assert T.module_digest(resumed.codec) == T.module_digest(straight.codec)


def test_initial_phase_leaves_discriminator_untouched(images, cfg):
    torch.manual_seed(cfg.seed)
    tr = T.BaseTrainer(images, cfg, "initial")
    before = T.module_digest(tr.codec.discriminator)
    tr.step()
    assert T.module_digest(tr.codec.discriminator) == before


def test_final_phase_updates_both(images, cfg):
    init = T.train_base_initial(images, cfg, steps=1)
    d0 = T.module_digest(init.codec.discriminator)
    e0 = T.module_digest(init.codec.encoder)
    out = T.train_base_final(images, cfg, T.Checkpoint.from_bytes(init.to_bytes()), steps=1)
    assert out.phase == "final"
    assert T.module_digest(out.codec.discriminator) != d0 and T.module_digest(out.codec.encoder) != e0


def test_discriminator_step_does_not_move_generator(images, cfg):
    init = T.train_base_initial(images, cfg, steps=1)
    tr = T.BaseTrainer(images, cfg, "final", codec=init.codec)
    x, snr = tr.draw()
    x_rec, rx = tr.forward(x, snr)
    g0 = T.module_digest(tr.codec.generator)
    tr.d_step(x, x_rec, rx)
    assert T.module_digest(tr.codec.generator) == g0


def test_final_requires_initial(images, cfg):
    with pytest.raises(ValueError):
        T.train_base_final(images, cfg, None)
    with pytest.raises(ValueError):
        T.train_base_initial([], cfg)


def test_crop_sampler(images):
    s = T.CropSampler(images, 20, 4, np.random.default_rng(0))
    assert s.crop == 16 and s.batch().shape == (4, 3, 16, 16)
    with pytest.raises(ValueError):
        T.CropSampler([torch.rand(3, 8, 8)], 16, 1, np.random.default_rng(0))


def test_training_log(images, cfg, tmp_path):
    log = tmp_path / "log.jsonl"
    T.train_base_initial(images, cfg, steps=3, log_path=log)
    lines = log.read_text().splitlines()
    assert len(lines) == 3 and '"phase": "initial"' in lines[0]


def test_enhancement_training_freezes_base(images, cfg):
    base = T.train_base_initial(images, cfg, steps=1)
    digest = T.module_digest(base.codec)
    det = FixtureDetector()
    det.register(images[0], [BoundingBox(0, 0, 16, 16)])
    with pytest.warns(RuntimeWarning):
        enh = T.train_enhancement(images, cfg, base, det, steps=2, snr_db=math.inf)
    assert enh.phase == "enhancement" and enh.enhancer is not None
    assert T.module_digest(enh.codec) == digest
    back = T.Checkpoint.from_bytes(enh.to_bytes())
    assert T.module_digest(back.enhancer) == T.module_digest(enh.enhancer)


def test_enhancement_needs_rois(images, cfg):
    base = T.train_base_initial(images, cfg, steps=1)
    with pytest.raises(ValueError), pytest.warns(RuntimeWarning):
        T.train_enhancement(images, cfg, base, FixtureDetector(), steps=1)


def test_seeded_trajectory_is_identical(images, cfg):
    a = T.BaseTrainer(images, cfg)
    b = T.BaseTrainer(images, cfg)
    a.run(3)
    b.run(3)
    assert [r["total"] for r in a.history] == [r["total"] for r in b.history]


def test_discriminator_outputs_are_probabilities(images, cfg):
    init = T.train_base_initial(images, cfg, steps=1)
    tr = T.BaseTrainer(images, cfg, "final", codec=init.codec)
    for _ in range(2):
        rec = tr.step()
        assert 0 < rec["d_fake"] < 1 and 0 < rec["d_real"] < 1
