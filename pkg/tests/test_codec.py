import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from semcom import codec as C
from semcom.core import ModelConfig, QuantizerCodebook


def brute_force(values: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Scan every center; strict '<' keeps the lower index on ties."""
    flat = values.ravel()
    best = np.zeros(flat.shape, dtype=np.int64)
    best_d = np.abs(flat - centers[0])
    for i in range(1, len(centers)):
        d = np.abs(flat - centers[i])
        better = d < best_d
        best[better] = i
        best_d = np.where(better, d, best_d)
    return best.reshape(values.shape)


def test_quantize_example():
    cb = QuantizerCodebook((-1.0, 0.0, 1.0))
    q, idx = C.quantize(np.array([0.3]), cb)
    assert q[0] == 0.0 and idx[0] == 1
    qt, it = C.quantize(torch.tensor([0.3]), cb)
    assert float(qt[0]) == 0.0 and int(it[0]) == 1


def test_quantize_ties_go_low():
    cb = QuantizerCodebook((-1.0, 0.0, 1.0))
    vals = np.array([-0.5, 0.5])
    assert C.quantize(vals, cb)[1].tolist() == [0, 1]
    assert C.quantize(torch.tensor(vals), cb)[1].tolist() == [0, 1]


@given(arrays(np.float64, st.integers(1, 300), elements=st.floats(-5, 5, allow_nan=False)))
@settings(max_examples=100, deadline=None)
def test_quantize_matches_brute_force(values):
    cb = QuantizerCodebook.uniform(16)
    ref = brute_force(values, cb.array)
    assert np.array_equal(C.quantize(values, cb)[1], ref)
    assert np.array_equal(C.quantize(torch.from_numpy(values), cb)[1].numpy(), ref)


def test_quantize_straight_through_gradient():
    cb = QuantizerCodebook.uniform(16)
    y = torch.randn(2, 3, 4, 4, dtype=torch.float64, requires_grad=True)
    q, _ = C.quantize(y, cb)
    w = torch.randn_like(q)
    (q * w).sum().backward()
    assert torch.equal(y.grad, w)


def test_channel_norm_statistics():
    n = C.ChannelNorm2d(8)
    out = n(torch.randn(2, 8, 5, 5) * 7 + 3)
    assert torch.allclose(out.mean(1), torch.zeros(2, 5, 5), atol=1e-5)
    assert torch.allclose(out.var(1, unbiased=False), torch.ones(2, 5, 5), atol=1e-2)


def test_rrdb_zero_is_identity():
    block = C.RRDB(8, 4)
    for p in block.parameters():
        torch.nn.init.zeros_(p)
    x = torch.randn(1, 8, 6, 6)
    assert torch.equal(block(x), x)


def test_encoder_generator_shapes(tiny_config):
    codec = C.BaseCodec.from_config(tiny_config)
    x = torch.rand(2, 3, 48, 64)
    y = codec.encode(x)
    assert y.shape == (2, 3, 3, 4) == (2, *codec.latent_shape(48, 64))
    q, idx = codec.quantize(y)
    out = codec.decode(q)
    assert out.shape == x.shape and out.min() >= 0 and out.max() <= 1
    p = codec.discriminate(x, q)
    assert p.shape == (2,) and ((p > 0) & (p < 1)).all()


def test_functional_api_unbatched(tiny_config):
    codec = C.BaseCodec.from_config(tiny_config)
    y = C.encode(torch.rand(3, 32, 32), codec.encoder)
    assert y.shape == (3, 2, 2)
    assert C.decode(y, codec.generator).shape == (3, 32, 32)


def test_shape_errors(tiny_config):
    codec = C.BaseCodec.from_config(tiny_config)
    with pytest.raises(ValueError):
        codec.encode(torch.rand(3, 30, 32))
    with pytest.raises(ValueError):
        codec.decode(torch.rand(4, 2, 2))
    with pytest.raises(ValueError):
        codec.discriminate(torch.rand(1, 3, 32, 32), torch.rand(1, 3, 3, 3))


def test_encoder_deterministic(tiny_config):
    codec = C.BaseCodec.from_config(tiny_config).eval()
    x = torch.rand(1, 3, 32, 32)
    assert torch.equal(codec.encode(x), codec.encode(x))


def test_width_scales_parameters():
    small = C.parameter_count(C.Generator(width=0.0625, n_rrdb=1))
    big = C.parameter_count(C.Generator(width=0.125, n_rrdb=1))
    assert big > 3 * small


def test_numpy_and_torch_paths_agree(rng):
    cb = QuantizerCodebook.uniform(8, -1.5, 1.5)
    vals = rng.normal(size=(3, 5, 7))
    a = C.quantize(vals, cb)
    b = C.quantize(torch.from_numpy(vals), cb)
    assert np.array_equal(a[1], b[1].numpy()) and np.array_equal(a[0], b[0].numpy())
