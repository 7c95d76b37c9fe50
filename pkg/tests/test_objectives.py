import math

import numpy as np
import pytest
import torch

from semcom import objectives as O


def central_diff(fn, x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    g = torch.zeros_like(x)
    flat = x.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        hi = float(fn(x))
        flat[i] = orig - eps
        lo = float(fn(x))
        flat[i] = orig
        g.view(-1)[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a: torch.Tensor, b: torch.Tensor) -> float:
    return float((a - b).norm() / max(float(b.norm()), 1e-12))


def naive_ssim(x: np.ndarray, y: np.ndarray, size=11, sigma=1.5, L=1.0) -> float:
    """Explicit sliding-window SSIM, averaged over channels and positions."""
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    vals = []
    for c in range(x.shape[0]):
        for i in range(x.shape[1] - size + 1):
            for j in range(x.shape[2] - size + 1):
                a = x[c, i : i + size, j : j + size]
                b = y[c, i : i + size, j : j + size]
                ma, mb = (w * a).sum(), (w * b).sum()
                va = (w * (a - ma) ** 2).sum()
                vb = (w * (b - mb) ** 2).sum()
                cov = (w * (a - ma) * (b - mb)).sum()
                vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_psnr_closed_form():
    x = torch.full((3, 16, 16), 0.5)
    assert O.psnr(x, x + 1 / 255) == pytest.approx(20 * math.log10(255), abs=1e-6)
    assert round(O.psnr(x, x + 1 / 255), 2) == 48.13
    assert O.psnr(x, x) == O.PSNR_CAP


def test_ssim_matches_naive(rng):
    x = rng.random((3, 20, 18))
    y = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
    got = float(O.ssim(torch.from_numpy(x), torch.from_numpy(y)))
    assert got == pytest.approx(naive_ssim(x, y), abs=1e-10)


def test_ssim_bounds_and_identity(rng):
    x = torch.from_numpy(rng.random((2, 3, 16, 16)))
    assert float(O.ssim(x, x)) == pytest.approx(1.0, abs=1e-12)
    assert float(O.ssim(x, 1 - x)) < 0.5
    per = O.ssim(x, x.flip(-1), reduction="none")
    assert per.shape == (2,) and (per.abs() <= 1).all()


def test_ssim_rejects_small_images():
    with pytest.raises(ValueError):
        O.ssim(torch.rand(3, 8, 8), torch.rand(3, 8, 8))


def test_losses_zero_on_identical(rng):
    x = torch.from_numpy(rng.random((2, 3, 16, 16)))
    assert float(O.mse(x, x)) == 0.0
    assert float(O.enhancement_loss(x, x, O.LossWeights(alpha=0.5))) == pytest.approx(0.0, abs=1e-12)
    metric = O.PerceptualMetric.standin()
    assert float(O.lpips(x, x, metric)) == pytest.approx(0.0, abs=1e-12)
    lg, ld = O.adversarial_losses(torch.ones(2, dtype=torch.float64), torch.ones(2, dtype=torch.float64))
    assert float(lg) == pytest.approx(0.0, abs=1e-6)


def test_adversarial_values():
    lg, ld = O.adversarial_losses(torch.tensor([0.25]), torch.tensor([0.5]))
    assert float(lg) == pytest.approx(-math.log(0.25), rel=1e-6)
    assert float(ld) == pytest.approx(-math.log(0.75) - math.log(0.5), rel=1e-6)
    lg0, _ = O.adversarial_losses(torch.tensor([0.0]), torch.tensor([1.0]))
    assert math.isfinite(float(lg0))


def test_mse_gradient(rng):
    x = torch.from_numpy(rng.random((2, 3, 4, 4)))
    y = torch.from_numpy(rng.random((2, 3, 4, 4))).requires_grad_()
    O.mse(x, y).backward()
    fd = central_diff(lambda t: O.mse(x, t), y.detach().clone())
    assert rel_err(y.grad, fd) < 1e-6


def test_ssim_gradient(rng):
    x = torch.from_numpy(rng.random((1, 3, 8, 8)))
    y = torch.from_numpy(rng.random((1, 3, 8, 8))).requires_grad_()
    O.ssim(x, y, window_size=7).backward()
    fd = central_diff(lambda t: O.ssim(x, t, window_size=7), y.detach().clone())
    assert rel_err(y.grad, fd) < 1e-6


def test_lpips_gradient_and_properties(rng):
    metric = O.PerceptualMetric.standin().double()
    x = torch.from_numpy(rng.random((1, 3, 8, 8)))
    y = torch.from_numpy(rng.random((1, 3, 8, 8))).requires_grad_()
    O.lpips(x, y, metric).backward()
    fd = central_diff(lambda t: O.lpips(x, t, metric), y.detach().clone())
    assert rel_err(y.grad, fd) < 1e-5
    d = float(O.lpips(x, y.detach(), metric))
    assert 0 < d <= 1.0
    assert not any(p.requires_grad for p in metric.parameters())


def test_lpips_without_extractor_raises():
    with pytest.raises(RuntimeError):
        O.lpips(torch.rand(3, 8, 8), torch.rand(3, 8, 8), O.PerceptualMetric(None))
    with pytest.raises(RuntimeError):
        O.lpips(torch.rand(3, 8, 8), torch.rand(3, 8, 8), None)


def test_composed_loss_gradient(rng):
    metric = O.PerceptualMetric.standin().double()
    w = O.LossWeights(alpha=1.0, beta=0.15)
    x = torch.from_numpy(rng.random((2, 3, 8, 8)))
    y = torch.from_numpy(rng.random((2, 3, 8, 8))).requires_grad_()
    d = torch.tensor([0.3, 0.6], dtype=torch.float64, requires_grad=True)

    def f(t):
        return O.total_eg_loss(x, t, d.detach(), w, O.FINAL, metric)

    f(y).backward()
    fd = central_diff(f, y.detach().clone())
    assert rel_err(y.grad, fd) < 1e-5


def test_adversarial_gradient():
    f = torch.tensor([0.2, 0.7], dtype=torch.float64, requires_grad=True)
    r = torch.tensor([0.4, 0.9], dtype=torch.float64, requires_grad=True)
    lg, ld = O.adversarial_losses(f, r)
    (lg + ld).backward()
    fd_f = central_diff(lambda t: sum(O.adversarial_losses(t, r.detach())), f.detach().clone())
    fd_r = central_diff(lambda t: sum(O.adversarial_losses(f.detach(), t)), r.detach().clone())
    assert rel_err(f.grad, fd_f) < 1e-6 and rel_err(r.grad, fd_r) < 1e-6


def test_initial_phase_has_no_adversarial_term(rng):
    x = torch.from_numpy(rng.random((1, 3, 16, 16)))
    y = torch.from_numpy(rng.random((1, 3, 16, 16)))
    w = O.LossWeights(alpha=0.0, beta=0.15)
    terms = O.eg_loss_terms(x, y, None, w, O.INITIAL, None)
    assert "adv" not in terms and float(terms["total"]) == pytest.approx(float(O.mse(x, y)))
    with pytest.raises(ValueError):
        O.eg_loss_terms(x, y, None, w, O.FINAL, None)


def test_beta_zero_matches_initial(rng):
    x = torch.from_numpy(rng.random((1, 3, 16, 16)))
    y = torch.from_numpy(rng.random((1, 3, 16, 16)))
    m = O.PerceptualMetric.standin().double()
    a = O.total_eg_loss(x, y, torch.tensor([0.3], dtype=torch.float64), O.LossWeights(1.0, 0.0), O.FINAL, m)
    b = O.total_eg_loss(x, y, None, O.LossWeights(1.0, 0.0), O.INITIAL, m)
    assert float(a) == pytest.approx(float(b), abs=1e-12)


def test_weights_validation():
    with pytest.raises(ValueError):
        O.LossWeights(alpha=-0.1)
    with pytest.raises(ValueError):
        O.LossWeights(beta=float("nan"))


def test_vgg_metric_loads_state_dict(tmp_path):
    from torchvision.models import vgg16

    torch.manual_seed(0)
    path = tmp_path / "vgg.pth"
    torch.save(vgg16(weights=None).state_dict(), path)
    m = O.PerceptualMetric.vgg(path)
    x = torch.rand(1, 3, 32, 32)
    assert float(O.lpips(x, x, m)) == pytest.approx(0.0, abs=1e-7)
    assert float(O.lpips(x, torch.rand(1, 3, 32, 32), m)) > 0


def test_ssim_channel_permutation_invariant(rng):
    x = torch.from_numpy(rng.random((3, 16, 16)))
    y = torch.from_numpy(rng.random((3, 16, 16)))
    perm = [2, 0, 1]
    assert float(O.ssim(x[perm], y[perm])) == pytest.approx(float(O.ssim(x, y)), abs=1e-12)


def test_enhancement_loss_alpha_zero_is_mse(rng):
    x = torch.from_numpy(rng.random((3, 16, 16)))
    y = torch.from_numpy(rng.random((3, 16, 16)))
    assert float(O.enhancement_loss(x, y, O.LossWeights(alpha=0.0))) == pytest.approx(float(O.mse(x, y)))
    w = O.LossWeights(alpha=0.5)
    assert float(O.enhancement_loss(x, y, w)) == pytest.approx(float(O.mse(x, y) + 0.5 * (1 - O.ssim(x, y))))
