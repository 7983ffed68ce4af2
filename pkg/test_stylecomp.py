"""Style-compensation network, compensation transform and triplet dumps."""

import pytest
import torch
from PIL import Image

from dataio.volumes import SliceBatch
from losses.dice import dice_loss, one_hot
from segnet.blocks import FreezePlan, apply_freeze
from segnet.unet import NetworkSpec, build_unet
from stylecomp.compensation import compensate, save_triplet_grid, to_source_style
from stylecomp.network import SC_EPS, SCSpec, build_sc, sc_forward

TINY_SC = SCSpec(layer_filters=[4, 4, 2, 2, 2, 2, 1])


def _batch(b=2, size=16, seed=0):
    g = torch.Generator().manual_seed(seed)
    return SliceBatch(torch.rand((b, 1, size, size), generator=g))


def test_default_spec_builds_and_preserves_shape():
    net = build_sc(SCSpec(), seed=0)
    out = sc_forward(net, _batch(b=2, size=32), train_mode=False)
    assert out.shape == (2, 1, 32, 32)
    assert (out > 0).all() and (out < 1).all()


def test_saturated_sigmoid_stays_inside_open_interval():
    net = build_sc(TINY_SC, seed=0)
    last = net.blocks["sc7"][0]
    with torch.no_grad():
        for sign in (1.0, -1.0):
            for block in net.blocks.values():
                block[0].weight.fill_(1.0)
            last.weight.fill_(sign * 1e4)
            out = sc_forward(net, SliceBatch(torch.ones((1, 1, 8, 8))), train_mode=False)
            assert (out > 0).all() and (out < 1).all()
            assert torch.allclose(out, torch.full_like(out, 1.0 - SC_EPS if sign > 0 else SC_EPS))


def test_spec_validation():
    with pytest.raises(ValueError):
        SCSpec(layer_filters=[64, 32, 16, 8, 4, 1])
    with pytest.raises(ValueError):
        SCSpec(layer_filters=[64, 32, 16, 8, 4, 2, 2])
    with pytest.raises(ValueError):
        SCSpec(kernel_size=4)


def test_eval_mode_is_deterministic():
    net = build_sc(TINY_SC, seed=1)
    batch = _batch()
    assert torch.equal(sc_forward(net, batch), sc_forward(net, batch))


@pytest.mark.parametrize("coefficient,image,expected", [(1.0, 0.3, 0.3), (0.0, 0.7, 0.0), (0.5, 0.5, 0.25)])
def test_compensate_fixed_points(coefficient, image, expected):
    x_t = SliceBatch(torch.full((1, 1, 4, 4), image))
    p_s = torch.full((1, 1, 4, 4), coefficient)
    assert torch.allclose(compensate(x_t, p_s).images, torch.full((1, 1, 4, 4), expected))


def test_compensate_preserves_order_and_range():
    x_t = _batch(b=1, size=8)
    p_s = torch.full((1, 1, 8, 8), 0.6)
    out = compensate(x_t, p_s).images.flatten()
    order = torch.argsort(x_t.images.flatten())
    assert (out[order].diff() >= 0).all()
    assert out.min() >= 0 and out.max() < 1


def test_compensate_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        compensate(_batch(size=16), torch.rand(2, 1, 8, 8))
    with pytest.raises(ValueError):
        compensate(_batch(size=16), torch.rand(2, 3, 16, 16))


def test_compensate_gradient_equals_image():
    x_t = SliceBatch(torch.rand((1, 1, 4, 4), dtype=torch.float64))
    p_s = torch.rand((1, 1, 4, 4), dtype=torch.float64, requires_grad=True)
    compensate(x_t, p_s).images.sum().backward()
    assert torch.allclose(p_s.grad, x_t.images)
    assert torch.autograd.gradcheck(lambda p: compensate(x_t, p).images, (p_s,), eps=1e-6, atol=1e-8)


def test_gradient_through_frozen_segmenter_matches_finite_differences():
    u2 = apply_freeze(build_unet(NetworkSpec(block_filters=[2, 2, 2, 2, 2, 2, 2, 2, 2]), 0), FreezePlan()).double()
    u2.eval()
    x_t = SliceBatch(torch.rand((1, 1, 16, 16), dtype=torch.float64, generator=torch.Generator().manual_seed(3)))
    y = one_hot(torch.randint(0, 5, (1, 16, 16), generator=torch.Generator().manual_seed(4)), 5).double()
    p_s = torch.rand((1, 1, 16, 16), dtype=torch.float64, requires_grad=True)

    def seg_loss(p):
        return dice_loss(u2(compensate(x_t, p).images), y)

    assert torch.autograd.gradcheck(seg_loss, (p_s,), eps=1e-6, atol=1e-7, rtol=1e-4)
    assert all(param.grad is None for param in u2.parameters())


def test_translate_mode_uses_network_output_as_image():
    net = build_sc(TINY_SC.model_copy(update={"mode": "translate"}), seed=0)
    batch = _batch()
    x_ts, raw = to_source_style(net, batch)
    assert torch.equal(x_ts.images, raw)

    compensating = build_sc(TINY_SC, seed=0)
    x_ts, raw = to_source_style(compensating, batch)
    assert torch.allclose(x_ts.images, batch.images * raw)


def test_triplet_grid_is_written(tmp_path):
    net = build_sc(TINY_SC, seed=0)
    batch = _batch(b=3)
    x_ts, raw = to_source_style(net, batch)
    path = save_triplet_grid(batch.images, raw, x_ts.images, tmp_path / "grid.png", max_rows=2)
    with Image.open(path) as image:
        assert image.size == (3 * 16, 2 * 16)
