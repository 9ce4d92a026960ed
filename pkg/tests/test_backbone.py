import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from visiongru import autodiff as ad
from visiongru import tensor as T
from visiongru.backbone import (
    DEIT_S,
    ModelSpec,
    baseline_attention_flops,
    calibrate_width,
    count_flops,
    count_params,
    downsample,
    forward,
    get_variant,
    init_params,
    param_breakdown,
    param_shapes,
    stem,
)
from visiongru.mingru import MinGRUCell
from visiongru.train import OptimizerState, adamw_step, loss_and_grads

SMALL = ModelSpec((1, 1, 1, 1), 8, 10, (64, 64), "small")


def deit(r):
    return baseline_attention_flops(DEIT_S["embed_dim"], DEIT_S["depth"], DEIT_S["patch"], r)


# --- stem / downsample -------------------------------------------------------


@pytest.mark.parametrize("res,grid", [(224, 56), (512, 128), (64, 16)])
def test_stem_reduces_by_four(res, grid, rng):
    spec = SMALL.with_(input_resolution=(res, res))
    p = init_params(spec, 0)
    out = stem(p, rng.standard_normal((1, res, res, 3)).astype(np.float32))
    assert out.shape == (1, grid, grid, 8)


@pytest.mark.parametrize("res", [(100, 64), (64, 48), (0, 64)])
def test_misaligned_resolution_rejected(res):
    with pytest.raises(T.ShapeError, match="multiple of 32"):
        SMALL.with_(input_resolution=res)
    with pytest.raises(T.ShapeError, match="multiple of 32"):
        forward(SMALL, init_params(SMALL), np.zeros((1, 96, 80, 3), np.float32))


def test_downsample_width_and_grid(rng):
    spec = ModelSpec(base_width=16, num_classes=10)
    p = init_params(spec, 0)
    x = rng.standard_normal((1, 56, 56, 16)).astype(np.float32)
    assert downsample(p, 0, x).shape == (1, 28, 28, 32)


def test_downsample_sees_exactly_its_children():
    spec = SMALL
    p = init_params(spec, 0, np.float64)
    x = np.zeros((1, 4, 4, 8))
    x[0, 2, 3, :] = 1.0  # lives in output cell (1, 1)
    out = downsample(p, 0, x)
    touched = np.abs(out[0] - out[0, 0, 0]).sum(axis=-1) > 0
    assert touched.tolist() == [[False, False], [False, True]]


def test_downsample_rejects_odd(rng):
    with pytest.raises(T.ShapeError, match="even"):
        downsample(init_params(SMALL), 0, np.zeros((1, 5, 4, 8), np.float32))


@pytest.mark.parametrize("res", [64, 96, 224])
def test_stage_grids(res, rng):
    spec = ModelSpec((2, 2, 8, 2), 8, 10, (res, res), "grid")
    _, feats = forward(spec, init_params(spec), rng.standard_normal((1, res, res, 3)).astype(np.float32), True)
    assert [f.shape[1:3] for f in feats] == [(res // 4,) * 2, (res // 8,) * 2, (res // 16,) * 2, (res // 32,) * 2]
    assert [f.shape[3] for f in feats] == [8, 16, 32, 32]
    if res == 224:
        assert feats[-1].shape[1:3] == (7, 7)


# --- forward -----------------------------------------------------------------


def test_logits_shape_and_initial_loss(rng, f64):
    spec = get_variant("micro")
    p = init_params(spec, 3)
    x = rng.standard_normal((6, 64, 64, 3))
    logits = forward(spec, p, x)
    assert logits.shape == (6, 10) and np.all(np.isfinite(logits))
    assert T.cross_entropy(logits, rng.integers(0, 10, 6)) == pytest.approx(math.log(10), abs=0.05)


def test_batch_permutation_equivariance(rng, f64):
    spec = get_variant("micro")
    p = init_params(spec, 1)
    x = rng.standard_normal((4, 64, 64, 3))
    perm = np.array([2, 0, 3, 1])
    assert np.allclose(forward(spec, p, x[perm]), forward(spec, p, x)[perm], rtol=0, atol=1e-12)


def test_pos_embed_interpolates_to_other_resolutions(rng):
    spec = get_variant("micro")
    p = init_params(spec, 0)
    logits = forward(spec, p, rng.standard_normal((1, 128, 128, 3)).astype(np.float32))
    assert logits.shape == (1, 10) and np.all(np.isfinite(logits))


# --- parameter counting ------------------------------------------------------


def test_cell_count():
    assert MinGRUCell.zeros(8).num_params == 144


@pytest.mark.parametrize("variant,target", [("tiny", 30e6), ("base", 86e6)])
def test_variant_budgets(variant, target):
    n = count_params(get_variant(variant))
    assert abs(n - target) <= 0.15 * target


@pytest.mark.parametrize("variant,target", [("tiny", 30_000_000), ("base", 86_000_000)])
def test_calibration_selects_configured_width(variant, target):
    spec = get_variant(variant)
    d, log = calibrate_width(spec.depths, target)
    assert d == spec.base_width
    assert all(c % 16 == 0 for c, _ in log)
    assert dict(log)[d] == count_params(spec)


def test_count_matches_initialized_arrays():
    spec = get_variant("tiny-mini")
    p = init_params(spec)
    assert sum(v.size for v in p.values()) == count_params(spec) == sum(param_breakdown(spec).values())
    assert {k: v.shape for k, v in p.items()} == param_shapes(spec)


def test_width_invariants():
    with pytest.raises(ValueError):
        ModelSpec(width_mults=(1, 2, 4, 8))
    with pytest.raises(ValueError):
        ModelSpec(depths=(2, 2, 8))
    assert get_variant("tiny").widths == (112, 224, 448, 448)
    assert get_variant("base").depths == (2, 2, 15, 2)


# --- FLOPs -------------------------------------------------------------------


def test_flops_linear_in_tokens():
    spec = get_variant("tiny")
    r224, r448 = count_flops(spec, 224), count_flops(spec, 448)
    assert 3.6 <= r448.total / r224.total <= 4.4
    per_pixel = [count_flops(spec, r).without_head / r**2 for r in (224, 448, 896)]
    assert max(per_pixel) / min(per_pixel) <= 1.1


def test_tiny_at_1248_near_reference():
    g = count_flops(get_variant("tiny"), 1248).total / 1e9
    assert 151.9 / 2 <= g <= 151.9 * 2


def test_strict_mac_convention_roughly_doubles():
    spec = get_variant("tiny")
    one, two = count_flops(spec, 224).total, count_flops(spec, 224, macs_as=2).total
    assert 1.8 < two / one < 2.0


def test_baseline_formula():
    assert deit(224) / 1e9 == pytest.approx(4.6, rel=0.03)
    d, n1, n2 = 384, 14 * 14, 28 * 28
    assert (2 * n2 * n2 * d) / (2 * n1 * n1 * d) == 16
    assert deit(448) - 4 * deit(224) == pytest.approx(12 * 2 * d * (n2 * n2 - 4 * n1 * n1))
    assert 432.3 / 1.5 <= deit(1248) / 1e9 <= 432.3 * 1.5


def test_baseline_overtakes_visiongru():
    spec = get_variant("tiny")
    ratios = [deit(r) / count_flops(spec, r).total for r in (224, 448, 896)]
    assert ratios == sorted(ratios)
    assert deit(1248) > count_flops(spec, 1248).total


def test_flops_itemized_sum():
    rep = count_flops(get_variant("tiny"), 224)
    assert {"stem", "head", "stage3.scan", "stage3.ffn", "downsample1"} <= set(rep.items)
    assert rep.total == pytest.approx(sum(rep.items.values()))
    assert rep.total - rep.without_head == rep.items["head"]


@settings(max_examples=20)
@given(k=st.integers(1, 12))
def test_flops_accept_any_aligned_resolution(k):
    assert count_flops(get_variant("tiny-mini"), 32 * k).total > 0


# --- gradient flow -----------------------------------------------------------


def test_one_step_decreases_loss(f64):
    spec = get_variant("micro")
    passed = 0
    for seed in range(20):
        r = np.random.default_rng(seed)
        p = init_params(spec, seed, np.float64)
        x = r.standard_normal((4, 64, 64, 3))
        y = r.integers(0, 10, 4)
        before, _, grads = loss_and_grads(spec, p, x, y)
        p2 = adamw_step(p, grads, OptimizerState.zeros(p, weight_decay=0.0), lr=1e-3)
        after, _, _ = loss_and_grads(spec, p2, x, y)
        passed += after < before
    assert passed >= 18


def test_mini_model_gradients(f64):
    from visiongru.verify import finite_difference_check, mini_model

    r = np.random.default_rng(7)
    spec, params, images, labels = mini_model(r)
    errs = finite_difference_check(spec, params, images, labels, r, entries=2)
    assert max(errs.values()) <= 1e-4
    assert not ad.current_tape()
