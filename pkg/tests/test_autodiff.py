import numpy as np
import pytest

from visiongru import autodiff as ad
from visiongru.twodgru import BlockSpec, TwoDGRUBlock, apply_block


def numeric_grad(f, arr, step=1e-6):
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + step
        up = f()
        arr[idx] = orig - step
        down = f()
        arr[idx] = orig
        g[idx] = (up - down) / (2 * step)
    return g


def test_backward_without_forward_rejected():
    tape = ad.Tape()
    with pytest.raises(ad.TapeError):
        ad.backward(tape, ad.const(np.ones(3)))
    with ad.Tape() as other:
        w = other.param(np.ones(2), "w")
        out = ad.total(w)
    with pytest.raises(ad.TapeError):
        ad.backward(tape, out)


def test_each_node_visited_once_in_reverse_order(rng):
    block = TwoDGRUBlock.init(BlockSpec(3), rng, np.float64)
    with ad.Tape() as tape:
        nodes = {k: tape.param(v, k) for k, v in block.params.items()}
        out, _ = apply_block(block.spec, nodes, rng.standard_normal((1, 2, 2, 3)))
        loss = ad.total(out)
    seen = []
    for node in tape.nodes:
        inner = node.vjp
        node.vjp = lambda g, n=node, f=inner: (seen.append(n), f(g))[1]
    ad.backward(tape, loss)
    assert tape.visits == len(tape.nodes)
    assert len(seen) == len(set(map(id, seen)))
    order = {id(n): i for i, n in enumerate(tape.nodes)}
    positions = [order[id(n)] for n in seen]
    assert positions == sorted(positions, reverse=True)


def test_zero_seed_gives_zero_grads(rng):
    block = TwoDGRUBlock.init(BlockSpec(2), rng, np.float64)
    with ad.Tape() as tape:
        nodes = {k: tape.param(v, k) for k, v in block.params.items()}
        out, _ = apply_block(block.spec, nodes, rng.standard_normal((1, 2, 3, 2)))
    grads = ad.backward(tape, out, np.zeros(out.value.shape))
    assert all(not np.any(g) for g in grads.values())


def test_residual_path_gradient_is_ones(rng):
    block = TwoDGRUBlock.init(BlockSpec(3), rng, np.float64)
    for k in block.params:
        if k.startswith(("forward.", "backward.", "ffn.w2")):
            block.params[k] = np.zeros_like(block.params[k])
    with ad.Tape() as tape:
        x = tape.param(rng.standard_normal((2, 3, 3, 3)), "x")
        nodes = {k: ad.const(v) for k, v in block.params.items()}
        out, _ = apply_block(block.spec, nodes, x)
        loss = ad.total(out)
    assert np.array_equal(ad.backward(tape, loss)["x"], np.ones((2, 3, 3, 3)))


def test_unused_param_gets_zero(rng):
    with ad.Tape() as tape:
        a = tape.param(rng.standard_normal(3), "a")
        tape.param(rng.standard_normal(2), "unused")
        loss = ad.total(a)
    grads = ad.backward(tape, loss)
    assert np.array_equal(grads["unused"], np.zeros(2))
    assert np.array_equal(grads["a"], np.ones(3))


@pytest.mark.parametrize(
    "build",
    [
        lambda p: ad.linear(p["x"], p["w"], p["bl"]),
        lambda p: ad.layer_norm(p["x"], p["g"], p["b"]),
        lambda p: ad.gelu(p["x"]),
        lambda p: ad.add(p["x"], p["b"]),
    ],
    ids=["linear", "layer_norm", "gelu", "add_broadcast"],
)
def test_dense_op_gradients(build, rng):
    params = {
        "x": rng.standard_normal((2, 3, 4)),
        "w": rng.standard_normal((4, 5)),
        "b": rng.standard_normal(4),
        "bl": rng.standard_normal(5),
        "g": rng.standard_normal(4),
    }
    probe = rng.standard_normal(build({k: ad.const(v) for k, v in params.items()}).value.shape)

    def f():
        return float((build(params).value * probe).sum())

    with ad.Tape() as tape:
        nodes = {k: tape.param(v, k) for k, v in params.items()}
        out = build(nodes)
    grads = ad.backward(tape, out, probe)
    for k, v in params.items():
        assert np.allclose(grads[k], numeric_grad(f, v), rtol=1e-6, atol=1e-8), k


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_gradients(stride, rng):
    params = {"x": rng.standard_normal((2, 4, 4, 2)), "w": rng.standard_normal((3, 3, 2, 3)), "b": rng.standard_normal(3)}
    probe = rng.standard_normal(ad.conv2d(params["x"], params["w"], params["b"], stride).value.shape)

    def f():
        return float((ad.conv2d(params["x"], params["w"], params["b"], stride).value * probe).sum())

    with ad.Tape() as tape:
        n = {k: tape.param(v, k) for k, v in params.items()}
        out = ad.conv2d(n["x"], n["w"], n["b"], stride)
    grads = ad.backward(tape, out, probe)
    for k, v in params.items():
        assert np.allclose(grads[k], numeric_grad(f, v), rtol=1e-6, atol=1e-8), k


def test_layout_op_gradients(rng):
    x = rng.standard_normal((2, 4, 6, 3))
    table = rng.standard_normal((2, 3, 3))
    probe_m = rng.standard_normal((2, 2, 3, 12))
    probe_t = rng.standard_normal((4, 6, 3))
    probe_p = rng.standard_normal((2, 3))

    def f():
        merged = ad.patch_merge(x).value
        resized = ad.resize_table(table, 4, 6).value
        pooled = ad.mean_pool(x).value
        return float((merged * probe_m).sum() + (resized * probe_t).sum() + (pooled * probe_p).sum())

    grads = {}
    for build, probe in ((lambda n: ad.patch_merge(n["x"]), probe_m), (lambda n: ad.mean_pool(n["x"]), probe_p),
                         (lambda n: ad.resize_table(n["t"], 4, 6), probe_t)):
        with ad.Tape() as tape:
            n = {"x": tape.param(x, "x"), "t": tape.param(table, "t")}
            out = build(n)
        for k, g in ad.backward(tape, out, probe).items():
            grads[k] = grads.get(k, 0) + g
    assert np.allclose(grads["x"], numeric_grad(f, x), rtol=1e-6, atol=1e-8)
    assert np.allclose(grads["t"], numeric_grad(f, table), rtol=1e-6, atol=1e-8)


def test_patch_merge_children_order():
    x = np.arange(16, dtype=float).reshape(1, 4, 4, 1)
    m = ad.patch_merge(x).value
    assert m.shape == (1, 2, 2, 4)
    assert m[0, 0, 0].tolist() == [0, 1, 4, 5]
    assert m[0, 1, 1].tolist() == [10, 11, 14, 15]


def test_cross_entropy_gradient(rng):
    logits = rng.standard_normal((4, 5))
    labels = np.array([0, 3, 4, 1])
    with ad.Tape() as tape:
        n = tape.param(logits, "l")
        loss = ad.cross_entropy(n, labels, 0.1)
    g = ad.backward(tape, loss)["l"]
    assert np.allclose(g, numeric_grad(lambda: float(ad.cross_entropy(logits, labels, 0.1).value), logits), atol=1e-9)
