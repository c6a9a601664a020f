import itertools

import numpy as np
import pytest

from cellseg.errors import CheckpointError, ShapeError
from cellseg.nnkit import (
    ClassWeights,
    MiniUNet,
    Tensor,
    UNetConfig,
    aspp,
    aspp_param_shapes,
    load_checkpoint,
    save_checkpoint,
    weighted_ce,
)

from oracles import fd_check

RNG = np.random.default_rng

VARIANTS = list(
    itertools.product(("group", "batch"), ("maxpool", "convstride"), ("upconv", "pixelshuffle"), (False, True))
)


def build(norm="group", down="maxpool", up="upconv", use_aspp=False, seed=0):
    cfg = UNetConfig(norm=norm, down=down, up=up, aspp=use_aspp)
    model = MiniUNet(cfg)
    return model, model.init_params(seed), model.init_buffers()


def test_zero_parameters_give_zero_scores():
    model, params, buffers = build()
    params = {k: np.zeros_like(v) for k, v in params.items()}
    scores, _ = model.forward(RNG(0).normal(size=(1, 1, 16, 16)), params, buffers, mode="eval")
    assert np.allclose(scores.data, 0.0)


@pytest.mark.parametrize("norm,down,up,use_aspp", VARIANTS)
def test_output_shape_all_variants(norm, down, up, use_aspp):
    model, params, buffers = build(norm, down, up, use_aspp)
    x = RNG(1).normal(size=(2, 1, 16, 24))
    scores, _ = model.forward(x, params, buffers, mode="train")
    assert scores.shape == (2, 3, 16, 24)


def test_channel_plan_matches_contract():
    model, _, _ = build()
    shapes = model.param_shapes()
    assert shapes["enc0.conv1.w"] == (8, 1, 3, 3)
    assert shapes["enc1.conv1.w"] == (16, 8, 3, 3)
    assert shapes["bott.conv1.w"] == (32, 16, 3, 3)
    assert shapes["head.conv.w"] == (3, 8, 1, 1)


def test_pixelshuffle_decoder_channel_plan():
    # previous-stage 2C channels shuffle to C/2, concat with the C-channel
    # bridge, block maps 3/2 C back to C
    model, _, _ = build(up="pixelshuffle")
    shapes = model.param_shapes()
    assert shapes["dec1.conv1.w"] == (16, 24, 3, 3)  # 32/4 + 16
    assert shapes["dec0.conv1.w"] == (8, 12, 3, 3)  # 16/4 + 8


def test_indivisible_input_rejected():
    model, params, buffers = build()
    with pytest.raises(ShapeError):
        model.forward(np.zeros((1, 1, 18, 16)), params, buffers)


def test_depth_flag():
    cfg = UNetConfig(depth=3)
    model = MiniUNet(cfg)
    params = model.init_params(0)
    scores, _ = model.forward(np.zeros((1, 1, 24, 24)), params, model.init_buffers())
    assert scores.shape == (1, 3, 24, 24)
    assert model.param_shapes()["bott.conv1.w"][0] == 64  # channels double per stage


def test_forward_deterministic():
    model, params, buffers = build()
    x = RNG(2).normal(size=(1, 1, 16, 16))
    a, _ = model.forward(x, params, buffers, mode="eval")
    b, _ = model.forward(x, params, buffers, mode="eval")
    assert np.array_equal(a.data, b.data)


@pytest.mark.parametrize(
    "norm,down,up,use_aspp",
    [
        ("group", "maxpool", "upconv", False),
        ("batch", "convstride", "pixelshuffle", True),
    ],
)
def test_whole_network_gradients_match_fd(norm, down, up, use_aspp):
    rng = RNG(3)
    model, params, buffers = build(norm, down, up, use_aspp)
    x = rng.normal(size=(2, 1, 8, 8))
    target = rng.integers(0, 3, size=(2, 8, 8))
    weights = ClassWeights()

    def f():
        buf = {k: v.copy() for k, v in buffers.items()}
        scores, _ = model.forward(x, params, buf, mode="train")
        return weighted_ce(scores, target, weights).item()

    buf = {k: v.copy() for k, v in buffers.items()}
    scores, leaves = model.forward(x, params, buf, mode="train")
    weighted_ce(scores, target, weights).backward()

    names = sorted(params)
    arrays = [params[n] for n in names]
    grads = [leaves[n].grad if leaves[n].grad is not None else np.zeros_like(params[n]) for n in names]
    worst = fd_check(f, arrays, grads, rng, n_probes=2)  # 2 probes x ~50 tensors
    assert worst <= 1e-5


def test_aspp_constant_input_constant_output():
    # 1x1 spatial input: every dilated tap beyond the center falls on zero
    # padding, so all-ones kernels map a constant to a constant
    shapes = aspp_param_shapes(4, 2, 4)
    params = {k: np.ones(s) if k.endswith(".w") else np.zeros(s[:1]) for k, s in shapes.items()}
    x = Tensor(np.full((1, 4, 1, 1), 3.0))
    out, _ = aspp(x, params)
    assert out.shape == (1, 4, 1, 1)
    assert np.allclose(out.data, out.data.ravel()[0])


def test_aspp_preserves_spatial_dims():
    rng = RNG(4)
    shapes = aspp_param_shapes(4, 2, 6)
    params = {k: rng.normal(size=s) for k, s in shapes.items()}
    out, _ = aspp(Tensor(rng.normal(size=(2, 4, 8, 8))), params)
    assert out.shape == (2, 6, 8, 8)


def test_aspp_gradients_match_fd():
    rng = RNG(5)
    shapes = aspp_param_shapes(3, 2, 3)
    params = {k: rng.normal(size=s) for k, s in shapes.items()}
    x = rng.normal(size=(1, 3, 8, 8))
    proj = rng.normal(size=(1, 3, 8, 8))

    def f():
        out, _ = aspp(Tensor(x), params)
        return float((out.data * proj).sum())

    out, leaves = aspp(Tensor(x), params)
    Tensor(float((out.data * proj).sum()), (out,), lambda up: (proj * up,)).backward()
    names = sorted(params)
    worst = fd_check(
        f, [params[n] for n in names], [leaves[n].grad for n in names], rng, n_probes=3
    )
    assert worst <= 1e-5


# -- checkpoints


def test_checkpoint_round_trip_bitwise(tmp_path):
    rng = RNG(6)
    arrays = {
        "enc0.conv1.w": rng.normal(size=(8, 1, 3, 3)),
        "enc0.conv1.b": rng.normal(size=(8,)),
        "scalar": np.array(3.14),
    }
    save_checkpoint(tmp_path / "p.ckpt", arrays)
    back = load_checkpoint(tmp_path / "p.ckpt")
    assert set(back) == set(arrays)
    for k in arrays:
        assert np.array_equal(back[k], np.asarray(arrays[k], dtype=np.float64))
        assert back[k].shape == np.asarray(arrays[k]).shape


def test_checkpoint_identical_bytes_for_identical_params(tmp_path):
    arrays = {"a": np.arange(12.0).reshape(3, 4), "b": np.ones(3)}
    save_checkpoint(tmp_path / "one.ckpt", arrays)
    save_checkpoint(tmp_path / "two.ckpt", dict(reversed(list(arrays.items()))))
    assert (tmp_path / "one.ckpt").read_bytes() == (tmp_path / "two.ckpt").read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "bad.ckpt").write_bytes(b"nope" + b"\x00" * 16)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")


def test_checkpoint_truncated(tmp_path):
    arrays = {"a": np.ones((4, 4))}
    save_checkpoint(tmp_path / "p.ckpt", arrays)
    blob = (tmp_path / "p.ckpt").read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(blob[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "cut.ckpt")
