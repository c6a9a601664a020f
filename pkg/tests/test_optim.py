import math

import numpy as np
import pytest

from cellseg.errors import ConfigError, PipelineError, ShapeError
from cellseg.optim import (
    AdamWConfig,
    AdamWState,
    GradBuffer,
    LrSchedule,
    accumulate,
    adamw_step,
    lr_at,
)

from oracles import reference_adamw


def scalar_params(value=1.0):
    return {"theta": np.array([value])}


# -- accumulation


def test_accumulate_additive_inverse():
    buf = GradBuffer.zeros_like(scalar_params())
    g = {"theta": np.array([0.7])}
    accumulate(buf, g)
    accumulate(buf, {"theta": -g["theta"]})
    assert buf.grads["theta"][0] == 0.0
    assert buf.batches_absorbed == 2


def test_accumulate_thirteen_equal_grads():
    buf = GradBuffer.zeros_like(scalar_params())
    g = {"theta": np.array([0.25])}
    for _ in range(13):
        accumulate(buf, g)
    assert buf.grads["theta"][0] == pytest.approx(13 * 0.25)
    assert buf.batches_absorbed == 13


def test_accumulate_matches_direct_sum():
    rng = np.random.default_rng(0)
    params = {"w": np.zeros((3, 4)), "b": np.zeros(5)}
    buf = GradBuffer.zeros_like(params)
    grads = [{k: rng.normal(size=v.shape) for k, v in params.items()} for _ in range(4)]
    for g in grads:
        accumulate(buf, g)
    for k in params:
        expect = grads[0][k] + grads[1][k] + grads[2][k] + grads[3][k]
        assert np.array_equal(buf.grads[k], expect)


def test_accumulate_shape_mismatch():
    buf = GradBuffer.zeros_like(scalar_params())
    with pytest.raises(ShapeError):
        accumulate(buf, {"theta": np.zeros(2)})


# -- AdamW


def test_step_zero_gradient_pure_decay():
    params = scalar_params(1.0)
    buf = GradBuffer.zeros_like(params)
    accumulate(buf, {"theta": np.array([0.0])})
    state = AdamWState.init(params)
    adamw_step(params, buf, state, lr=1e-4)
    assert params["theta"][0] == pytest.approx(1.0 - 1e-6, abs=1e-18)


def test_first_step_is_signed_lr():
    for g in (0.3, -2.0, 17.0):
        params = scalar_params(0.0)
        buf = GradBuffer.zeros_like(params)
        accumulate(buf, {"theta": np.array([g])})
        state = AdamWState.init(params)
        adamw_step(params, buf, state, lr=1e-3, cfg=AdamWConfig(weight_decay=0.0))
        assert params["theta"][0] == pytest.approx(-1e-3 * np.sign(g), rel=1e-6)


def test_trajectory_matches_reference():
    rng = np.random.default_rng(1)
    grads = rng.normal(size=10)
    params = scalar_params(0.5)
    buf = GradBuffer.zeros_like(params)
    state = AdamWState.init(params)
    mine = []
    for g in grads:
        accumulate(buf, {"theta": np.array([g])})
        adamw_step(params, buf, state, lr=1e-3)
        mine.append(params["theta"][0])
    expect = reference_adamw(0.5, grads, lr=1e-3)
    assert np.allclose(mine, expect, rtol=0, atol=1e-12)


def test_step_zeroes_buffer():
    params = scalar_params()
    buf = GradBuffer.zeros_like(params)
    accumulate(buf, {"theta": np.array([1.0])})
    adamw_step(params, buf, AdamWState.init(params), lr=1e-4)
    assert buf.batches_absorbed == 0
    assert buf.grads["theta"][0] == 0.0


def test_step_requires_accumulated_gradient():
    params = scalar_params()
    with pytest.raises(PipelineError):
        adamw_step(params, GradBuffer.zeros_like(params), AdamWState.init(params), lr=1e-4)


def test_accumulate_then_step_equals_step_on_sum_bitwise():
    rng = np.random.default_rng(2)
    shape = (4, 3)
    grads = [rng.normal(size=shape) for _ in range(13)]

    params_a = {"w": np.full(shape, 0.3)}
    buf_a = GradBuffer.zeros_like(params_a)
    state_a = AdamWState.init(params_a)
    for g in grads:
        accumulate(buf_a, {"w": g})
    adamw_step(params_a, buf_a, state_a, lr=2e-4)

    total = np.zeros(shape)
    for g in grads:
        total += g
    params_b = {"w": np.full(shape, 0.3)}
    buf_b = GradBuffer.zeros_like(params_b)
    accumulate(buf_b, {"w": total})
    adamw_step(params_b, buf_b, AdamWState.init(params_b), lr=2e-4)

    assert np.array_equal(params_a["w"], params_b["w"])  # bitwise


def test_zero_grad_zero_decay_is_identity():
    params = {"w": np.array([1.5, -2.5])}
    buf = GradBuffer.zeros_like(params)
    accumulate(buf, {"w": np.zeros(2)})
    before = params["w"].copy()
    adamw_step(params, buf, AdamWState.init(params), lr=1e-3, cfg=AdamWConfig(weight_decay=0.0))
    assert np.array_equal(params["w"], before)


# -- LR schedules


def test_constant_schedule():
    sched = LrSchedule("constant", lr_max=1e-4, total_steps=100)
    assert lr_at(sched, 0) == lr_at(sched, 50) == lr_at(sched, 100) == 1e-4


def test_cosine_endpoints_paper_values():
    sched = LrSchedule("cosine", lr_max=2e-4, lr_min=1e-6, total_steps=1000)
    assert lr_at(sched, 0) == 2e-4
    assert lr_at(sched, 1000) == pytest.approx(1e-6, abs=1e-18)


def test_cosine_midpoint():
    sched = LrSchedule("cosine", lr_max=2e-4, lr_min=1e-6, total_steps=1000)
    assert lr_at(sched, 500) == pytest.approx((2e-4 + 1e-6) / 2, abs=1e-12)


def test_warm_restarts_hit_lr_max_exactly():
    sched = LrSchedule(
        "cosine_warm_restarts", lr_max=1e-4, lr_min=1e-6, total_steps=1500,
        restart_steps=(100, 300, 700),
    )
    for restart in (0, 100, 300, 700):
        assert lr_at(sched, restart) == 1e-4  # exact equality
    # strictly inside a segment the rate is below the max
    assert lr_at(sched, 99) < 1e-4
    assert lr_at(sched, 701) < 1e-4


def test_warm_restart_segments_are_cosine():
    sched = LrSchedule(
        "cosine_warm_restarts", lr_max=1.0, lr_min=0.0, total_steps=40, restart_steps=(10, 30)
    )
    # segment [10, 30): phase (s-10)/20
    for step in (10, 15, 20, 29):
        phase = (step - 10) / 20
        assert lr_at(sched, step) == pytest.approx(0.5 * (1 + math.cos(math.pi * phase)))


def test_schedule_continuity_within_segments():
    sched = LrSchedule(
        "cosine_warm_restarts", lr_max=1.0, lr_min=0.0, total_steps=100, restart_steps=(40,)
    )
    values = [lr_at(sched, s) for s in range(101)]
    jumps = np.abs(np.diff(values))
    # the only jump is at the restart point
    assert jumps.argmax() == 39
    inside = np.concatenate([jumps[:39], jumps[40:]])
    assert inside.max() < 0.05


def test_schedule_validation_errors():
    with pytest.raises(ConfigError):
        LrSchedule("cosine", lr_max=1e-5, lr_min=1e-4, total_steps=10)
    with pytest.raises(ConfigError):
        LrSchedule("cosine_warm_restarts", total_steps=100, restart_steps=(50, 50))
    with pytest.raises(ConfigError):
        LrSchedule("cosine_warm_restarts", total_steps=100, restart_steps=(100,))
    with pytest.raises(PipelineError):
        lr_at(LrSchedule("cosine", total_steps=10), 11)
