"""AdamW with decoupled weight decay, gradient accumulation, and cosine
learning-rate schedules (with optional warm restarts).

Gradients from several minibatches are summed (never averaged) into a
GradBuffer; one optimizer step then consumes the buffer, so stepping after
accumulation is bitwise identical to stepping once on the precomputed sum.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, PipelineError, ShapeError


@dataclass
class AdamWConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class AdamWState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def init(cls, params: dict[str, np.ndarray]) -> "AdamWState":
        return cls(
            step=0,
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


@dataclass
class GradBuffer:
    grads: dict[str, np.ndarray]
    batches_absorbed: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "GradBuffer":
        return cls(grads={k: np.zeros_like(p) for k, p in params.items()}, batches_absorbed=0)

    def zero(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0
        self.batches_absorbed = 0


def accumulate(buf: GradBuffer, grads: dict[str, np.ndarray]) -> GradBuffer:
    """Elementwise sum of a minibatch gradient into the buffer (no averaging)."""
    for name, g in grads.items():
        if name not in buf.grads:
            raise ShapeError(f"accumulate: unknown parameter {name!r}")
        if buf.grads[name].shape != g.shape:
            raise ShapeError(
                f"accumulate: {name} shape {g.shape} != buffer {buf.grads[name].shape}"
            )
        buf.grads[name] += g
    buf.batches_absorbed += 1
    return buf


def adamw_step(
    params: dict[str, np.ndarray],
    buf: GradBuffer,
    state: AdamWState,
    lr: float,
    cfg: AdamWConfig | None = None,
) -> tuple[dict[str, np.ndarray], AdamWState]:
    """One AdamW update from the accumulated gradient; zeroes the buffer.

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
    """
    if buf.batches_absorbed < 1:
        raise PipelineError("adamw_step: gradient buffer is empty")
    cfg = cfg or AdamWConfig()
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, p in params.items():
        g = buf.grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p -= lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p)
    buf.zero()
    return params, state


# ---------------------------------------------------------------------------
# learning-rate schedules


@dataclass
class LrSchedule:
    kind: str  # "constant", "cosine", "cosine_warm_restarts"
    lr_max: float = 1e-4
    lr_min: float = 0.0
    total_steps: int = 1
    restart_steps: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in ("constant", "cosine", "cosine_warm_restarts"):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.lr_min > self.lr_max:
            raise ConfigError("lr_min must be <= lr_max")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        restarts = tuple(int(r) for r in self.restart_steps)
        if any(b <= a for a, b in zip(restarts, restarts[1:])):
            raise ConfigError("restart steps must be strictly increasing")
        if restarts and (restarts[0] <= 0 or restarts[-1] >= self.total_steps):
            raise ConfigError("restart steps must lie strictly inside (0, total_steps)")
        self.restart_steps = restarts


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Learning rate at an integer step in [0, total_steps].

    Cosine segments run from lr_max (phase 0) to lr_min (phase pi); with warm
    restarts the phase resets to 0 at each restart point, so
    lr_at(restart) == lr_max exactly.
    """
    if step < 0 or step > schedule.total_steps:
        raise PipelineError(f"step {step} outside [0, {schedule.total_steps}]")
    if schedule.kind == "constant":
        return schedule.lr_max
    if schedule.kind == "cosine":
        seg_start, seg_end = 0, schedule.total_steps
    else:
        starts = [0, *schedule.restart_steps]
        ends = [*schedule.restart_steps, schedule.total_steps]
        idx = bisect_right(starts, step) - 1
        seg_start, seg_end = starts[idx], ends[idx]
    phase = (step - seg_start) / (seg_end - seg_start)
    return schedule.lr_min + 0.5 * (schedule.lr_max - schedule.lr_min) * (
        1.0 + math.cos(math.pi * phase)
    )
