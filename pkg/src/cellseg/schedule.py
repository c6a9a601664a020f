"""Multi-dataset training schemes as deterministic event streams.

A stream interleaves Draw(dataset) and Step events that the trainer
consumes: Draw pulls a minibatch and accumulates its gradient, Step applies
one optimizer update. Schemes:

    Mix  one combined pool; each underlying sample equally likely, so
         dataset i is drawn with probability size_i / sum(sizes)
    Seq  exhaust a per-dataset quota of draws before moving to the next
    Fix  round robin over datasets in fixed order
    Shu  round robin with the order reshuffled every round
    Cho  dataset chosen uniformly at random each draw
    Acc  fixed order round, gradients accumulated, one Step per round

All but Acc step after every draw.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from . import rng as rngmod
from .errors import ConfigError

SCHEMES = ("Mix", "Seq", "Fix", "Shu", "Cho", "Acc")


@dataclass(frozen=True)
class Event:
    kind: str  # "draw" or "step"
    dataset: int | None = None


STEP = Event("step")


def draw(dataset: int) -> Event:
    return Event("draw", dataset)


@dataclass
class SchemeSpec:
    scheme: str
    n_datasets: int
    dataset_sizes: tuple[int, ...] | None = None  # Mix only
    per_dataset_quota: int | None = None  # Seq only
    mix_weights: tuple[float, ...] | None = None  # optional Mix reweighting
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.n_datasets < 1:
            raise ConfigError("n_datasets must be >= 1")
        if self.scheme == "Mix":
            if not self.dataset_sizes or len(self.dataset_sizes) != self.n_datasets:
                raise ConfigError("Mix requires dataset_sizes for every dataset")
            if min(self.dataset_sizes) <= 0:
                raise ConfigError("dataset sizes must be positive")
        if self.scheme == "Seq" and (self.per_dataset_quota or 0) < 1:
            raise ConfigError("Seq requires a positive per_dataset_quota")


def make_stream(spec: SchemeSpec) -> Iterator[Event]:
    """Infinite event stream for the scheme; deterministic in (spec, seed)."""
    n = spec.n_datasets
    gen = rngmod.stream(spec.seed, "scheme", spec.scheme)

    if spec.scheme == "Fix":
        def fix():
            while True:
                for d in range(n):
                    yield draw(d)
                    yield STEP
        return fix()

    if spec.scheme == "Acc":
        def acc():
            while True:
                for d in range(n):
                    yield draw(d)
                yield STEP
        return acc()

    if spec.scheme == "Shu":
        def shu():
            while True:
                for d in gen.permutation(n):
                    yield draw(int(d))
                    yield STEP
        return shu()

    if spec.scheme == "Cho":
        def cho():
            while True:
                yield draw(int(gen.integers(0, n)))
                yield STEP
        return cho()

    if spec.scheme == "Seq":
        def seq():
            while True:
                for d in range(n):
                    for _ in range(spec.per_dataset_quota):
                        yield draw(d)
                        yield STEP
        return seq()

    # Mix: sample at frame granularity
    sizes = np.asarray(spec.dataset_sizes, dtype=np.float64)
    if spec.mix_weights is not None:
        if len(spec.mix_weights) != n or min(spec.mix_weights) < 0:
            raise ConfigError("mix_weights must be non-negative, one per dataset")
        sizes = sizes * np.asarray(spec.mix_weights, dtype=np.float64)
    probs = sizes / sizes.sum()

    def mix():
        while True:
            yield draw(int(gen.choice(n, p=probs)))
            yield STEP
    return mix()


def round_counts(stream: Iterable[Event], n_draws: int) -> np.ndarray:
    """Per-dataset counts over the first n_draws Draw events of a stream."""
    counts = None
    seen = 0
    for event in stream:
        if counts is None:
            counts = np.zeros(0, dtype=np.int64)
        if event.kind == "draw":
            if event.dataset >= counts.size:
                grown = np.zeros(event.dataset + 1, dtype=np.int64)
                grown[: counts.size] = counts
                counts = grown
            counts[event.dataset] += 1
            seen += 1
            if seen == n_draws:
                return counts
    raise ConfigError(f"stream ended before {n_draws} draws")
