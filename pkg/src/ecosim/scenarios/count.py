"""A deterministic counter: the smallest possible process, used by the
CLI and tests as a reference scenario."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import FieldSpec, Network, Value, ValueSpec, Variable


@dataclass(frozen=True)
class CountConfig:
    horizon: int = 5
    population: int = 1

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.population < 1:
            raise ValueError("population must be >= 1")


def build_count_story(cfg: CountConfig) -> Network:
    count = Variable("count", ValueSpec(n=FieldSpec((), "integer")))
    count.bind_initial(lambda: Value(n=np.zeros(cfg.population, np.int64)))
    count.bind_kernel(lambda prev: Value(n=prev.get("n") + 1), deps=(count.previous,))
    return Network([count])
