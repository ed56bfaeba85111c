"""Reusable behavioral building blocks.

Affinity models score slates of items against per-agent target vectors;
choice models turn scores into selection distributions; state models
cover static (mixture-sampled), dynamic (controlled linear-Gaussian),
and estimator (finite history buffer) state.  An "entity" is a
convention, not a framework type: any object exposing behavior functions
that a story binds into Variables.

Trainable parameters are captured through a ParameterRegistry handle the
story builder receives; during a training step the registry is bound to
a Tape so every ``get`` hands builders a watched leaf.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .core import CoreError, Value, Variable
from .dist import Categorical, Deterministic, Distribution, GaussianMixture, Normal, PlackettLuce, greedy_argmax
from .tensor import Tape, Tensor, as_tensor

NEGATIVE_EUCLIDEAN = "negative_euclidean"
DOT_PRODUCT = "dot_product"

GREEDY = "greedy"
MULTINOMIAL_LOGIT = "multinomial_logit"
PLACKETT_LUCE = "plackett_luce"


@dataclass(frozen=True)
class AffinityModel:
    """Scores items against a target vector, one score per slate item."""

    kind: str = NEGATIVE_EUCLIDEAN
    scale: float | None = None

    def affinities(self, targets, item_features) -> Tensor:
        """targets: (..., d); item_features: (..., slate, d) -> (..., slate)."""
        targets = as_tensor(targets)
        items = as_tensor(item_features)
        if targets.shape[-1] != items.shape[-1]:
            raise CoreError(
                f"affinity dims differ: targets {targets.shape} vs items {items.shape}")
        t = T.expand_dims(targets, -2)
        if self.kind == NEGATIVE_EUCLIDEAN:
            out = T.neg(T.sqrt(T.squared_l2_norm(T.sub(items, t))))
        elif self.kind == DOT_PRODUCT:
            out = T.reduce_sum(T.mul(items, t), axis=-1)
        else:
            raise CoreError(f"unknown affinity kind {self.kind!r}")
        if self.scale is not None:
            out = T.mul(out, self.scale)
        return out


@dataclass(frozen=True)
class ChoiceModel:
    """Turns affinities into a selection distribution.

    With ``no_choice_logit`` set, a constant abstention option is appended
    after the slate, so index ``slate_size`` means "no choice".  A boost
    is applied to item logits only, never to the abstention logit.
    """

    kind: str = MULTINOMIAL_LOGIT
    no_choice_logit: float | None = None
    slate_size: int | None = None  # ranked-selection size for plackett_luce

    def choice(self, affinities, extra_logit_boost=None) -> Distribution:
        logits = as_tensor(affinities)
        if extra_logit_boost is not None:
            logits = T.add(logits, T.expand_dims(as_tensor(extra_logit_boost), -1))
        if self.no_choice_logit is not None:
            const = Tensor(np.full(logits.shape[:-1] + (1,), float(self.no_choice_logit)))
            logits = T.concat([logits, const], axis=-1)
        if self.kind == MULTINOMIAL_LOGIT:
            return Categorical(logits)
        if self.kind == GREEDY:
            return Deterministic(greedy_argmax(logits))
        if self.kind == PLACKETT_LUCE:
            if self.slate_size is None:
                raise CoreError("plackett_luce choice needs slate_size")
            return PlackettLuce(logits, self.slate_size)
        raise CoreError(f"unknown choice kind {self.kind!r}")


class ControlledLinearGaussianStateModel:
    """S' ~ Normal(A S + C u, sigma); identity A and C = sensitivity * I
    by default, which realizes interest dynamics with control input
    u = q * (F - S).  Zero noise degrades to a Deterministic field.
    """

    def __init__(self, dim: int, transition=None, control=None,
                 sensitivity: float = 1.0, noise_scale=0.0):
        self.dim = int(dim)
        self.transition = None if transition is None else np.asarray(transition, np.float64)
        self.control = None if control is None else np.asarray(control, np.float64)
        self.sensitivity = float(sensitivity)
        self.noise_scale = np.asarray(noise_scale, np.float64)
        for name, m in (("transition", self.transition), ("control", self.control)):
            if m is not None and m.shape != (self.dim, self.dim):
                raise CoreError(f"{name} matrix must be ({self.dim}, {self.dim}), got {m.shape}")
        if self.noise_scale.ndim not in (0, 1):
            raise CoreError("noise_scale must be a scalar or per-dimension vector")
        if self.noise_scale.ndim == 1 and self.noise_scale.shape[0] != self.dim:
            raise CoreError(f"noise_scale has {self.noise_scale.shape[0]} dims, expected {self.dim}")

    def next_state(self, state, control_input) -> Distribution:
        state = as_tensor(state)
        control_input = as_tensor(control_input)
        if state.shape != control_input.shape:
            raise CoreError(
                f"state {state.shape} and control input {control_input.shape} differ")
        if self.transition is None:
            loc = state
        else:
            loc = T.matmul(state, Tensor(self.transition.T))
        if self.control is None:
            drive = T.mul(control_input, self.sensitivity)
        else:
            drive = T.matmul(control_input, Tensor(self.control.T))
        loc = T.add(loc, drive)
        if np.all(self.noise_scale == 0.0):
            return Deterministic(loc)
        return Normal(loc, Tensor(np.broadcast_to(self.noise_scale, (self.dim,))))


class GaussianMixtureStaticStateModel:
    """Community-structured static state: sampled once at t = 0 from a
    Gaussian mixture, then carried forward unchanged."""

    def __init__(self, weights, locs, scales):
        self.weights = np.asarray(weights, np.float64)
        self.locs = np.asarray(locs, np.float64)
        self.scales = np.broadcast_to(np.asarray(scales, np.float64), self.locs.shape)

    def initial_state(self, batch: int) -> GaussianMixture:
        m, d = self.locs.shape
        return GaussianMixture(
            np.broadcast_to(self.weights, (batch, m)),
            np.broadcast_to(self.locs, (batch, m, d)),
            np.broadcast_to(self.scales, (batch, m, d)))

    @staticmethod
    def around_points(points, scale, weights=None) -> GaussianMixture:
        """Second level of a hierarchical sampler: a mixture whose
        components sit on already-sampled core points.

        points: (batch, m, d) or (m, d); one draw per batch row.
        """
        pts = as_tensor(points)
        m = pts.shape[-2]
        w = np.full(pts.shape[:-2] + (m,), 1.0 / m) if weights is None \
            else np.broadcast_to(np.asarray(weights, np.float64), pts.shape[:-2] + (m,))
        return GaussianMixture(w, pts, np.broadcast_to(np.asarray(scale, np.float64), pts.shape))


class FiniteHistoryEstimator:
    """Ring buffer of the last ``capacity`` records per agent, FIFO with a
    validity mask (1 = slot filled).  Bookkeeping only: not differentiable."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise CoreError(f"history capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)

    def initial_state(self, batch: int, record_dim: int) -> Value:
        return Value(
            records=Tensor(np.zeros((batch, self.capacity, record_dim))),
            mask=Tensor(np.zeros((batch, self.capacity))))

    def push(self, state: Value, record) -> Value:
        records = state.get("records").data
        mask = state.get("mask").data
        rec = record.data if isinstance(record, Tensor) else np.asarray(record, np.float64)
        if rec.shape != (records.shape[0], records.shape[2]):
            raise CoreError(
                f"record shape {rec.shape} != (batch, dim) = "
                f"({records.shape[0]}, {records.shape[2]})")
        new_records = np.concatenate([records[:, 1:], rec[:, None, :]], axis=1)
        new_mask = np.concatenate([mask[:, 1:], np.ones((mask.shape[0], 1))], axis=1)
        return Value(records=Tensor(new_records), mask=Tensor(new_mask))


class Parameter:
    """A named, mutable slot holding a trainable array.

    ``tensor()`` returns the tape-watched leaf while the owning registry
    is bound to a tape, otherwise a plain constant tensor.
    """

    __slots__ = ("name", "value", "leaf")

    def __init__(self, name: str, init):
        self.name = name
        self.value = np.array(init, dtype=np.float64)
        self.leaf: Tensor | None = None

    def tensor(self) -> Tensor:
        return self.leaf if self.leaf is not None else Tensor(self.value)

    def assign(self, value) -> None:
        self.value = np.array(value, dtype=np.float64)


class ParameterRegistry:
    """Collects the trainable parameters created while building a story."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def create(self, name: str, init) -> Parameter:
        if name in self._params:
            raise CoreError(f"duplicate parameter name {name!r}")
        p = Parameter(name, init)
        self._params[name] = p
        return p

    def get(self, name: str) -> Tensor:
        return self._params[name].tensor()

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> tuple[str, ...]:
        return tuple(self._params)

    def parameters(self) -> tuple[Parameter, ...]:
        return tuple(self._params.values())

    def bind(self, tape: Tape) -> None:
        """Watch every parameter on ``tape``; builders then see taped leaves."""
        for p in self._params.values():
            p.leaf = tape.watch(p.value)

    def unbind(self) -> None:
        for p in self._params.values():
            p.leaf = None

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self._params.items()}


def story_with_trainable_variables(story_builder) -> tuple[list[Variable], ParameterRegistry]:
    """Run a story builder with a fresh registry; returns the Variables it
    creates plus every trainable parameter it registered."""
    registry = ParameterRegistry()
    variables = story_builder(registry)
    return list(variables), registry
