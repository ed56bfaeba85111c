"""Scoring observed trajectories under a model.

Scoring replays every builder with observed values substituted for its
dependencies; each stochastic field then contributes the exact log
density of its observed value, and each deterministic field is checked
for consistency (a mismatch means corrupted data, not low likelihood,
and raises).  Builders must therefore be pure functions of their
declared dependencies and registered trainable parameters; violated
purity yields wrong densities, not crashes.

Step counting follows the ``horizon - 1`` convention: ``num_steps`` is
the number of kernel applications, and slices 0 .. num_steps (the
initial slice plus ``num_steps`` transitions) are scored.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .core import CoreError, Network, Value, ValueSpec
from .dist import NEG_INF, Deterministic, Distribution
from .runtime import Trajectory, _resolve_deps
from .tensor import Tensor


class LogProbError(ValueError):
    """Raised for malformed observations or deterministic mismatches."""


class ObservedTrajectory:
    """Per-variable, per-step observed Values; whole fields may be held out.

    A field is either observed at every step or held out at every step;
    per-step partial observation is rejected.
    """

    def __init__(self, specs: dict[str, ValueSpec], steps: int,
                 data: dict[str, list[Value]]):
        if steps < 1:
            raise LogProbError(f"need at least one step, got {steps}")
        if set(data) != set(specs):
            raise LogProbError(f"observed variables {sorted(data)} != "
                               f"network variables {sorted(specs)}")
        self.specs = specs
        self.steps = steps
        self.data = data
        self._validate()

    def _validate(self) -> None:
        batch = None
        for name, spec in self.specs.items():
            slices = self.data[name]
            if len(slices) != self.steps:
                raise LogProbError(
                    f"variable {name!r} has {len(slices)} slices, expected {self.steps}")
            for path in spec.paths:
                present = [v.has(path) for v in slices]
                if any(present) and not all(present):
                    raise LogProbError(
                        f"field {path!r} of variable {name!r} is partially observed; "
                        f"fields must be fully observed or fully held out")
                if all(present):
                    for t, v in enumerate(slices):
                        batch = spec.check_payload(
                            path, v.get(path), batch,
                            f"observed variable {name!r} at step {t}")
        self.batch = batch

    @classmethod
    def from_trajectory(cls, net: Network, traj: Trajectory,
                        hold_out: Iterable[tuple[str, str]] = ()) -> "ObservedTrajectory":
        """Strip distributions from a sampled trajectory; optionally drop
        (variable, path) fields to mark them held out."""
        dropped = set(hold_out)
        specs = {v.name: v.spec for v in net.variables}
        data: dict[str, list[Value]] = {}
        for v in net.variables:
            slices = []
            for t in range(traj.horizon):
                kept = {path: traj.values[v.name][t].get(path)
                        for path in v.spec.paths if (v.name, path) not in dropped}
                slices.append(Value.of(kept))
            data[v.name] = slices
        return cls(specs, traj.horizon, data)

    def held_out(self) -> set[tuple[str, str]]:
        out = set()
        for name, spec in self.specs.items():
            for path in spec.paths:
                if not self.data[name][0].has(path):
                    out.add((name, path))
        return out

    def value(self, variable: str, step: int) -> Value:
        return self.data[variable][step]

    def inject(self, variable: str, path: str, values: Sequence) -> "ObservedTrajectory":
        """A new trajectory with the held-out field filled per step.

        ``values`` has one payload per step (a static latent can pass the
        same taped tensor for every step; gradients accumulate across
        steps).  The original trajectory is unmodified.
        """
        if variable not in self.specs:
            raise LogProbError(f"unknown variable {variable!r}")
        spec = self.specs[variable]
        if path not in spec.paths:
            raise LogProbError(f"variable {variable!r} has no field {path!r}")
        if self.data[variable][0].has(path):
            raise LogProbError(f"field already observed: {variable!r}.{path!r}")
        if len(values) != self.steps:
            raise LogProbError(
                f"need one value per step ({self.steps}), got {len(values)}")
        new_slices = []
        for t, payload in enumerate(values):
            v = self.data[variable][t].union(Value.of({path: payload}))
            spec.check_payload(path, v.get(path), self.batch,
                               f"injected field {path!r} at step {t}")
            new_slices.append(v)
        data = dict(self.data)
        data[variable] = new_slices
        return ObservedTrajectory(self.specs, self.steps, data)


def inject_field(traj: ObservedTrajectory, variable: str, path: str,
                 values: Sequence) -> ObservedTrajectory:
    return traj.inject(variable, path, values)


def _score_variable(var, out: Value, observed: Value, step: int,
                    only) -> Tensor | None:
    where = f"variable {var.name!r} at step {step}"
    total: Tensor | None = None
    for path in var.spec.paths:
        try:
            emitted = out.get(path)
        except CoreError as e:
            raise LogProbError(f"{where}: builder did not emit field {path!r}") from e
        if not observed.has(path):
            raise LogProbError(
                f"{where}: field {path!r} is held out; inject a value before scoring")
        obs = observed.get(path)
        if isinstance(emitted, Distribution):
            if only is not None and (var.name, path) not in only:
                continue
            lp = emitted.log_prob(obs)
        else:
            det = Deterministic(emitted)
            if not det.is_consistent(obs):
                raise LogProbError(
                    f"{where}: deterministic field {path!r} does not match the "
                    f"observed value (replayed from observed dependencies)")
            continue  # consistent deterministic fields contribute 0
        total = lp if total is None else T.add(total, lp)
    return total


def trajectory_log_prob_rows(net: Network, traj: ObservedTrajectory,
                             num_steps: int,
                             only: Iterable[tuple[str, str]] | None = None) -> Tensor:
    """Per-batch-row log-probability over slices 0 .. num_steps.

    ``only`` restricts the sum to the given (variable, path) stochastic
    fields (deterministic replay checks still run); used e.g. to isolate
    a policy's action log-probability.
    """
    if not 0 <= num_steps <= traj.steps - 1:
        raise LogProbError(
            f"num_steps={num_steps} out of range [0, {traj.steps - 1}] "
            f"(trajectory has {traj.steps} slices)")
    only = set(only) if only is not None else None
    batch = traj.batch if traj.batch is not None else 1
    total: Tensor = T.zeros((batch,))
    for t in range(num_steps + 1):
        current = {name: traj.value(name, t) for name in traj.specs}
        previous = ({name: traj.value(name, t - 1) for name in traj.specs}
                    if t > 0 else None)
        order = net.initial_order if t == 0 else net.order
        for var in order:
            if t == 0:
                out = var.initial_fn(*_resolve_deps(var.initial_deps, current, None))
            else:
                out = var.kernel_fn(*_resolve_deps(var.kernel_deps, current, previous))
            lp = _score_variable(var, out, current[var.name], t, only)
            if lp is not None:
                total = T.add(total, lp)
    return total


def log_probability_from_value_trajectory(net: Network, traj: ObservedTrajectory,
                                          num_steps: int) -> Tensor:
    """Scalar log-probability of an observed trajectory under the model.

    Differentiable with respect to trainable parameters referenced by
    builders and with respect to injected field values.
    """
    return T.reduce_sum(trajectory_log_prob_rows(net, traj, num_steps))
