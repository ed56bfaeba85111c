"""Distribution families for stochastic fields.

A behavior emits a distribution descriptor instead of a raw sample; the
runtime either samples it (simulation) or scores an observed value
against it (trajectory log-probability).  Sampling consumes uniforms
from a keyed :class:`~ecosim.rng.RngStream` with a fixed per-row budget,
so draws are reproducible per batch row.  ``log_prob`` is built from
differentiable tensor ops and returns one value per batch row (axis 0),
summing over all trailing event axes.

Convention for impossible events: log-probabilities use the finite
sentinel ``NEG_INF = -1e30`` instead of ``-inf`` so downstream
arithmetic stays finite.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, ndtri

from . import tensor as T
from .rng import RngStream
from .tensor import Tensor, as_tensor

NEG_INF = -1e30
_DETERMINISTIC_ATOL = 1e-12
_LOG_2PI = float(np.log(2.0 * np.pi))


class DistributionError(ValueError):
    """Raised when distribution parameters violate an invariant."""


def _batch_rows(t: Tensor) -> Tensor:
    """Reduce a per-element tensor to one value per axis-0 row."""
    if t.ndim <= 1:
        return t
    return T.reduce_sum(T.reshape(t, (t.shape[0], -1)), axis=1)


def _per_row(total: int, batch: int) -> int:
    return total // batch if batch else 0


class Distribution:
    """Base class; subclasses define a family with fixed event semantics."""

    family: str = ""

    def sample(self, stream: RngStream):
        raise NotImplementedError

    def log_prob(self, value) -> Tensor:
        raise NotImplementedError

    @property
    def sample_shape(self) -> tuple[int, ...]:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}(sample_shape={self.sample_shape})"


class Deterministic(Distribution):
    """A point mass.  Plain tensors emitted by behaviors are wrapped here.

    ``log_prob`` is 0 per row when the value matches ``loc`` within
    1e-12 (exactly, for integer payloads) and ``NEG_INF`` otherwise.
    """

    family = "deterministic"

    def __init__(self, loc):
        if isinstance(loc, Tensor):
            self.loc = loc.data
            self._integer = False
        else:
            arr = np.asarray(loc)
            self._integer = np.issubdtype(arr.dtype, np.integer)
            self.loc = arr.astype(np.int64) if self._integer else np.asarray(arr, np.float64)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self.loc.shape

    def sample(self, stream: RngStream):
        return self.loc.copy()

    def is_consistent(self, value) -> bool:
        v = value.data if isinstance(value, Tensor) else np.asarray(value)
        if v.shape != self.loc.shape:
            return False
        if self._integer:
            return bool(np.array_equal(v, self.loc))
        return bool(np.all(np.abs(v - self.loc) <= _DETERMINISTIC_ATOL))

    def log_prob(self, value) -> Tensor:
        v = value.data if isinstance(value, Tensor) else np.asarray(value)
        batch = self.loc.shape[0] if self.loc.ndim else ()
        delta = np.abs(np.asarray(v, np.float64) - np.asarray(self.loc, np.float64))
        ok = delta <= _DETERMINISTIC_ATOL
        if self.loc.ndim == 0:
            return Tensor(0.0 if bool(ok) else NEG_INF)
        ok_rows = ok.reshape(batch, -1).all(axis=1)
        return Tensor(np.where(ok_rows, 0.0, NEG_INF))


class Normal(Distribution):
    family = "normal"

    def __init__(self, loc, scale):
        self.loc = as_tensor(loc)
        self.scale = as_tensor(scale)
        if not np.all(self.scale.data > 0.0):
            raise DistributionError("Normal scale must be positive elementwise")
        self._shape = np.broadcast_shapes(self.loc.shape, self.scale.shape)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self._shape

    def sample(self, stream: RngStream) -> np.ndarray:
        z = stream.normals(self._shape)
        return np.broadcast_to(self.loc.data, self._shape) + \
            np.broadcast_to(self.scale.data, self._shape) * z

    def log_prob(self, value) -> Tensor:
        v = as_tensor(value)
        z = T.div(T.sub(v, self.loc), self.scale)
        elem = T.sub(T.mul(T.mul(z, z), -0.5),
                     T.add(T.log(self.scale), 0.5 * _LOG_2PI))
        return _batch_rows(elem)


class Bernoulli(Distribution):
    """Coin flips parameterized by logits; samples are int64 zeros/ones."""

    family = "bernoulli"

    def __init__(self, logits):
        self.logits = as_tensor(logits)
        if not np.all(np.isfinite(self.logits.data)):
            raise DistributionError("Bernoulli logits must be finite")

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self.logits.shape

    def sample(self, stream: RngStream) -> np.ndarray:
        u = stream.uniform_field(self.logits.shape)
        return (u < expit(self.logits.data)).astype(np.int64)

    def log_prob(self, value) -> Tensor:
        v = np.asarray(value.data if isinstance(value, Tensor) else value)
        elem = T.sub(T.mul(Tensor(np.asarray(v, np.float64)), self.logits),
                     T.softplus(self.logits))
        return _batch_rows(elem)


class Categorical(Distribution):
    """Index draw over the last axis of ``logits``; samples are int64."""

    family = "categorical"

    def __init__(self, logits):
        self.logits = as_tensor(logits)
        if self.logits.ndim < 1:
            raise DistributionError("Categorical logits need at least one axis")
        if not np.all(np.isfinite(self.logits.data)):
            raise DistributionError("Categorical logits must be finite")

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self.logits.shape[:-1]

    def sample(self, stream: RngStream) -> np.ndarray:
        g = stream.gumbels(self.logits.shape)
        return np.argmax(self.logits.data + g, axis=-1).astype(np.int64)

    def log_prob(self, value) -> Tensor:
        idx = np.asarray(value.data if isinstance(value, Tensor) else value)
        if idx.shape != self.sample_shape:
            raise DistributionError(
                f"Categorical value shape {idx.shape} != batch shape {self.sample_shape}")
        lsm = T.log_softmax(self.logits)
        picked = T.squeeze(T.take_along(lsm, np.expand_dims(idx.astype(np.int64), -1), -1), -1)
        return _batch_rows(picked)


class GaussianMixture(Distribution):
    """Mixture of diagonal Gaussians.

    ``weights``: (..., m), ``locs``: (..., m, d), ``scales`` broadcastable
    to ``locs``.  One d-vector is drawn per batch row.
    """

    family = "gaussian_mixture"

    def __init__(self, weights, locs, scales):
        self.weights = as_tensor(weights)
        self.locs = as_tensor(locs)
        self.scales = as_tensor(scales)
        w = self.weights.data
        if np.any(w < 0.0):
            raise DistributionError("mixture weights must be nonnegative")
        if not np.allclose(w.sum(axis=-1), 1.0, atol=1e-9):
            raise DistributionError("mixture weights must sum to 1 per batch row")
        if self.locs.ndim < 2:
            raise DistributionError("mixture locs need shape (..., components, dim)")
        if not np.all(self.scales.data > 0.0):
            raise DistributionError("mixture scales must be positive")
        self._m = self.locs.shape[-2]
        self._d = self.locs.shape[-1]
        if self.weights.shape[-1] != self._m:
            raise DistributionError(
                f"weights have {self.weights.shape[-1]} components, locs have {self._m}")
        self._lead = np.broadcast_shapes(self.weights.shape[:-1], self.locs.shape[:-2])

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self._lead + (self._d,)

    def sample(self, stream: RngStream) -> np.ndarray:
        u = stream.uniform_field(self._lead + (1,))
        cum = np.cumsum(np.broadcast_to(self.weights.data, self._lead + (self._m,)), axis=-1)
        comp = np.minimum((u > cum).sum(axis=-1), self._m - 1)
        locs = np.broadcast_to(self.locs.data, self._lead + (self._m, self._d))
        scales = np.broadcast_to(self.scales.data, self._lead + (self._m, self._d))
        sel = np.expand_dims(np.expand_dims(comp, -1), -1)
        loc = np.take_along_axis(locs, np.broadcast_to(sel, self._lead + (1, self._d)), -2)
        scale = np.take_along_axis(scales, np.broadcast_to(sel, self._lead + (1, self._d)), -2)
        z = stream.normals(self._lead + (self._d,))
        return np.squeeze(loc, -2) + np.squeeze(scale, -2) * z

    def log_prob(self, value) -> Tensor:
        v = as_tensor(value)
        x = T.expand_dims(v, -2)  # (..., 1, d)
        z = T.div(T.sub(x, self.locs), self.scales)
        comp = T.reduce_sum(T.sub(T.mul(T.mul(z, z), -0.5),
                                  T.add(T.log(self.scales), 0.5 * _LOG_2PI)), axis=-1)
        logw = T.log(T.maximum(self.weights, 1e-300))
        return _batch_rows(T.logsumexp(T.add(logw, comp)))


class PlackettLuce(Distribution):
    """Ordered top-k selection without replacement by sequential softmax.

    Sampling uses Gumbel-top-k, which is equal in distribution and
    vectorizes cleanly; ``log_prob`` uses the sequential-softmax product.
    """

    family = "plackett_luce"

    def __init__(self, logits, k: int):
        self.logits = as_tensor(logits)
        if self.logits.ndim < 1:
            raise DistributionError("PlackettLuce logits need at least one axis")
        n = self.logits.shape[-1]
        if not 1 <= k <= n:
            raise DistributionError(f"PlackettLuce k={k} out of range [1, {n}]")
        if not np.all(np.isfinite(self.logits.data)):
            raise DistributionError("PlackettLuce logits must be finite")
        self.k = int(k)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self.logits.shape[:-1] + (self.k,)

    def sample(self, stream: RngStream) -> np.ndarray:
        g = stream.gumbels(self.logits.shape)
        order = np.argsort(-(self.logits.data + g), axis=-1, kind="stable")
        return order[..., :self.k].astype(np.int64)

    def log_prob(self, value) -> Tensor:
        idx = np.asarray(value.data if isinstance(value, Tensor) else value).astype(np.int64)
        if idx.shape != self.sample_shape:
            raise DistributionError(
                f"PlackettLuce value shape {idx.shape} != expected {self.sample_shape}")
        total = None
        mask = np.zeros(self.logits.shape, dtype=np.float64)
        for j in range(self.k):
            sel = np.expand_dims(idx[..., j], -1)
            masked = T.add(self.logits, Tensor(mask * NEG_INF))
            term = T.sub(T.squeeze(T.take_along(self.logits, sel, -1), -1),
                         T.logsumexp(masked))
            total = term if total is None else T.add(total, term)
            np.put_along_axis(mask, sel, 1.0, axis=-1)
        return _batch_rows(total)


def greedy_argmax(scores) -> np.ndarray:
    """Argmax over the last axis with lowest-index tie-break."""
    s = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    return np.argmax(s, axis=-1).astype(np.int64)
