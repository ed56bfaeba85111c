import numpy as np
import pytest

import ecosim.tensor as T
from ecosim.tensor import Tape, Tensor


def finite_difference_gradients(op, inputs, weights, step=1e-5):
    """Central finite differences of sum(weights * op(*inputs)) per input."""

    def loss(arrs):
        return float(np.sum(weights * op(*[Tensor(a) for a in arrs]).data))

    out = []
    for k in range(len(inputs)):
        fd = np.zeros_like(np.asarray(inputs[k], dtype=np.float64))
        flat = fd.reshape(-1)
        for i in range(flat.size):
            plus = [np.array(a, dtype=np.float64) for a in inputs]
            minus = [np.array(a, dtype=np.float64) for a in inputs]
            plus[k].reshape(-1)[i] += step
            minus[k].reshape(-1)[i] -= step
            flat[i] = (loss(plus) - loss(minus)) / (2 * step)
        out.append(fd)
    return out


def analytic_gradients(op, inputs, weights):
    tape = Tape()
    leaves = [tape.watch(a) for a in inputs]
    loss = T.reduce_sum(T.mul(op(*leaves), Tensor(weights)))
    grads = tape.backward(loss)
    return [grads[leaf].data for leaf in leaves]


def relative_error(a, b, floor=1e-3):
    a, b = np.asarray(a), np.asarray(b)
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))


def check_op_gradient(op, make_inputs, rng, points=20, tol=1e-4, step=1e-5):
    """The spec's finite-difference contract: ``points`` random evaluation
    points per op, relative error below ``tol``."""
    worst = 0.0
    for _ in range(points):
        inputs = make_inputs(rng)
        probe = op(*[Tensor(a) for a in inputs])
        weights = rng.normal(size=probe.shape)
        ana = analytic_gradients(op, inputs, weights)
        fd = finite_difference_gradients(op, inputs, weights, step=step)
        for g_ana, g_fd in zip(ana, fd):
            worst = max(worst, relative_error(g_ana, g_fd))
    assert worst < tol, f"gradient mismatch: rel err {worst:.3e} >= {tol}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
