"""Temporal weighting decoding, earliest-spike prediction, and losses."""

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .errors import ConfigError

UNDECIDED = -1
DECODE_MODES = ("exp", "lin")


@dataclass(frozen=True)
class DecodeWeights:
    """Strictly decreasing per-step weights.

    ``exp``: ``w[t] = gamma ** -t`` (needs ``gamma > 1``, ``w[0] = 1``).
    ``lin``: ``w[t] = gamma * (T - t) / T`` (needs ``gamma > 0``, ``w[0] = gamma``).
    """

    mode: str = "exp"
    gamma: float = 2.0
    T: int = 8

    def __post_init__(self):
        if self.mode not in DECODE_MODES:
            raise ConfigError(f"decode mode must be one of {DECODE_MODES}, got {self.mode!r}")
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.mode == "exp" and not self.gamma > 1:
            raise ConfigError("exponential decoding requires gamma > 1")
        if self.mode == "lin" and not self.gamma > 0:
            raise ConfigError("linear decoding requires gamma > 0")

    @property
    def w(self):
        t = np.arange(self.T, dtype=np.float64)
        if self.mode == "exp":
            return self.gamma ** -t
        return self.gamma * (self.T - t) / self.T


def decode(O, weights):
    """``Y[b, i] = sum_t w[t] * O[t, b, i]``; differentiable in ``O``."""
    O = tc.as_tensor(O)
    w = np.asarray(weights.w, dtype=O.dtype).reshape((-1,) + (1,) * (O.ndim - 1))
    if w.shape[0] != O.shape[0]:
        raise ConfigError(f"decode weights have T={w.shape[0]} but output has {O.shape[0]} steps")
    return (O * w).sum(axis=0)


def first_spike_times(O):
    """First firing step per ``[b, i]``; ``T`` where the neuron never fired."""
    O = np.asarray(tc.as_tensor(O).data)
    fired = O > 0
    t = np.argmax(fired, axis=0)
    return np.where(fired.any(axis=0), t, O.shape[0])


def predict_earliest(O):
    """Class whose output fired first; ties go to the lowest index.

    Samples with no output spike get :data:`UNDECIDED`.
    """
    times = first_spike_times(O)
    pred = np.argmin(times, axis=-1)
    none = (times == np.asarray(O.shape[0])).all(axis=-1)
    return np.where(none, UNDECIDED, pred)


def _check_labels(labels, C):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ConfigError(f"labels must lie in [0, {C})")
    return labels


def mse_targets(labels, C, weights):
    """True class gets ``w[0]``; the others ``w[T-1]``, the value of a forced last-step spike."""
    w = weights.w
    target = np.full((len(labels), C), w[-1])
    target[np.arange(len(labels)), labels] = w[0]
    return target


def mse_loss(Y, labels, weights):
    Y = tc.as_tensor(Y)
    labels = _check_labels(labels, Y.shape[1])
    diff = Y - mse_targets(labels, Y.shape[1], weights).astype(Y.dtype)
    return (diff * diff).mean()


def cross_entropy_loss(Y, labels):
    Y = tc.as_tensor(Y)
    labels = _check_labels(labels, Y.shape[1])
    onehot = np.zeros(Y.shape, dtype=Y.dtype)
    onehot[np.arange(len(labels)), labels] = 1.0
    return -(tc.log_softmax(Y, axis=1) * onehot).sum() * (1.0 / len(labels))
