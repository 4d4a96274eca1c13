"""Weight initialization, training-time weight normalization, and fusion.

ETTFS-init draws ``W ~ U(-sqrt(3T/N), sqrt(3T/N))`` with ``N`` the fan-in,
so the post-synaptic current of a layer fed by one-spike inputs has unit
variance whatever ``T`` is. The Kaiming baseline ``U(-1/sqrt(N), 1/sqrt(N))``
gives variance ``1/(3T)`` instead.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .errors import ConfigError, NumericError, ShapeError

INIT_KINDS = ("ettfs", "kaiming")
NORM_MODES = ("off", "on", "affine")
DEFAULT_EPS = 1e-5

_max_pool_warned = False


@dataclass(frozen=True)
class InitScheme:
    kind: str = "ettfs"
    T: int = 8
    first_layer_kaiming: bool = False

    def __post_init__(self):
        if self.kind not in INIT_KINDS:
            raise ConfigError(f"init kind must be one of {INIT_KINDS}, got {self.kind!r}")
        if self.T < 1:
            raise ConfigError("T must be >= 1")


def uniform_bound(kind, fan_in, T):
    if fan_in < 1:
        raise ConfigError("fan-in must be >= 1")
    if kind == "ettfs":
        return math.sqrt(3.0 * T / fan_in)
    if kind == "kaiming":
        return 1.0 / math.sqrt(fan_in)
    raise ConfigError(f"unknown init kind {kind!r}")


def target_std(kind, fan_in, T):
    """Standard deviation of the uniform initial distribution."""
    return uniform_bound(kind, fan_in, T) / math.sqrt(3.0)


def init_weights(net, scheme, seed=0):
    """Draw every synaptic weight of ``net`` in declaration order.

    Also records each layer's ``sigma_target`` (used by normalization) and
    resets the affine parameters to ``gamma = 1``, ``beta = 0``.
    """
    global _max_pool_warned
    rng = np.random.default_rng(seed)
    if scheme.kind == "ettfs" and net.spec.pool_kind == "max" and net.spec.has_pooling:
        if not _max_pool_warned:
            warnings.warn("max-pooling breaks the one-spike property assumed by ETTFS-init",
                          RuntimeWarning, stacklevel=2)
            _max_pool_warned = True
    for i, layer in enumerate(net.synaptic_layers):
        kind = "kaiming" if (i == 0 and scheme.first_layer_kaiming) else scheme.kind
        bound = uniform_bound(kind, layer.fan_in, scheme.T)
        w = rng.uniform(-bound, bound, size=layer.weight.shape)
        layer.weight.data = w.astype(layer.weight.dtype)
        layer.weight.grad = None
        layer.sigma_target = target_std(kind, layer.fan_in, scheme.T)
        layer.init_kind = kind
        layer.gamma.data = np.ones_like(layer.gamma.data)
        layer.beta.data = np.zeros_like(layer.beta.data)
    net.init_scheme = scheme


def normalize_weights(W, sigma_target, eps=DEFAULT_EPS):
    """Standardize ``W`` over the whole tensor and rescale to ``sigma_target``.

    Uses the population variance. Differentiable: gradients flow through
    the mean and variance.
    """
    W = tc.as_tensor(W)
    centered = W - W.mean()
    var = (centered * centered).mean()
    if not float(var.data) + eps > 0:
        raise NumericError("degenerate weight tensor: variance + eps is not positive")
    return centered * ((var + eps) ** -0.5) * sigma_target


def apply_affine(X, gamma, beta):
    """``gamma * X + beta`` with per-feature parameters broadcast over leading axes."""
    X = tc.as_tensor(X)
    gamma = tc.as_tensor(gamma, like=X)
    beta = tc.as_tensor(beta, like=X)
    k = gamma.ndim
    trailing = X.shape[X.ndim - k:]
    per_feature = (len(trailing) == k and k > 0 and gamma.shape[0] == trailing[0]
                   and all(g in (1, x) for g, x in zip(gamma.shape, trailing)))
    if gamma.shape != beta.shape or not per_feature:
        raise ShapeError(
            f"affine parameters {gamma.shape}/{beta.shape} do not match current {X.shape}")
    return X * gamma + beta


def fuse_for_inference(layer):
    """Fold normalization and the affine transform into ``(W_fused, B_fused)``.

    ``W_fused`` is ``gamma`` times the normalized weight, scaled per output
    unit; ``B_fused`` is ``beta``. With normalization off the weight is
    returned unchanged and the bias is zero.
    """
    with tc.no_grad():
        if layer.norm == "off":
            return layer.weight.data.copy(), np.zeros_like(layer.beta.data)
        w = normalize_weights(layer.weight, layer.sigma_target, layer.eps).data
        if layer.norm == "on":
            return w, np.zeros_like(layer.beta.data)
        gamma = layer.gamma.data
        if layer.spec.kind == "fc":
            w = w * gamma[None, :]
        else:
            w = w * gamma.reshape(-1, 1, 1, 1)
        return w.astype(layer.weight.dtype), layer.beta.data.copy()
