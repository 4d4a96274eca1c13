"""Spiking layers, architecture strings, and the network container.

Architecture strings are dash-separated tokens: ``FC<n>`` (fully connected,
n outputs), ``C<m>K<k>`` (convolution, m channels, k x k kernel, stride 1,
valid padding), ``P<n>`` (n x n pooling with stride n) and ``{...}*<n>``
(repeat, may nest). Example: ``C16K5-P2-C32K5-P2-FC128-FC10``.
"""

import re
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import neuron as amos
from . import tensor as tc
from .errors import ArchParseError, ConfigError, ShapeError, UsageError
from .init_norm import DEFAULT_EPS, NORM_MODES, apply_affine, fuse_for_inference, normalize_weights
from .neuron import AmosConfig
from .tensor import Tensor

POOL_KINDS = ("avg", "max")
_TOKEN = re.compile(r"FC(\d+)|C(\d+)K(\d+)|P(\d+)")


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # fc | conv | pool | flatten
    in_shape: Tuple[int, ...]
    out_shape: Tuple[int, ...]
    out_features: Optional[int] = None
    kernel: Optional[int] = None
    stride: int = 1
    pool_kind: Optional[str] = None
    size: Optional[int] = None

    @property
    def synaptic(self):
        return self.kind in ("fc", "conv")

    def token(self):
        if self.kind == "fc":
            return f"FC{self.out_features}"
        if self.kind == "conv":
            return f"C{self.out_features}K{self.kernel}"
        if self.kind == "pool":
            return f"P{self.size}"
        return ""


@dataclass(frozen=True)
class NetworkSpec:
    layers: Tuple[LayerSpec, ...]
    T: int
    input_shape: Tuple[int, ...]
    pool_kind: str = "avg"
    arch: str = field(default="", compare=False)

    @property
    def output_shape(self):
        return self.layers[-1].out_shape if self.layers else self.input_shape

    @property
    def num_classes(self):
        return int(np.prod(self.output_shape))

    @property
    def has_pooling(self):
        return any(l.kind == "pool" for l in self.layers)


# -- parsing ---------------------------------------------------------------

def _parse_seq(s, pos):
    items = []
    while True:
        sub, pos = _parse_item(s, pos)
        items.extend(sub)
        if pos < len(s) and s[pos] == "-":
            pos += 1
            continue
        return items, pos


def _parse_item(s, pos):
    if pos >= len(s):
        raise ArchParseError("unexpected end of architecture string", pos)
    if s[pos] == "{":
        inner, end = _parse_seq(s, pos + 1)
        if end >= len(s) or s[end] != "}":
            raise ArchParseError("unclosed '{' in repeat", pos)
        m = re.compile(r"\*(\d+)").match(s, end + 1)
        if m is None:
            raise ArchParseError("malformed repeat: expected '*<count>' after '}'", end + 1)
        count = int(m.group(1))
        if count < 1:
            raise ArchParseError("repeat count must be >= 1", m.start(1))
        return inner * count, m.end()
    m = _TOKEN.match(s, pos)
    if m is None:
        snippet = re.match(r"[^-{}]*", s[pos:]).group(0) or s[pos]
        raise ArchParseError(f"unknown token {snippet!r}", pos)
    fc, ch, k, p = m.groups()
    if fc is not None:
        tok = ("fc", int(fc), None, pos)
    elif ch is not None:
        tok = ("conv", int(ch), int(k), pos)
    else:
        tok = ("pool", int(p), None, pos)
    if tok[1] < 1 or (tok[2] is not None and tok[2] < 1):
        raise ArchParseError("layer sizes must be positive", pos)
    return [tok], m.end()


def _as_shape(input_shape):
    if isinstance(input_shape, int):
        return (input_shape,)
    return tuple(int(n) for n in input_shape)


def parse_arch(s, input_shape, T, pool_kind="avg", num_classes=None):
    """Parse an architecture string into a fully shaped :class:`NetworkSpec`.

    A ``Flatten`` is inserted automatically before the first FC layer that
    follows a spatial shape.
    """
    if pool_kind not in POOL_KINDS:
        raise ConfigError(f"pool kind must be one of {POOL_KINDS}")
    if T < 1:
        raise ConfigError("T must be >= 1")
    text = s.strip()
    if not text:
        raise ArchParseError("empty architecture string", 0)
    tokens, end = _parse_seq(text, 0)
    if end != len(text):
        raise ArchParseError(f"unexpected character {text[end]!r}", end)

    shape = _as_shape(input_shape)
    layers = []
    for kind, a, b, pos in tokens:
        if kind == "fc":
            if len(shape) != 1:
                flat = (int(np.prod(shape)),)
                layers.append(LayerSpec("flatten", shape, flat))
                shape = flat
            layers.append(LayerSpec("fc", shape, (a,), out_features=a))
            shape = (a,)
        elif kind == "conv":
            if len(shape) != 3:
                raise ArchParseError(f"convolution needs a CxHxW input, got {shape}", pos)
            c, h, w = shape
            ho, wo = tc.conv_output_size(h, b, 1), tc.conv_output_size(w, b, 1)
            if ho <= 0 or wo <= 0:
                raise ArchParseError(f"kernel {b} too large for {h}x{w} feature map", pos)
            out = (a, ho, wo)
            layers.append(LayerSpec("conv", shape, out, out_features=a, kernel=b))
            shape = out
        else:
            if len(shape) != 3:
                raise ArchParseError(f"pooling needs a CxHxW input, got {shape}", pos)
            c, h, w = shape
            if h % a or w % a or h < a:
                raise ArchParseError(f"pool size {a} does not divide {h}x{w}", pos)
            out = (c, h // a, w // a)
            layers.append(LayerSpec("pool", shape, out, pool_kind=pool_kind, size=a))
            shape = out
    spec = NetworkSpec(tuple(layers), int(T), _as_shape(input_shape), pool_kind, arch=text)
    if num_classes is not None and spec.num_classes != num_classes:
        raise ArchParseError(
            f"final layer has {spec.num_classes} outputs, expected {num_classes}", len(text))
    return spec


def render(spec):
    """Canonical (repeat-free) architecture string for ``spec``."""
    return "-".join(l.token() for l in spec.layers if l.kind != "flatten")


# -- pooling on spike tensors ---------------------------------------------

def _merge_time(s):
    s = tc.as_tensor(s)
    return s.reshape((s.shape[0] * s.shape[1],) + s.shape[2:]), s.shape[:2]


def avg_pool(s, size):
    """Per-step spatial mean over ``size x size`` windows of ``s[T,B,C,H,W]``."""
    x, lead = _merge_time(s)
    y = tc.avg_pool2d(x, size)
    return y.reshape(lead + y.shape[1:])


def max_pool(s, size):
    """Per-step spatial max; may emit several spikes per pooled unit."""
    x, lead = _merge_time(s)
    y = tc.max_pool2d(x, size)
    return y.reshape(lead + y.shape[1:])


# -- layers ------------------------------------------------------------------

class SynapticLayer:
    """FC or conv synapse followed by a bank of AMOS neurons."""

    def __init__(self, spec, neuron, norm="affine", eps=DEFAULT_EPS):
        if norm not in NORM_MODES:
            raise ConfigError(f"norm must be one of {NORM_MODES}, got {norm!r}")
        self.spec = spec
        self.neuron = neuron
        self.norm = norm
        self.eps = eps
        dtype = tc.get_default_dtype()
        if spec.kind == "fc":
            wshape = (spec.in_shape[0], spec.out_features)
            pshape = (spec.out_features,)
        else:
            wshape = (spec.out_features, spec.in_shape[0], spec.kernel, spec.kernel)
            pshape = (spec.out_features, 1, 1)
        learn_affine = norm == "affine"
        self.weight = Tensor(np.zeros(wshape, dtype), requires_grad=True)
        self.gamma = Tensor(np.ones(pshape, dtype), requires_grad=learn_affine)
        self.beta = Tensor(np.zeros(pshape, dtype), requires_grad=learn_affine)
        self.sigma_target = None
        self.init_kind = None
        self.fused_weight = None
        self.fused_bias = None

    @property
    def fan_in(self):
        if self.spec.kind == "fc":
            return self.spec.in_shape[0]
        return self.spec.in_shape[0] * self.spec.kernel ** 2

    @property
    def fused(self):
        return self.fused_weight is not None

    def parameters(self):
        if self.fused:
            return []
        params = [self.weight]
        if self.norm == "affine":
            params += [self.gamma, self.beta]
        return params

    def effective_weight(self):
        if self.norm == "off":
            return self.weight
        if self.sigma_target is None:
            raise UsageError("layer has not been initialized (sigma_target unset)")
        return normalize_weights(self.weight, self.sigma_target, self.eps)

    def _linear(self, s, w):
        if self.spec.kind == "fc":
            return s @ w
        return tc.conv2d(s, w, stride=self.spec.stride)

    def synapse(self, s):
        """Post-synaptic current for spikes ``s[N, *in_shape]`` (N = steps x batch)."""
        s = tc.as_tensor(s)
        if s.shape[1:] != self.spec.in_shape:
            raise ShapeError(f"layer expects input {self.spec.in_shape}, got {s.shape[1:]}")
        if self.fused:
            return self._linear(s, Tensor(self.fused_weight)) + Tensor(self.fused_bias)
        x = self._linear(s, self.effective_weight())
        if self.norm == "affine":
            x = apply_affine(x, self.gamma, self.beta)
        return x

    def fuse(self):
        self.fused_weight, self.fused_bias = fuse_for_inference(self)


class PoolLayer:
    def __init__(self, spec):
        self.spec = spec

    def apply(self, x):
        if self.spec.pool_kind == "max":
            return tc.max_pool2d(x, self.spec.size)
        return tc.avg_pool2d(x, self.spec.size)


class FlattenLayer:
    def __init__(self, spec):
        self.spec = spec

    def apply(self, x):
        return x.reshape((x.shape[0],) + self.spec.out_shape)


def forward_layer(layer, s_in, mode="train"):
    """Layer-by-layer forward over the full sequence ``s_in[T, B, ...]``."""
    s_in = tc.as_tensor(s_in)
    if s_in.shape[2:] != layer.spec.in_shape:
        raise ShapeError(f"layer expects [T,B,*{layer.spec.in_shape}], got {s_in.shape}")
    flat, lead = _merge_time(s_in)
    if isinstance(layer, SynapticLayer):
        x = layer.synapse(flat)
        x = x.reshape(lead + x.shape[1:])
        return amos.run_sequence(x, layer.neuron, mode), x
    y = layer.apply(flat)
    return y.reshape(lead + y.shape[1:]), None


class Network:
    """Ordered stack of layers built from a :class:`NetworkSpec`."""

    def __init__(self, spec, neuron=None, norm="affine", debug=False):
        self.spec = spec
        self.neuron = neuron or AmosConfig()
        self.norm = norm
        self.debug = debug
        self.init_scheme = None
        self.layers = []
        for ls in spec.layers:
            if ls.synaptic:
                self.layers.append(SynapticLayer(ls, self.neuron, norm))
            elif ls.kind == "pool":
                self.layers.append(PoolLayer(ls))
            else:
                self.layers.append(FlattenLayer(ls))

    @property
    def T(self):
        return self.spec.T

    @property
    def synaptic_layers(self):
        return [l for l in self.layers if isinstance(l, SynapticLayer)]

    @property
    def fused(self):
        syn = self.synaptic_layers
        return bool(syn) and all(l.fused for l in syn)

    def parameters(self):
        return [p for l in self.synaptic_layers for p in l.parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def fuse(self):
        """Switch to inference-only fused synapses."""
        for layer in self.synaptic_layers:
            layer.fuse()

    def forward(self, x, mode="train", currents=None):
        """Layer-by-layer forward of ``x[T, B, *input_shape]``; returns output spikes.

        ``currents``, when a list, receives each synaptic layer's current X.
        """
        if mode == "train" and self.fused:
            raise UsageError("fused network is inference-only; train mode is unavailable")
        h = tc.as_tensor(x)
        if h.shape[0] != self.T:
            raise ShapeError(f"expected {self.T} time-steps, got {h.shape[0]}")
        for layer in self.layers:
            h, cur = forward_layer(layer, h, mode)
            if cur is not None and currents is not None:
                currents.append(cur)
            if self.debug and mode == "train":
                # avg-pool outputs are fractional but still sum to one over time
                if not np.allclose(h.data.sum(axis=0), 1.0, atol=1e-5):
                    raise AssertionError(
                        f"one-spike invariant violated after layer {layer.spec.kind}")
        return h

    def run_stepwise(self, x, early_stop=True):
        """Step-by-step inference: every layer advances one step per tick.

        Returns ``(spikes[T, B, C], first_spike_time[B])`` with ``-1`` for
        samples whose output never fired. With ``early_stop`` the run halts
        once every sample in the batch has produced an output spike; later
        output rows stay zero.
        """
        x = np.asarray(tc.as_tensor(x).data)
        T, B = x.shape[:2]
        cfg_by_layer = {}
        states = {}
        out = None
        first = np.full(B, -1, dtype=np.int64)
        with tc.no_grad():
            for i, layer in enumerate(self.layers):
                if isinstance(layer, SynapticLayer):
                    cfg = layer.neuron
                    if cfg.smooth_forward:
                        cfg = AmosConfig(**{**cfg.to_dict(), "smooth_forward": False})
                    cfg_by_layer[i] = cfg
                    states[i] = amos.AmosState.initial((B,) + layer.spec.out_shape, x.dtype)
            for t in range(T):
                h = Tensor(x[t])
                for i, layer in enumerate(self.layers):
                    if isinstance(layer, SynapticLayer):
                        cur = layer.synapse(h)
                        h, states[i] = amos.step(states[i], cur, cfg_by_layer[i])
                    else:
                        h = layer.apply(h)
                o = h.data.reshape(B, -1)
                if out is None:
                    out = np.zeros((T,) + o.shape, dtype=o.dtype)
                out[t] = o
                newly = (first < 0) & (o.sum(axis=1) > 0)
                first[newly] = t
                if early_stop and np.all(first >= 0):
                    break
        return out, first
