"""At-most-one-spike (AMOS) neuron dynamics.

Each time-step runs three stages: charge the membrane potential, fire
through the firing mask, and latch the mask. The membrane potential is
never reset, so the neuron rests after its single spike.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as tc
from .errors import ConfigError, NumericError
from .tensor import Tensor

SURROGATES = ("atan", "rect")
CHARGE_KINDS = ("if", "lif")
_DEFAULT_WIDTH = {"atan": 2.0, "rect": 1.0}


# -- surrogate gradients ---------------------------------------------------

def atan_grad(u, alpha):
    return alpha / (2.0 * (1.0 + (math.pi / 2.0 * alpha * u) ** 2))


def atan_primitive(u, alpha):
    return np.arctan(math.pi / 2.0 * alpha * u) / math.pi + 0.5


def rect_grad(u, a):
    return (np.abs(u) < a) / (2.0 * a)


def rect_primitive(u, a):
    return np.clip((u + a) / (2.0 * a), 0.0, 1.0)


@dataclass(frozen=True)
class AmosConfig:
    """Neuron hyper-parameters.

    ``surrogate_width`` is alpha for ``atan`` (default 2.0) and the
    half-width ``a`` for ``rect`` (default 1.0). ``smooth_forward`` is a
    verification mode: the Heaviside is replaced by the surrogate's
    primitive in the forward pass and the firing mask stays on the tape,
    so the unrolled network is an ordinary differentiable function.
    """

    v_threshold: float = 1.0
    charge_kind: str = "if"
    tau_m: float = 2.0
    v_rest: float = 0.0
    surrogate: str = "atan"
    surrogate_width: Optional[float] = None
    force_fire_last_step: bool = True
    smooth_forward: bool = False

    def __post_init__(self):
        if self.charge_kind not in CHARGE_KINDS:
            raise ConfigError(f"charge_kind must be one of {CHARGE_KINDS}, got {self.charge_kind!r}")
        if self.surrogate not in SURROGATES:
            raise ConfigError(f"surrogate must be one of {SURROGATES}, got {self.surrogate!r}")
        if self.surrogate_width is None:
            object.__setattr__(self, "surrogate_width", _DEFAULT_WIDTH[self.surrogate])
        if not self.surrogate_width > 0:
            raise ConfigError("surrogate_width must be positive")
        if self.charge_kind == "lif":
            if not self.tau_m > 1:
                raise ConfigError("tau_m must exceed 1 for LIF neurons")
            if not self.v_threshold > self.v_rest:
                raise ConfigError("v_threshold must exceed v_rest for LIF neurons")

    def surrogate_derivative(self, u):
        if self.surrogate == "atan":
            return atan_grad(u, self.surrogate_width)
        return rect_grad(u, self.surrogate_width)

    def surrogate_primitive(self, u):
        if self.surrogate == "atan":
            return atan_primitive(u, self.surrogate_width)
        return rect_primitive(u, self.surrogate_width)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class AmosState:
    """Membrane potential ``H`` and firing mask ``F``."""

    H: Tensor
    F: Tensor

    @classmethod
    def initial(cls, shape, dtype=None):
        dtype = dtype or tc.get_default_dtype()
        return cls(Tensor(np.zeros(shape, dtype)), Tensor(np.zeros(shape, dtype)))


def charge(state, x_t, cfg):
    """Return the new membrane potential; no reset after a spike."""
    x_t = tc.as_tensor(x_t, like=state.H)
    if x_t.shape != state.H.shape:
        raise ConfigError(f"input shape {x_t.shape} does not match state {state.H.shape}")
    if np.isnan(x_t.data).any():
        raise NumericError("NaN in input current")
    if cfg.charge_kind == "if":
        return state.H + x_t
    return state.H + (x_t - (state.H - cfg.v_rest)) * (1.0 / cfg.tau_m)


def fire(state, cfg):
    """``S = (1 - F_prev) * Theta(H - V_th)`` with ``state.F`` = previous mask.

    In hard mode the mask gate is a constant: gradient only flows through
    the surrogate of Theta.
    """
    u = state.H - cfg.v_threshold
    primitive = cfg.surrogate_primitive if cfg.smooth_forward else None
    spikes = tc.heaviside_surrogate(u, cfg.surrogate_derivative, primitive)
    gate = 1.0 - state.F if cfg.smooth_forward else Tensor(1.0 - state.F.data)
    return gate * spikes


def step(state, x_t, cfg):
    """One charge/fire/mask-update step. Returns ``(S, new_state)``."""
    H = charge(state, x_t, cfg)
    S = fire(AmosState(H, state.F), cfg)
    if cfg.smooth_forward:
        F = state.F + S
    else:
        F = Tensor(state.F.data + S.data)
    return S, AmosState(H, F)


def run_sequence(x, cfg, mode="train", return_state=False):
    """Run the neuron bank over ``x[T, ...]`` and return spikes ``[T, ...]``.

    In train mode (with ``cfg.force_fire_last_step``) neurons that have not
    fired by ``T-1`` are forced to fire there, branch-free:
    ``S[T-1] += 1 - F[T-1]``. Every neuron then spikes exactly once.
    """
    if mode not in ("train", "infer"):
        raise ConfigError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = tc.as_tensor(x)
    if x.ndim < 1 or x.shape[0] < 1:
        raise ConfigError("run_sequence needs at least one time-step")
    T = x.shape[0]
    state = AmosState.initial(x.shape[1:], x.dtype)
    spikes = []
    for t in range(T):
        S, state = step(state, x[t], cfg)
        if t == T - 1 and mode == "train" and cfg.force_fire_last_step:
            remainder = 1.0 - state.F if cfg.smooth_forward else Tensor(1.0 - state.F.data)
            S = S + remainder
            state = AmosState(state.H, state.F + remainder if cfg.smooth_forward
                              else Tensor(state.F.data + remainder.data))
        spikes.append(S)
    out = tc.stack(spikes, axis=0)
    if return_state:
        return out, state
    return out
