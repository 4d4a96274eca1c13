"""Training loop (BPTT over the unrolled network), optimizers, and evaluation."""

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import tensor as tc
from .data import encode
from .decode import UNDECIDED, DecodeWeights, cross_entropy_loss, decode, mse_loss, predict_earliest
from .errors import ConfigError, NumericError
from .init_norm import InitScheme, init_weights
from .layers import Network, parse_arch
from .neuron import AmosConfig


class TrainingDiverged(NumericError):
    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    optimizer: str = "adamw"
    lr: float = 1e-3
    momentum: float = 0.9
    betas: Tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    schedule: str = "constant"
    warmup_frac: float = 0.05
    lr_floor: float = 1e-6
    loss: str = "mse"
    T: int = 8
    seed: int = 0
    encoding: str = "latency"
    decode: DecodeWeights = field(default_factory=DecodeWeights)
    clip_norm: Optional[float] = None

    def __post_init__(self):
        if not self.lr >= 0:
            raise ConfigError("lr must be non-negative")
        if self.T < 1 or self.batch_size < 1:
            raise ConfigError("T and batch_size must be >= 1")
        if self.optimizer not in ("adamw", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in ("constant", "warmup_cosine"):
            raise ConfigError(f"unknown lr schedule {self.schedule!r}")
        if self.loss not in ("mse", "ce"):
            raise ConfigError(f"unknown loss {self.loss!r}")


@dataclass
class EpochMetrics:
    epoch: int
    train_acc: float
    test_acc: float
    loss: float
    avg_infer_steps: float
    lr: float
    wall_ms: float

    def to_record(self):
        return asdict(self)


# -- optimizers ----------------------------------------------------------------

def _check_grads(params):
    for p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NumericError("non-finite gradient encountered")


class SGD:
    """Momentum SGD with coupled L2 weight decay."""

    def __init__(self, params, lr=0.1, momentum=0.9, weight_decay=0.0):
        self.params = list(params)
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.buf = [None] * len(self.params)

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        _check_grads(self.params)
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            if self.momentum:
                self.buf[i] = g.copy() if self.buf[i] is None else self.momentum * self.buf[i] + g
                g = self.buf[i]
            p.data -= (lr * g).astype(p.dtype, copy=False)


class AdamW:
    """Adaptive moments with decoupled weight decay."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        _check_grads(self.params)
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                p.data -= p.dtype.type(lr * self.weight_decay) * p.data
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= (lr * update).astype(p.dtype, copy=False)


def make_optimizer(params, cfg):
    if cfg.optimizer == "sgd":
        return SGD(params, cfg.lr, cfg.momentum, cfg.weight_decay)
    return AdamW(params, cfg.lr, cfg.betas, weight_decay=cfg.weight_decay)


def lr_at(step, total_steps, cfg):
    """Learning rate for a global step (0-based)."""
    if cfg.schedule == "constant":
        return cfg.lr
    warm = max(1, int(round(cfg.warmup_frac * total_steps)))
    if step < warm:
        return cfg.lr_floor + (cfg.lr - cfg.lr_floor) * step / warm
    frac = (step - warm) / max(1, total_steps - warm)
    return cfg.lr_floor + 0.5 * (cfg.lr - cfg.lr_floor) * (1.0 + math.cos(math.pi * min(1.0, frac)))


def clip_grad_norm(params, max_norm):
    total = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum())
                          for p in params if p.grad is not None))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return total


# -- network construction --------------------------------------------------------

def build_network(arch, input_shape, T, init="ettfs", norm="affine", pool="avg",
                  neuron=None, seed=0, encoding="latency", num_classes=None, debug=False):
    """Parse ``arch``, build the network and initialize it."""
    spec = parse_arch(arch, input_shape, T, pool_kind=pool, num_classes=num_classes)
    net = Network(spec, neuron or AmosConfig(), norm=norm, debug=debug)
    scheme = InitScheme(init, T, first_layer_kaiming=(encoding == "direct"))
    init_weights(net, scheme, seed=seed)
    return net


def compute_loss(Y, labels, cfg):
    if cfg.loss == "ce":
        return cross_entropy_loss(Y, labels)
    return mse_loss(Y, labels, cfg.decode)


def _diagnostics(net, loss_value, batch_index):
    layers = []
    for i, layer in enumerate(net.synaptic_layers):
        w = layer.weight.data
        layers.append({"layer": i, "w_mean": float(np.nanmean(w)), "w_std": float(np.nanstd(w)),
                       "w_nan": int(np.isnan(w).sum()),
                       "gamma_mean": float(np.nanmean(layer.gamma.data)),
                       "beta_mean": float(np.nanmean(layer.beta.data))})
    return {"loss": loss_value, "batch": batch_index, "layers": layers}


def train_epoch(net, dataset, cfg, optimizer, rng, step=0, total_steps=None):
    """One pass over ``dataset`` in shuffled mini-batches.

    Returns ``(mean_loss, train_accuracy, last_lr, next_step)``.
    """
    n = len(dataset)
    total_steps = total_steps or math.ceil(n / cfg.batch_size)
    order = rng.permutation(n)
    tape = tc.get_tape()
    params = net.parameters()
    loss_sum, correct, lr = 0.0, 0, cfg.lr
    for b, start in enumerate(range(0, n, cfg.batch_size)):
        idx = order[start:start + cfg.batch_size]
        labels = dataset.labels[idx].astype(np.int64)
        x = encode(dataset.images[idx], cfg.T, cfg.encoding, net.spec.input_shape,
                   dtype=tc.get_default_dtype())
        tape.clear()
        net.zero_grad()
        value = float("nan")
        try:
            out = net.forward(x, mode="train")
            Y = decode(out, cfg.decode)
            loss = compute_loss(Y, labels, cfg)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericError(f"loss became {value}")
            tc.backward(loss)
            if cfg.clip_norm:
                clip_grad_norm(params, cfg.clip_norm)
            lr = lr_at(step, total_steps, cfg)
            optimizer.step(lr)
        except NumericError as exc:
            tape.clear()
            raise TrainingDiverged(f"{exc} at batch {b}", _diagnostics(net, value, b)) from exc
        step += 1
        loss_sum += value * len(idx)
        correct += int((np.argmax(Y.data, axis=1) == labels).sum())
    return loss_sum / n, correct / n, lr, step


@dataclass
class EvalResult:
    accuracy: float
    avg_steps: float
    predictions: np.ndarray
    steps: np.ndarray


def evaluate(net, dataset, T=None, encoding="latency", mode="early_stop", batch_size=256):
    """Accuracy and inference time-steps on ``dataset``.

    ``fixed_T`` runs the full sequence layer by layer and predicts by the
    earliest output spike; every sample costs ``T`` steps. ``early_stop``
    propagates step by step and a sample is done at its first output spike,
    costing ``first_time + 1`` steps (``T`` if nothing fired). Undecided
    samples count as wrong.
    """
    if mode not in ("fixed_T", "early_stop"):
        raise ConfigError(f"unknown evaluation mode {mode!r}")
    T = T or net.T
    preds, steps = [], []
    with tc.no_grad():
        for start in range(0, len(dataset), batch_size):
            imgs = dataset.images[start:start + batch_size]
            x = encode(imgs, T, encoding, net.spec.input_shape, dtype=tc.get_default_dtype())
            if mode == "fixed_T":
                out = net.forward(x, mode="infer").data
                p = predict_earliest(out.reshape(T, len(imgs), -1))
                s = np.full(len(imgs), T)
            else:
                out, first = net.run_stepwise(x, early_stop=True)
                p = np.full(len(imgs), UNDECIDED)
                hit = first >= 0
                rows = out[first[hit], np.nonzero(hit)[0]]
                p[hit] = np.argmax(rows > 0, axis=1)
                s = np.where(hit, first + 1, T)
            preds.append(p)
            steps.append(s)
    preds = np.concatenate(preds) if preds else np.zeros(0, np.int64)
    steps = np.concatenate(steps) if steps else np.zeros(0, np.int64)
    labels = dataset.labels[:len(preds)].astype(np.int64)
    acc = float((preds == labels).mean()) if len(preds) else 0.0
    return EvalResult(acc, float(steps.mean()) if len(steps) else float(T), preds, steps)


def fit(net, train_set, test_set, cfg, metrics_path=None, log=None):
    """Train for ``cfg.epochs`` and evaluate after every epoch.

    Appends one JSON record per epoch to ``metrics_path`` (NDJSON). On a
    divergent loss, writes ``<metrics_path>.diverged.json`` and re-raises.
    """
    rng = np.random.default_rng(cfg.seed)
    optimizer = make_optimizer(net.parameters(), cfg)
    steps_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    step = 0
    history = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        try:
            loss, train_acc, lr, step = train_epoch(net, train_set, cfg, optimizer, rng, step, total)
        except TrainingDiverged as exc:
            if metrics_path:
                with open(f"{metrics_path}.diverged.json", "w") as f:
                    json.dump(exc.diagnostics, f, indent=2)
            raise
        result = evaluate(net, test_set, cfg.T, cfg.encoding, "early_stop")
        m = EpochMetrics(epoch, train_acc, result.accuracy, loss, result.avg_steps, lr,
                         (time.perf_counter() - t0) * 1000.0)
        history.append(m)
        if metrics_path:
            with open(metrics_path, "a") as f:
                f.write(json.dumps(m.to_record()) + "\n")
        if log:
            log(f"epoch {epoch:3d}  loss {loss:.5f}  train {train_acc:.4f}  "
                f"test {result.accuracy:.4f}  steps {result.avg_steps:.3f}  "
                f"{m.wall_ms / 1000:.1f}s")
    return history
