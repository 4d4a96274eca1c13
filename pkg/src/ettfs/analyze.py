"""Forward-signal and gradient statistics for freshly initialized networks.

Random one-spike batches (firing times uniform over ``[0, T)``) are pushed
through the network; the post-synaptic current of every synaptic layer is
summarized by its mean, variance and a histogram. One backward pass from an
MSE loss against random labels gives the weight-gradient scale per layer.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tc
from .decode import DecodeWeights, decode, mse_loss


def random_one_spike(rng, T, batch, shape, dtype=np.float32):
    """``[T, batch, *shape]`` binary tensor with exactly one spike per unit."""
    shape = tuple(shape)
    times = rng.integers(0, T, size=(batch,) + shape)
    out = np.zeros((T, batch) + shape, dtype=dtype)
    np.put_along_axis(out, times[None], 1, axis=0)
    return out


@dataclass
class _Running:
    n: int = 0
    total: float = 0.0
    total_sq: float = 0.0

    def add(self, x):
        x = x.astype(np.float64, copy=False)
        self.n += x.size
        self.total += float(x.sum())
        self.total_sq += float((x * x).sum())

    @property
    def mean(self):
        return self.total / self.n

    @property
    def var(self):
        return self.total_sq / self.n - self.mean ** 2


@dataclass
class LayerReport:
    layer: int
    x_mean: float
    x_var: float
    grad_abs_mean: float = float("nan")
    grad_abs_max: float = float("nan")


@dataclass
class AnalysisReport:
    layers: list
    histograms: list = field(default_factory=list)

    @property
    def variances(self):
        return [l.x_var for l in self.layers]

    @property
    def grad_scales(self):
        return [l.grad_abs_mean for l in self.layers]


def current_statistics(net, batches=64, batch_size=32, seed=0, mode="train", bins=60):
    """Mean, variance and histogram of each synaptic layer's current."""
    rng = np.random.default_rng(seed)
    dtype = tc.get_default_dtype()
    stats, edges, counts = None, None, None
    with tc.no_grad():
        for _ in range(batches):
            x = random_one_spike(rng, net.T, batch_size, net.spec.input_shape, dtype)
            currents = []
            net.forward(x, mode=mode, currents=currents)
            if stats is None:
                stats = [_Running() for _ in currents]
                edges = []
                for c in currents:
                    lim = 6.0 * float(np.std(c.data)) or 1.0
                    edges.append(np.linspace(-lim, lim, bins + 1))
                counts = [np.zeros(bins, dtype=np.int64) for _ in currents]
            for i, c in enumerate(currents):
                stats[i].add(c.data)
                clipped = np.clip(c.data, edges[i][0], edges[i][-1])
                counts[i] += np.histogram(clipped, bins=edges[i])[0]
    layers = [LayerReport(i, s.mean, s.var) for i, s in enumerate(stats)]
    hists = [{"layer": i, "stat": "current", "bin_edges": edges[i].tolist(),
              "counts": counts[i].tolist()} for i in range(len(stats))]
    return layers, hists


def gradient_statistics(net, batch_size=32, seed=0, decode_weights=None, bins=60):
    """Per-layer ``|dL/dW|`` after one backward pass from a random-label MSE loss."""
    rng = np.random.default_rng(seed + 1)
    dw = decode_weights or DecodeWeights("exp", 2.0, net.T)
    x = random_one_spike(rng, net.T, batch_size, net.spec.input_shape, tc.get_default_dtype())
    labels = rng.integers(0, net.spec.num_classes, size=batch_size)
    tape = tc.get_tape()
    tape.clear()
    net.zero_grad()
    out = net.forward(x, mode="train")
    loss = mse_loss(decode(out.reshape(net.T, batch_size, -1), dw), labels, dw)
    tc.backward(loss)
    edges = np.linspace(-16.0, 2.0, bins + 1)
    scales, hists = [], []
    for i, layer in enumerate(net.synaptic_layers):
        g = np.abs(layer.weight.grad.astype(np.float64))
        scales.append((float(g.mean()), float(g.max())))
        nz = g[g > 0]
        counts = np.histogram(np.clip(np.log10(nz), edges[0], edges[-1]), bins=edges)[0]
        hists.append({"layer": i, "stat": "grad_log10_abs", "bin_edges": edges.tolist(),
                      "counts": counts.tolist(), "zeros": int(g.size - nz.size)})
    net.zero_grad()
    return scales, hists


def analyze(net, batches=64, batch_size=32, seed=0, mode="train", bins=60):
    layers, hists = current_statistics(net, batches, batch_size, seed, mode, bins)
    scales, ghists = gradient_statistics(net, batch_size, seed, bins=bins)
    for rep, (mean_abs, max_abs) in zip(layers, scales):
        rep.grad_abs_mean, rep.grad_abs_max = mean_abs, max_abs
    return AnalysisReport(layers, hists + ghists)
