"""Acceptance criteria, one test per criterion.

Each test records a ``PASS``/``FAIL`` line that is printed in the pytest
terminal summary. Criteria 1-4 and the depth check read the cached training
runs produced by ``tests/experiments.py``; set ``ETTFS_RUN_TRAINING=1`` to
train any that are missing (hours on a single CPU).
"""

import os

import numpy as np
import pytest

import experiments
from conftest import ACCEPTANCE_LINES
from ettfs import tensor as tc
from ettfs.analyze import analyze, random_one_spike
from ettfs.data import encode
from ettfs.decode import DecodeWeights, decode, mse_loss, predict_earliest
from ettfs.init_norm import InitScheme, init_weights
from ettfs.layers import Network, avg_pool, max_pool, parse_arch
from ettfs.neuron import AmosConfig, run_sequence
from ettfs.tensor import Tensor
from ettfs.train import build_network

from oracles import central_difference, rel_err


def report(criterion, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def experiment(name):
    res = experiments.load(name)
    if res is None:
        dataset = experiments.EXPERIMENTS[name]["dataset"]
        if os.environ.get("ETTFS_RUN_TRAINING") != "1":
            pytest.skip(f"no cached run for {name}; run tests/experiments.py or set ETTFS_RUN_TRAINING=1")
        if not experiments.data_available(dataset):
            pytest.skip(f"{dataset} data not found under {experiments.DATA}")
        res = experiments.run(name)
    return res


# -- training criteria -------------------------------------------------------

def test_c1_mnist_accuracy():
    records, ev = experiment("mnist_fc")
    acc = ev["early_stop"]["accuracy"]
    epochs = len(records)
    report(1, acc >= 0.975 and epochs <= 30,
           f"MNIST FC400-FC10 test accuracy {acc:.2%} after {epochs} epochs (need >= 97.5% within 30)")


def test_c2_fashion_accuracy():
    records, ev = experiment("fashion_fc")
    acc = ev["early_stop"]["accuracy"]
    epochs = len(records)
    report(2, acc >= 0.88 and epochs <= 50,
           f"Fashion FC400-FC400-FC10 test accuracy {acc:.2%} after {epochs} epochs (need >= 88.0% within 50)")


def test_c3_ablation_ordering():
    means = {}
    for name in experiments.ABLATION:
        accs = [experiment(f"ablation_{name}_s{s}")[1]["early_stop"]["accuracy"]
                for s in experiments.ABLATION_SEEDS]
        means[name] = float(np.mean(accs))
    gap1 = (means["full"] - means["ettfs_only"]) * 100
    gap2 = (means["ettfs_only"] - means["kaiming"]) * 100
    report(3, gap1 >= 0.3 and gap2 >= 0.3,
           f"Fashion ablation mean of 3 seeds: ETTFS+norm+affine {means['full']:.2%}, "
           f"ETTFS only {means['ettfs_only']:.2%}, Kaiming {means['kaiming']:.2%}; "
           f"gaps {gap1:.2f} pp / {gap2:.2f} pp (need >= 0.3 each)")


def test_c4_latency():
    mnist = experiment("mnist_fc")[1]["early_stop"]["avg_infer_steps"]
    fashion = experiment("fashion_fc")[1]["early_stop"]["avg_infer_steps"]
    report(4, mnist <= 2.0 and fashion <= 3.0,
           f"average early-stop inference steps: MNIST {mnist:.3f} (need <= 2.0), "
           f"Fashion {fashion:.3f} (need <= 3.0)")


def test_depth11_qualitative():
    ettfs = experiment("depth11_ettfs")[1]["early_stop"]["accuracy"]
    kaiming = experiment("depth11_kaiming")[1]["early_stop"]["accuracy"]
    report("depth-11", ettfs > 0.80 and kaiming < 0.80,
           f"11-layer FC stack on Fashion: ETTFS-init {ettfs:.2%} (need > 80%), "
           f"Kaiming {kaiming:.2%} (need < 80%)")


# -- property criteria -------------------------------------------------------

def test_c5_forward_statistics():
    rng = np.random.default_rng(0)
    stats = {}
    for kind in ("ettfs", "kaiming"):
        net = Network(parse_arch("FC1000", 1000, 8), norm="off")
        init_weights(net, InitScheme(kind, 8), seed=0)
        total, total_sq, n = 0.0, 0.0, 0
        with tc.no_grad():
            for _ in range(64):
                cur = []
                net.forward(random_one_spike(rng, 8, 16, (1000,)), "train", currents=cur)
                x = cur[0].data.astype(np.float64)
                total, total_sq, n = total + x.sum(), total_sq + (x * x).sum(), n + x.size
        mean = total / n
        stats[kind] = (mean, total_sq / n - mean * mean)
    (em, ev), (km, kv) = stats["ettfs"], stats["kaiming"]
    ok = 0.9 <= ev <= 1.1 and abs(em) <= 0.05 and 0.03 <= kv <= 0.055
    report(5, ok, f"ETTFS D(X)={ev:.4f} E(X)={em:+.4f} (need [0.9,1.1], |E|<=0.05); "
                  f"Kaiming D(X)={kv:.4f} (need [0.03,0.055], target {1 / 24:.4f})")


def test_c6_rank_preservation():
    rng = np.random.default_rng(0)
    total, checked, agree = 0, 0, 0
    while total < 100_000:
        T = int(rng.integers(2, 33))
        C = int(rng.integers(2, 21))
        mode = ["exp", "lin"][int(rng.integers(2))]
        gamma = float(rng.uniform(1.01, 6.0)) if mode == "exp" else float(rng.uniform(0.1, 6.0))
        times = rng.integers(0, T, size=(1000, C))
        O = np.zeros((T, 1000, C))
        np.put_along_axis(O, times[None], 1, axis=0)
        Y = decode(O, DecodeWeights(mode, gamma, T)).data
        unique = (times == times.min(axis=1, keepdims=True)).sum(axis=1) == 1
        agree += int((np.argmax(Y, axis=1)[unique] == predict_earliest(O)[unique]).sum())
        checked += int(unique.sum())
        total += 1000
    report(6, agree == checked,
           f"argmax(decode) == earliest spike in {agree}/{checked} tie-free cases "
           f"of {total} random one-spike outputs")


def test_c7_one_spike_invariants():
    rng = np.random.default_rng(0)
    counts = {}
    with tc.no_grad():
        fc = build_network("FC64", 32, 8, seed=1)
        counts["fc"] = fc.forward(random_one_spike(rng, 8, 10_000, (32,)), "train").data.sum(axis=0)
        conv = build_network("C8K3", (2, 6, 6), 8, seed=1)
        counts["conv"] = conv.forward(random_one_spike(rng, 8, 10_000, (2, 6, 6)), "train").data.sum(axis=0)
        currents = rng.normal(0.2, 1.0, size=(8, 10_000, 16))
        counts["neuron"] = run_sequence(currents, AmosConfig(), "train").data.sum(axis=0)
        pooled = avg_pool(random_one_spike(rng, 8, 10_000, (2, 4, 4)), 2).data.sum(axis=0)
    one_spike = {k: bool(np.all(v == 1)) for k, v in counts.items()}
    avg_ok = bool(np.allclose(pooled, 1.0, atol=1e-6))
    witness = np.zeros((4, 1, 1, 2, 2))
    witness[0, 0, 0, 0, 0] = 1
    witness[2, 0, 0, 1, 0] = 1
    max_sum = float(max_pool(witness, 2).data.sum())
    report(7, all(one_spike.values()) and avg_ok and max_sum == 2,
           f"train-mode sum_t S == 1 for 10^4 inputs per kind {one_spike}; "
           f"avg-pool keeps sum 1: {avg_ok}; max-pool witness sum = {max_sum:g}")


def test_c8_fusion_equivalence():
    rng = np.random.default_rng(0)
    net = build_network("C8K5-P2-FC64-FC10", (1, 28, 28), 8, seed=0)
    for layer in net.synaptic_layers:
        layer.gamma.data = rng.uniform(0.5, 2.0, layer.gamma.shape).astype(np.float32)
        layer.beta.data = rng.normal(0.0, 0.2, layer.beta.shape).astype(np.float32)
    images = rng.integers(0, 256, size=(1000, 28, 28), dtype=np.uint8)
    x = encode(images, 8, "latency", (1, 28, 28))
    with tc.no_grad():
        cur_a, cur_b = [], []
        out_a = net.forward(x, "infer", currents=cur_a).data
        net.fuse()
        out_b = net.forward(x, "infer", currents=cur_b).data
    diff = max(float(np.abs(a.data - b.data).max()) for a, b in zip(cur_a, cur_b))
    diff = max(diff, float(np.abs(out_a - out_b).max()))
    same = bool(np.array_equal(predict_earliest(out_a), predict_earliest(out_b)))
    report(8, diff < 1e-5 and same,
           f"fused vs unfused max-abs difference {diff:.2e} over 1000 inputs (need < 1e-5); "
           f"identical predictions: {same}")


def _gradient_oracle(arch, shape, seed):
    rng = np.random.default_rng(seed)
    T = 4
    cfg = AmosConfig(smooth_forward=True)
    w = DecodeWeights("exp", 2.0, T)
    net = build_network(arch, shape, T, neuron=cfg, seed=seed)
    for layer in net.synaptic_layers:
        layer.gamma.data = rng.uniform(0.5, 1.5, layer.gamma.shape)
        layer.beta.data = rng.normal(0.0, 0.2, layer.beta.shape)
    x = random_one_spike(rng, T, 3, shape, dtype=np.float64)
    labels = rng.integers(0, net.spec.num_classes, size=3)

    def loss():
        out = net.forward(x, "train")
        return mse_loss(decode(out.reshape(T, 3, -1), w), labels, w)

    params = net.parameters()
    net.zero_grad()
    tc.backward(loss())
    analytic = [p.grad.copy() for p in params]
    with tc.no_grad():
        fd = central_difference(lambda: float(loss().data), [p.data for p in params])
    return [rel_err(a, f) for a, f in zip(analytic, fd)]


def test_c9_gradient_oracle():
    with tc.precision(np.float64):
        errs = _gradient_oracle("FC5-FC3", (6,), 0) + _gradient_oracle("C2K3-FC3", (1, 5, 5), 1)
    worst = max(errs)
    report(9, worst < 1e-4,
           f"smooth-forward BPTT vs central FD over {len(errs)} parameter tensors "
           f"(FC and conv 2-layer nets, T=4, float64): worst rel. err {worst:.2e} (need < 1e-4)")


def test_c10_signal_gradient_analysis():
    reports, infer_var = {}, {}
    for kind in ("kaiming", "ettfs"):
        net = build_network("{FC400}*4-FC10", (784,), 8, init=kind, norm="off", seed=0)
        reports[kind] = analyze(net, batches=64, batch_size=32, seed=0, mode="train")
        infer_var[kind] = analyze(net, batches=8, batch_size=32, seed=0, mode="infer").variances
    kv, ev = reports["kaiming"].variances, reports["ettfs"].variances
    decreasing = all(a > b for a, b in zip(kv, kv[1:]))
    in_band = all(0.8 <= v <= 1.2 for v in ev)
    ratio = reports["ettfs"].grad_scales[0] / reports["kaiming"].grad_scales[0]
    fmt = lambda vs: "[" + ", ".join(f"{v:.4f}" for v in vs) + "]"
    report(10, decreasing and in_band and ratio >= 1e3,
           f"Kaiming D(X^l) {fmt(kv)} strictly decreasing: {decreasing} "
           f"(infer-mode {fmt(infer_var['kaiming'])}); ETTFS D(X^l) {fmt(ev)} in [0.8,1.2]: {in_band}; "
           f"first-layer |dL/dW| ratio ETTFS/Kaiming {ratio:.3g} (need >= 1e3)")
