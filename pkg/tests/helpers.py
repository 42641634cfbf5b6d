"""Cached bundled data and trained models shared by the test modules."""
import functools
import time

import numpy as np

from csfguard.model import TrainConfig, build_model, default_config, train, train_baseline
from csfguard.preprocess import prepare
from csfguard.traffic import bundled_scenario, simulate

SPLIT_SEED = 1
EPOCHS = 15


@functools.lru_cache(maxsize=None)
def bundled_data(farm: str):
    return prepare(simulate(bundled_scenario(farm)), seed=SPLIT_SEED)


@functools.lru_cache(maxsize=None)
def trained(farm: str, arch: str = "cnn_transformer", encoders: int = 1, seed: int = 0, epochs: int = EPOCHS):
    """Train once per session; returns (model, history, seconds)."""
    fm = bundled_data(farm)
    tc = TrainConfig(epochs=epochs, seed=seed)
    start = time.perf_counter()
    if arch == "cnn_transformer":
        model = build_model(default_config(fm.num_features, fm.num_classes, encoder_layers=encoders), seed=seed)
        model, hist = train(model, fm, tc)
    else:
        model, hist = train_baseline(arch, fm, tc)
    return model, hist, time.perf_counter() - start


def accuracy_on(model, fm, split="test"):
    from csfguard.quantize import any_predict

    x, y = fm.part(split)
    return float(np.mean(any_predict(model, x)[1] == y))


TOY = dict(num_features=8, num_classes=3, conv_channels=[4, 8], d_model=8, encoder_layers=1, heads=2, ff_width=16)


def toy_gradient_errors(seed=0, step=1e-5):
    """Per-parameter relative error of tape gradients against central differences (float64, train mode)."""
    from csfguard.model import ModelConfig
    from csfguard.nn import GradTape, Tensor, backward
    from csfguard.nn import functional as F
    from oracles import finite_difference, rel_error

    model = build_model(ModelConfig(**TOY), seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 100)
    x = rng.normal(size=(4, TOY["num_features"]))
    labels = np.array([0, 1, 2, 1])
    params = model.parameters()

    def loss_tensor():
        return F.cross_entropy(F.softmax(model.forward(Tensor(x), mode="train"), axis=-1), labels)

    with GradTape() as tape:
        loss = loss_tensor()
    analytic = backward(tape, loss, params.values())
    numeric = finite_difference(lambda: float(loss_tensor().data), [t.data for t in params.values()], step)
    # several biases have an exactly zero gradient (conv bias under batch norm,
    # key bias under softmax); the floor keeps their round-off from reading as error
    return {name: rel_error(analytic[t], n, floor=1e-6) for (name, t), n in zip(params.items(), numeric)}


def layer_case(kind: str, seed: int):
    """One randomized forward case for ``kind``; returns (layer output, naive-loop reference)."""
    from csfguard.nn import Tensor, layer_forward
    from csfguard.nn.layers import (BN_EPS, LN_EPS, batchnorm_params, conv1d_params, dense_params,
                                    layernorm_params, mha_params)
    from oracles import batchnorm_naive, conv1d_naive, dense_naive, layernorm_naive, mha_naive

    rng = np.random.default_rng(seed)

    def rand(shape):
        return rng.normal(size=shape).astype(np.float32)

    if kind == "conv1d":
        cin, cout, k = int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 6))
        stride = int(rng.integers(1, 3))
        padding = ["same", "valid"][seed % 2]
        p = conv1d_params("c", cin, cout, k, rng, stride=stride, padding=padding)
        p.weights["bias"].data[:] = rng.normal(size=cout)
        x = rand((2, cin, int(rng.integers(k, 12))))
        ref = conv1d_naive(x, p.weights["weight"].data, p.weights["bias"].data, stride, padding)
        return layer_forward(p, Tensor(x)).data, ref
    if kind == "dense":
        fin, fout = int(rng.integers(1, 10)), int(rng.integers(1, 10))
        p = dense_params("d", fin, fout, rng)
        p.weights["bias"].data[:] = rng.normal(size=fout)
        lead = tuple(int(v) for v in rng.integers(1, 4, size=int(rng.integers(1, 3))))
        x = rand(lead + (fin,))
        return layer_forward(p, Tensor(x)).data, dense_naive(x, p.weights["weight"].data, p.weights["bias"].data)
    if kind == "layernorm":
        d = int(rng.integers(2, 12))
        p = layernorm_params("ln", d)
        p.weights["gamma"].data[:] = rng.normal(size=d)
        p.weights["beta"].data[:] = rng.normal(size=d)
        x = rand((2, int(rng.integers(1, 5)), d))
        ref = layernorm_naive(x, p.weights["gamma"].data, p.weights["beta"].data, LN_EPS)
        return layer_forward(p, Tensor(x)).data, ref
    if kind == "batchnorm":
        ch = int(rng.integers(1, 6))
        p = batchnorm_params("bn", ch)
        p.weights["gamma"].data[:] = rng.normal(size=ch)
        p.weights["beta"].data[:] = rng.normal(size=ch)
        p.bn_state["running_mean"][:] = rng.normal(size=ch)
        p.bn_state["running_var"][:] = rng.uniform(0.5, 2.0, size=ch)
        x = rand((int(rng.integers(2, 5)), ch, int(rng.integers(1, 7))))
        mode = ["train", "infer"][seed % 2]
        ref = batchnorm_naive(x, p.weights["gamma"].data, p.weights["beta"].data, p.bn_state["running_mean"].copy(),
                              p.bn_state["running_var"].copy(), BN_EPS, mode == "train")
        return layer_forward(p, Tensor(x), mode).data, ref
    if kind == "attention":
        heads = int(rng.integers(1, 4))
        d = heads * int(rng.integers(1, 4))
        p = mha_params("mha", d, heads, rng)
        for k in ("bq", "bk", "bv", "bo"):
            p.weights[k].data[:] = rng.normal(size=d) * 0.1
        x = rand((2, int(rng.integers(1, 6)), d))
        return layer_forward(p, Tensor(x)).data, mha_naive(x, {k: t.data for k, t in p.weights.items()}, heads)
    raise ValueError(f"unknown layer kind {kind!r}")


LAYER_KINDS = ("conv1d", "dense", "layernorm", "batchnorm", "attention")
