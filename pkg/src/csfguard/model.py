"""CNN-Transformer anomaly classifier, its training loop, and baselines.

The feature vector of a record is read as a length-F sequence with a single
channel: two Conv1D/BatchNorm/ReLU stages extract local patterns, a dense
projection lifts every position to ``d_model``, pre-norm encoder blocks mix
positions with self-attention, and global average pooling feeds the
classification head.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import functional as F
from .nn.layers import (LayerParams, batchnorm_params, conv1d_params, dense_params,
                        layer_forward, layernorm_params, mha_params, RELU_GAIN)
from .nn.optim import AdamState, adam_step
from .nn.tensor import GradTape, Tensor, backward

log = logging.getLogger(__name__)

ARCHES = ("cnn_transformer", "plain_cnn", "logistic")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    num_features: int
    num_classes: int
    conv_channels: list[int] = field(default_factory=lambda: [32, 64])
    kernel_size: int = 3
    d_model: int = 64
    encoder_layers: int = 1
    heads: int = 4
    ff_width: int = 128
    positional_encoding: bool = False
    arch: str = "cnn_transformer"

    def validate(self) -> None:
        if self.arch not in ARCHES:
            raise ConfigError(f"unknown arch {self.arch!r}")
        if self.num_features < 1 or self.num_classes < 2:
            raise ConfigError("need num_features >= 1 and num_classes >= 2")
        if self.arch == "logistic":
            return
        if not self.conv_channels or min(self.conv_channels) < 1 or self.kernel_size < 1:
            raise ConfigError("conv stack needs positive channel counts and kernel size")
        if self.arch == "cnn_transformer":
            if not 1 <= self.encoder_layers <= 8:
                raise ConfigError(f"encoder_layers must be in 1..8, got {self.encoder_layers}")
            if self.heads < 1 or self.d_model % self.heads:
                raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
            if self.ff_width < 1:
                raise ConfigError("ff_width must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.001
    seed: int = 0
    # keep the weights of the epoch with the best validation accuracy
    restore_best: bool = True

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    val_binary_accuracy: list[float] = field(default_factory=list)
    best_epoch: int | None = None  # 1-based epoch whose weights were returned

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_encoding(length: int, width: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(width)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / width)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle)).astype(dtype)


class Model:
    """Ordered layer parameters plus the wiring implied by ``config.arch``."""

    def __init__(self, config: ModelConfig, layers: list[LayerParams]):
        self.config = config
        self.layers = layers
        self._by_name = {layer.name: layer for layer in layers}

    def layer(self, name: str) -> LayerParams:
        return self._by_name[name]

    @property
    def dtype(self):
        return self.layers[0].weights["weight"].dtype

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for layer in self.layers:
            out.update(layer.tensors())
        return out

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.parameters().values())

    def state(self) -> list[tuple[str, np.ndarray]]:
        """Every stored array (trainable and BatchNorm statistics) in layer order."""
        items = []
        for layer in self.layers:
            for k, t in layer.weights.items():
                items.append((f"{layer.name}.{k}", t.data))
            for k, arr in layer.bn_state.items():
                items.append((f"{layer.name}.{k}", arr))
        return items

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for layer in self.layers:
            for k, t in layer.weights.items():
                t.data = np.array(arrays[f"{layer.name}.{k}"], dtype=t.dtype)
            for k in list(layer.bn_state):
                layer.bn_state[k] = np.array(arrays[f"{layer.name}.{k}"], dtype=layer.bn_state[k].dtype)

    def forward(self, x, mode: str = "infer") -> Tensor:
        """Map ``[batch, num_features]`` rows to ``[batch, num_classes]`` logits."""
        cfg = self.config
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.data.ndim != 2 or x.shape[1] != cfg.num_features:
            raise ValueError(f"expected rows of width {cfg.num_features}, got shape {list(x.shape)}")
        if cfg.arch == "logistic":
            return layer_forward(self._by_name["head"], x, mode)

        b, nf = x.shape
        h = F.reshape(x, (b, 1, nf))
        for i in range(len(cfg.conv_channels)):
            h = layer_forward(self._by_name[f"conv{i + 1}"], h, mode)
            h = layer_forward(self._by_name[f"bn{i + 1}"], h, mode)
            h = F.relu(h)
        if cfg.arch == "plain_cnn":
            return layer_forward(self._by_name["head"], F.mean(h, axis=2), mode)

        h = F.transpose(h, (0, 2, 1))
        h = layer_forward(self._by_name["proj"], h, mode)
        if cfg.positional_encoding:
            h = h + Tensor(sinusoidal_encoding(nf, cfg.d_model, h.dtype))
        for i in range(cfg.encoder_layers):
            p = f"enc{i}"
            a = layer_forward(self._by_name[f"{p}.ln1"], h, mode)
            h = h + layer_forward(self._by_name[f"{p}.mha"], a, mode)
            f = layer_forward(self._by_name[f"{p}.ln2"], h, mode)
            f = F.relu(layer_forward(self._by_name[f"{p}.ff1"], f, mode))
            h = h + layer_forward(self._by_name[f"{p}.ff2"], f, mode)
        return layer_forward(self._by_name["head"], F.mean(h, axis=1), mode)


def build_model(config: ModelConfig, seed: int, dtype=np.float32) -> Model:
    config.validate()
    rng = np.random.default_rng(seed)
    layers: list[LayerParams] = []
    if config.arch == "logistic":
        # convex problem: start from zero like standard logistic regression
        head = dense_params("head", config.num_features, config.num_classes, rng, dtype)
        head.weights["weight"].data[:] = 0
        layers.append(head)
        return Model(config, layers)

    in_ch = 1
    for i, ch in enumerate(config.conv_channels):
        layers.append(conv1d_params(f"conv{i + 1}", in_ch, ch, config.kernel_size, rng, dtype=dtype))
        layers.append(batchnorm_params(f"bn{i + 1}", ch, dtype))
        in_ch = ch
    if config.arch == "plain_cnn":
        layers.append(dense_params("head", in_ch, config.num_classes, rng, dtype))
        return Model(config, layers)

    d = config.d_model
    layers.append(dense_params("proj", in_ch, d, rng, dtype))
    for i in range(config.encoder_layers):
        p = f"enc{i}"
        layers.append(layernorm_params(f"{p}.ln1", d, dtype))
        layers.append(mha_params(f"{p}.mha", d, config.heads, rng, dtype))
        layers.append(layernorm_params(f"{p}.ln2", d, dtype))
        layers.append(dense_params(f"{p}.ff1", d, config.ff_width, rng, dtype, gain=RELU_GAIN))
        layers.append(dense_params(f"{p}.ff2", config.ff_width, d, rng, dtype))
    layers.append(dense_params("head", d, config.num_classes, rng, dtype))
    return Model(config, layers)


def predict(model: Model, rows, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Class distributions and argmax classes (ties go to the lowest index)."""
    rows = np.asarray(rows, dtype=model.dtype)
    if rows.ndim == 1:
        rows = rows[None, :]
    if rows.ndim != 2 or rows.shape[1] != model.config.num_features:
        raise ValueError(f"expected rows of width {model.config.num_features}, got shape {list(rows.shape)}")
    chunks = []
    for start in range(0, len(rows), batch_size):
        logits = model.forward(rows[start:start + batch_size], mode="infer")
        chunks.append(F.softmax(logits, axis=-1).data)
    if chunks:
        probs = np.concatenate(chunks)
    else:
        probs = np.zeros((0, model.config.num_classes), dtype=model.dtype)
    return probs, probs.argmax(axis=1)


def _split_arrays(data, name: str) -> tuple[np.ndarray, np.ndarray]:
    x, y = data.part(name)
    if len(x) == 0:
        raise ValueError(f"{name} split is empty")
    return x, y


def _accuracy(pred, y) -> float:
    return float(np.mean(pred == y)) if len(y) else 0.0


def train(model: Model, data, tc: TrainConfig) -> tuple[Model, TrainHistory]:
    """Mini-batch Adam on cross-entropy.

    With ``tc.restore_best`` the returned weights are those of the latest
    epoch with the highest validation accuracy, otherwise the final epoch's.

    ``data`` is a FeatureMatrix (anything with ``part(split) -> (x, y)``).
    Batches come from a fresh seeded permutation each epoch; the last partial
    batch is kept.
    """
    tc.validate()
    x_tr, y_tr = _split_arrays(data, "train")
    x_va, y_va = _split_arrays(data, "val")
    k = model.config.num_classes
    for y in (y_tr, y_va):
        if y.min() < 0 or y.max() >= k:
            raise ValueError(f"labels must lie in [0, {k}), found range [{y.min()}, {y.max()}]")
    x_tr = x_tr.astype(model.dtype, copy=False)

    rng = np.random.default_rng(tc.seed)
    params = model.parameters()
    opt = AdamState(lr=tc.learning_rate)
    hist = TrainHistory()
    n = len(x_tr)
    best_state, best_acc = None, -1.0
    select = tc.restore_best
    for epoch in range(tc.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, tc.batch_size):
            idx = order[start:start + tc.batch_size]
            with GradTape() as tape:
                logits = model.forward(Tensor(x_tr[idx]), mode="train")
                loss = F.cross_entropy(F.softmax(logits, axis=-1), y_tr[idx])
            grads = backward(tape, loss, params.values())
            adam_step(opt, params, {name: grads[t] for name, t in params.items()})
            total += float(loss.data) * len(idx)
        _, p_tr = predict(model, x_tr)
        _, p_va = predict(model, x_va)
        hist.train_loss.append(total / n)
        hist.train_accuracy.append(_accuracy(p_tr, y_tr))
        hist.val_accuracy.append(_accuracy(p_va, y_va))
        hist.val_binary_accuracy.append(_accuracy(p_va > 0, y_va > 0))
        log.info("epoch %d/%d loss=%.4f train_acc=%.4f val_acc=%.4f", epoch + 1, tc.epochs,
                 hist.train_loss[-1], hist.train_accuracy[-1], hist.val_accuracy[-1])
        if hist.val_accuracy[-1] >= best_acc:
            best_acc, hist.best_epoch = hist.val_accuracy[-1], epoch + 1
            if select:
                best_state = {name: arr.copy() for name, arr in model.state()}
    if best_state is not None:
        model.load_state(best_state)
    else:
        hist.best_epoch = tc.epochs
    return model, hist


def default_config(num_features: int, num_classes: int, arch: str = "cnn_transformer",
                   encoder_layers: int = 1) -> ModelConfig:
    return ModelConfig(num_features=num_features, num_classes=num_classes,
                       encoder_layers=encoder_layers, arch=arch)


def train_baseline(kind: str, data, tc: TrainConfig, config: ModelConfig | None = None) -> tuple[Model, TrainHistory]:
    """Train the logistic-regression or plain-CNN comparison model.

    Both reuse :func:`train`, so the optimiser, batching and seeding match the
    main model. The model seed is ``tc.seed``.
    """
    if kind not in ("logistic", "plain_cnn"):
        raise ValueError(f"unknown baseline {kind!r}")
    if config is None:
        config = default_config(data.num_features, data.num_classes, arch=kind)
    else:
        config = ModelConfig(**{**config.to_dict(), "arch": kind})
    return train(build_model(config, tc.seed), data, tc)


def describe(config: ModelConfig) -> str:
    return (f"{config.arch}(conv={config.conv_channels}, k={config.kernel_size}, d_model={config.d_model}, "
            f"encoders={config.encoder_layers}, heads={config.heads}, ff={config.ff_width})")

