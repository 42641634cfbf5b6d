"""Post-training int8 weight quantisation.

Weights of Conv1D, Dense and attention projections are quantised
symmetrically per tensor (``scale = max|w| / 127``, no zero point). Biases
and normalisation parameters stay float32, and activations are never
quantised: inference dequantises the weights once and runs the float graph.
"""
from __future__ import annotations

import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import metrics
from .model import Model, build_model, predict
from .modelio import TensorRecord, file_size_kb, save_model, write_model_file
from .nn.layers import LayerKind

QMAX = 127


@dataclass
class QuantizedTensor:
    values: np.ndarray  # int8
    scale: np.float32
    shape: tuple[int, ...]

    def dequantize(self) -> np.ndarray:
        return (self.values.astype(np.float64) * float(self.scale)).astype(np.float32)


def quantize_tensor(w: np.ndarray) -> QuantizedTensor:
    w64 = np.asarray(w, dtype=np.float64)
    peak = float(np.abs(w64).max()) if w64.size else 0.0
    # all-zero tensors get scale 1 so there is nothing to divide by zero
    scale = np.float32(peak / QMAX) if peak > 0 else np.float32(1.0)
    if scale == 0:  # peak below float32 resolution
        scale = np.float32(np.finfo(np.float32).tiny)
    q = np.clip(np.rint(w64 / float(scale)), -QMAX, QMAX).astype(np.int8)
    return QuantizedTensor(q, scale, tuple(w64.shape))


def weight_names(model: Model) -> set[str]:
    """Names of the tensors that get quantised."""
    names = set()
    for layer in model.layers:
        if layer.kind in (LayerKind.CONV1D, LayerKind.DENSE):
            names.add(f"{layer.name}.weight")
        elif layer.kind is LayerKind.MHA:
            names.update(f"{layer.name}.w{p}" for p in "qkvo")
    return names


class QuantizedModel:
    """Architecture config plus an ordered mix of int8 and float32 tensors."""

    def __init__(self, config, tensors: dict):
        self.config = config
        self.tensors = tensors
        self._float: Model | None = None

    def dequantize(self) -> Model:
        if self._float is None:
            model = build_model(self.config, seed=0)
            model.load_state({name: t.dequantize() if isinstance(t, QuantizedTensor) else t
                              for name, t in self.tensors.items()})
            self._float = model
        return self._float

    def save(self, path) -> int:
        recs = []
        for name, t in self.tensors.items():
            if isinstance(t, QuantizedTensor):
                recs.append(TensorRecord(name, t.values, float(t.scale)))
            else:
                recs.append(TensorRecord(name, np.asarray(t, dtype=np.float32)))
        return write_model_file(path, self.config.to_dict(), recs)


def quantize_model(model) -> QuantizedModel:
    """Quantise every weight tensor of a trained model; other tensors are copied as float32."""
    if isinstance(model, QuantizedModel):
        model = model.dequantize()
    targets = weight_names(model)
    tensors = {}
    for name, arr in model.state():
        if name in targets:
            tensors[name] = quantize_tensor(arr)
        else:
            tensors[name] = np.array(arr, dtype=np.float32)
    return QuantizedModel(model.config, tensors)


def quantized_predict(qmodel: QuantizedModel, rows) -> tuple[np.ndarray, np.ndarray]:
    return predict(qmodel.dequantize(), rows)


def any_predict(model, rows):
    if isinstance(model, QuantizedModel):
        return quantized_predict(model, rows)
    return predict(model, rows)


@dataclass
class CompressionReport:
    original_kb: float
    compressed_kb: float
    ratio: float
    accuracy_before: float
    accuracy_after: float
    f1_before: float
    f1_after: float
    binary_f1_before: float
    binary_f1_after: float
    argmax_agreement: float

    def to_dict(self) -> dict:
        return asdict(self)


def compression_report(model: Model, qmodel: QuantizedModel, data, float_path=None,
                       quant_path=None, split: str = "test") -> CompressionReport:
    """Sizes come from the serialised files; accuracy and macro-F1 from ``split`` of ``data``."""
    with tempfile.TemporaryDirectory() as tmp:
        float_path = Path(float_path or Path(tmp) / "model.csfm")
        quant_path = Path(quant_path or Path(tmp) / "model.q.csfm")
        save_model(model, float_path)
        qmodel.save(quant_path)
        orig, comp = file_size_kb(float_path), file_size_kb(quant_path)

    x, y = data.part(split)
    _, p_float = predict(model, x)
    _, p_quant = quantized_predict(qmodel, x)
    k = model.config.num_classes
    cm_f = metrics.confusion(p_float, y, num_classes=k)
    cm_q = metrics.confusion(p_quant, y, num_classes=k)
    mf, mq = metrics.macro_scores(cm_f), metrics.macro_scores(cm_q)
    return CompressionReport(
        original_kb=orig,
        compressed_kb=comp,
        ratio=1.0 - comp / orig,
        accuracy_before=mf["accuracy"],
        accuracy_after=mq["accuracy"],
        f1_before=mf["f1"],
        f1_after=mq["f1"],
        binary_f1_before=metrics.scores(cm_f)["f1"],
        binary_f1_after=metrics.scores(cm_q)["f1"],
        argmax_agreement=float(np.mean(p_float == p_quant)) if len(y) else 1.0,
    )
