"""Drop identifiers, encode, split and standardise packet datasets."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .traffic import FIELD_NAMES, PacketRecord, Protocol, TcpFlag, records_to_columns

IDENTIFIER_COLUMNS = ("frame_number", "src_ip", "dst_ip", "timestamp", "src_port", "dst_port")
LABEL_COLUMNS = ("is_attack", "attack_type")
BENIGN = "benign"
SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (0.70, 0.15, 0.15)
CONSTANT_STD = 1e-9
FLAG_COLUMNS = [("flag_syn", TcpFlag.SYN), ("flag_ack", TcpFlag.ACK),
                ("flag_fin", TcpFlag.FIN), ("flag_rst", TcpFlag.RST)]
BOOL_COLUMNS = {"is_mgmt_deauth", "is_retry", "arp_gratuitous", "dns_answer_mismatch",
                "bssid_known", "payload_sql_meta"}


class EncodingError(ValueError):
    pass


def as_frame(dataset) -> pd.DataFrame:
    """Accept a DataFrame, a list of PacketRecords, or a CSV path."""
    if isinstance(dataset, pd.DataFrame):
        return dataset
    if isinstance(dataset, (str, Path)):
        return pd.read_csv(dataset, keep_default_na=False)
    if isinstance(dataset, list) and (not dataset or isinstance(dataset[0], PacketRecord)):
        return pd.DataFrame(records_to_columns(dataset), columns=FIELD_NAMES)
    raise TypeError(f"cannot interpret {type(dataset).__name__} as a dataset")


def drop_identifiers(dataset) -> pd.DataFrame:
    df = as_frame(dataset)
    return df.drop(columns=[c for c in IDENTIFIER_COLUMNS if c in df.columns])


def build_label_dict(names) -> dict[str, int]:
    """``benign`` first, remaining names in lexicographic order."""
    rest = sorted(set(names) - {BENIGN})
    return {name: i for i, name in enumerate([BENIGN] + rest)}


@dataclass
class Sidecar:
    """Everything needed to turn raw records into model rows."""

    columns: list[str]
    onehot: list[bool]
    label_dict: dict[str, int]
    mean: list[float] | None = None
    std: list[float] | None = None

    @property
    def labels(self) -> list[str]:
        return [n for n, _ in sorted(self.label_dict.items(), key=lambda kv: kv[1])]

    def encode_frame(self, df: pd.DataFrame) -> tuple[np.ndarray, np.ndarray]:
        x, y, cols, _ = _encode_columns(df, self.label_dict)
        if cols != self.columns:
            raise EncodingError(f"column mismatch: {cols} vs {self.columns}")
        return x, y

    def apply_stats(self, x: np.ndarray) -> np.ndarray:
        if self.mean is None:
            return x.astype(np.float32)
        mean = np.asarray(self.mean)
        std = np.asarray(self.std)
        out = np.zeros_like(x, dtype=np.float64)
        live = std >= CONSTANT_STD
        out[:, live] = (x[:, live] - mean[live]) / std[live]
        return out.astype(np.float32)

    def transform(self, dataset) -> tuple[np.ndarray, np.ndarray]:
        """Full pipeline for new records using the fitted statistics."""
        x, y = self.encode_frame(drop_identifiers(dataset))
        return self.apply_stats(x), y

    def features(self, dataset) -> np.ndarray:
        """Like :meth:`transform` but ignores any label columns."""
        df = drop_identifiers(dataset).drop(columns=list(LABEL_COLUMNS), errors="ignore")
        x, _, cols, _ = _encode_columns(df, self.label_dict, with_labels=False)
        if cols != self.columns:
            raise EncodingError(f"column mismatch: {cols} vs {self.columns}")
        return self.apply_stats(x)

    def to_dict(self) -> dict:
        return {"columns": self.columns, "onehot": self.onehot, "label_dict": self.label_dict,
                "mean": self.mean, "std": self.std}

    @classmethod
    def from_dict(cls, d: dict) -> "Sidecar":
        return cls(columns=list(d["columns"]), onehot=list(d["onehot"]),
                   label_dict={k: int(v) for k, v in d["label_dict"].items()},
                   mean=d.get("mean"), std=d.get("std"))


@dataclass
class FeatureMatrix:
    x: np.ndarray
    y: np.ndarray
    sidecar: Sidecar
    split_tags: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    # float64 values before standardisation; None once loaded from disk
    raw: np.ndarray | None = field(default=None, repr=False)

    @property
    def columns(self) -> list[str]:
        return self.sidecar.columns

    @property
    def label_dict(self) -> dict[str, int]:
        return self.sidecar.label_dict

    @property
    def num_features(self) -> int:
        return self.x.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.sidecar.label_dict)

    def part(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if self.split_tags is None:
            raise ValueError("no split assigned")
        mask = self.split_tags == name
        return self.x[mask], self.y[mask]

    def decode_labels(self, y) -> list[str]:
        names = self.sidecar.labels
        return [names[int(i)] for i in y]

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with (directory / "features.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns + ["label"])
            for row, label in zip(self.x, self.y):
                w.writerow([f"{v:.9g}" for v in row] + [int(label)])
        side = self.sidecar.to_dict()
        side["split"] = None if self.split_tags is None else [str(s) for s in self.split_tags]
        side["meta"] = self.meta
        (directory / "sidecar.json").write_text(json.dumps(side, indent=1, sort_keys=True) + "\n")
        return directory

    @classmethod
    def load(cls, directory) -> "FeatureMatrix":
        directory = Path(directory)
        side = json.loads((directory / "sidecar.json").read_text())
        with (directory / "features.csv").open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        if header[:-1] != side["columns"]:
            raise ValueError(f"{directory}: features.csv header does not match sidecar columns")
        data = np.array(rows, dtype=np.float64) if rows else np.zeros((0, len(header)))
        split = side.get("split")
        return cls(x=data[:, :-1].astype(np.float32), y=data[:, -1].astype(np.int64),
                   sidecar=Sidecar.from_dict(side),
                   split_tags=None if split is None else np.array(split),
                   meta=side.get("meta", {}))


def _encode_columns(df: pd.DataFrame, label_dict: dict[str, int] | None, with_labels: bool = True):
    present = [c for c in IDENTIFIER_COLUMNS if c in df.columns]
    if present:
        raise EncodingError(f"identifier columns still present: {present}")
    blocks: list[np.ndarray] = []
    names: list[str] = []
    onehot: list[bool] = []
    for col in df.columns:
        if col in LABEL_COLUMNS:
            continue
        values = df[col]
        if col == "protocol":
            known = [p.value for p in Protocol]
            vals = values.astype(str).to_numpy()
            unknown = sorted(set(vals) - set(known))
            if unknown:
                raise EncodingError(f"unknown protocol value(s): {unknown}")
            for p in known:
                blocks.append((vals == p).astype(np.float64))
                names.append(f"protocol_{p}")
                onehot.append(True)
        elif col == "tcp_flags":
            flags = values.to_numpy().astype(np.int64)
            for name, bit in FLAG_COLUMNS:
                blocks.append(((flags & int(bit)) != 0).astype(np.float64))
                names.append(name)
                onehot.append(False)
        elif col in BOOL_COLUMNS:
            blocks.append(values.to_numpy().astype(bool).astype(np.float64))
            names.append(col)
            onehot.append(False)
        else:
            try:
                blocks.append(pd.to_numeric(values).to_numpy(dtype=np.float64))
            except (ValueError, TypeError) as exc:
                raise EncodingError(f"column {col!r} is not numeric: {exc}") from None
            names.append(col)
            onehot.append(False)
    x = np.stack(blocks, axis=1) if blocks else np.zeros((len(df), 0))
    if not with_labels:
        return x, None, names, (onehot, label_dict)

    if "attack_type" not in df.columns:
        raise EncodingError("dataset has no attack_type column")
    labels = df["attack_type"].astype(str).tolist()
    if label_dict is None:
        label_dict = build_label_dict(labels)
    unknown = sorted(set(labels) - set(label_dict))
    if unknown:
        raise EncodingError(f"unknown attack type(s): {unknown}")
    y = np.array([label_dict[s] for s in labels], dtype=np.int64)
    return x, y, names, (onehot, label_dict)


def encode(dataset, label_dict: dict[str, int] | None = None) -> FeatureMatrix:
    """One-hot protocol, flag bits and booleans to {0,1}, label-encode attack_type."""
    df = as_frame(dataset)
    x, y, names, (onehot, label_dict) = _encode_columns(df, label_dict)
    return FeatureMatrix(x=x.astype(np.float32), y=y,
                         sidecar=Sidecar(columns=names, onehot=onehot, label_dict=dict(label_dict)),
                         raw=x)


def split(fm: FeatureMatrix, ratios=DEFAULT_RATIOS, seed: int = 0) -> FeatureMatrix:
    """Stratified seeded split into train/val/test.

    Rows are shuffled within each class and interleaved by their relative rank
    in the class, then cut into contiguous train/val/test blocks; this gives
    exact global counts while every class lands in train.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(fm.y)
    counts = np.bincount(fm.y, minlength=fm.num_classes)
    names = fm.sidecar.labels
    for cls_idx, c in enumerate(counts):
        if 0 < c < 3:
            raise ValueError(f"class {names[cls_idx]!r} has only {c} row(s); need at least 3")
    rng = np.random.default_rng(seed)
    tiebreak = rng.permutation(n)
    key = np.empty(n)
    for cls_idx in np.flatnonzero(counts):
        rows = np.flatnonzero(fm.y == cls_idx)
        rows = rows[rng.permutation(len(rows))]
        key[rows] = (np.arange(len(rows)) + 0.5) / len(rows)
    order = np.lexsort((tiebreak, key))
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    tags = np.empty(n, dtype="<U5")
    tags[order[:n_train]] = "train"
    tags[order[n_train:n_train + n_val]] = "val"
    tags[order[n_train + n_val:]] = "test"
    meta = {**fm.meta, "split_seed": seed, "ratios": list(ratios)}
    return FeatureMatrix(x=fm.x, y=fm.y, sidecar=fm.sidecar, split_tags=tags, meta=meta, raw=fm.raw)


def standardize(fm: FeatureMatrix, fit_on: str = "train") -> FeatureMatrix:
    """z-score every non-one-hot column with population statistics of ``fit_on`` rows."""
    if fm.split_tags is None:
        raise ValueError("assign a split before standardising")
    raw = fm.raw if fm.raw is not None else fm.x.astype(np.float64)
    fit = raw[fm.split_tags == fit_on]
    if len(fit) == 0:
        raise ValueError(f"no rows in split {fit_on!r}")
    mean = fit.mean(axis=0)
    std = fit.std(axis=0)
    exempt = np.asarray(fm.sidecar.onehot, dtype=bool)
    mean[exempt] = 0.0
    std[exempt] = 1.0
    side = Sidecar(columns=fm.columns, onehot=fm.sidecar.onehot, label_dict=fm.label_dict,
                   mean=[float(v) for v in mean], std=[float(v) for v in std])
    return FeatureMatrix(x=side.apply_stats(raw), y=fm.y, sidecar=side, split_tags=fm.split_tags,
                         meta=dict(fm.meta), raw=raw)


def prepare(dataset, ratios=DEFAULT_RATIOS, seed: int = 0,
            label_dict: dict[str, int] | None = None) -> FeatureMatrix:
    """drop_identifiers -> encode -> split -> standardize."""
    return standardize(split(encode(drop_identifiers(dataset), label_dict), ratios, seed))
