"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every command that
writes artifacts also writes a ``*.manifest.json`` next to them; wall time is
recorded only there so primary outputs stay byte-identical across reruns.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__, metrics
from .coordinator import CoordinatorConfig, run_scenario
from .model import TrainConfig, build_model, default_config, train, train_baseline
from .modelio import load_any, save_model
from .preprocess import DEFAULT_RATIOS, FeatureMatrix, prepare
from .quantize import QuantizedModel, any_predict, compression_report, quantize_model
from .traffic import Scenario, bundled_scenario, emit_dataset, simulate

log = logging.getLogger("csfguard")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def write_manifest(command: str, args: argparse.Namespace, outputs: list, started: float) -> Path:
    inputs = {k: str(v) for k, v in vars(args).items()
              if k not in ("func", "command") and v is not None and k != "seed"}
    manifest = {
        "command": command,
        "arguments": inputs,
        "seeds": {"seed": getattr(args, "seed", None)},
        "outputs": [str(o) for o in outputs],
        "tool_version": __version__,
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    path = _manifest_path(Path(outputs[0]))
    _write_json(path, manifest)
    return path


def _load_scenario(spec: str) -> Scenario:
    if spec.startswith("bundled:"):
        return bundled_scenario(spec.split(":", 1)[1])
    return Scenario.load(spec)


def cmd_simulate(args) -> list:
    records = simulate(_load_scenario(args.scenario))
    emit_dataset(records, args.out)
    log.info("wrote %d records to %s", len(records), args.out)
    return [args.out]


def cmd_preprocess(args) -> list:
    fm = prepare(args.inp, ratios=tuple(args.ratios), seed=args.seed)
    fm.save(args.out)
    log.info("encoded %d rows x %d features into %s", len(fm.y), fm.num_features, args.out)
    return [args.out]


def _train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr, seed=args.seed,
                       restore_best=not args.keep_last)


def cmd_train(args) -> list:
    fm = FeatureMatrix.load(args.data)
    config = default_config(fm.num_features, fm.num_classes, arch=args.arch, encoder_layers=args.encoders)
    model = build_model(config, seed=args.seed)
    model, history = train(model, fm, _train_config(args))
    save_model(model, args.out)
    hist_path = Path(str(args.out) + ".history.json")
    _write_json(hist_path, history.to_dict())
    log.info("final val accuracy %.4f", history.val_accuracy[-1])
    return [args.out, hist_path]


def _evaluate(model, fm: FeatureMatrix, split: str) -> dict:
    x, y = fm.part(split)
    if len(y) == 0:
        raise ValueError(f"split {split!r} is empty")
    _, pred = any_predict(model, x)
    cm = metrics.confusion(pred, y, num_classes=fm.num_classes)
    return metrics.report(cm, labels=fm.sidecar.labels)


def cmd_quantize(args) -> list:
    model = load_any(args.inp)
    if isinstance(model, QuantizedModel):
        model = model.dequantize()
    qmodel = quantize_model(model)
    qmodel.save(args.out)
    fm = FeatureMatrix.load(args.data)
    rep = compression_report(model, qmodel, fm, float_path=args.inp, quant_path=args.out)
    _write_json(args.report, rep.to_dict())
    log.info("compression ratio %.4f", rep.ratio)
    return [args.out, args.report]


def cmd_evaluate(args) -> list:
    model = load_any(args.model)
    fm = FeatureMatrix.load(args.data)
    _write_json(args.report, _evaluate(model, fm, args.split))
    return [args.report]


def cmd_compare(args) -> list:
    fm = FeatureMatrix.load(args.data)
    tc = _train_config(args)
    rows = {}
    main_cfg = default_config(fm.num_features, fm.num_classes, encoder_layers=args.encoders)
    model, _ = train(build_model(main_cfg, seed=args.seed), fm, tc)
    candidates = {"cnn_transformer": model, "cnn_transformer_int8": quantize_model(model)}
    for kind in ("logistic", "plain_cnn"):
        candidates[kind], _ = train_baseline(kind, fm, tc)
    for name, m in candidates.items():
        rep = _evaluate(m, fm, "test")
        rows[name] = {"accuracy": rep["macro"]["accuracy"], "macro_f1": rep["macro"]["f1"],
                      "binary_f1": rep["f1"]}
    _write_json(args.out, {"encoders": args.encoders, "epochs": args.epochs, "split": "test", "models": rows})
    return [args.out]


def cmd_coordinate(args) -> list:
    run = run_scenario(CoordinatorConfig.load(args.config))
    run.report.save(args.report)
    events = Path(args.report).with_suffix(".events.jsonl")
    run.write_event_log(events)
    return [args.report, events]


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="csfguard", description="Edge anomaly detection for cooperative farms.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a labelled packet dataset from a scenario")
    s.add_argument("--scenario", required=True, help="scenario JSON, or bundled:A / bundled:B")
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("preprocess", help="encode, split and standardise a dataset")
    s.add_argument("--in", dest="inp", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--seed", required=True, type=int)
    s.add_argument("--ratios", nargs=3, type=float, default=list(DEFAULT_RATIOS))
    s.set_defaults(func=cmd_preprocess)

    def training_flags(s, epochs_default=None):
        s.add_argument("--data", required=True, type=Path)
        s.add_argument("--encoders", type=_positive_int, default=1)
        s.add_argument("--epochs", type=_positive_int, required=epochs_default is None, default=epochs_default)
        s.add_argument("--seed", required=True, type=int)
        s.add_argument("--batch-size", type=_positive_int, default=32)
        s.add_argument("--lr", type=float, default=0.001)
        s.add_argument("--keep-last", action="store_true",
                       help="keep final-epoch weights instead of the best validation epoch")

    s = sub.add_parser("train", help="train a detector")
    training_flags(s)
    s.add_argument("--arch", choices=["cnn_transformer", "plain_cnn", "logistic"], default="cnn_transformer")
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("quantize", help="int8-quantise a trained model and report compression")
    s.add_argument("--in", dest="inp", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--report", required=True, type=Path)
    s.add_argument("--data", required=True, type=Path)
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("evaluate", help="score a model on a split")
    s.add_argument("--model", required=True, type=Path)
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--report", required=True, type=Path)
    s.add_argument("--split", choices=["train", "val", "test"], default="test")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("compare", help="CNN-Transformer (float and int8) against logistic and plain CNN")
    training_flags(s, epochs_default=10)
    s.set_defaults(encoders=5)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("coordinate", help="run the multi-farm detection and quarantine scenario")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--report", required=True, type=Path)
    s.set_defaults(func=cmd_coordinate)
    return p


def configure_logging() -> None:
    name = os.environ.get("CSF_LOG", "info").lower()
    logging.basicConfig(level=LOG_LEVELS.get(name, logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)


def dispatch(argv=None) -> int:
    configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors as exit 2
        return int(exc.code or 0)
    started = time.perf_counter()
    try:
        outputs = args.func(args)
        write_manifest(args.command, args, outputs, started)
    except Exception as exc:  # noqa: BLE001 - any failure maps to exit 1
        log.error("%s failed: %s", args.command, exc)
        log.debug("traceback", exc_info=True)
        return 1
    return 0


def main() -> None:
    sys.exit(dispatch())
