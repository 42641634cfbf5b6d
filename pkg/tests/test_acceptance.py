"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line with the measured values."""
import time

import numpy as np
import pytest

from csfguard import metrics
from csfguard.coordinator import FarmStatus, default_coordinator_config, run_scenario
from csfguard.dtwin import CorruptionMode, CorruptionSpec, SensorField, SensorReading, SensorKind, TwinState, \
    audit_sync, twin_step
from csfguard.model import build_model, default_config, predict, train, TrainConfig
from csfguard.quantize import compression_report, quantize_model, weight_names
from helpers import LAYER_KINDS, accuracy_on, bundled_data, layer_case, toy_gradient_errors, trained
from oracles import brute_confusion, brute_scores

SEEDS = (0, 1, 2)
EPOCHS = 15


@pytest.fixture
def verdict(request):
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(number, title, passed, detail):
        line = f"CRITERION {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        else:
            print(line)
        assert passed, line

    return emit


def test_criterion_01_gradient_check(verdict):
    start = time.perf_counter()
    errors = toy_gradient_errors(seed=0)
    elapsed = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    passed = errors[worst] < 1e-4 and elapsed < 30
    verdict(1, "gradient correctness", passed,
            f"worst rel error {errors[worst]:.2e} ({worst}) over {len(errors)} tensors, {elapsed:.1f}s")


def test_criterion_02_layer_oracles(verdict):
    worst = {}
    for kind in LAYER_KINDS:
        devs = []
        for seed in range(100):
            out, ref = layer_case(kind, seed)
            devs.append(np.inf if out.shape != ref.shape else float(np.abs(out - ref).max()))
        worst[kind] = max(devs)
    passed = all(v <= 1e-5 for v in worst.values())
    verdict(2, "oracle equivalence", passed,
            "max abs deviation over 100 cases " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_criterion_03_training_sanity(verdict):
    fm = bundled_data("A")
    model = build_model(default_config(fm.num_features, fm.num_classes, encoder_layers=1), seed=0)
    start = time.perf_counter()
    _, hist = train(model, fm, TrainConfig(epochs=30, seed=0))
    elapsed = time.perf_counter() - start
    reached = [i + 1 for i, v in enumerate(hist.val_binary_accuracy) if v >= 0.85]
    passed = bool(reached) and elapsed < 300
    verdict(3, "training sanity", passed,
            f"{len(fm.y)} rows, val binary accuracy >= 0.85 first at epoch {reached[0] if reached else None}, "
            f"best {max(hist.val_binary_accuracy):.4f}, 30 epochs in {elapsed:.1f}s")


def test_criterion_04_encoder_trend(verdict):
    fm = bundled_data("A")
    acc = {n: [accuracy_on(trained("A", encoders=n, seed=s, epochs=EPOCHS)[0], fm) for s in SEEDS] for n in (1, 5)}
    m1, m5 = np.mean(acc[1]), np.mean(acc[5])
    verdict(4, "encoder trend", m5 >= m1 - 0.01,
            f"farm A test accuracy over seeds {SEEDS}: 1 encoder {m1:.4f} {np.round(acc[1], 4).tolist()}, "
            f"5 encoders {m5:.4f} {np.round(acc[5], 4).tolist()}")


def test_criterion_05_quantization(verdict, tmp_path):
    parts, passed = [], True
    for farm in "AB":
        model = trained(farm, encoders=5, seed=0, epochs=EPOCHS)[0]
        q = quantize_model(model)
        rep = compression_report(model, q, bundled_data(farm), tmp_path / f"{farm}.csfm", tmp_path / f"{farm}.q.csfm")
        state = dict(model.state())
        bound_ok = True
        for name in weight_names(model):
            qt = q.tensors[name]
            err = np.abs(state[name].astype(np.float64) - qt.values.astype(np.float64) * float(qt.scale))
            bound_ok &= bool(np.all(err <= float(qt.scale) / 2))
        drop = rep.accuracy_before - rep.accuracy_after
        passed &= rep.ratio >= 0.70 and drop <= 0.02 and bound_ok
        parts.append(f"farm {farm}: {rep.original_kb:.1f} KB -> {rep.compressed_kb:.1f} KB ratio {rep.ratio:.4f}, "
                     f"accuracy {rep.accuracy_before:.4f} -> {rep.accuracy_after:.4f} (drop {drop:+.4f}), "
                     f"error bound {'exact' if bound_ok else 'VIOLATED'}")
    verdict(5, "quantization", passed, "; ".join(parts))


def test_criterion_06_baseline_ordering(verdict):
    parts, passed = [], True
    for farm in "AB":
        fm = bundled_data(farm)
        x, y = fm.part("test")
        q = quantize_model(trained(farm, encoders=5, seed=0, epochs=EPOCHS)[0])
        base = trained(farm, arch="logistic", epochs=EPOCHS)[0]
        row = {}
        for name, m in (("int8 cnn-transformer", q.dequantize()), ("logistic", base)):
            s = metrics.macro_scores(metrics.confusion(predict(m, x)[1], y, num_classes=fm.num_classes))
            row[name] = (s["accuracy"], s["f1"])
        (qa, qf), (la, lf) = row.values()
        passed &= qa >= la and qf >= lf
        parts.append(f"farm {farm}: int8 acc {qa:.4f} f1 {qf:.4f} vs logistic acc {la:.4f} f1 {lf:.4f}")
    verdict(6, "baseline ordering", passed, "; ".join(parts))


def test_criterion_07_metrics_oracle(verdict):
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(1000):
        k = int(rng.integers(2, 9))
        n = int(rng.integers(1, 200))
        preds, labels = rng.integers(0, k, n), rng.integers(0, k, n)
        cm = metrics.confusion(preds, labels, num_classes=k)
        ref = brute_confusion(preds, labels, k)
        counts_ok = np.array_equal(cm.matrix, ref.matrix) and (cm.tp, cm.tn, cm.fp, cm.fn) == (
            ref.tp, ref.tn, ref.fp, ref.fn)
        got, want = metrics.scores(cm), brute_scores(ref)
        ratios_ok = all(abs(got[key] - want[key]) <= 1e-9 for key in want)
        mismatches += not (counts_ok and ratios_ok)
    verdict(7, "metrics oracle", mismatches == 0, f"{mismatches} mismatches over 1000 randomized sets")


def test_criterion_08_twin_audit(verdict):
    spec = CorruptionSpec("A.soil_moisture", CorruptionMode.CONSTANT_OVERRIDE, 350.0, start_tick=7)
    state = TwinState(corruption=spec)
    for tick in range(12):
        twin_step(state, SensorReading("A.soil_moisture", SensorKind.SOIL_MOISTURE, 45.0, tick))
    rep = audit_sync(state, tolerance=5.0)
    flagged = rep.diverged and rep.first_divergence_tick == 7 and rep.max_deviation["A.soil_moisture"] == 305.0

    synced = TwinState(jitter=0.1, seed=8)
    field = SensorField("A", seed=8)
    false_alarms = 0
    for tick in range(10_000):
        for reading in field.sample(tick):
            twin_step(synced, reading)
        false_alarms += audit_sync(synced, tolerance=1.0, since_tick=tick).diverged
    verdict(8, "twin audit", flagged and false_alarms == 0,
            f"45->350 flagged at tick {rep.first_divergence_tick} (deviation {rep.max_deviation['A.soil_moisture']}), "
            f"{false_alarms} false alarms over 10000 synced ticks (jitter 0.1, tolerance 1.0)")


def test_criterion_09_coordinator_isolation(verdict, detectors):
    gated = run_scenario(default_coordinator_config(*detectors))
    a = gated.report.farms["A"]
    q_window = {t["farm"]: t["window"] for t in gated.report.transitions if t["to"] == "quarantined"}
    leaked = sum(1 for r in gated.bus.consumed["C"]
                 if r.publisher_status is FarmStatus.QUARANTINED
                 or (r.farm in q_window and r.window >= q_window[r.farm]))
    delay = None if a["quarantine_window"] is None else a["quarantine_window"] - a["onset_window"]
    open_run = run_scenario(default_coordinator_config(*detectors, gating=False))
    reached = open_run.report.consumer["corrupted_after_detection"] + open_run.report.consumer["corrupted_undetected"]
    passed = delay is not None and delay <= 3 and leaked == 0 and reached > 0
    verdict(9, "coordinator isolation", passed,
            f"farm A onset window {a['onset_window']}, quarantined {delay} window(s) later; "
            f"{leaked} post-quarantine records reached C; gating off: {reached} corrupted records reached C")


def test_criterion_10_determinism(verdict, tmp_path):
    from test_cli import run_chain

    first = run_chain(tmp_path / "run1", epochs=3)
    second = run_chain(tmp_path / "run2", epochs=3)
    differing = [a.name for a, b in zip(first, second) if a.read_bytes() != b.read_bytes()]
    verdict(10, "determinism", not differing,
            f"{len(first)} primary outputs compared byte for byte, differing: {differing or 'none'}")
