"""One test per acceptance criterion; each prints a PASS/FAIL line with its runtime."""

import csv
import json
import math
import time
from contextlib import contextmanager

import numpy as np

from emofuse.cli import main
from emofuse.evaluation import (
    apply_label_mapping, compare_reports, load_label_mapping, precision_recall_f, read_confusion, read_reference,
)
from emofuse.features import (
    FeatureDescriptor, WindowFeatures, extract_window_features, feature_dimension, movement_frequency,
    read_features,
)
from emofuse.fusion import MODALITIES, FusionConfig, ResultBuffer, fuse_stream, predict_from_columns, read_votes
from emofuse.pipeline import synthetic_smoke
from emofuse.rules import RuleBundle, calibrate_thresholds, evaluate_bundle, load_bundles
from emofuse.skeleton_io import ModalityLayout, default_layout, make_stream, windows
from emofuse.svm import KernelParams, cross_validate, rbf_gram, train_binary_smo, train_multiclass

from conftest import ACCEPTANCE_LINES


class Check:
    def __init__(self):
        self.failures = []

    def __call__(self, ok, what):
        if not ok:
            self.failures.append(what)


@contextmanager
def criterion(number, title, limit_s):
    check = Check()
    start = time.perf_counter()
    yield check
    elapsed = time.perf_counter() - start
    if elapsed >= limit_s:
        check.failures.append(f"runtime {elapsed:.2f}s >= {limit_s}s")
    status = "PASS" if not check.failures else "FAIL"
    line = f"{status} criterion {number}: {title} ({elapsed:.2f}s, limit {limit_s}s)"
    if check.failures:
        line += " -- " + "; ".join(check.failures)
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert not check.failures, line


def test_1_metric_oracle(data_dir):
    tables = data_dir / "paper_tables"
    with criterion(1, "metric tables reproduced from confusion matrices within 0.002", 1.0) as check:
        index = json.loads((tables / "index.json").read_text())
        check(sorted(index) == sorted(f"table{n}" for n in (4, 6, 10, 11, 12, 13, 14, 15)), "table set")
        cells = 0
        for conf, ref in index.items():
            report = compare_reports(precision_recall_f(read_confusion(tables / f"{conf}.csv")),
                                     read_reference(tables / f"{ref}.csv"), 0.002)
            cells += len(report.rows)
            check(report.passed, f"{conf} vs {ref}: {[(r.label, r.metric) for r in report.failures]}")
        anchors = {
            ("table4", 0): (0.651, 0.817, 0.725),
            ("table6", 0): (0.726, 0.890, 0.800),
        }
        for (conf, label), want in anchors.items():
            m = {c.label: c for c in precision_recall_f(read_confusion(tables / f"{conf}.csv"))}[label]
            got = (m.precision, m.recall, m.f_score)
            check(all(abs(a - b) <= 0.002 for a, b in zip(got, want)), f"{conf} anchor {got}")
        fear = {c.label: c for c in precision_recall_f(read_confusion(tables / "table10.csv"))}[4]
        check(abs(fear.precision - 0.991) <= 0.002 and abs(fear.recall - 0.909) <= 0.002, "table10 fear anchor")
        check(cells > 0, "no cells compared")


def _random_columns(rng, n):
    cols = []
    for _ in range(n):
        cols.append({m: (None if rng.random() < 0.35 else int(rng.integers(0, 7))) for m in MODALITIES})
    return cols


def test_2_fusion_replay(data_dir):
    with criterion(2, "result-buffer replay predicts fear; rule-off equivalence on 1000 buffers", 5.0) as check:
        votes = read_votes(data_dir / "fixtures" / "table3_replay.csv")
        decisions = fuse_stream(votes, FusionConfig(10))
        check(len(decisions) == 1 and decisions[0].prediction == 4, f"prediction {decisions}")
        off = fuse_stream(votes, FusionConfig(10, disabled=frozenset({"rule"})))
        check(len(off) == 1 and off[0].prediction is not None, "rule-off replay yields no decision")

        rng = np.random.default_rng(2024)
        for trial in range(1000):
            size = int(rng.integers(1, 26))
            cols = _random_columns(rng, size)
            blank, full_off = ResultBuffer(FusionConfig(size)), ResultBuffer(FusionConfig(size, disabled=frozenset({"rule"})))
            for c in cols:
                blank.add_column({**c, "rule": None})
                full_off.add_column(c)
            removed = predict_from_columns([{m: v for m, v in c.items() if m != "rule"} for c in cols])
            if not blank.final_prediction() == full_off.final_prediction() == removed:
                check(False, f"equivalence broken on buffer {trial}")
                break


def test_3_rule_calibration(data_dir):
    with criterion(3, "elbow interval [92, 95]; consistency on 100 sets; margin monotonicity", 5.0) as check:
        (bundle,) = load_bundles(data_dir / "bundles" / "hands_on_waist.json")
        exemplars = read_features(data_dir / "fixtures" / "elbow_exemplars.csv")
        interval_only = RuleBundle(bundle.emotion, bundle.name, tuple(r for r in bundle.rules if r.is_interval
                                                                      and r.id == "R1"))
        cal, _ = calibrate_thresholds(interval_only, exemplars, 0.0)
        check((cal.rules[0].min, cal.rules[0].max) == (92.0, 95.0), f"interval {cal.rules[0]}")

        rng = np.random.default_rng(3)
        kinds = ["dist:a:b", "angle:a:b", "speed:a", "joint:a:b:c", "freq_y:a"]
        for trial in range(100):
            n_rules = int(rng.integers(1, 5))
            names = list(rng.choice(kinds, n_rules, replace=False))
            b = RuleBundle.from_dict({"emotion": int(rng.integers(0, 7)), "name": f"b{trial}",
                                      "rules": [{"id": f"X{k}", "measure": n} for k, n in enumerate(names)]})
            ex = [WindowFeatures(tuple(FeatureDescriptor.parse(n) for n in names),
                                 rng.normal(0, 50, n_rules)) for _ in range(int(rng.integers(1, 12)))]
            margins = sorted(rng.uniform(0, 1, 2))
            narrow, _ = calibrate_thresholds(b, ex, margins[0])
            wide, _ = calibrate_thresholds(b, ex, margins[1])
            if not all(evaluate_bundle(narrow, e).fired for e in ex):
                check(False, f"exemplar does not fire its bundle in trial {trial}")
                break
            probes = [WindowFeatures(ex[0].descriptors, rng.normal(0, 60, n_rules)) for _ in range(20)]
            if any(evaluate_bundle(narrow, p).fired and not evaluate_bundle(wide, p).fired for p in probes):
                check(False, f"margin monotonicity broken in trial {trial}")
                break


def _dual_ok(model, c):
    return abs(model.dual_coef.sum()) <= 1e-9 and np.all(np.abs(model.dual_coef) <= c + 1e-12)


def test_4_svm_solver():
    with criterion(4, "Gram PSD, dual constraints, XOR, blob CV >= 0.9, shuffled at chance", 60.0) as check:
        rng = np.random.default_rng(4)
        for _ in range(50):
            x = rng.normal(size=(int(rng.integers(1, 11)), int(rng.integers(1, 6))))
            g = rbf_gram(x, x, float(rng.uniform(0.01, 5)))
            check(np.allclose(g, g.T) and np.linalg.eigvalsh(g).min() >= -1e-8, "Gram not PSD")

        xor_x = np.array([[0, 0], [1, 1], [0, 1], [1, 0]], float)
        xor_y = np.array([0, 0, 1, 1])
        m = train_binary_smo(xor_x, xor_y, KernelParams(c=10, gamma=1.0))
        pred = np.where(m.decision_batch(xor_x) > 0, 1, 0)
        check(np.mean(pred == xor_y) == 1.0, "XOR training accuracy")
        check(_dual_ok(m, 10), "XOR dual constraints")

        centers = [(3 * math.cos(2 * math.pi * k / 3), 3 * math.sin(2 * math.pi * k / 3)) for k in range(3)]
        x = np.concatenate([rng.normal(c, 0.4, (50, 2)) for c in centers])
        y = np.repeat([0, 1, 2], 50)
        model = train_multiclass((x, y), KernelParams())
        check(all(_dual_ok(b, 1.0) for b in model.models.values()), "multiclass dual constraints")
        cv = cross_validate((x, y), KernelParams(), folds=10, seed=4)
        check(cv.mean_accuracy >= 0.9, f"blob CV {cv.mean_accuracy:.3f}")
        shuffled = cross_validate((x, rng.permutation(y)), KernelParams(), folds=10, seed=4)
        check(abs(shuffled.mean_accuracy - 1 / 3) <= 0.15, f"shuffled CV {shuffled.mean_accuracy:.3f}")

        for _ in range(20):
            xr = rng.normal(size=(30, 3))
            yr = rng.integers(0, 2, 30)
            if len(set(yr)) < 2:
                continue
            c = float(rng.uniform(0.1, 10))
            b = train_binary_smo(xr, yr, KernelParams(c=c, gamma=float(rng.uniform(0.1, 2))))
            check(_dual_ok(b, c), "random-set dual constraints")


def test_5_feature_extraction():
    with criterion(5, "dimensions 5/96/192; translation invariance on 100 windows; 1 Hz sinusoid", 5.0) as check:
        for p, dim in ((1, 5), (8, 96), (12, 192)):
            layout = ModalityLayout.from_names("hand", [f"p{k}" for k in range(p)])
            w = windows(make_stream(layout, np.zeros((10, p, 3))), 10)[0]
            check(feature_dimension(p) == dim == len(extract_window_features(w)), f"dimension for P={p}")

        rng = np.random.default_rng(5)
        layout = default_layout("hand")
        extra = ["freq_y:left_hand", "freq_x:right_hand", "joint:left_shoulder:left_elbow:left_wrist"]
        for _ in range(100):
            coords = np.round(rng.normal(0, 0.5, (20, 8, 3)), 3)
            offset = np.round(rng.uniform(-2, 2, 3), 3)
            a = extract_window_features(windows(make_stream(layout, coords), 20)[0], extra=extra)
            b = extract_window_features(windows(make_stream(layout, coords + offset), 20)[0], extra=extra)
            keep = np.array([d.kind != "coordinate" for d in a.descriptors])
            diff = np.abs(a.values[keep] - b.values[keep])
            if not np.all((diff < 1e-6) | (np.abs(diff - 360) < 1e-6)):
                check(False, "translation changed a non-coordinate descriptor")
                break

        t = np.arange(100) / 20.0
        hz = movement_frequency(np.sin(2 * np.pi * t), 20.0)
        check(abs(hz - 1.0) <= 0.1, f"sinusoid frequency {hz:.3f}")


def test_6_buffer_sweep(data_dir, tmp_path):
    with criterion(6, "fuse --sweep on the noisy fixture: five sizes, accuracy(10) >= accuracy(5)", 10.0) as check:
        code = main(["fuse", str(data_dir / "fixtures" / "sweep_votes.csv"), "--sweep", "5,10,15,20,25",
                     "--out", str(tmp_path)])
        check(code == 0, f"exit code {code}")
        rows = [r for r in csv.reader(open(tmp_path / "sweep.csv")) if r and not r[0].startswith("#")][1:]
        acc = {int(s): float(a) for s, a in rows}
        check(sorted(acc) == [5, 10, 15, 20, 25], f"sizes {sorted(acc)}")
        check(acc.get(10, 0) >= acc.get(5, 1), f"accuracy {acc}")
        print("sweep accuracies:", acc)


# every action the annotators could not agree on; grouped rows are split per action
INCONCLUSIVE = {
    "Change weapon", "Put on night vision goggle", "Music based gestures",
    "Balance", "Climb ladder", "Climb up",
    "Turn left", "Turn right", "Vault",
    "Sit down", "Stand up",
}


def test_7_label_mapping():
    with criterion(7, "label mappings: Punch/Crouch/Step back resolved, inconclusive actions excluded", 1.0) as check:
        maps = {n: load_label_mapping(n) for n in ("msrc12", "ucfkinect", "msraction")}
        check(maps["ucfkinect"].resolve("Punch") == (0, None), "Punch")
        check(maps["msrc12"].resolve("Crouch or hide") == (4, None), "Crouch or hide")
        check(maps["ucfkinect"].resolve("Step back") == (4, None), "Step back")
        excluded = set()
        for m in maps.values():
            result = apply_label_mapping(m, list(m.entries))
            excluded |= {a for a, reason in result.excluded if reason == "inconclusive"}
            check(all(reason == "inconclusive" for _, reason in result.excluded),
                  f"{m.name} excludes a non-inconclusive action")
        check(excluded == INCONCLUSIVE, f"exclusions {sorted(excluded ^ INCONCLUSIVE)}")


def test_8_end_to_end_smoke():
    with criterion(8, "synthetic corpus: fused >= rule-only and >= SVM-only on seeds 0-5", 120.0) as check:
        for seed in range(6):
            r = synthetic_smoke(seed, segment_windows=5, test_scale=1.2, test_pose_sigma=0.1)
            print(f"seed {seed}: fused {r.fused:.3f} rule-only {r.rule_only:.3f} svm-only {r.svm_only:.3f}")
            check(r.fused >= r.rule_only and r.fused >= r.svm_only,
                  f"seed {seed}: fused {r.fused:.3f} rule {r.rule_only:.3f} svm {r.svm_only:.3f}")
