import json
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from emofuse.errors import StructuralDiffError
from emofuse.evaluation import (
    ConfusionMatrix, LabelMapping, ReferenceMetrics, apply_label_mapping, class_shares, compare_reports,
    load_label_mapping, overall_accuracy, precision_recall_f, read_confusion, read_reference,
)

HERE = Path(__file__).parent


def test_accumulate_single():
    m = ConfusionMatrix().accumulate(0, 0)
    assert m.counts[0, 0] == 1 and m.total == 1


def test_accumulate_conservation_and_no_decision():
    pairs = [(0, 0), (1, None), (2, 3), (4, None), (6, 6)]
    m = ConfusionMatrix.from_pairs(pairs)
    assert m.total == len(pairs) - 2
    assert m.no_decision == 2


def test_accumulate_rejects_bad_labels():
    with pytest.raises(ValueError):
        ConfusionMatrix().accumulate(7, 0)
    with pytest.raises(ValueError):
        ConfusionMatrix().accumulate(None, 0)
    with pytest.raises(ValueError):
        ConfusionMatrix(present=[0, 1]).accumulate(3, 0)


def test_fifty_event_fixture_matches_hand_tally():
    rows = [line.split(",") for line in (HERE / "data" / "events50.csv").read_text().split()[1:]]
    assert len(rows) == 50
    tally = Counter((int(t), int(p)) for t, p in rows if p != "-")
    grid = np.zeros((7, 7), dtype=int)
    for (t, p), n in tally.items():
        grid[t, p] = n
    m = ConfusionMatrix()
    for t, p in rows:
        m.accumulate(int(t), p)
    assert np.array_equal(m.counts, grid)
    assert m.no_decision == sum(p == "-" for _, p in rows)


def _tables(data_dir):
    return data_dir / "paper_tables"


def test_table16_anger(data_dir):
    m = precision_recall_f(read_confusion(_tables(data_dir) / "table4.csv"))[0]
    assert (m.precision, m.recall, m.f_score) == pytest.approx((0.651, 0.817, 0.725), abs=0.002)


def test_table20_anger(data_dir):
    m = precision_recall_f(read_confusion(_tables(data_dir) / "table6.csv"))[0]
    assert (m.precision, m.recall, m.f_score) == pytest.approx((0.726, 0.890, 0.800), abs=0.002)


def test_table10_vs_table17(data_dir):
    computed = precision_recall_f(read_confusion(_tables(data_dir) / "table10.csv"))
    ref = read_reference(_tables(data_dir) / "table17.csv")
    assert ref.rows[0][:2] == (0.994, 0.812) and ref.rows[4][:2] == (0.991, 0.909)
    assert compare_reports(computed, ref, 0.002).passed


def test_every_reference_table_reproduced(data_dir):
    index = json.loads((_tables(data_dir) / "index.json").read_text())
    assert len(index) == 8
    for conf, metrics in index.items():
        matrix = read_confusion(_tables(data_dir) / f"{conf}.csv")
        report = compare_reports(precision_recall_f(matrix), read_reference(_tables(data_dir) / f"{metrics}.csv"))
        assert report.passed, report.to_text()


def test_identity_matrix():
    m = ConfusionMatrix(np.eye(7, dtype=int) * 10)
    assert all((c.precision, c.recall, c.f_score) == (1.0, 1.0, 1.0) for c in precision_recall_f(m))
    assert overall_accuracy(m) == 1.0


def test_table4_overall_accuracy(data_dir):
    m = read_confusion(_tables(data_dir) / "table4.csv")
    diag = 378 + 426 + 447 + 328 + 481 + 459 + 465
    assert diag == 2984 and m.total == 3487
    assert overall_accuracy(m) == pytest.approx(2984 / 3487)


def test_uniform_matrix_accuracy():
    assert overall_accuracy(ConfusionMatrix(np.ones((7, 7), dtype=int))) == pytest.approx(1 / 7)


def test_empty_matrix_errors():
    with pytest.raises(ValueError):
        overall_accuracy(ConfusionMatrix())
    with pytest.raises(ValueError):
        precision_recall_f(ConfusionMatrix())


def test_degenerate_class_flagged():
    counts = np.zeros((7, 7), dtype=int)
    counts[0, 0] = 5
    counts[1, 0] = 3
    m = {c.label: c for c in precision_recall_f(ConfusionMatrix(counts))}
    assert m[1].precision == m[1].recall == m[1].f_score == 0.0 and m[1].degenerate
    assert m[2].degenerate and not m[0].degenerate


def test_masked_classes_omitted(data_dir):
    m = read_confusion(_tables(data_dir) / "table10.csv")
    labels = [c.label for c in precision_recall_f(m)]
    assert labels == list(m.present) and len(labels) < 7
    assert set(class_shares(m)) == set(m.present)
    assert sum(class_shares(m).values()) == pytest.approx(1.0)


def test_confusion_csv_round_trip(data_dir):
    m = read_confusion(_tables(data_dir) / "table10.csv")
    assert ConfusionMatrix.from_csv(m.to_csv()) == m


@pytest.mark.parametrize("action,expected", [("Punch", 0), ("Step back", 4)])
def test_ucf_mapping(action, expected):
    assert load_label_mapping("ucfkinect").resolve(action) == (expected, None)


def test_change_weapon_excluded():
    res = apply_label_mapping(load_label_mapping("msrc12"), ["Change weapon", "Flap", "Moonwalk"])
    excluded = dict(res.excluded)
    assert excluded["Change weapon"] == "inconclusive"
    assert excluded["Moonwalk"] == "unknown action"
    assert res.exclusion_csv().splitlines()[0] == "action,reason"


def test_mapping_cutoff():
    m = LabelMapping.from_dict({"entries": {"a": [[1, 0.59]], "b": [[2, 0.6]]}})
    assert m.resolve("a")[0] is None and "cutoff" in m.resolve("a")[1]
    assert m.resolve("b") == (2, None)


def test_all_shipped_mappings_load():
    for name in ("msrc12", "ucfkinect", "msraction"):
        assert load_label_mapping(name).agreement_cutoff == 0.6


def _metrics():
    counts = np.array([[8, 2, 0, 0, 0, 0, 0]] + [[0] * 7] * 6)
    counts[1, 1] = 5
    return precision_recall_f(ConfusionMatrix(counts, present=[0, 1]))


def test_compare_exact_zero_delta():
    ms = _metrics()
    report = compare_reports(ms, {m.label: (m.precision, m.recall, m.f_score) for m in ms})
    assert report.passed and all(r.delta == 0 for r in report.rows)


def test_compare_perturbed_fails_naming_cell():
    ms = _metrics()
    ref = {m.label: (m.precision, m.recall, m.f_score) for m in ms}
    p, r, f = ref[1]
    ref[1] = (p, r + 0.01, f)
    report = compare_reports(ms, ref, 0.002)
    assert not report.passed
    assert [(x.label, x.metric) for x in report.failures] == [(1, "recall")]
    assert "recall" in report.to_text() and "happy" in report.to_text()


def test_compare_structural_mismatch():
    with pytest.raises(StructuralDiffError):
        compare_reports(_metrics(), {0: (1, 1, 1)})


def test_reference_dash_rows_absent():
    ref = ReferenceMetrics.from_csv("label,precision,recall,f_score\n0,0.5,0.5,0.5\n1,-,-,-\n")
    assert set(ref.rows) == {0}


matrices = st.lists(st.integers(0, 40), min_size=49, max_size=49).map(lambda v: np.array(v).reshape(7, 7))


@given(matrices)
def test_metric_bounds(counts):
    assume(counts.sum() > 0)
    for c in precision_recall_f(ConfusionMatrix(counts)):
        for v in (c.precision, c.recall, c.f_score):
            assert 0.0 <= v <= 1.0
        if c.precision and c.recall:
            assert min(c.precision, c.recall) - 1e-12 <= c.f_score <= max(c.precision, c.recall) + 1e-12


@given(matrices, st.permutations(range(7)))
def test_permutation_equivariance(counts, perm):
    assume(counts.sum() > 0)
    perm = np.array(perm)
    moved = np.zeros_like(counts)
    moved[np.ix_(perm, perm)] = counts  # class k becomes perm[k]
    a = {c.label: c for c in precision_recall_f(ConfusionMatrix(counts))}
    b = {c.label: c for c in precision_recall_f(ConfusionMatrix(moved))}
    for k in range(7):
        x, y = a[k], b[int(perm[k])]
        assert (x.precision, x.recall, x.f_score) == pytest.approx((y.precision, y.recall, y.f_score))


@given(matrices, st.integers(2, 9))
def test_scaling_invariance(counts, k):
    assume(counts.sum() > 0)
    a = precision_recall_f(ConfusionMatrix(counts))
    b = precision_recall_f(ConfusionMatrix(counts * k))
    for x, y in zip(a, b):
        assert (x.precision, x.recall, x.f_score) == pytest.approx((y.precision, y.recall, y.f_score))


@given(matrices, matrices)
def test_merge_adds_counts(a, b):
    m = ConfusionMatrix(a, no_decision=2).merge(ConfusionMatrix(b, no_decision=3))
    assert np.array_equal(m.counts, a + b) and m.no_decision == 5
