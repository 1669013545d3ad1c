"""Confusion matrices, per-class metrics, label mappings and table diffs."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, ParseError, StructuralDiffError
from .labels import EMOTIONS, N_LABELS, UNAVAILABLE, label_code


class ConfusionMatrix:
    """7x7 counts, rows = true label, columns = predicted label.

    ``present`` lists the classes that exist in the data set; the rows of the
    others must stay zero and they are left out of the metrics.  Unavailable
    predictions go to ``no_decision`` instead of a cell.
    """

    def __init__(self, counts=None, present: Iterable[int] | None = None, no_decision: int = 0):
        if counts is None:
            counts = np.zeros((N_LABELS, N_LABELS), dtype=np.int64)
        counts = np.array(counts, dtype=np.int64)
        if counts.shape != (N_LABELS, N_LABELS):
            raise ValueError(f"confusion matrix must be {N_LABELS}x{N_LABELS}")
        if np.any(counts < 0):
            raise ValueError("confusion counts must be non-negative")
        self.counts = counts
        self.present = tuple(sorted(set(range(N_LABELS) if present is None else present)))
        masked = [c for c in range(N_LABELS) if c not in self.present]
        if np.any(counts[masked] != 0):
            raise ValueError("masked rows must be all zero")
        self.no_decision = int(no_decision)

    def accumulate(self, true_label: int, predicted: int | None) -> "ConfusionMatrix":
        t = label_code(true_label)
        if t is None:
            raise ValueError("true label cannot be unavailable")
        if t not in self.present:
            raise ValueError(f"true label {t} is masked in this matrix")
        p = label_code(predicted)
        if p is None:
            self.no_decision += 1
        else:
            self.counts[t, p] += 1
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        present = sorted(set(self.present) | set(other.present))
        return ConfusionMatrix(self.counts + other.counts, present, self.no_decision + other.no_decision)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int | None]], present=None) -> "ConfusionMatrix":
        m = cls(present=present)
        for t, p in pairs:
            m.accumulate(t, p)
        return m

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ConfusionMatrix)
            and np.array_equal(self.counts, other.counts)
            and self.present == other.present
            and self.no_decision == other.no_decision
        )

    def __repr__(self) -> str:
        return f"ConfusionMatrix(total={self.total}, present={self.present}, no_decision={self.no_decision})"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true"] + [str(c) for c in range(N_LABELS)])
        for r in range(N_LABELS):
            if r in self.present:
                w.writerow([r] + self.counts[r].tolist())
            else:
                w.writerow([r] + [UNAVAILABLE] * N_LABELS)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ConfusionMatrix":
        """Inverse of :meth:`to_csv`; a row of ``-`` marks an absent class."""
        rows = _data_rows(text)
        if not rows or rows[0][1][0].strip() != "true":
            raise ParseError("confusion table must start with a 'true,0..6' header",
                             rows[0][0] if rows else 1)
        counts = np.zeros((N_LABELS, N_LABELS), dtype=np.int64)
        present, seen = [], set()
        for line, row in rows[1:]:
            if len(row) != N_LABELS + 1:
                raise ParseError(f"expected {N_LABELS + 1} columns, found {len(row)}", line)
            try:
                r = int(row[0])
            except ValueError:
                raise ParseError(f"bad row label {row[0]!r}", line) from None
            if not 0 <= r < N_LABELS or r in seen:
                raise ParseError(f"row label {r} out of range or repeated", line)
            seen.add(r)
            cells = [c.strip() for c in row[1:]]
            if all(c == UNAVAILABLE for c in cells):
                continue
            try:
                counts[r] = [int(c) for c in cells]
            except ValueError:
                raise ParseError("non-integer count", line) from None
            present.append(r)
        return cls(counts, present)


def _data_rows(text: str) -> list[tuple[int, list[str]]]:
    out = []
    for line, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or row[0].startswith("#"):
            continue
        out.append((line, row))
    return out


def read_confusion(path: str | Path) -> ConfusionMatrix:
    return ConfusionMatrix.from_csv(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class ClassMetrics:
    label: int
    precision: float
    recall: float
    f_score: float
    support: int
    degenerate: bool = False


def precision_recall_f(matrix: ConfusionMatrix) -> list[ClassMetrics]:
    """Per-class precision, recall and F1 for the present classes.

    A zero denominator gives 0 and sets ``degenerate``.
    """
    if matrix.total == 0:
        raise ValueError("empty confusion matrix")
    c = matrix.counts
    col, row = c.sum(axis=0), c.sum(axis=1)
    out = []
    for k in matrix.present:
        tp = c[k, k]
        degenerate = col[k] == 0 or row[k] == 0
        p = tp / col[k] if col[k] else 0.0
        r = tp / row[k] if row[k] else 0.0
        if p + r == 0:
            f, degenerate = 0.0, True
        else:
            f = 2 * p * r / (p + r)
        out.append(ClassMetrics(k, float(p), float(r), float(f), int(row[k]), bool(degenerate)))
    return out


def overall_accuracy(matrix: ConfusionMatrix) -> float:
    if matrix.total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(matrix.counts) / matrix.total)


def class_shares(matrix: ConfusionMatrix) -> dict[int, float]:
    """Each present class's share of the correctly classified samples."""
    diag = np.diag(matrix.counts)
    total = diag.sum()
    return {k: float(diag[k] / total) if total else 0.0 for k in matrix.present}


def metrics_to_csv(metrics: Sequence[ClassMetrics], header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "emotion", "precision", "recall", "f_score", "support", "degenerate"])
    for m in metrics:
        w.writerow([m.label, EMOTIONS[m.label], f"{m.precision:.6f}", f"{m.recall:.6f}",
                    f"{m.f_score:.6f}", m.support, int(m.degenerate)])
    return buf.getvalue()


# -- reference metric tables ------------------------------------------------

@dataclass(frozen=True)
class ReferenceMetrics:
    """Reference per-class values; only present classes are listed."""

    rows: Mapping[int, tuple[float, float, float]]

    @classmethod
    def from_csv(cls, text: str) -> "ReferenceMetrics":
        rows = _data_rows(text)
        if not rows or rows[0][1][:4] != ["label", "precision", "recall", "f_score"]:
            raise ParseError("metric table must start with 'label,precision,recall,f_score'", 1)
        out = {}
        for line, row in rows[1:]:
            cells = [c.strip() for c in row]
            if all(c == UNAVAILABLE for c in cells[1:4]):
                continue
            try:
                out[int(cells[0])] = tuple(float(x) for x in cells[1:4])
            except (ValueError, IndexError):
                raise ParseError("bad metric row", line) from None
        return cls(out)


def read_reference(path: str | Path) -> ReferenceMetrics:
    return ReferenceMetrics.from_csv(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class DiffRow:
    label: int
    metric: str
    computed: float
    reference: float

    @property
    def delta(self) -> float:
        return abs(self.computed - self.reference)


@dataclass
class DiffReport:
    rows: list[DiffRow]
    tolerance: float

    @property
    def failures(self) -> list[DiffRow]:
        return [r for r in self.rows if r.delta > self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "metric", "computed", "reference", "delta", "pass"])
        for r in self.rows:
            w.writerow([r.label, r.metric, f"{r.computed:.6f}", f"{r.reference:.6f}",
                        f"{r.delta:.6f}", int(r.delta <= self.tolerance)])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'PASS' if self.passed else 'FAIL'}: {len(self.rows)} cells compared, "
                 f"tolerance {self.tolerance}"]
        for r in self.failures:
            lines.append(f"  {EMOTIONS[r.label]} ({r.label}) {r.metric}: computed "
                         f"{r.computed:.4f} vs reference {r.reference:.4f} (delta {r.delta:.4f})")
        return "\n".join(lines) + "\n"


def compare_reports(
    computed: Sequence[ClassMetrics],
    reference: ReferenceMetrics | Mapping[int, tuple[float, float, float]],
    tolerance: float = 0.002,
) -> DiffReport:
    ref = reference.rows if isinstance(reference, ReferenceMetrics) else reference
    mine = {m.label: m for m in computed}
    if set(mine) != set(ref):
        raise StructuralDiffError(
            f"class sets differ: computed {sorted(mine)} vs reference {sorted(ref)}"
        )
    rows = []
    for k in sorted(ref):
        m = mine[k]
        for name, got, want in zip(("precision", "recall", "f_score"),
                                   (m.precision, m.recall, m.f_score), ref[k]):
            rows.append(DiffRow(k, name, got, want))
    return DiffReport(rows, tolerance)


# -- action -> emotion mappings ---------------------------------------------

INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class LabelMapping:
    """Action name -> candidate (emotion, agreement) pairs.

    An empty candidate list marks an inconclusive action.
    """

    name: str
    entries: Mapping[str, tuple[tuple[int, float], ...]]
    agreement_cutoff: float = 0.6

    @classmethod
    def from_dict(cls, doc: Mapping) -> "LabelMapping":
        entries = {}
        for action, value in doc["entries"].items():
            if isinstance(value, str) and value.lower() == INCONCLUSIVE:
                entries[action] = ()
                continue
            try:
                entries[action] = tuple((label_code(e), float(a)) for e, a in value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"mapping entry {action!r}: {exc}") from None
        return cls(doc.get("name", ""), entries, float(doc.get("agreement_cutoff", 0.6)))

    def resolve(self, action: str) -> tuple[int | None, str | None]:
        """(emotion, None) for a retained action, (None, reason) otherwise."""
        key = _lookup(self.entries, action)
        if key is None:
            return None, "unknown action"
        cands = self.entries[key]
        if not cands:
            return None, INCONCLUSIVE
        emotion, agreement = max(cands, key=lambda c: (c[1], -c[0]))
        if agreement < self.agreement_cutoff:
            return None, f"agreement {agreement:.2f} below cutoff {self.agreement_cutoff:.2f}"
        return emotion, None


def _lookup(entries: Mapping[str, object], action: str) -> str | None:
    if action in entries:
        return action
    folded = action.strip().lower()
    for k in entries:
        if k.lower() == folded:
            return k
    return None


def load_label_mapping(name_or_path: str | Path) -> LabelMapping:
    """Load a mapping JSON by path or by shipped name (msrc12, ucfkinect, msraction)."""
    path = Path(name_or_path)
    if not path.exists():
        path = Path(__file__).parent / "data" / "mappings" / f"{name_or_path}.json"
        if not path.exists():
            raise ConfigError(f"no label mapping {name_or_path!r}")
    return LabelMapping.from_dict(json.loads(path.read_text(encoding="utf-8")))


@dataclass
class MappingResult:
    labeled: list[tuple[str, int]] = field(default_factory=list)
    excluded: list[tuple[str, str]] = field(default_factory=list)

    def exclusion_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["action", "reason"])
        w.writerows(self.excluded)
        return buf.getvalue()


def apply_label_mapping(mapping: LabelMapping, actions: Iterable[str]) -> MappingResult:
    """Label each annotated action; dropped ones go to the exclusion report."""
    result = MappingResult()
    for action in actions:
        emotion, reason = mapping.resolve(action)
        if emotion is None:
            result.excluded.append((action, reason))
        else:
            result.labeled.append((action, emotion))
    return result
