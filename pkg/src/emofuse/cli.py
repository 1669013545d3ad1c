"""``emofuse`` command line: extract, calibrate, train, fuse, eval.

Exit codes: 0 success, 1 acceptance diff failed, 2 input parse failure,
3 validation or configuration failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    CalibrationError, ConfigError, EmofuseError, ParseError, StructuralDiffError, ValidationError,
)
from .evaluation import (
    ConfusionMatrix, apply_label_mapping, compare_reports, load_label_mapping, metrics_to_csv,
    overall_accuracy, precision_recall_f, read_confusion, read_reference,
)
from .features import extract_window_features, features_to_csv, read_features
from .fusion import (
    DEFAULT_SWEEP, MODALITIES, FusionConfig, decisions_to_csv, fuse_stream, read_votes,
    sweep_buffer_size, sweep_to_csv,
)
from .labels import emotion_name, format_label, label_code
from .rules import calibrate_thresholds, dump_bundles, load_bundles, report_to_csv, required_descriptors
from .skeleton_io import MODALITIES as LAYOUTS, adapt_corpus, default_layout, load_mapping, parse_stream, windows
from .svm import KernelParams, cross_validate, split_train_test, train_multiclass

log = logging.getLogger("emofuse")

EXIT_OK, EXIT_DIFF, EXIT_PARSE, EXIT_INVALID = 0, 1, 2, 3
PAPER_TABLES = Path(__file__).parent / "data" / "paper_tables"


class Run:
    """Resolved options for one invocation plus the output header line."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        settings = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config", "out")}
        digest = hashlib.sha256(json.dumps(settings, sort_keys=True, default=str).encode()).hexdigest()
        self.header = f"emofuse {__version__} {args.command} seed={args.seed} config={digest[:12]}"

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text, encoding="utf-8")
        log.info("wrote %s", path)
        return path


def _input_files(paths: list[str]) -> list[Path]:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files += sorted(f for f in p.iterdir() if f.is_file() and not f.name.startswith("."))
        elif p.is_file():
            files.append(p)
        else:
            raise ParseError(f"no such input {p}")
    if not files:
        raise ParseError("no input files found")
    return files


def cmd_extract(run: Run) -> int:
    a = run.args
    layout = default_layout(a.layout)
    mapping = load_mapping(a.mapping) if a.mapping else None
    extra = required_descriptors(load_bundles(a.bundles)) if a.bundles else []
    rows = []
    for path in _input_files(a.inputs):
        text = path.read_text(encoding="utf-8")
        try:
            if mapping is not None:
                stream = adapt_corpus(text, mapping, layout)
            else:
                stream = parse_stream(text, layout, a.frame_rate)
        except ParseError as exc:
            raise ParseError(f"{path}: {exc}") from None
        wins = windows(stream, a.window, a.stride)
        if not wins:
            log.warning("%s: %d frames, shorter than one %d-frame window", path, len(stream), a.window)
        for w in wins:
            try:
                feats = extract_window_features(w, extra=extra, label=a.label)
            except KeyError as exc:
                raise ConfigError(str(exc)) from None
            rows.append(replace(feats, tag=a.tag) if a.tag else feats)
    if not rows:
        raise ValidationError("no complete windows in the input")
    run.write("features.csv", features_to_csv(rows, run.header))
    print(f"{len(rows)} windows x {len(rows[0])} features -> {run.out / 'features.csv'}")
    return EXIT_OK


def cmd_calibrate(run: Run) -> int:
    a = run.args
    bundles = load_bundles(a.bundles)
    exemplars = read_features(a.exemplars)
    calibrated, report = [], []
    for b in bundles:
        cb, rows = calibrate_thresholds(b, exemplars, a.margin, a.floor)
        calibrated.append(cb)
        report += rows
    dump_bundles(calibrated, run.out / "calibrated_bundles.json")
    run.write("calibration_report.csv", report_to_csv(report, run.header))
    for r in report:
        print(f"{r.rule_id}: [{r.min:g}, {r.max:g}] from {r.exemplar_count} exemplars")
    return EXIT_OK


def cmd_train(run: Run) -> int:
    a = run.args
    rows = read_features(a.features)
    if any(r.label is None for r in rows):
        raise ValidationError("training features need a label on every row")
    x = np.array([r.values for r in rows])
    y = np.array([r.label for r in rows])
    params = KernelParams(a.c, a.gamma).resolved(x.shape[1])
    train_idx, test_idx = split_train_test((x, y), a.split, a.seed) if a.split < 1 else (np.arange(len(y)), [])
    if a.folds > len(train_idx):
        raise ConfigError(f"{a.folds} folds requested for {len(train_idx)} training samples")
    cv = cross_validate((x[train_idx], y[train_idx]), params, a.folds, a.seed)
    model = train_multiclass((x[train_idx], y[train_idx]), params)
    meta = {"modality": a.modality, "seed": a.seed, "descriptors": rows[0].names, "header": run.header}
    model.save(run.out / f"{a.modality}_model.json", meta)

    buf = io.StringIO()
    buf.write(f"# {run.header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fold", "accuracy"])
    for k, acc in enumerate(cv.fold_accuracies):
        w.writerow([k, f"{acc:.6f}"])
    w.writerow(["mean", f"{cv.mean_accuracy:.6f}"])
    if len(test_idx):
        pred = model.predict_batch(x[test_idx])
        w.writerow(["holdout", f"{float(np.mean(np.array(pred) == y[test_idx])):.6f}"])
    run.write(f"{a.modality}_cv.csv", buf.getvalue())
    run.write(f"{a.modality}_cv_confusion.csv", cv.matrix.to_csv())
    print(f"{a.modality}: C={params.c:g} gamma={params.gamma:g} "
          f"{a.folds}-fold mean accuracy {cv.mean_accuracy:.3f}")
    return EXIT_OK


def cmd_fuse(run: Run) -> int:
    a = run.args
    votes = read_votes(a.votes)
    disabled = frozenset(m.strip() for d in a.disable for m in d.split(",") if m.strip())
    config = FusionConfig(a.capacity, MODALITIES, disabled, a.timeout, a.sliding)
    if a.sweep:
        sizes = [int(s) for s in a.sweep.split(",") if s.strip()]
        result = sweep_buffer_size(votes, sizes, config)
        run.write("sweep.csv", sweep_to_csv(result, run.header))
        for size, acc in result.items():
            print(f"buffer {size:>3}: accuracy {acc:.3f}")
        return EXIT_OK
    decisions = fuse_stream(votes, config)
    run.write("predictions.csv", decisions_to_csv(decisions, run.header))
    if not decisions:
        print("no full buffer in the vote stream")
    for d in decisions:
        print(f"buffer {d.buffer_index}: {format_label(d.prediction)} ({emotion_name(d.prediction)})")
    return EXIT_OK


def _resolve_table(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    fallback = PAPER_TABLES / p.name
    if not fallback.suffix:
        fallback = fallback.with_suffix(".csv")
    if fallback.exists():
        return fallback
    raise ParseError(f"no such table {name}")


def _reference_for(table: Path) -> Path | None:
    index = json.loads((PAPER_TABLES / "index.json").read_text())
    ref = index.get(table.stem)
    return PAPER_TABLES / f"{ref}.csv" if ref else None


def _read_actions(path: str) -> list[str]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    rows = list(csv.reader(lines))
    if rows and "action" in [c.strip() for c in rows[0]]:
        k = [c.strip() for c in rows[0]].index("action")
        return [r[k].strip() for r in rows[1:]]
    return [ln.strip() for ln in lines]


def cmd_eval(run: Run) -> int:
    a = run.args
    status = EXIT_OK
    if a.mapping:
        if not a.annotations:
            raise ConfigError("--mapping needs --annotations")
        mapping = load_label_mapping(a.mapping)
        result = apply_label_mapping(mapping, _read_actions(a.annotations))
        buf = io.StringIO()
        buf.write(f"# {run.header}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["action", "label", "emotion"])
        for action, label in result.labeled:
            w.writerow([action, label, emotion_name(label)])
        run.write("labeled.csv", buf.getvalue())
        run.write("exclusions.csv", result.exclusion_csv())
        for action, label in result.labeled:
            print(f"{action} -> {label} ({emotion_name(label)})")
        for action, reason in result.excluded:
            print(f"{action} excluded: {reason}")
    if a.table is None and a.predictions is None:
        if not a.mapping:
            raise ConfigError("nothing to evaluate: give a table, --predictions or --mapping")
        return status

    if a.predictions:
        pairs = _read_pairs(a.predictions)
        matrix = ConfusionMatrix.from_pairs(pairs, present=sorted({t for t, _ in pairs}))
        reference = Path(a.reference) if a.reference else None
    else:
        table = _resolve_table(a.table)
        matrix = read_confusion(table)
        reference = _resolve_table(a.reference) if a.reference else _reference_for(table)
    metrics = precision_recall_f(matrix)
    run.write("metrics.csv", metrics_to_csv(metrics, run.header))
    print(f"overall accuracy {overall_accuracy(matrix):.4f} over {matrix.total} samples"
          + (f" ({matrix.no_decision} no-decision)" if matrix.no_decision else ""))
    for m in metrics:
        print(f"{emotion_name(m.label):>8}: P={m.precision:.3f} R={m.recall:.3f} F={m.f_score:.3f}")
    if reference is not None:
        report = compare_reports(metrics, read_reference(reference), a.tolerance)
        run.write("diff.csv", report.to_csv())
        run.write("diff.txt", report.to_text())
        print(report.to_text(), end="")
        if not report.passed:
            status = EXIT_DIFF
    return status


def _read_pairs(path: str):
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines()
             if ln.strip() and not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows or [c.strip() for c in rows[0][:2]] != ["true", "predicted"]:
        raise ParseError("predictions file must start with a true,predicted header", 1)
    out = []
    for line, row in enumerate(rows[1:], start=2):
        try:
            t, p = label_code(row[0]), label_code(row[1])
        except (ValueError, IndexError) as exc:
            raise ParseError(str(exc), line) from None
        if t is None:
            raise ParseError("true label cannot be unavailable", line)
        out.append((t, p))
    return out


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="JSON file of option defaults; flags override it")
    shared.add_argument("--seed", type=int, default=0)
    shared.add_argument("--out", default="out", help="output directory")
    shared.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="emofuse", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"emofuse {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("extract", parents=[shared], help="window features from skeleton streams")
    e.add_argument("inputs", nargs="+", help="stream files or directories")
    e.add_argument("--layout", choices=LAYOUTS, default="hand")
    e.add_argument("--mapping", help="column mapping JSON for external corpora")
    e.add_argument("--window", type=int, default=100, help="frames per window")
    e.add_argument("--stride", type=int, default=None, help="frames between window starts (default: window)")
    e.add_argument("--frame-rate", type=float, default=None)
    e.add_argument("--label", type=int, default=None, help="emotion label for every window")
    e.add_argument("--tag", default=None, help="bundle name to tag every window with")
    e.add_argument("--bundles", help="append the descriptors these bundles need")
    e.set_defaults(func=cmd_extract)

    c = sub.add_parser("calibrate", parents=[shared], help="calibrate rule thresholds on exemplars")
    c.add_argument("--bundles", required=True)
    c.add_argument("--exemplars", required=True, help="feature CSV of exemplar windows")
    c.add_argument("--margin", type=float, default=0.0)
    c.add_argument("--floor", type=float, default=0.5)
    c.set_defaults(func=cmd_calibrate)

    t = sub.add_parser("train", parents=[shared], help="train a per-modality SVM")
    t.add_argument("--features", required=True, help="labeled feature CSV")
    t.add_argument("--modality", default="model")
    t.add_argument("--c", type=float, default=1.0)
    t.add_argument("--gamma", type=float, default=None, help="default 1/dimension")
    t.add_argument("--folds", type=int, default=10)
    t.add_argument("--split", type=float, default=0.8, help="training fraction; 1 keeps all")
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("fuse", parents=[shared], help="majority-vote fusion over a vote replay")
    f.add_argument("votes", help="CSV tick,modality,label[,truth]")
    f.add_argument("--capacity", type=int, default=10, help="buffer instances")
    f.add_argument("--disable", action="append", default=[], help="modality to switch off")
    f.add_argument("--timeout", type=float, default=None, help="close a column after this many ticks")
    f.add_argument("--sliding", action="store_true")
    f.add_argument("--sweep", nargs="?", const=",".join(map(str, DEFAULT_SWEEP)),
                   help="comma-separated buffer sizes; bare --sweep uses 5,10,15,20,25")
    f.set_defaults(func=cmd_fuse)

    v = sub.add_parser("eval", parents=[shared], help="metrics and diff against reference tables")
    v.add_argument("table", nargs="?", help="confusion table CSV (e.g. paper_tables/table4.csv)")
    v.add_argument("--predictions", help="CSV true,predicted instead of a table")
    v.add_argument("--reference", help="reference metric table; inferred for the bundled tables")
    v.add_argument("--tolerance", type=float, default=0.002)
    v.add_argument("--mapping", help="label mapping name or JSON path")
    v.add_argument("--annotations", help="action annotations (CSV with an action column)")
    v.set_defaults(func=cmd_eval)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    section = {**{k: v for k, v in doc.items() if not isinstance(v, dict)}, **doc.get(args.command, {})}
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in section.items()})
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return args.func(Run(args))
    except ParseError as exc:
        print(f"emofuse: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ValidationError, ConfigError, CalibrationError, StructuralDiffError) as exc:
        print(f"emofuse: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except EmofuseError as exc:
        print(f"emofuse: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
