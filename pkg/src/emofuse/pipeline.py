"""Glue from window features to modality votes, and the synthetic smoke run."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .features import WindowFeatures, extract_window_features
from .fusion import FusionConfig, Vote, fuse_stream
from .rules import RuleBundle, calibrate_thresholds, required_descriptors, rule_vote
from .skeleton_io import ColumnMapping, default_layout, make_stream, windows
from .svm import KernelParams, MulticlassModel, train_multiclass
from .synth import BUNDLE_FOR_EMOTION, SYNTH_EMOTIONS, synthetic_bundles, synthetic_stream


def feature_matrix(rows: Sequence[WindowFeatures], names: Sequence[str] | None = None) -> np.ndarray:
    """Stack feature rows, optionally keeping only ``names`` in that order."""
    if names is None:
        return np.array([r.values for r in rows])
    return np.array([[r[n] for n in names] for r in rows])


def model_votes(model: MulticlassModel, rows: Sequence[WindowFeatures], names: Sequence[str]) -> list[int]:
    return [int(v) for v in model.predict_batch(feature_matrix(rows, names))]


def bundle_votes(bundles: Sequence[RuleBundle], rows: Sequence[WindowFeatures]) -> list[int | None]:
    return [rule_vote(bundles, r) for r in rows]


def columns_to_votes(
    columns: Sequence[dict[str, int | None]],
    truths: Sequence[int | None] | None = None,
    start_tick: int = 1,
) -> list[Vote]:
    """One tick per column, one vote (possibly ``None``) per listed modality."""
    out = []
    for k, col in enumerate(columns):
        truth = truths[k] if truths is not None else None
        for m, label in col.items():
            out.append(Vote(m, label, start_tick + k, truth))
    return out


def segment_accuracy(votes: Sequence[Vote], capacity: int, disabled=frozenset()) -> float:
    modalities = tuple(dict.fromkeys(v.modality for v in votes))
    config = FusionConfig(capacity, modalities, frozenset(disabled))
    decisions = fuse_stream(votes, config)
    if not decisions:
        return 0.0
    return sum(d.prediction is not None and d.prediction == d.truth for d in decisions) / len(decisions)


def hand_mapping() -> ColumnMapping:
    """Pick the 8 arm joints out of a canonical body-layout CSV."""
    body = default_layout("body")
    pts = {n: (2 + 3 * body.index_of(n), 3 + 3 * body.index_of(n), 4 + 3 * body.index_of(n))
           for n in default_layout("hand").names}
    return ColumnMapping(points=pts, timestamp_column=1, frame_column=0, skip_rows=1)


@dataclass
class SmokeResult:
    fused: float
    rule_only: float
    svm_only: float
    window_rule: float
    window_hand: float
    window_body: float
    rule_coverage: float


def synthetic_smoke(
    seed: int = 0,
    train_per_class: int = 15,
    test_segments_per_class: int = 3,
    segment_windows: int = 10,
    pose_sigma: float = 0.05,
    jitter: float = 0.015,
    margin: float = 0.1,
    test_scale: float = 1.0,
    test_pose_sigma: float | None = None,
) -> SmokeResult:
    """Generate, extract, calibrate, train and fuse on a 3-emotion corpus.

    Each test segment is ``segment_windows`` consecutive one-window instances
    of one emotion and maps to one fused decision.  ``test_scale`` and
    ``test_pose_sigma`` let the test actors differ from the training actors.
    """
    rng = np.random.default_rng(seed)
    bundles = synthetic_bundles()
    extra = required_descriptors(bundles)
    hand_layout = default_layout("hand")

    def featurize(emotion: int, scale: float = 1.0, sigma: float = pose_sigma):
        stream = synthetic_stream(emotion, rng, pose_sigma=sigma, jitter=jitter, body_scale=scale)
        body_rows = [extract_window_features(w, extra=extra, label=emotion) for w in windows(stream)]
        hand_stream = make_stream(hand_layout, stream.coords[:, [stream.layout.index_of(n) for n in hand_layout.names]],
                                  stream.frame_rate_hz)
        hand_rows = [extract_window_features(w, label=emotion) for w in windows(hand_stream)]
        return body_rows, hand_rows

    train_body, train_hand = [], []
    for emotion in SYNTH_EMOTIONS:
        for _ in range(train_per_class):
            b, h = featurize(emotion)
            train_body += [replace(r, tag=BUNDLE_FOR_EMOTION[emotion]) for r in b]
            train_hand += h

    calibrated = []
    for b in bundles:
        cb, _ = calibrate_thresholds(b, train_body, margin)
        calibrated.append(cb)
    body_names = [d.name for d in train_body[0].descriptors[: len(train_body[0]) - len(extra)]]
    hand_names = train_hand[0].names
    y = np.array([r.label for r in train_body])
    body_model = train_multiclass((feature_matrix(train_body, body_names), y), KernelParams())
    hand_model = train_multiclass((feature_matrix(train_hand, hand_names), y), KernelParams())

    columns, truths = [], []
    for emotion in SYNTH_EMOTIONS:
        for _ in range(test_segments_per_class):
            for _ in range(segment_windows):
                b, h = featurize(emotion, test_scale, test_pose_sigma or pose_sigma)
                columns.append({
                    "body": model_votes(body_model, b, body_names)[0],
                    "hand": model_votes(hand_model, h, hand_names)[0],
                    "rule": bundle_votes(calibrated, b)[0],
                })
                truths.append(emotion)
    votes = columns_to_votes(columns, truths)

    def window_acc(m):
        return float(np.mean([c[m] == t for c, t in zip(columns, truths)]))

    return SmokeResult(
        fused=segment_accuracy(votes, segment_windows),
        rule_only=segment_accuracy(votes, segment_windows, {"body", "hand"}),
        svm_only=segment_accuracy(votes, segment_windows, {"rule"}),
        window_rule=window_acc("rule"),
        window_hand=window_acc("hand"),
        window_body=window_acc("body"),
        rule_coverage=float(np.mean([c["rule"] is not None for c in columns])),
    )
