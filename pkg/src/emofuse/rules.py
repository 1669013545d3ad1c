"""Threshold rules, bundle calibration and the rule vote.

A bundle is a named pose or action (``hands_on_waist``) tied to one emotion
and made of threshold rules over window descriptors.  Interval rules get
their ``[min, max]`` from the extremes seen over annotated exemplar windows;
comparison rules (``left_wrist_y > left_elbow_y``) need no calibration.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .errors import CalibrationError, ConfigError, MissingDescriptorError
from .features import FeatureDescriptor, WindowFeatures
from .labels import N_LABELS, label_code

COMPARATORS = ("within_interval", "greater_than", "less_than")
DEFAULT_FLOOR = 0.5

# Descriptor vocabulary for the stock hand/body layouts.  Rules R14-R24 name
# head and face points; those layouts use synthetic point names, so bundles
# that need them spell the descriptors out directly.
RULE_VOCABULARY = {
    "R1": ("Angle of left elbow", "joint:left_shoulder:left_elbow:left_wrist"),
    "R2": ("Angle of right elbow", "joint:right_shoulder:right_elbow:right_wrist"),
    "R3": ("Angle between left shoulder and arm", "joint:spine:left_shoulder:left_elbow"),
    "R4": ("Angle between right shoulder and arm", "joint:spine:right_shoulder:right_elbow"),
    "R5": ("Angle of spine", "angle:hip_center:spine"),
    "R6": ("Angle of head", "angle:head_00:head_06"),
    "R7": ("Y co-ordinate of wrist > Y co-ordinate of elbow", ("left_wrist_y", "left_elbow_y")),
    "R8": ("Y co-ordinate of elbow > Y co-ordinate of shoulder", ("left_elbow_y", "left_shoulder_y")),
    "R9": ("X co-ordinate of wrist > X co-ordinate of elbow", ("left_wrist_x", "left_elbow_x")),
    "R10": ("X co-ordinate of elbow > X co-ordinate of shoulder", ("left_elbow_x", "left_shoulder_x")),
    "R11": ("Z co-ordinate of wrist > Z co-ordinate of elbow", ("left_wrist_z", "left_elbow_z")),
    "R12": ("Z co-ordinate of elbow > Z co-ordinate of shoulder", ("left_elbow_z", "left_shoulder_z")),
    "R13": ("X co-ordinate of wrist < X co-ordinate of shoulder", ("left_wrist_x", "left_shoulder_x")),
    "R14": ("Frequency of head nod", "freq_y:head_00"),
    "R15": ("Frequency of waving hand", "freq_x:right_hand"),
    "R16": ("Frequency of forward movement", "freq_z:spine"),
    "R17": ("Frequency of backward movement", "freq_z:hip_center"),
    "R18": ("Frequency of sideways movement", "freq_x:spine"),
    "R19": ("Frequency of shaking head sideways", "freq_x:head_00"),
    "R20": ("Distance between eyebrow and eyes", "dist:face_00:face_10"),
    "R21": ("Distance between upper and lower lip", "dist:face_40:face_50"),
    "R22": ("Distance between nose tip and upper lip", "dist:face_30:face_40"),
    "R23": ("Distance between corners of lip", "dist:face_44:face_48"),
    "R24": ("Distance between upper and lower eyelid", "dist:face_12:face_16"),
}


@dataclass(frozen=True)
class RuleDescriptor:
    """One threshold test.

    ``measure`` holds one descriptor for interval rules and two (left, right)
    for comparison rules.  ``min``/``max`` stay None until calibrated.
    """

    id: str
    measure: tuple[FeatureDescriptor, ...]
    comparator: str = "within_interval"
    min: float | None = None
    max: float | None = None

    def __post_init__(self):
        if self.comparator not in COMPARATORS:
            raise ConfigError(f"rule {self.id}: unknown comparator {self.comparator!r}")
        want = 1 if self.comparator == "within_interval" else 2
        if len(self.measure) != want:
            raise ConfigError(f"rule {self.id}: {self.comparator} needs {want} descriptor(s)")
        if self.comparator != "within_interval" and (self.min is not None or self.max is not None):
            raise ConfigError(f"rule {self.id}: comparison rules carry no interval")
        if (self.min is None) != (self.max is None):
            raise ConfigError(f"rule {self.id}: set both min and max or neither")
        if self.min is not None and self.min > self.max:
            raise ConfigError(f"rule {self.id}: min {self.min} > max {self.max}")

    @property
    def is_interval(self) -> bool:
        return self.comparator == "within_interval"

    @property
    def calibrated(self) -> bool:
        return not self.is_interval or self.min is not None

    def to_dict(self) -> dict:
        doc = {"id": self.id, "comparator": self.comparator}
        if self.is_interval:
            doc["measure"] = self.measure[0].name
            doc["min"], doc["max"] = self.min, self.max
        else:
            doc["measure"] = [d.name for d in self.measure]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RuleDescriptor":
        try:
            rule_id = str(doc["id"])
            measure = doc["measure"]
        except KeyError as exc:
            raise ConfigError(f"rule entry missing {exc}") from None
        if isinstance(measure, str):
            measure = [measure]
        try:
            parsed = tuple(FeatureDescriptor.parse(m) for m in measure)
        except ValueError as exc:
            raise ConfigError(f"rule {rule_id}: {exc}") from None
        return cls(rule_id, parsed, doc.get("comparator", "within_interval"),
                   doc.get("min"), doc.get("max"))


@dataclass(frozen=True)
class RuleBundle:
    emotion: int
    name: str
    rules: tuple[RuleDescriptor, ...]
    min_satisfaction: float = 1.0

    def __post_init__(self):
        if not 0 <= self.emotion < N_LABELS:
            raise ConfigError(f"bundle {self.name}: emotion {self.emotion} outside 0..6")
        if not self.rules:
            raise ConfigError(f"bundle {self.name}: needs at least one rule")
        if not 0 < self.min_satisfaction <= 1:
            raise ConfigError(f"bundle {self.name}: min_satisfaction must be in (0, 1]")

    @property
    def calibrated(self) -> bool:
        return all(r.calibrated for r in self.rules)

    def descriptors(self) -> list[FeatureDescriptor]:
        return [d for r in self.rules for d in r.measure]

    def to_dict(self) -> dict:
        return {
            "emotion": self.emotion,
            "name": self.name,
            "min_satisfaction": self.min_satisfaction,
            "rules": [r.to_dict() for r in self.rules],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RuleBundle":
        try:
            emotion = label_code(doc["emotion"])
            name = str(doc["name"])
            rules = tuple(RuleDescriptor.from_dict(r) for r in doc["rules"])
        except KeyError as exc:
            raise ConfigError(f"bundle missing field {exc}") from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if emotion is None:
            raise ConfigError(f"bundle {name}: emotion cannot be unavailable")
        return cls(emotion, name, rules, float(doc.get("min_satisfaction", 1.0)))


def load_bundles(path: str | Path) -> list[RuleBundle]:
    """Read one bundle object or a list of them from a JSON file."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    docs = doc if isinstance(doc, list) else [doc]
    return [RuleBundle.from_dict(d) for d in docs]


def dump_bundles(bundles: Sequence[RuleBundle], path: str | Path) -> None:
    doc = [b.to_dict() for b in bundles]
    Path(path).write_text(json.dumps(doc if len(doc) > 1 else doc[0], indent=2) + "\n")


# -- calibration --------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationRow:
    rule_id: str
    min: float
    max: float
    exemplar_count: int


def calibrate_thresholds(
    bundle: RuleBundle,
    exemplars: Iterable[WindowFeatures],
    margin: float = 0.0,
    floor: float = DEFAULT_FLOOR,
) -> tuple[RuleBundle, list[CalibrationRow]]:
    """Set each interval rule to the exemplars' observed [min, max].

    The interval is widened by ``margin * (max - min)`` on both sides; a
    zero-width interval is widened by ``floor`` units instead.  Exemplars
    whose ``tag`` names a different bundle are skipped.
    """
    if margin < 0 or floor < 0:
        raise CalibrationError("margin and floor must be >= 0")
    own = [e for e in exemplars if e.tag is None or e.tag == bundle.name]
    if not own:
        raise CalibrationError(f"bundle {bundle.name}: no exemplars")
    rules, report = [], []
    for rule in bundle.rules:
        if not rule.is_interval:
            rules.append(rule)
            continue
        name = rule.measure[0].name
        values = []
        for e in own:
            if name not in e:
                raise CalibrationError(
                    f"bundle {bundle.name}: rule {rule.id} needs descriptor {name}, "
                    "missing from exemplar"
                )
            values.append(e[name])
        lo, hi = min(values), max(values)
        span = hi - lo
        if span == 0:
            lo, hi = lo - floor, hi + floor
        else:
            lo, hi = lo - margin * span, hi + margin * span
        rules.append(replace(rule, min=lo, max=hi))
        report.append(CalibrationRow(rule.id, lo, hi, len(values)))
    return replace(bundle, rules=tuple(rules)), report


def report_to_csv(rows: Iterable[CalibrationRow], header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rule_id", "min", "max", "exemplar_count"])
    for r in rows:
        w.writerow([r.rule_id, repr(r.min), repr(r.max), r.exemplar_count])
    return buf.getvalue()


# -- evaluation ---------------------------------------------------------------

def _value(features: WindowFeatures, d: FeatureDescriptor) -> float:
    v = features.get(d.name)
    if v is None:
        raise MissingDescriptorError(f"descriptor {d.name} not in window features")
    return v


def evaluate_rule(rule: RuleDescriptor, features: WindowFeatures) -> bool:
    """Closed-interval test for interval rules, strict comparison otherwise."""
    if not rule.calibrated:
        raise CalibrationError(f"rule {rule.id} is not calibrated")
    if rule.is_interval:
        v = _value(features, rule.measure[0])
        return rule.min <= v <= rule.max
    left, right = (_value(features, d) for d in rule.measure)
    return left > right if rule.comparator == "greater_than" else left < right


@dataclass(frozen=True)
class BundleResult:
    satisfaction: float
    fired: bool
    gaps: tuple[str, ...] = field(default=())


def evaluate_bundle(bundle: RuleBundle, features: WindowFeatures) -> BundleResult:
    """Fraction of satisfied rules; rules with missing data count as unsatisfied."""
    satisfied, gaps = 0, []
    for rule in bundle.rules:
        try:
            satisfied += evaluate_rule(rule, features)
        except MissingDescriptorError:
            gaps.append(rule.id)
    frac = satisfied / len(bundle.rules)
    return BundleResult(frac, frac >= bundle.min_satisfaction, tuple(gaps))


def rule_vote(bundles: Sequence[RuleBundle], features: WindowFeatures) -> int | None:
    """Emotion of the best fired bundle, or None when nothing fires.

    Among fired bundles the winner has the highest satisfaction, then the most
    rules, then the lowest emotion code.
    """
    best = None
    for b in bundles:
        res = evaluate_bundle(b, features)
        if not res.fired:
            continue
        key = (-res.satisfaction, -len(b.rules), b.emotion)
        if best is None or key < best[0]:
            best = (key, b.emotion)
    return None if best is None else best[1]


def required_descriptors(bundles: Iterable[RuleBundle]) -> list[FeatureDescriptor]:
    seen, out = set(), []
    for b in bundles:
        for d in b.descriptors():
            if d.name not in seen:
                seen.add(d.name)
                out.append(d)
    return out
