"""Seeded synthetic corpora for smoke tests and shipped fixtures.

Poses are drawn around hand-placed body-layout templates (meters, frontal
view, y up) with per-instance pose variation, a global offset and per-frame
jitter.  Vote streams model per-modality availability and uniform label noise.
"""

from __future__ import annotations

import numpy as np

from .fusion import MODALITIES, Vote
from .labels import ANGER, HAPPY, N_LABELS, SURPRISE
from .rules import RuleBundle
from .skeleton_io import DEFAULT_FRAME_RATE, default_layout, make_stream, SkeletonStream

_TRUNK = {
    "spine": (0.0, 1.2, 0.0),
    "hip_center": (0.0, 0.95, 0.0),
    "left_hip": (-0.12, 0.93, 0.0),
    "right_hip": (0.12, 0.93, 0.0),
    "left_shoulder": (-0.2, 1.42, 0.0),
    "right_shoulder": (0.2, 1.42, 0.0),
}

# arm joints per emotion, left side; the right side mirrors x
_ARMS = {
    ANGER: {  # hands on waist
        "left_elbow": (-0.42, 1.17, 0.02),
        "left_wrist": (-0.16, 0.98, 0.04),
        "left_hand": (-0.13, 0.95, 0.05),
    },
    HAPPY: {  # arms raised
        "left_elbow": (-0.34, 1.68, 0.0),
        "left_wrist": (-0.40, 1.95, 0.0),
        "left_hand": (-0.41, 2.04, 0.0),
    },
    SURPRISE: {  # hands held near the chest
        "left_elbow": (-0.30, 1.08, 0.1),
        "left_wrist": (-0.10, 1.30, 0.22),
        "left_hand": (-0.05, 1.36, 0.24),
    },
}
SYNTH_EMOTIONS = tuple(_ARMS)


def pose_template(emotion: int) -> np.ndarray:
    layout = default_layout("body")
    joints = dict(_TRUNK)
    for name, (x, y, z) in _ARMS[emotion].items():
        joints[name] = (x, y, z)
        joints[name.replace("left_", "right_")] = (-x, y, z)
    return np.array([joints[n] for n in layout.names], dtype=float)


def synthetic_stream(
    emotion: int,
    rng: np.random.Generator,
    n_frames: int = 100,
    pose_sigma: float = 0.04,
    jitter: float = 0.01,
    frame_rate_hz: float = DEFAULT_FRAME_RATE,
    body_scale: float = 1.0,
) -> SkeletonStream:
    """One enacted instance of ``emotion`` in the 12-point body layout.

    ``body_scale`` resizes the skeleton about the hip center, which is how a
    differently built actor set (another corpus) is simulated.
    """
    base = pose_template(emotion)
    hip = base[default_layout("body").index_of("hip_center")]
    base = hip + (base - hip) * body_scale
    base = base + rng.normal(0.0, pose_sigma, base.shape)
    base = base + rng.normal(0.0, 0.3, 3) * np.array([1.0, 0.1, 1.0])
    t = np.arange(n_frames) / frame_rate_hz
    sway = 0.02 * np.sin(2 * np.pi * rng.uniform(0.2, 1.5) * t + rng.uniform(0, 2 * np.pi))
    coords = base[None, :, :] + rng.normal(0.0, jitter, (n_frames,) + base.shape)
    coords[:, :, 0] += sway[:, None]
    return make_stream(default_layout("body"), coords, frame_rate_hz)


def synthetic_bundles() -> list[RuleBundle]:
    """Uncalibrated bundles whose signatures match the pose templates."""
    docs = [
        {"emotion": ANGER, "name": "hands_on_waist", "rules": [
            {"id": "R1", "measure": "joint:left_shoulder:left_elbow:left_wrist"},
            {"id": "R2", "measure": "joint:right_shoulder:right_elbow:right_wrist"},
            {"id": "R7", "measure": ["left_wrist_y", "left_elbow_y"], "comparator": "less_than"},
        ]},
        {"emotion": HAPPY, "name": "arms_raised", "rules": [
            {"id": "R7", "measure": ["left_wrist_y", "left_elbow_y"], "comparator": "greater_than"},
            {"id": "R8", "measure": ["left_elbow_y", "left_shoulder_y"], "comparator": "greater_than"},
            {"id": "R1", "measure": "joint:left_shoulder:left_elbow:left_wrist"},
        ]},
        {"emotion": SURPRISE, "name": "hands_near_chest", "rules": [
            {"id": "R1", "measure": "joint:left_shoulder:left_elbow:left_wrist"},
            {"id": "R2", "measure": "joint:right_shoulder:right_elbow:right_wrist"},
            {"id": "R7", "measure": ["left_wrist_y", "left_elbow_y"], "comparator": "greater_than"},
            {"id": "D1", "measure": "dist:left_hand:right_hand"},
        ]},
    ]
    return [RuleBundle.from_dict(d) for d in docs]


BUNDLE_FOR_EMOTION = {ANGER: "hands_on_waist", HAPPY: "arms_raised", SURPRISE: "hands_near_chest"}

# availability per modality; face/head and body/hand come from shared frames
_AVAILABILITY = {"face": 0.55, "head": 0.55, "body": 0.7, "hand": 0.7, "speech": 0.35, "rule": 0.5}


def noisy_vote_stream(
    rng: np.random.Generator,
    segments: int = 12,
    columns_per_segment: int = 20,
    noise: float = 0.3,
    labels: tuple[int, ...] = tuple(range(N_LABELS - 1)),
    availability: float = 1.0,
) -> list[Vote]:
    """Labeled vote stream with ``noise`` fraction of uniformly random votes.

    ``availability`` scales every modality's chance of voting in a column;
    sparse columns are what make short buffers unreliable.  Every column carries an explicit vote or ``-`` for each modality, so
    columns close on the duplicate-modality rule and line up with segments.
    """
    votes = []
    tick = 0
    for _ in range(segments):
        truth = int(rng.choice(labels))
        for _ in range(columns_per_segment):
            tick += 1
            face_up = rng.random() < _AVAILABILITY["face"] * availability
            body_up = rng.random() < _AVAILABILITY["body"] * availability
            for m in MODALITIES:
                if m in ("face", "head"):
                    up = face_up
                elif m in ("body", "hand"):
                    up = body_up
                else:
                    up = rng.random() < _AVAILABILITY[m] * availability
                if not up:
                    label = None
                elif rng.random() < noise:
                    label = int(rng.integers(0, N_LABELS))
                else:
                    label = truth
                votes.append(Vote(m, label, tick, truth))
    return votes
