"""Emotion label encoding.

Codes are fixed: Anger=0, Happy=1, Surprise=2, Disgust=3, Fear=4, Sad=5,
Neutral=6. ``None`` stands for an unavailable vote and is written as ``-``.
"""

from __future__ import annotations

EMOTIONS = ("anger", "happy", "surprise", "disgust", "fear", "sad", "neutral")
N_LABELS = len(EMOTIONS)
UNAVAILABLE = "-"

ANGER, HAPPY, SURPRISE, DISGUST, FEAR, SAD, NEUTRAL = range(N_LABELS)

_ALIASES = {
    "angry": ANGER,
    "happiness": HAPPY,
    "surprised": SURPRISE,
    "disgusted": DISGUST,
    "afraid": FEAR,
    "sadness": SAD,
}


def label_code(value: str | int | None) -> int | None:
    """Normalize a code, an emotion name or ``-`` into ``int | None``."""
    if value is None:
        return None
    if isinstance(value, (int,)) and not isinstance(value, bool):
        code = value
    else:
        text = str(value).strip().lower()
        if text in ("", UNAVAILABLE):
            return None
        if text.lstrip("-").isdigit():
            code = int(text)
        elif text in EMOTIONS:
            return EMOTIONS.index(text)
        elif text in _ALIASES:
            return _ALIASES[text]
        else:
            raise ValueError(f"unknown emotion label {value!r}")
    if not 0 <= code < N_LABELS:
        raise ValueError(f"emotion code {code} outside 0..{N_LABELS - 1}")
    return code


def format_label(code: int | None) -> str:
    return UNAVAILABLE if code is None else str(code)


def emotion_name(code: int | None) -> str:
    return "unavailable" if code is None else EMOTIONS[code]
