"""Decision-level majority voting over a result buffer.

The buffer is a grid of instance columns by modalities.  Votes arrive as
events; a column stays open until a modality votes twice (or an optional
tick timeout expires), then it is sealed with ``None`` for every silent
modality.  Once ``capacity`` columns are sealed, the label with the most
votes across the whole grid is the fused prediction.
"""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import BufferNotReady, ConfigError, ParseError
from .labels import N_LABELS, format_label, label_code

MODALITIES = ("face", "head", "body", "hand", "speech", "rule")
DEFAULT_SWEEP = (5, 10, 15, 20, 25)


@dataclass(frozen=True)
class Vote:
    modality: str
    label: int | None
    tick: float = 0.0
    truth: int | None = None


@dataclass(frozen=True)
class FusionConfig:
    buffer_instances: int = 10
    modalities: tuple[str, ...] = MODALITIES
    disabled: frozenset[str] = frozenset()
    column_timeout: float | None = None
    sliding: bool = False

    def __post_init__(self):
        if self.buffer_instances < 1:
            raise ConfigError("buffer_instances must be >= 1")
        unknown = set(self.disabled) - set(self.modalities)
        if unknown:
            raise ConfigError(f"cannot disable unknown modalities {sorted(unknown)}")
        if self.column_timeout is not None and not self.column_timeout > 0:
            raise ConfigError("column_timeout must be > 0")

    @property
    def enabled(self) -> tuple[str, ...]:
        return tuple(m for m in self.modalities if m not in self.disabled)


@dataclass
class Column:
    votes: dict[str, int | None] = field(default_factory=dict)
    opened_at: float | None = None
    truths: list[int] = field(default_factory=list)


class ResultBuffer:
    """Single-writer state machine holding sealed columns plus one open column."""

    def __init__(self, config: FusionConfig = FusionConfig()):
        self.config = config
        self.sealed: list[dict[str, int | None]] = []
        self.sealed_truths: list[int | None] = []
        self.open: Column | None = None
        self.audit: list[str] = []
        self.seal_count = 0

    @property
    def capacity(self) -> int:
        return self.config.buffer_instances

    @property
    def full(self) -> bool:
        return len(self.sealed) >= self.capacity

    def __len__(self) -> int:
        return len(self.sealed)

    def push_vote(self, vote: Vote) -> "ResultBuffer":
        if vote.modality not in self.config.modalities:
            raise ConfigError(f"unknown modality {vote.modality!r}")
        if vote.modality in self.config.disabled:
            self.audit.append(f"ignored {vote.modality} vote {format_label(vote.label)} at tick {vote.tick}")
            return self
        if self.open is not None:
            timed_out = (
                self.config.column_timeout is not None
                and self.open.opened_at is not None
                and vote.tick - self.open.opened_at >= self.config.column_timeout
            )
            if timed_out or vote.modality in self.open.votes:
                self.close_instance()
        if self.open is None:
            self.open = Column(opened_at=vote.tick)
        self.open.votes[vote.modality] = vote.label
        if vote.truth is not None:
            self.open.truths.append(vote.truth)
        return self

    def close_instance(self) -> "ResultBuffer":
        """Seal the open column; silent modalities become unavailable."""
        if self.open is None:
            return self
        column = {m: self.open.votes.get(m) for m in self.config.enabled}
        truth = Counter(self.open.truths).most_common(1)[0][0] if self.open.truths else None
        self.open = None
        if self.full:
            if not self.config.sliding:
                raise BufferNotReady("buffer is full; take the prediction and reset first")
            self.sealed.pop(0)
            self.sealed_truths.pop(0)
        self.sealed.append(column)
        self.sealed_truths.append(truth)
        self.seal_count += 1
        return self

    def add_column(self, votes: dict[str, int | None]) -> "ResultBuffer":
        """Seal a whole column at once (convenience for replaying grids)."""
        for m in self.config.modalities:
            if m in votes:
                self.push_vote(Vote(m, votes[m]))
        if self.open is None:
            self.open = Column()
        return self.close_instance()

    def reset(self) -> None:
        self.sealed.clear()
        self.sealed_truths.clear()

    def tally(self) -> dict[int, int]:
        return tally_columns(self.sealed)

    def final_prediction(self) -> int | None:
        if not self.full:
            raise BufferNotReady(f"{len(self.sealed)} of {self.capacity} columns sealed")
        return predict_from_columns(self.sealed)

    def truth(self) -> int | None:
        """Most frequent ground-truth label over the sealed columns, latest wins ties."""
        counts = Counter(t for t in self.sealed_truths if t is not None)
        if not counts:
            return None
        best = max(counts.values())
        for t in reversed(self.sealed_truths):
            if t is not None and counts[t] == best:
                return t
        return None


def tally_columns(columns: Iterable[dict[str, int | None]]) -> dict[int, int]:
    counts: Counter[int] = Counter()
    for col in columns:
        counts.update(v for v in col.values() if v is not None)
    return dict(sorted(counts.items()))


def predict_from_columns(columns: Sequence[dict[str, int | None]]) -> int | None:
    """Majority label; ties go to the label with most votes in the latest
    column, then the lowest code.  None when no votes exist."""
    counts = tally_columns(columns)
    if not counts:
        return None
    top = max(counts.values())
    tied = [k for k, v in counts.items() if v == top]
    if len(tied) == 1:
        return tied[0]
    latest = Counter(v for v in columns[-1].values() if v is not None) if columns else Counter()
    return min(tied, key=lambda k: (-latest[k], k))


@dataclass(frozen=True)
class FusionDecision:
    buffer_index: int
    prediction: int | None
    tally: dict[int, int]
    truth: int | None = None


def fuse_stream(votes: Iterable[Vote], config: FusionConfig = FusionConfig()) -> list[FusionDecision]:
    """Replay votes through a buffer and collect one decision per full buffer.

    Tumbling mode clears the buffer after each decision; sliding mode keeps
    the last ``capacity`` columns and decides after every new column once full.
    The trailing open column is sealed at end of stream; a partial buffer
    yields no decision.
    """
    buf = ResultBuffer(config)
    out: list[FusionDecision] = []

    def drain():
        if buf.full:
            out.append(FusionDecision(len(out), buf.final_prediction(), buf.tally(), buf.truth()))
            if not config.sliding:
                buf.reset()

    for vote in votes:
        seen = buf.seal_count
        buf.push_vote(vote)
        if buf.seal_count != seen:
            drain()
    if buf.open is not None:
        buf.close_instance()
        drain()
    return out


# -- replay files -------------------------------------------------------------

def parse_votes(text: str) -> list[Vote]:
    """Read ``tick,modality,label[,truth]`` rows; ``-`` marks an unavailable vote."""
    rows = [(n, r) for n, r in enumerate(csv.reader(io.StringIO(text)), start=1)
            if r and not r[0].startswith("#")]
    if not rows:
        raise ParseError("empty vote stream")
    header = [c.strip() for c in rows[0][1]]
    if header[:3] != ["tick", "modality", "label"] or header[3:] not in ([], ["truth"]):
        raise ParseError("vote stream header must be tick,modality,label[,truth]", rows[0][0])
    out = []
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} columns, found {len(row)}", line)
        try:
            tick = float(row[0])
            label = label_code(row[2])
            truth = label_code(row[3]) if len(row) > 3 else None
        except ValueError as exc:
            raise ParseError(str(exc), line) from None
        modality = row[1].strip()
        if modality not in MODALITIES:
            raise ParseError(f"unknown modality {modality!r}", line)
        out.append(Vote(modality, label, tick, truth))
    return out


def read_votes(path: str | Path) -> list[Vote]:
    return parse_votes(Path(path).read_text(encoding="utf-8"))


def votes_to_csv(votes: Sequence[Vote]) -> str:
    with_truth = any(v.truth is not None for v in votes)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tick", "modality", "label"] + (["truth"] if with_truth else []))
    for v in votes:
        tick = int(v.tick) if float(v.tick).is_integer() else v.tick
        w.writerow([tick, v.modality, format_label(v.label)]
                   + ([format_label(v.truth)] if with_truth else []))
    return buf.getvalue()


def decisions_to_csv(decisions: Sequence[FusionDecision], header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["buffer_index", "prediction"] + [f"tally_{k}" for k in range(N_LABELS)])
    for d in decisions:
        w.writerow([d.buffer_index, format_label(d.prediction)]
                   + [d.tally.get(k, 0) for k in range(N_LABELS)])
    return buf.getvalue()


# -- buffer size sweep --------------------------------------------------------

def sweep_buffer_size(
    votes: Sequence[Vote],
    sizes: Sequence[int] = DEFAULT_SWEEP,
    config: FusionConfig = FusionConfig(),
) -> dict[int, float]:
    """Fraction of correct fused decisions for each buffer size.

    Every vote must carry its ``truth``; a buffer's truth is the majority of
    its columns' truths.  No-decision buffers count as wrong.
    """
    votes = list(votes)
    if not votes:
        raise ConfigError("empty vote stream")
    if any(v.truth is None for v in votes):
        raise ConfigError("sweep needs a truth label on every vote")
    out = {}
    for size in sizes:
        cfg = FusionConfig(size, config.modalities, config.disabled, config.column_timeout, config.sliding)
        decisions = fuse_stream(votes, cfg)
        if not decisions:
            out[size] = 0.0
            continue
        hits = sum(d.prediction is not None and d.prediction == d.truth for d in decisions)
        out[size] = hits / len(decisions)
    return out


def sweep_to_csv(result: dict[int, float], header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["buffer_size", "accuracy"])
    for size, acc in result.items():
        w.writerow([size, f"{acc:.6f}"])
    return buf.getvalue()
