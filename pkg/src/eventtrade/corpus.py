"""Articles, token-level event annotations and train/validation splitting."""

from __future__ import annotations

import enum
import json
import logging
import random
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError

log = logging.getLogger(__name__)

#: Label for tokens that describe none of the tracked events.
NOEVENT = "O"

#: Timestamp assigned to undated documents (encyclopedia entries).
SENTINEL_TS = datetime(1970, 1, 1, tzinfo=timezone.utc)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class EventType(str, enum.Enum):
    A = "A"  # Acquisition
    CT = "CT"  # Positive clinical trial & FDA approval
    RD = "RD"  # Dividend
    DC = "DC"  # Dividend cut
    DI = "DI"  # Dividend increase
    GI = "GI"  # Guidance increase
    NC = "NC"  # New contract
    RSS = "RSS"  # Reverse stock split
    SD = "SD"  # Special dividend
    SR = "SR"  # Stock repurchase
    SS = "SS"  # Stock split

    def __str__(self) -> str:
        return self.value


EVENT_NAMES = {
    EventType.A: "Acquisition",
    EventType.CT: "Clinical Trial & FDA Approval",
    EventType.RD: "Dividend",
    EventType.DC: "Dividend Cut",
    EventType.DI: "Dividend Increase",
    EventType.GI: "Guidance Increase",
    EventType.NC: "New Contract",
    EventType.RSS: "Reverse Stock Split",
    EventType.SD: "Special Dividend",
    EventType.SR: "Stock Repurchase",
    EventType.SS: "Stock Split",
}


@dataclass(frozen=True)
class LabelSet:
    """Ordered events followed by the Noevent label.

    Column ``i < K`` of every score matrix belongs to ``events[i]``; column
    ``K`` belongs to ``O``.
    """

    events: tuple[EventType, ...] = tuple(EventType)

    def __post_init__(self) -> None:
        events = tuple(EventType(e) for e in self.events)
        if not events:
            raise ValueError("label set needs at least one event")
        if len(set(events)) != len(events):
            raise ValueError(f"duplicate events in label set: {events}")
        object.__setattr__(self, "events", events)

    @property
    def k(self) -> int:
        return len(self.events)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(e.value for e in self.events) + (NOEVENT,)

    @property
    def noevent_index(self) -> int:
        return self.k

    def __len__(self) -> int:
        return self.k + 1

    def index(self, label: str | EventType) -> int:
        if label == NOEVENT:
            return self.k
        try:
            return self.events.index(EventType(label))
        except ValueError:
            raise KeyError(f"label {label!r} not in label set {self.labels}") from None

    def to_list(self) -> list[str]:
        return [e.value for e in self.events]

    @classmethod
    def from_list(cls, codes: Iterable[str]) -> "LabelSet":
        return cls(tuple(EventType(c) for c in codes))


@dataclass(frozen=True)
class Article:
    id: str
    title: str
    text: str
    published_at: datetime
    ticker: str | None = None

    def __post_init__(self) -> None:
        if not self.title.strip() or not self.text.strip():
            raise ValueError(f"article {self.id!r}: title and text must be non-empty")
        ts = self.published_at
        if ts.tzinfo is None:
            raise ValueError(f"article {self.id!r}: timestamp must be timezone-aware")
        if ts.second or ts.microsecond:
            raise ValueError(f"article {self.id!r}: timestamp {ts.isoformat()} is not minute-precision")

    @property
    def full_text(self) -> str:
        return self.title + " " + self.text


@dataclass(frozen=True)
class Token:
    surface: str
    start: int
    end: int


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[Token, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    @property
    def surfaces(self) -> list[str]:
        return [t.surface for t in self.tokens]

    @classmethod
    def from_surfaces(cls, surfaces: Sequence[str]) -> "TokenSeq":
        """Build a sequence with synthetic spans, as if joined by single spaces."""
        toks, pos = [], 0
        for s in surfaces:
            toks.append(Token(s, pos, pos + len(s)))
            pos += len(s) + 1
        return cls(tuple(toks))

    def truncate(self, max_len: int) -> "TokenSeq":
        if len(self.tokens) <= max_len:
            return self
        return TokenSeq(self.tokens[:max_len])


@dataclass(frozen=True)
class LabeledArticle:
    article: Article
    spans: tuple[tuple[int, int, EventType], ...] = ()

    def __post_init__(self) -> None:
        limit = len(self.article.full_text)
        clean = []
        for start, end, ev in self.spans:
            if ev == NOEVENT:
                raise ValueError(f"article {self.article.id!r}: spans may not carry label O")
            if not 0 <= start < end <= limit:
                raise ValueError(f"article {self.article.id!r}: span ({start}, {end}) outside text of length {limit}")
            clean.append((int(start), int(end), EventType(ev)))
        object.__setattr__(self, "spans", tuple(clean))

    @property
    def events(self) -> frozenset[EventType]:
        return frozenset(ev for _, _, ev in self.spans)


@dataclass(frozen=True)
class LabelSequence:
    labels: tuple[str, ...]
    label_set: LabelSet = field(default_factory=LabelSet)

    def __post_init__(self) -> None:
        allowed = set(self.label_set.labels)
        bad = [lab for lab in self.labels if lab not in allowed]
        if bad:
            raise ValueError(f"labels {sorted(set(bad))} not in label set {self.label_set.labels}")

    def __len__(self) -> int:
        return len(self.labels)

    def indices(self) -> list[int]:
        return [self.label_set.index(lab) for lab in self.labels]

    @property
    def events(self) -> frozenset[EventType]:
        return frozenset(EventType(lab) for lab in self.labels if lab != NOEVENT)


def parse_timestamp(value: str) -> datetime:
    """Parse an ISO-8601 UTC timestamp with minute precision."""
    text = value.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    ts = ts.astimezone(timezone.utc)
    if ts.second or ts.microsecond:
        raise ValueError(f"timestamp {value!r} has a non-zero seconds component")
    return ts


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%MZ")


def _record_to_labeled(rec: dict, allow_missing_timestamp: bool) -> LabeledArticle:
    raw_ts = rec.get("published_at")
    if raw_ts in (None, ""):
        if not allow_missing_timestamp:
            raise ValueError("missing published_at")
        ts = SENTINEL_TS
    else:
        ts = parse_timestamp(raw_ts)
    ticker = rec.get("ticker")
    art = Article(
        id=str(rec["id"]),
        title=rec["title"],
        text=rec["text"],
        published_at=ts,
        ticker=ticker.strip().upper() if ticker else None,
    )
    spans = tuple((int(s), int(e), EventType(c)) for s, e, c in rec.get("labels") or ())
    return LabeledArticle(art, spans)


def load_labeled(path: str | Path, allow_missing_timestamp: bool = False) -> list[LabeledArticle]:
    """Read Article JSONL, keeping any ``labels`` annotations."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"articles file not found: {path}")
    out: list[LabeledArticle] = []
    seen: dict[str, int] = {}
    problems: list[str] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                la = _record_to_labeled(rec, allow_missing_timestamp)
            except (ValueError, KeyError, TypeError) as exc:
                problems.append(f"{path}:{lineno}: {exc}")
                continue
            if la.article.id in seen:
                problems.append(f"{path}:{lineno}: duplicate id {la.article.id!r} (first on line {seen[la.article.id]})")
                continue
            seen[la.article.id] = lineno
            out.append(la)
    if problems:
        raise DataError("malformed article records:\n  " + "\n  ".join(problems))
    return out


def load_articles(path: str | Path, allow_missing_timestamp: bool = False) -> list[Article]:
    return [la.article for la in load_labeled(path, allow_missing_timestamp)]


def article_to_record(la: LabeledArticle | Article) -> dict:
    art = la.article if isinstance(la, LabeledArticle) else la
    rec = {
        "id": art.id,
        "title": art.title,
        "text": art.text,
        "published_at": format_timestamp(art.published_at),
    }
    if isinstance(la, LabeledArticle):
        rec["labels"] = [[s, e, ev.value] for s, e, ev in la.spans]
    if art.ticker:
        rec["ticker"] = art.ticker
    return rec


def tokenize(title: str, text: str) -> TokenSeq:
    """Split ``title + " " + text`` into word and single-punctuation tokens.

    Case is preserved; spans index into the concatenated string.
    """
    if not title:
        raise ValueError("title must be non-empty")
    joined = title + " " + text
    return TokenSeq(tuple(Token(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(joined)))


def tokenize_article(article: Article) -> TokenSeq:
    return tokenize(article.title, article.text)


def project_labels(la: LabeledArticle, toks: TokenSeq, ls: LabelSet) -> LabelSequence:
    """Give each token the event of any annotated span it overlaps, else O."""
    labels = [NOEVENT] * len(toks)
    for i, tok in enumerate(toks.tokens):
        for start, end, ev in la.spans:
            if tok.start < end and start < tok.end:
                if ev not in ls.events:
                    raise ValueError(f"article {la.article.id!r}: event {ev.value} not in label set {ls.labels}")
                if labels[i] != NOEVENT and labels[i] != ev.value:
                    raise ValueError(
                        f"article {la.article.id!r}: token {tok.surface!r} at {tok.start} "
                        f"is covered by both {labels[i]} and {ev.value}"
                    )
                labels[i] = ev.value
    return LabelSequence(tuple(labels), ls)


def label_runs(labels: Sequence[str]) -> list[tuple[int, int, str]]:
    """Maximal runs of one event label as ``(tok_start, tok_end_exclusive, event)``."""
    runs = []
    i, n = 0, len(labels)
    while i < n:
        if labels[i] == NOEVENT:
            i += 1
            continue
        j = i
        while j < n and labels[j] == labels[i]:
            j += 1
        runs.append((i, j, labels[i]))
        i = j
    return runs


def spans_from_labels(toks: TokenSeq, seq: LabelSequence) -> tuple[tuple[int, int, EventType], ...]:
    """Character spans reconstructed from a label sequence (inverse of projection)."""
    return tuple(
        (toks[a].start, toks[b - 1].end, EventType(ev)) for a, b, ev in label_runs(seq.labels)
    )


def stratify(data: Sequence[LabeledArticle]) -> dict[frozenset, list[int]]:
    strata: dict[frozenset, list[int]] = {}
    for i, la in enumerate(data):
        strata.setdefault(la.events, []).append(i)
    return strata


def split_train_val(
    data: Sequence[LabeledArticle], ratio: float = 0.8, seed: int = 0
) -> tuple[list[LabeledArticle], list[LabeledArticle]]:
    """Stratified split; each distinct event set is one stratum.

    Strata with a single article go wholly to train.
    """
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    rng = random.Random(seed)
    train_idx: set[int] = set()
    strata = stratify(data)
    for key in sorted(strata, key=lambda s: sorted(e.value for e in s)):
        members = list(strata[key])
        if len(members) < 2:
            log.warning("stratum %s has %d article(s); assigned to train", _stratum_name(key), len(members))
            train_idx.update(members)
            continue
        rng.shuffle(members)
        n_train = min(len(members) - 1, max(1, int(ratio * len(members) + 0.5)))
        train_idx.update(members[:n_train])
    train = [la for i, la in enumerate(data) if i in train_idx]
    val = [la for i, la in enumerate(data) if i not in train_idx]
    return train, val


def split_report(data: Sequence[LabeledArticle], train: Sequence[LabeledArticle]) -> dict:
    train_ids = {la.article.id for la in train}
    report = {}
    for key, members in stratify(data).items():
        n_train = sum(data[i].article.id in train_ids for i in members)
        report[_stratum_name(key)] = {
            "total": len(members),
            "train": n_train,
            "val": len(members) - n_train,
            "train_only": len(members) < 2,
        }
    return dict(sorted(report.items()))


def _stratum_name(key: frozenset) -> str:
    return "+".join(sorted(e.value for e in key)) or NOEVENT
