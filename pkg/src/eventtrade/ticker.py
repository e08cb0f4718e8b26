"""Company/ticker recognition by multi-pattern string matching."""

from __future__ import annotations

import csv
import enum
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .corpus import Article, tokenize
from .errors import DataError

LEGAL_SUFFIXES = {
    "inc", "incorporated", "corp", "corporation", "co", "company", "ltd", "limited",
    "llc", "plc", "lp", "sa", "ag", "nv", "se",
}
EXCHANGE_CUE = re.compile(r"(?:NYSE|NASDAQ|Nasdaq|NYSE American|NYSE Arca)\s*:\s*$")
_TICKER_RE = re.compile(r"^[A-Z][A-Z0-9.\-]{0,5}$")


class Exchange(str, enum.Enum):
    NYSE = "NYSE"
    NASDAQ = "NASDAQ"
    OTHER = "OTHER"


@dataclass(frozen=True)
class TickerPair:
    company_name: str
    ticker: str
    exchange: Exchange = Exchange.OTHER

    def __post_init__(self) -> None:
        ticker = self.ticker.strip().upper()
        if not _TICKER_RE.match(ticker):
            raise ValueError(f"invalid ticker {self.ticker!r}")
        if not self.company_name.strip():
            raise ValueError("empty company name")
        object.__setattr__(self, "ticker", ticker)
        object.__setattr__(self, "company_name", self.company_name.strip())
        object.__setattr__(self, "exchange", _exchange(self.exchange))


def _exchange(value) -> Exchange:
    if isinstance(value, Exchange):
        return value
    try:
        return Exchange(str(value).strip().upper())
    except ValueError:
        return Exchange.OTHER


@dataclass(frozen=True)
class TickerMatch:
    ticker: str
    occurrences: int
    title_prefix_hit: bool
    confidence: float
    first_pos: int = 0


def load_pairs(path: str | Path) -> list[TickerPair]:
    """Read ``company_name,ticker,exchange`` rows (header required), deduplicated in order."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"pairs file not found: {path}")
    pairs: list[TickerPair] = []
    seen: set[tuple[str, str]] = set()
    problems = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"company_name", "ticker"} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: header lacks columns {sorted(missing)}")
        for row in reader:
            try:
                pair = TickerPair(row["company_name"] or "", row["ticker"] or "", row.get("exchange") or "OTHER")
            except ValueError as exc:
                problems.append(f"{path}:{reader.line_num}: {exc}")
                continue
            key = (pair.company_name, pair.ticker)
            if key not in seen:
                seen.add(key)
                pairs.append(pair)
    if problems:
        raise DataError("malformed pair rows:\n  " + "\n  ".join(problems))
    return pairs


def normalize_name(name: str) -> str:
    """Lowercase and strip trailing legal suffixes such as ``Inc.``, ``Corp`` or ``.com``."""
    words = name.replace(",", " ").split()
    while len(words) > 1 and words[-1].lower().rstrip(".") in LEGAL_SUFFIXES:
        words.pop()
    out = " ".join(words).lower().rstrip(".")
    if out.endswith(".com") and len(out) > 4:
        out = out[:-4]
    return out


@dataclass
class _Node:
    children: dict[str, "_Node"] = field(default_factory=dict)
    fail: "_Node | None" = None
    out: list[int] = field(default_factory=list)


class Automaton:
    """Aho-Corasick automaton over characters; reports every occurrence of every pattern."""

    def __init__(self, patterns: Sequence[str]):
        self.patterns = list(patterns)
        self._root = _Node()
        for pid, pat in enumerate(self.patterns):
            node = self._root
            for ch in pat:
                node = node.children.setdefault(ch, _Node())
            node.out.append(pid)
        self._build()

    def _build(self) -> None:
        root = self._root
        root.fail = root
        queue: deque[_Node] = deque()
        for child in root.children.values():
            child.fail = root
            queue.append(child)
        while queue:
            cur = queue.popleft()
            for ch, child in cur.children.items():
                f = cur.fail
                while f is not root and ch not in f.children:
                    f = f.fail
                child.fail = f.children[ch] if ch in f.children and f.children[ch] is not child else root
                child.out = child.out + child.fail.out
                queue.append(child)

    def finditer(self, text: str) -> Iterator[tuple[int, int, int]]:
        """Yield ``(start, end, pattern_id)`` for all (possibly overlapping) matches."""
        node = self._root
        root = self._root
        for i, ch in enumerate(text):
            while node is not root and ch not in node.children:
                node = node.fail
            node = node.children.get(ch, root)
            for pid in node.out:
                yield i + 1 - len(self.patterns[pid]), i + 1, pid


def _is_word_boundary(text: str, start: int, end: int) -> bool:
    before = text[start - 1] if start > 0 else " "
    after = text[end] if end < len(text) else " "
    return not before.isalnum() and not after.isalnum()


class TickerIndex:
    """Pair table compiled into two automata: company names and ticker symbols."""

    def __init__(self, pairs: Iterable[TickerPair]):
        self.pairs = list(pairs)
        if not self.pairs:
            raise ValueError("ticker index needs at least one pair")
        names: dict[str, set[str]] = {}
        symbols: set[str] = set()
        for p in self.pairs:
            name = normalize_name(p.company_name)
            if name:
                names.setdefault(name, set()).add(p.ticker)
            symbols.add(p.ticker)
        self._name_patterns = sorted(names)
        self._name_tickers = [sorted(names[n]) for n in self._name_patterns]
        self._symbols = sorted(symbols)
        self._names = Automaton(self._name_patterns)
        self._tickers = Automaton(self._symbols)

    def name_hits(self, text: str) -> list[tuple[int, int, str]]:
        low = text.lower()
        hits = []
        for s, e, pid in self._names.finditer(low):
            if _is_word_boundary(low, s, e):
                hits.extend((s, e, t) for t in self._name_tickers[pid])
        return hits

    def symbol_hits(self, text: str) -> list[tuple[int, int, str]]:
        hits = []
        for s, e, pid in self._tickers.finditer(text):
            sym = self._symbols[pid]
            if not _is_word_boundary(text, s, e):
                continue
            if len(sym) <= 2 and not EXCHANGE_CUE.search(text[max(0, s - 16) : s]):
                continue
            hits.append((s, e, sym))
        return hits


def _dedupe_overlaps(spans: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Leftmost-longest non-overlapping subset."""
    kept: list[tuple[int, int]] = []
    for s, e in sorted(spans, key=lambda x: (x[0], -(x[1] - x[0]))):
        if kept and s < kept[-1][1]:
            continue
        kept.append((s, e))
    return kept


def recognize(
    article: Article,
    pairs: Sequence[TickerPair] | TickerIndex,
    boost: float = 5.0,
    prefix_window: int = 6,
) -> TickerMatch | None:
    """Most frequently mentioned ticker, with a bonus for names opening the title.

    Ties go to the earliest first mention, then the lexicographically smaller ticker.
    """
    index = pairs if isinstance(pairs, TickerIndex) else TickerIndex(pairs)
    text = article.full_text
    spans: dict[str, list[tuple[int, int]]] = {}
    name_spans: dict[str, list[tuple[int, int]]] = {}
    for s, e, t in index.name_hits(text):
        spans.setdefault(t, []).append((s, e))
        name_spans.setdefault(t, []).append((s, e))
    for s, e, t in index.symbol_hits(text):
        spans.setdefault(t, []).append((s, e))
    if not spans:
        return None
    title_toks = tokenize(article.title, "").tokens[:prefix_window]
    prefix_end = title_toks[-1].end if title_toks else 0
    matches = []
    for t, sp in spans.items():
        kept = _dedupe_overlaps(sp)
        hit = any(e <= prefix_end for _, e in name_spans.get(t, ()))
        conf = len(kept) + (boost if hit else 0.0)
        matches.append(TickerMatch(t, len(kept), hit, conf, kept[0][0]))
    matches.sort(key=lambda m: (-m.confidence, m.first_pos, m.ticker))
    return matches[0]
