"""Click-log ingestion and bilingual text normalization.

Raw click records carry mixed English/Chinese text. Tokenization lowercases,
strips punctuation and symbols, splits alphanumeric runs on boundaries, and
turns each maximal CJK run into overlapping character bigrams (the standard
dictionary-free indexing unit, replacing an external word segmenter).
Aggregation collapses raw records into unique (query, document) pairs with
accumulated click / non-click counts.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ClickLogParseError

_CLICK_LOG_KEYS = {"user_id", "query", "doc_title", "doc_url", "clicked"}

# Code-point ranges treated as CJK for the bigram rule. Covers the unified
# ideograph blocks plus kana and hangul so any East Asian run is bigrammed.
_CJK_RANGES = (
    (0x3040, 0x30FF),    # hiragana, katakana
    (0x3400, 0x4DBF),    # CJK extension A
    (0x4E00, 0x9FFF),    # CJK unified ideographs
    (0xAC00, 0xD7AF),    # hangul syllables
    (0xF900, 0xFAFF),    # CJK compatibility ideographs
    (0x20000, 0x2FFFF),  # CJK extensions B+
)


@dataclass(frozen=True)
class RawClickRecord:
    """One line of the click log: a single impression and its outcome."""

    user_id: str
    query: str
    doc_title: str
    doc_url: str
    clicked: bool


@dataclass
class ClickPair:
    """A unique (query, document) pair with accumulated click counts."""

    query_tokens: tuple[str, ...]
    doc_id: str
    doc_tokens: tuple[str, ...]
    click_count: int = 0
    nonclick_count: int = 0

    @property
    def query_text(self) -> str:
        return " ".join(self.query_tokens)


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def tokenize(text: str) -> list[str]:
    """Normalize raw text into index tokens.

    Lowercases, treats punctuation/symbols/whitespace as separators, emits
    alphanumeric runs as single tokens, and emits each maximal CJK run of
    length L >= 2 as its L-1 overlapping character bigrams (a run of length
    1 is emitted as that single character). Output order follows input.
    """
    tokens: list[str] = []
    word: list[str] = []
    cjk: list[str] = []

    def flush_word() -> None:
        if word:
            tokens.append("".join(word))
            word.clear()

    def flush_cjk() -> None:
        if len(cjk) == 1:
            tokens.append(cjk[0])
        elif cjk:
            tokens.extend(cjk[i] + cjk[i + 1] for i in range(len(cjk) - 1))
        cjk.clear()

    for ch in text.lower():
        if _is_cjk(ch):
            flush_word()
            cjk.append(ch)
        elif unicodedata.category(ch)[0] in ("L", "N"):
            flush_cjk()
            word.append(ch)
        else:
            # Punctuation, symbols, whitespace, controls: run separators.
            flush_word()
            flush_cjk()
    flush_word()
    flush_cjk()
    return tokens


def remove_stopwords(tokens: Sequence[str], stops: frozenset[str] | set[str]) -> list[str]:
    """Drop stoplist members, preserving order. May return an empty list."""
    return [t for t in tokens if t not in stops]


def load_stoplist(path: str | Path) -> frozenset[str]:
    """Read a stoplist file: one token per line, '#' lines are comments."""
    entries: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                entries.add(line)
    return frozenset(entries)


def default_stoplist() -> frozenset[str]:
    """The packaged English + CJK stoplists, merged."""
    entries: set[str] = set()
    for name in ("stopwords_en.txt", "stopwords_cjk.txt"):
        text = resources.files("clickrank.data").joinpath(name).read_text("utf-8")
        for line in text.splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                entries.add(line)
    return frozenset(entries)


def load_click_log(path: str | Path) -> list[RawClickRecord]:
    """Parse a JSONL click log into records, in file order.

    Each line must be a JSON object with exactly the keys user_id, query,
    doc_title, doc_url (strings) and clicked (boolean). A malformed line
    raises ClickLogParseError carrying its line number; a missing file
    raises FileNotFoundError.
    """
    records: list[RawClickRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                raise ClickLogParseError(lineno, "blank line")
            try:
                obj = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise ClickLogParseError(lineno, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise ClickLogParseError(lineno, "record is not a JSON object")
            if set(obj) != _CLICK_LOG_KEYS:
                missing = _CLICK_LOG_KEYS - set(obj)
                extra = set(obj) - _CLICK_LOG_KEYS
                detail = []
                if missing:
                    detail.append(f"missing keys {sorted(missing)}")
                if extra:
                    detail.append(f"unexpected keys {sorted(extra)}")
                raise ClickLogParseError(lineno, "; ".join(detail))
            for key in ("user_id", "query", "doc_title", "doc_url"):
                if not isinstance(obj[key], str):
                    raise ClickLogParseError(lineno, f"field {key!r} must be a string")
            if not isinstance(obj["clicked"], bool):
                raise ClickLogParseError(lineno, "field 'clicked' must be a boolean")
            records.append(
                RawClickRecord(
                    user_id=obj["user_id"],
                    query=obj["query"],
                    doc_title=obj["doc_title"],
                    doc_url=obj["doc_url"],
                    clicked=obj["clicked"],
                )
            )
    return records


def aggregate(
    records: Iterable[RawClickRecord],
    stops: frozenset[str] | set[str] | None = None,
) -> tuple[list[ClickPair], int]:
    """Collapse raw records into unique (normalized query, doc_url) pairs.

    Returns (pairs, skipped) where skipped counts records with an empty
    query (after trimming) or empty doc_url; such records are dropped but
    reported rather than failing, because real logs are dirty. The sum of
    click_count + nonclick_count over all pairs equals the number of
    non-skipped records. Pairs appear in first-seen order.
    """
    stops = stops or frozenset()
    pairs: dict[tuple[str, str], ClickPair] = {}
    skipped = 0
    for rec in records:
        if not rec.query.strip() or not rec.doc_url:
            skipped += 1
            continue
        qtokens = tuple(remove_stopwords(tokenize(rec.query), stops))
        key = (" ".join(qtokens), rec.doc_url)
        pair = pairs.get(key)
        if pair is None:
            dtokens = tuple(remove_stopwords(tokenize(rec.doc_title), stops))
            pair = ClickPair(query_tokens=qtokens, doc_id=rec.doc_url, doc_tokens=dtokens)
            pairs[key] = pair
        if rec.clicked:
            pair.click_count += 1
        else:
            pair.nonclick_count += 1
    return list(pairs.values()), skipped


def collect_documents(pairs: Iterable[ClickPair]) -> dict[str, tuple[str, ...]]:
    """Unique doc_id -> title tokens over a pair collection (first-seen wins)."""
    docs: dict[str, tuple[str, ...]] = {}
    for pair in pairs:
        if pair.doc_id not in docs:
            docs[pair.doc_id] = pair.doc_tokens
    return docs
