"""Deterministic bilingual corpus and click-log generator.

Stands in for a proprietary click log: topics own disjoint Latin and CJK
sub-vocabularies, documents and queries sample tokens from their topic, and
clicks follow a position-biased model where same-topic impressions are
clicked with a high probability and off-topic ones with a low one. Latent
topic labels are kept only for oracle checks and never shown to models.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .corpus import RawClickRecord

_CJK_BASE = 0x4E00  # first codepoint used for synthetic two-character words


@dataclass
class SynthConfig:
    """Generator knobs; all defaults are sized for a desk-scale run."""

    n_topics: int = 20
    n_docs: int = 2000
    n_queries: int = 500
    latin_vocab: int = 2000
    cjk_vocab: int = 1000
    latin_ratio: float = 0.5
    doc_length: int = 12
    query_length: int = 3
    impressions_per_query: int = 10
    same_topic_share: float = 0.5
    p_rel: float = 0.7
    p_noise: float = 0.05
    position_decay: float = 0.85
    n_users: int = 50
    seed: int = 42

    def validate(self) -> None:
        for name in (
            "n_topics", "n_docs", "n_queries", "latin_vocab", "cjk_vocab",
            "doc_length", "query_length", "impressions_per_query", "n_users",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.p_noise < self.p_rel <= 1.0:
            raise ValueError("need 0 <= p_noise < p_rel <= 1")
        if not 0.0 < self.position_decay <= 1.0:
            raise ValueError("position_decay must be in (0, 1]")
        if not 0.0 <= self.latin_ratio <= 1.0:
            raise ValueError("latin_ratio must be in [0, 1]")
        if not 0.0 < self.same_topic_share <= 1.0:
            raise ValueError("same_topic_share must be in (0, 1]")
        if self.latin_vocab < self.n_topics or self.cjk_vocab < self.n_topics:
            raise ValueError("vocab sizes must be >= n_topics")
        if self.impressions_per_query > self.n_docs:
            raise ValueError("impressions_per_query cannot exceed n_docs")

    @classmethod
    def from_file(cls, path: str | Path) -> "SynthConfig":
        """Parse a key=value config file; unknown keys are rejected."""
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, sep, value = line.partition("=")
                key = key.strip()
                if not sep or key not in types:
                    raise ValueError(f"{path}:{lineno}: bad config line {line!r}")
                kwargs[key] = float(value) if types[key] == "float" else int(value)
        return cls(**kwargs)


@dataclass
class SynthDoc:
    doc_id: str
    title: str
    topic: int


@dataclass
class SynthQuery:
    text: str
    topic: int


@dataclass
class SynthCorpus:
    docs: list[SynthDoc] = field(default_factory=list)
    queries: list[SynthQuery] = field(default_factory=list)


def _latin_word(index: int) -> str:
    return f"w{index:04d}"


def _cjk_word(index: int) -> str:
    cp = _CJK_BASE + 2 * index
    return chr(cp) + chr(cp + 1)


def _render(words: list[tuple[str, bool]]) -> str:
    """Join sampled words: CJK runs concatenate (no internal spaces), so the
    tokenizer's bigram path is genuinely exercised; Latin words are spaced."""
    out: list[str] = []
    prev_cjk = False
    for word, is_cjk in words:
        if out and not (prev_cjk and is_cjk):
            out.append(" ")
        out.append(word)
        prev_cjk = is_cjk
    return "".join(out)


def _sample_text(rng, cfg: SynthConfig, topic: int, length: int) -> str:
    latin_per_topic = cfg.latin_vocab // cfg.n_topics
    cjk_per_topic = cfg.cjk_vocab // cfg.n_topics
    words: list[tuple[str, bool]] = []
    for _ in range(length):
        if rng.random() < cfg.latin_ratio:
            idx = topic * latin_per_topic + int(rng.integers(latin_per_topic))
            words.append((_latin_word(idx), False))
        else:
            idx = topic * cjk_per_topic + int(rng.integers(cjk_per_topic))
            words.append((_cjk_word(idx), True))
    return _render(words)


def generate_corpus(config: SynthConfig) -> SynthCorpus:
    """Documents and queries with latent topic labels; seeded, bit-stable."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    corpus = SynthCorpus()
    for i in range(config.n_docs):
        topic = int(rng.integers(config.n_topics))
        corpus.docs.append(
            SynthDoc(
                doc_id=f"https://kb.example.com/d{i:05d}",
                title=_sample_text(rng, config, topic, config.doc_length),
                topic=topic,
            )
        )
    for _ in range(config.n_queries):
        topic = int(rng.integers(config.n_topics))
        corpus.queries.append(
            SynthQuery(text=_sample_text(rng, config, topic, config.query_length), topic=topic)
        )
    return corpus


def generate_clicklog(corpus: SynthCorpus, config: SynthConfig) -> list[RawClickRecord]:
    """Impressions with position-biased clicks; every impression emits a record.

    Per query, `same_topic_share` of the impression slots are filled with
    same-topic documents (without replacement) and the rest uniformly from
    the corpus; the shuffled list is clicked with probability
    p_rel * decay^position for same-topic documents and p_noise * decay^position
    otherwise.
    """
    config.validate()
    rng = np.random.default_rng(config.seed + 1)
    by_topic: dict[int, list[int]] = {}
    for i, doc in enumerate(corpus.docs):
        by_topic.setdefault(doc.topic, []).append(i)

    records: list[RawClickRecord] = []
    for query in corpus.queries:
        same_pool = by_topic.get(query.topic, [])
        n_same = min(
            round(config.impressions_per_query * config.same_topic_share), len(same_pool)
        )
        chosen: list[int] = [
            same_pool[int(i)] for i in rng.choice(len(same_pool), size=n_same, replace=False)
        ] if n_same else []
        seen = set(chosen)
        while len(chosen) < config.impressions_per_query:
            cand = int(rng.integers(config.n_docs))
            if cand in seen:
                continue
            seen.add(cand)
            chosen.append(cand)
        order = rng.permutation(len(chosen))
        user = f"u{int(rng.integers(config.n_users)):03d}"
        for position, pick in enumerate(order):
            doc = corpus.docs[chosen[int(pick)]]
            p_base = config.p_rel if doc.topic == query.topic else config.p_noise
            p_click = p_base * config.position_decay**position
            records.append(
                RawClickRecord(
                    user_id=user,
                    query=query.text,
                    doc_title=doc.title,
                    doc_url=doc.doc_id,
                    clicked=bool(rng.random() < p_click),
                )
            )
    return records


def write_clicklog(records: list[RawClickRecord], path: str | Path) -> None:
    """Emit the click-log JSONL format consumed by corpus.load_click_log."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "user_id": rec.user_id,
                        "query": rec.query,
                        "doc_title": rec.doc_title,
                        "doc_url": rec.doc_url,
                        "clicked": rec.clicked,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def write_truth(corpus: SynthCorpus, path: str | Path) -> None:
    """Latent topic labels, for oracle checks only; models never read this."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus.docs:
            fh.write(json.dumps({"kind": "doc", "id": doc.doc_id, "topic": doc.topic}) + "\n")
        for query in corpus.queries:
            fh.write(
                json.dumps({"kind": "query", "text": query.text, "topic": query.topic},
                           ensure_ascii=False) + "\n"
            )
