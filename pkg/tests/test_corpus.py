import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clickrank.corpus import (
    ClickPair,
    RawClickRecord,
    aggregate,
    collect_documents,
    default_stoplist,
    load_click_log,
    load_stoplist,
    remove_stopwords,
    tokenize,
)
from clickrank.errors import ClickLogParseError


def record(query="vpn down", url="d1", clicked=True, title="vpn help"):
    return RawClickRecord("u1", query, title, url, clicked)


class TestTokenize:
    def test_lowercase_and_punctuation(self):
        assert tokenize("Hello, World!") == ["hello", "world"]

    def test_empty(self):
        assert tokenize("") == []

    def test_punctuation_only(self):
        assert tokenize("!!! ... ---") == []

    def test_cjk_bigrams(self):
        # 4-character run: 3 overlapping bigrams.
        assert tokenize("VPN 连接失败") == ["vpn", "连接", "接失", "失败"]

    def test_single_cjk_char(self):
        assert tokenize("a 连 b") == ["a", "连", "b"]

    def test_mixed_script_run_boundary(self):
        assert tokenize("abc连接") == ["abc", "连接"]

    def test_digits_stay_with_letters(self):
        assert tokenize("error404 fix") == ["error404", "fix"]

    def test_fullwidth_punctuation_splits_runs(self):
        # The full-width comma separates the two runs: no cross-run bigram.
        assert tokenize("连接，失败") == ["连接", "失败"]

    def test_bigram_count_matches_run_length(self):
        for length in range(2, 12):
            run = "".join(chr(0x4E00 + i) for i in range(length))
            assert len(tokenize(run)) == length - 1

    @given(st.text(max_size=60))
    @settings(max_examples=200, deadline=None)
    def test_idempotent_on_own_output(self, text):
        once = tokenize(text)
        assert tokenize(" ".join(once)) == once

    @given(st.lists(st.sampled_from(["alpha", "beta", "x9", "q"]), max_size=8))
    @settings(max_examples=50, deadline=None)
    def test_latin_roundtrip(self, tokens):
        assert tokenize(" ".join(tokens)) == tokens


class TestRemoveStopwords:
    def test_basic(self):
        assert remove_stopwords(["the", "vpn", "is", "down"], {"the", "is"}) == ["vpn", "down"]

    def test_empty_input(self):
        assert remove_stopwords([], {"the"}) == []

    def test_total_removal(self):
        assert remove_stopwords(["the", "is"], {"the", "is"}) == []


class TestStoplists:
    def test_default_stoplist_nonempty_and_normalized(self):
        stops = default_stoplist()
        assert "the" in stops and "的" in stops
        for entry in stops:
            assert tokenize(entry) == [entry]

    def test_load_stoplist_skips_comments(self, tmp_path):
        p = tmp_path / "stops.txt"
        p.write_text("# comment\nfoo\n\nbar\n", encoding="utf-8")
        assert load_stoplist(p) == {"foo", "bar"}


class TestAggregate:
    def test_same_pair_accumulates(self):
        recs = [record(clicked=True), record(clicked=True), record(clicked=False)]
        pairs, skipped = aggregate(recs)
        assert skipped == 0
        assert len(pairs) == 1
        assert pairs[0].click_count == 2
        assert pairs[0].nonclick_count == 1

    def test_distinct_urls_make_distinct_pairs(self):
        pairs, _ = aggregate([record(url="d1"), record(url="d2")])
        assert len(pairs) == 2

    def test_skipped_records_counted(self):
        recs = [record(), record(query="   "), record(url="")]
        pairs, skipped = aggregate(recs)
        assert skipped == 2
        assert len(pairs) == 1

    def test_conservation(self):
        recs = [
            record(query=q, url=u, clicked=c)
            for q in ("a b", "c d", "e")
            for u in ("d1", "d2")
            for c in (True, False, False)
        ]
        pairs, skipped = aggregate(recs)
        assert skipped == 0
        assert sum(p.click_count + p.nonclick_count for p in pairs) == len(recs)

    def test_no_duplicate_keys(self):
        recs = [record(query=f"q{i % 3}", url=f"d{i % 2}") for i in range(20)]
        pairs, _ = aggregate(recs)
        keys = [(p.query_text, p.doc_id) for p in pairs]
        assert len(keys) == len(set(keys))

    def test_normalization_merges_variants(self):
        # Same normalized text -> one pair.
        pairs, _ = aggregate([record(query="VPN Down!"), record(query="vpn down")])
        assert len(pairs) == 1

    def test_stopword_removal_applies(self):
        pairs, _ = aggregate([record(query="the vpn")], stops=frozenset({"the"}))
        assert pairs[0].query_tokens == ("vpn",)

    def test_collect_documents_first_seen(self):
        recs = [record(url="d1", title="one"), record(url="d1", title="two", query="other")]
        pairs, _ = aggregate(recs)
        docs = collect_documents(pairs)
        assert docs == {"d1": ("one",)}


class TestLoadClickLog:
    def write(self, tmp_path, lines):
        p = tmp_path / "log.jsonl"
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return p

    def good_line(self, **overrides):
        obj = {"user_id": "u1", "query": "q", "doc_title": "t", "doc_url": "d", "clicked": True}
        obj.update(overrides)
        return json.dumps(obj)

    def test_well_formed(self, tmp_path):
        p = self.write(tmp_path, [self.good_line(), self.good_line(clicked=False)])
        records = load_click_log(p)
        assert len(records) == 2
        assert records[0].clicked and not records[1].clicked

    def test_empty_file(self, tmp_path):
        p = tmp_path / "log.jsonl"
        p.write_text("", encoding="utf-8")
        assert load_click_log(p) == []

    def test_missing_field_reports_line(self, tmp_path):
        bad = json.dumps({"user_id": "u", "query": "q", "doc_title": "t", "doc_url": "d"})
        p = self.write(tmp_path, [self.good_line(), bad])
        with pytest.raises(ClickLogParseError) as err:
            load_click_log(p)
        assert err.value.line_number == 2
        assert "clicked" in str(err.value)

    def test_non_boolean_clicked(self, tmp_path):
        p = self.write(tmp_path, [self.good_line(clicked=1)])
        with pytest.raises(ClickLogParseError):
            load_click_log(p)

    def test_invalid_json(self, tmp_path):
        p = self.write(tmp_path, ["{not json"])
        with pytest.raises(ClickLogParseError) as err:
            load_click_log(p)
        assert err.value.line_number == 1

    def test_missing_file(self):
        with pytest.raises(FileNotFoundError):
            load_click_log("/nonexistent/clicklog.jsonl")

    def test_extra_key_rejected(self, tmp_path):
        p = self.write(tmp_path, [self.good_line(extra="x")])
        with pytest.raises(ClickLogParseError):
            load_click_log(p)


class TestClickPair:
    def test_query_text_joins_tokens(self):
        pair = ClickPair(("vpn", "down"), "d1", ("vpn",))
        assert pair.query_text == "vpn down"
