import json
from datetime import datetime, timezone

import pytest
from hypothesis import given, strategies as st

from eventtrade.corpus import (
    NOEVENT,
    Article,
    EventType,
    LabeledArticle,
    LabelSequence,
    LabelSet,
    article_to_record,
    load_articles,
    load_labeled,
    parse_timestamp,
    project_labels,
    spans_from_labels,
    split_report,
    split_train_val,
    tokenize,
    tokenize_article,
)
from eventtrade.errors import DataError

TS = datetime(2020, 3, 2, 14, 35, tzinfo=timezone.utc)


def art(title="Acme wins", text="Acme won a contract today.", id="a1"):
    return Article(id, title, text, TS)


# -- event types and label sets ------------------------------------------------

def test_eleven_event_types_round_trip():
    assert len(EventType) == 11
    assert len({e.value for e in EventType}) == 11
    for e in EventType:
        assert EventType(e.value) is e


def test_labelset_puts_noevent_last():
    ls = LabelSet((EventType.SR, EventType.A))
    assert len(ls) == 3
    assert ls.labels == ("SR", "A", NOEVENT)
    assert ls.index(NOEVENT) == 2 and ls.index("A") == 1
    assert LabelSet.from_list(ls.to_list()) == ls
    with pytest.raises(KeyError):
        ls.index("NC")


def test_labelset_rejects_duplicates_and_empty():
    with pytest.raises(ValueError):
        LabelSet((EventType.A, EventType.A))
    with pytest.raises(ValueError):
        LabelSet(())


def test_label_sequence_rejects_foreign_labels():
    with pytest.raises(ValueError):
        LabelSequence(("A", "XX"), LabelSet((EventType.A,)))


# -- articles and ingestion ----------------------------------------------------

def test_article_requires_minute_precision_and_text():
    with pytest.raises(ValueError):
        Article("x", "t", "body", TS.replace(second=17))
    with pytest.raises(ValueError):
        Article("x", " ", "body", TS)
    with pytest.raises(ValueError):
        Article("x", "t", "body", TS.replace(tzinfo=None))


def test_parse_timestamp_rejects_seconds():
    assert parse_timestamp("2020-03-02T14:35Z") == TS
    with pytest.raises(ValueError):
        parse_timestamp("2020-03-02T14:35:17Z")


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def test_load_single_record(tmp_path):
    p = write_jsonl(tmp_path / "a.jsonl", [{"id": "1", "title": "T", "text": "x", "published_at": "2020-03-02T14:35Z"}])
    arts = load_articles(p)
    assert len(arts) == 1 and arts[0].published_at == TS


def test_load_empty_file(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    assert load_articles(p) == []


def test_load_reports_seconds_with_line_number(tmp_path):
    good = {"id": "1", "title": "T", "text": "x", "published_at": "2020-03-02T14:35Z"}
    bad = {"id": "2", "title": "T", "text": "x", "published_at": "2020-03-02T14:35:17Z"}
    p = write_jsonl(tmp_path / "a.jsonl", [good, bad])
    with pytest.raises(DataError, match=r"a\.jsonl:2"):
        load_articles(p)


def test_load_rejects_duplicate_ids_and_missing_file(tmp_path):
    rec = {"id": "1", "title": "T", "text": "x", "published_at": "2020-03-02T14:35Z"}
    p = write_jsonl(tmp_path / "a.jsonl", [rec, rec])
    with pytest.raises(DataError, match="duplicate id"):
        load_articles(p)
    with pytest.raises(DataError, match="not found"):
        load_articles(tmp_path / "nope.jsonl")


def test_missing_timestamp_uses_sentinel_when_allowed(tmp_path):
    p = write_jsonl(tmp_path / "a.jsonl", [{"id": "1", "title": "Encyclopedia", "text": "A stock split is ..."}])
    with pytest.raises(DataError):
        load_articles(p)
    (a,) = load_articles(p, allow_missing_timestamp=True)
    assert a.published_at.year == 1970


def test_record_round_trip(tmp_path):
    la = LabeledArticle(Article("7", "Acme Buys Beta", "Acme agreed to acquire Beta.", TS, "ACME"), ((21, 28, EventType.A),))
    p = write_jsonl(tmp_path / "a.jsonl", [article_to_record(la)])
    assert load_labeled(p) == [la]


# -- tokenization --------------------------------------------------------------

def test_tokenize_example():
    toks = tokenize("AB Corp", "wins deal.")
    assert toks.surfaces == ["AB", "Corp", "wins", "deal", "."]
    assert [(t.start, t.end) for t in toks] == [(0, 2), (3, 7), (8, 12), (13, 17), (17, 18)]


def test_tokenize_concatenation_rule():
    toks = tokenize("A", "A")
    assert [(t.start, t.end) for t in toks] == [(0, 1), (2, 3)]


def test_tokenize_empty_title_is_error():
    with pytest.raises(ValueError):
        tokenize("", "x")


@given(st.text(min_size=1), st.text())
def test_token_spans_increase_and_match_source(title, text):
    toks = tokenize(title, text)
    joined = title + " " + text
    prev_end = 0
    for t in toks:
        assert prev_end <= t.start < t.end <= len(joined)
        assert joined[t.start : t.end] == t.surface
        prev_end = t.end
    assert tokenize(title, text) == toks


# -- label projection ----------------------------------------------------------

LS = LabelSet((EventType.A, EventType.NC, EventType.SR))


def test_no_spans_all_o():
    la = LabeledArticle(art())
    seq = project_labels(la, tokenize_article(la.article), LS)
    assert set(seq.labels) == {NOEVENT}


def test_single_span_covers_tokens_3_to_5():
    a = art("Acme news", "today Acme won new contract for ships")
    toks = tokenize_article(a)
    start, end = toks[3].start, toks[5].end
    seq = project_labels(LabeledArticle(a, ((start, end, EventType.NC),)), toks, LS)
    assert seq.labels == ("O", "O", "O", "NC", "NC", "NC", "O", "O", "O")


def test_two_disjoint_spans_same_event():
    a = art("Acme buys", "Acme buys Beta and later buys Gamma")
    toks = tokenize_article(a)
    spans = ((toks[3].start, toks[4].end, EventType.A), (toks[7].start, toks[8].end, EventType.A))
    seq = project_labels(LabeledArticle(a, spans), toks, LS)
    assert [i for i, lab in enumerate(seq.labels) if lab == "A"] == [3, 4, 7, 8]


def test_partial_overlap_labels_token():
    a = art("Acme", "repurchase")
    toks = tokenize_article(a)
    seq = project_labels(LabeledArticle(a, ((7, 9, EventType.SR),)), toks, LS)
    assert seq.labels == ("O", "SR")


def test_conflicting_spans_raise():
    a = art("Acme", "buys back stock")
    spans = ((5, 9, EventType.A), (7, 14, EventType.SR))
    with pytest.raises(ValueError, match="covered by both"):
        project_labels(LabeledArticle(a, spans), tokenize_article(a), LS)


def test_span_event_outside_label_set_raises():
    a = art("Acme", "splits stock")
    with pytest.raises(ValueError, match="not in label set"):
        project_labels(LabeledArticle(a, ((5, 11, EventType.SS),)), tokenize_article(a), LS)


def test_span_validation():
    with pytest.raises(ValueError):
        LabeledArticle(art(), ((0, 999, EventType.A),))
    with pytest.raises(ValueError):
        LabeledArticle(art(), ((0, 3, NOEVENT),))


words = st.lists(st.sampled_from(["Acme", "buys", "Beta", ",", "stock", "split", "."]), min_size=2, max_size=12)


@given(words, st.lists(st.sampled_from(["A", "NC", "SR", NOEVENT]), min_size=12, max_size=12))
def test_projection_round_trip(ws, labels):
    a = Article("p", ws[0], " ".join(ws[1:]), TS)
    toks = tokenize_article(a)
    seq = LabelSequence(tuple(labels[: len(toks)]), LS)
    spans = spans_from_labels(toks, seq)
    again = project_labels(LabeledArticle(a, spans), toks, LS)
    assert again == seq


# -- splitting -----------------------------------------------------------------

def labeled(n, ev, start=0):
    out = []
    for i in range(n):
        a = Article(f"{ev}{start + i}", "Title", "Body text here.", TS)
        out.append(LabeledArticle(a, ((6, 10, ev),) if ev else ()))
    return out


def test_split_one_event_ratio():
    train, val = split_train_val(labeled(10, EventType.NC), 0.8, seed=1)
    assert (len(train), len(val)) == (8, 2)


def test_split_per_stratum_counts():
    data = labeled(50, EventType.NC) + labeled(50, EventType.A)
    train, val = split_train_val(data, 0.8, seed=3)
    for ev in (EventType.NC, EventType.A):
        assert sum(ev in la.events for la in train) == 40
        assert sum(ev in la.events for la in val) == 10


def test_singleton_stratum_goes_to_train():
    data = labeled(5, EventType.NC) + labeled(1, EventType.SS)
    train, val = split_train_val(data, 0.8)
    assert any(EventType.SS in la.events for la in train)
    assert split_report(data, train)["SS"]["train_only"] is True


@given(st.integers(0, 30), st.integers(0, 30), st.integers(0, 10), st.floats(0.05, 0.95), st.integers(0, 99))
def test_split_is_partition_and_deterministic(n_a, n_b, n_o, ratio, seed):
    data = labeled(n_a, EventType.A) + labeled(n_b, EventType.NC) + labeled(n_o, None)
    train, val = split_train_val(data, ratio, seed)
    ids_t = {la.article.id for la in train}
    ids_v = {la.article.id for la in val}
    assert not ids_t & ids_v
    assert ids_t | ids_v == {la.article.id for la in data}
    assert split_train_val(data, ratio, seed) == (train, val)


def test_split_rejects_bad_ratio():
    with pytest.raises(ValueError):
        split_train_val(labeled(4, EventType.A), 1.0)
