import math
from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eventtrade import detector as det
from eventtrade import synthetic
from eventtrade.corpus import Article, EventType as E, LabeledArticle, LabelSequence, LabelSet, split_train_val
from eventtrade.encoder import EncoderParams, encode
from eventtrade.errors import DataError

LS3 = LabelSet((E.A, E.NC, E.SR))
TS = datetime(2020, 3, 2, 15, 0, tzinfo=timezone.utc)


def model(k_set=LS3, dim=16, hidden=8, max_len=8, seed=0, vocab=97, window=2, **kw):
    enc = EncoderParams.init(dim=dim, vocab=vocab, max_len=max_len, window=window, seed=seed)
    return det.DetectorModel.init(enc, k_set, hidden=hidden, seed=seed + 1, **kw)


def zero_heads(m):
    for v in m.heads.values():
        v[:] = 0.0
    return m


def toks(*words):
    from eventtrade.corpus import TokenSeq
    return TokenSeq.from_surfaces(words)


# -- scores and losses ---------------------------------------------------------

def test_zero_weights_give_zero_scores_and_logits():
    m = zero_heads(model())
    out = encode(m.encoder, toks("Acme", "buys", "Beta"))
    sm = det.low_scores(m, out)
    assert not sm.scores.any()
    assert not det.high_logits(m, out, sm).any()


def test_padding_rows_are_zero():
    m = model(LabelSet(), max_len=256)
    sm = det.low_scores(m, encode(m.encoder, toks("a", "b", "c")))
    assert sm.actual_len == 3 and sm.scores.shape == (256, 12)
    assert not sm.scores[3:].any() and sm.scores[:3].any()


def test_high_input_width():
    enc = EncoderParams.init(dim=128, vocab=64, max_len=256)
    m = det.DetectorModel(enc, LabelSet())
    assert m.high_in == 3200


def test_low_scores_match_dense_oracle():
    m = model()
    out = encode(m.encoder, toks("Acme", "buys", "Beta", "."))
    h = m.heads
    for i, state in enumerate(out.token_reprs):
        hid = [max(0.0, float(state @ h["low_w1"][:, j] + h["low_b1"][j])) for j in range(8)]
        row = [sum(hid[j] * h["low_w2"][j, c] for j in range(8)) + h["low_b2"][c] for c in range(4)]
        np.testing.assert_allclose(det.low_scores(m, out).scores[i], row, rtol=1e-12, atol=1e-14)


def test_high_logits_match_dense_oracle():
    m = model()
    for v in m.heads.values():
        v += 0.1
    out = encode(m.encoder, toks("Acme", "buys", "Beta"))
    sm = det.low_scores(m, out)
    x = list(sm.scores.reshape(-1)) + list(out.article_repr)
    h = m.heads
    hid = [max(0.0, sum(x[i] * h["high_w1"][i, j] for i in range(len(x))) + h["high_b1"][j]) for j in range(8)]
    want = [sum(hid[j] * h["high_w2"][j, c] for j in range(8)) + h["high_b2"][c] for c in range(3)]
    np.testing.assert_allclose(det.high_logits(m, out, sm), want, rtol=1e-10)


def test_low_loss_uniform_and_limit():
    sm = det.ScoreMatrix(np.zeros((256, 12)), 5)
    assert det.low_loss(sm, [11, 0, 3, 11, 11]) == pytest.approx(math.log(12), abs=1e-12)
    big = np.zeros((8, 4))
    gold = [3, 0, 1]
    for i, g in enumerate(gold):
        big[i, g] = 80.0
    assert det.low_loss(det.ScoreMatrix(big, 3), gold) < 1e-30


def test_low_loss_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    scores = np.zeros((8, 4))
    scores[:5] = rng.normal(size=(5, 4))
    gold = [3, 1, 0, 3, 2]
    want = 0.0
    for i, g in enumerate(gold):
        z = sum(math.exp(v) for v in scores[i])
        want -= math.log(math.exp(scores[i, g]) / z)
    assert det.low_loss(det.ScoreMatrix(scores, 5), gold) == pytest.approx(want / 5, rel=1e-12)


def test_low_loss_accepts_label_sequence_and_checks_length():
    sm = det.ScoreMatrix(np.zeros((8, 4)), 2)
    seq = LabelSequence(("A", "O"), LS3)
    assert det.low_loss(sm, seq) == pytest.approx(math.log(4))
    with pytest.raises(ValueError):
        det.low_loss(sm, [0, 1, 2])


def test_high_loss_zero_logits_and_limit():
    assert det.high_loss(np.zeros(11), [1] + [0] * 10) == pytest.approx(11 * math.log(2), abs=1e-12)
    assert det.high_loss(np.array([60.0, -60.0]), [1, 0]) < 1e-25


def test_high_loss_matches_scalar_oracle():
    logits = np.array([0.3, -1.2, 2.5, 0.0])
    y = [1, 0, 0, 1]
    want = 0.0
    for z, t in zip(logits, y):
        p = 1 / (1 + math.exp(-z))
        want -= t * math.log(p) + (1 - t) * math.log(1 - p)
    assert det.high_loss(logits, y) == pytest.approx(want, rel=1e-12)


def test_high_loss_rejects_non_binary_gold():
    with pytest.raises(ValueError):
        det.high_loss(np.zeros(2), [0.5, 1])


def event_free_article():
    return LabeledArticle(Article("z", "Acme Opens Office", "Acme opened an office.", TS))


def test_total_loss_composes_uniform_cases():
    m = zero_heads(model(LabelSet(), max_len=32))
    assert det.total_loss(m, event_free_article()) == pytest.approx(math.log(12) + 11 * math.log(2), abs=1e-12)


def test_total_gradient_is_sum_of_parts():
    m = model()
    for v in m.heads.values():
        v += np.random.default_rng(1).normal(0, 0.1, v.shape)
    a = Article("g", "Acme", "buys Beta for cash", TS)
    ex = det.prepare(m, LabeledArticle(a, ((5, 9, E.A),)))
    _, _, g_low = det.batch_loss_and_grad(m, [ex], 1.0, 0.0)
    _, _, g_high = det.batch_loss_and_grad(m, [ex], 0.0, 1.0)
    _, _, g_tot = det.batch_loss_and_grad(m, [ex], 1.0, 1.0)
    import oracles
    for k, v in g_tot.items():
        shape = m.params()[k].shape
        np.testing.assert_allclose(oracles.dense_grad(v, shape),
                                   oracles.dense_grad(g_low[k], shape) + oracles.dense_grad(g_high[k], shape),
                                   rtol=1e-10, atol=1e-14)


def test_padding_neutrality():
    rng = np.random.default_rng(2)
    real = rng.normal(size=(4, 4))
    gold = [0, 3, 2, 3]
    short = np.zeros((8, 4))
    short[:4] = real
    longer = np.zeros((64, 4))
    longer[:4] = real
    assert det.low_loss(det.ScoreMatrix(short, 4), gold) == det.low_loss(det.ScoreMatrix(longer, 4), gold)


def test_threshold_must_be_open_interval():
    with pytest.raises(ValueError):
        model(threshold=1.0)


# -- decoding ------------------------------------------------------------------

def test_scores_favoring_o_give_no_low_events():
    s = np.zeros((8, 4))
    s[:3, 3] = 1.0
    res = det.detection_from_scores(det.ScoreMatrix(s, 3), np.full(3, -5.0), LS3)
    assert res.low_events == frozenset() and res.final_events == frozenset()


def test_ties_prefer_o_then_lowest_event():
    s = np.zeros((8, 4))
    s[1] = [2.0, 2.0, 0.0, 1.0]
    res = det.detection_from_scores(det.ScoreMatrix(s, 2), np.full(3, -5.0), LS3)
    assert res.low_labels.labels == ("O", "A")


def test_high_only_event_enters_final_set():
    s = np.zeros((8, 4))
    s[:2, 3] = 1.0
    logit = math.log(0.6 / 0.4)
    res = det.detection_from_scores(det.ScoreMatrix(s, 2), np.array([-5.0, logit, -5.0]), LS3, threshold=0.5)
    assert res.high_events == {E.NC} and res.final_events == {E.NC}


def test_combination_modes():
    s = np.zeros((8, 4))
    s[0] = [3.0, 0, 0, 0]
    s[1, 3] = 1.0
    logits = np.array([-5.0, 5.0, -5.0])
    sm = det.ScoreMatrix(s, 2)
    got = {c: det.detection_from_scores(sm, logits, LS3, combine=c).final_events for c in det.Combine}
    assert got[det.Combine.UNION] == {E.A, E.NC}
    assert got[det.Combine.LOW] == {E.A}
    assert got[det.Combine.HIGH] == {E.NC}
    assert got[det.Combine.INTERSECTION] == frozenset()


score_rows = st.lists(st.lists(st.integers(-3, 3), min_size=4, max_size=4), min_size=1, max_size=8)


@given(score_rows, st.lists(st.floats(-6, 6), min_size=3, max_size=3), st.floats(0.01, 0.98), st.floats(0.0, 0.01))
def test_threshold_monotone_and_union_superset(rows, logits, t, dt):
    s = np.zeros((8, 4))
    s[: len(rows)] = rows
    sm = det.ScoreMatrix(s, len(rows))
    lo = det.detection_from_scores(sm, np.array(logits), LS3, threshold=t)
    hi = det.detection_from_scores(sm, np.array(logits), LS3, threshold=t + dt)
    assert hi.high_events <= lo.high_events
    assert lo.final_events >= lo.low_events and lo.final_events >= lo.high_events


def test_decode_is_deterministic_and_rejects_empty():
    m = model(max_len=32)
    a = Article("d", "Acme Buys Beta", "Acme agreed to buy Beta.", TS)
    assert det.decode(m, a) == det.decode(m, a)
    with pytest.raises(ValueError):
        det.decode(m, toks())


def test_detection_record_shape():
    m = model(max_len=32)
    rec = det.detection_record("d", det.decode(m, Article("d", "Acme", "buys Beta", TS)))
    assert set(rec) == {"id", "low_spans", "high_probs", "final_events"}
    assert set(rec["high_probs"]) == {"A", "NC", "SR"}


# -- training ------------------------------------------------------------------

def test_train_zero_lr_keeps_params():
    m = model(max_len=64)
    data = synthetic.templated_corpus(6, 2, events=(E.A, E.NC, E.SR), seed=1)
    out = det.train(m, data, (), det.TrainConfig(epochs=1, batch_size=4, lr=0.0))
    for k, v in m.params().items():
        np.testing.assert_array_equal(out.params()[k], v)


def test_train_learns_templated_events():
    data = synthetic.templated_corpus(60, 0, events=(E.A, E.NC, E.SR), seed=2)
    train_set, val_set = split_train_val(data, 0.8, seed=0)
    m = model(dim=32, hidden=128, max_len=64, vocab=4096, window=3)
    out = det.train(m, train_set, val_set, det.TrainConfig(epochs=20, batch_size=1, lr=1e-2, seed=0))
    assert det.evaluate(out, val_set).f1 >= 0.9


def test_train_is_deterministic(tmp_path):
    data = synthetic.templated_corpus(12, 4, events=(E.A, E.NC, E.SR), seed=3)
    cfg = det.TrainConfig(epochs=2, batch_size=4, seed=5)
    a = det.train(model(max_len=64), data, data[:4], cfg)
    b = det.train(model(max_len=64), data, data[:4], cfg)
    a.save(tmp_path / "a.bin")
    b.save(tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_train_rejects_empty():
    with pytest.raises(DataError):
        det.train(model(), [], ())


def test_model_round_trip(tmp_path):
    m = model(max_len=32, threshold=0.3, combine="intersection")
    m.save(tmp_path / "m.bin")
    back = det.DetectorModel.load(tmp_path / "m.bin")
    assert back.label_set == m.label_set and back.threshold == 0.3 and back.combine is det.Combine.INTERSECTION
    a = Article("d", "Acme Buys Beta", "Acme agreed to buy Beta.", TS)
    assert det.decode(back, a) == det.decode(m, a)


def test_micro_scores_counts():
    pred = [frozenset({E.A}), frozenset({E.A, E.NC}), frozenset()]
    gold = [frozenset({E.A}), frozenset({E.NC}), frozenset({E.SR})]
    sc = det.micro_scores(pred, gold, LS3.events)
    # tp=2 (A, NC), fp=1 (A), fn=1 (SR)
    assert (sc.precision, sc.recall, sc.f1) == pytest.approx((2 / 3, 2 / 3, 2 / 3))
    assert sc.per_event["SR"]["recall"] == 0.0
