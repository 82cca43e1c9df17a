"""Text pipeline: tokenization, negation scoping, vocabulary construction,
vectorization.

Expected token sequences are hand-derived from the scoping rules and frozen.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisyor.textproc import (
    NEGATION_STOPS,
    NEGATION_TRIGGERS,
    RawVisit,
    Vocabulary,
    anchor_token_name,
    basic_tokens,
    build_vocabulary,
    discover_bigrams,
    ingest_corpus,
    merge_bigrams,
    tokenize_with_negation,
    vectorize,
    visit_tokens,
)


# ----------------------------------------------------------------------
# tokenization building blocks


def test_basic_tokens_keep_punctuation_and_newline():
    assert basic_tokens("No fever; cough.\nclear") == [
        "no", "fever", ";", "cough", ".", "\n", "clear"
    ]


def test_basic_tokens_keep_apostrophes_and_digits():
    assert basic_tokens("pt's O2 sat 95") == ["pt's", "o2", "sat", "95"]


def test_merge_bigrams_greedy_left_to_right():
    bigrams = {("chest", "pain"), ("pain", "free")}
    assert merge_bigrams(["chest", "pain", "free"], bigrams) == ["chest_pain", "free"]
    assert merge_bigrams(["pain", "free"], bigrams) == ["pain_free"]


# ----------------------------------------------------------------------
# negation scoping rules


def test_trigger_opens_scope_until_stop():
    assert tokenize_with_negation("denies chest pain but reports nausea") == [
        "denies", "neg:chest", "neg:pain", "but", "reports", "nausea"
    ]


def test_scope_does_not_restart_on_inner_trigger():
    # "not" inside an open scope is negated itself and must not extend it past
    # the stop that follows.
    assert tokenize_with_negation("no pain not severe . fine") == [
        "no", "neg:pain", "neg:not", "neg:severe", ".", "fine"
    ]


def test_dash_negates_exactly_next_word():
    assert tokenize_with_negation("afebrile - cough runny") == [
        "afebrile", "neg:cough", "runny"
    ]


def test_dash_closes_open_scope():
    assert tokenize_with_negation("no fever - cough clear") == [
        "no", "neg:fever", "neg:cough", "clear"
    ]


def test_newline_closes_scope_silently():
    assert tokenize_with_negation("no fever\ncough") == ["no", "neg:fever", "cough"]


def test_negated_trigger_does_not_open_scope():
    assert tokenize_with_negation("- no fever") == ["neg:no", "fever"]


def test_bigram_merged_before_negation():
    out = tokenize_with_negation("denies chest pain", bigrams={("chest", "pain")})
    assert out == ["denies", "neg:chest_pain"]


@pytest.mark.parametrize("trigger", sorted(NEGATION_TRIGGERS))
def test_every_trigger_opens_scope(trigger):
    assert tokenize_with_negation(f"{trigger} finding") == [trigger, "neg:finding"]


@pytest.mark.parametrize("stop", sorted(NEGATION_STOPS))
def test_every_stop_closes_scope(stop):
    out = tokenize_with_negation(f"no swelling {stop} redness")
    assert out == ["no", "neg:swelling", stop, "redness"]


@given(st.text(alphabet="abcdefgh .;-\n", min_size=0, max_size=60))
@settings(max_examples=60, deadline=None)
def test_negation_never_emits_control_tokens(text):
    out = tokenize_with_negation(text)
    assert "-" not in out and "\n" not in out
    for tok in out:
        base = tok.removeprefix("neg:")
        assert not base.startswith("neg:")  # scoping never double-prefixes


# ----------------------------------------------------------------------
# visits


def test_visit_tokens_fields_and_prefixes():
    visit = RawVisit(
        id="v1",
        age=47,
        sex="M",
        chief_complaint="chest pain",
        md_comments="no fever",
        medication_history=["aspirin"],
        dispensed_medications=["morphine"],
        billing_codes=["410.9"],
    )
    toks = visit_tokens(visit)
    assert {"chest", "pain", "no", "neg:fever", "medhx:aspirin", "med:morphine",
            "age:40-49", "sex:m"} <= toks
    assert not any("410" in t for t in toks)  # billing codes never leak in


# ----------------------------------------------------------------------
# vocabulary construction


def _mk_visit(k, text):
    return RawVisit(id=f"v{k}", chief_complaint=text)


def test_stopword_filter_drops_over_half_frequency():
    visits = [_mk_visit(k, "ubiquitous filler") for k in range(6)]
    visits += [_mk_visit(6 + k, f"rare{k} thing") for k in range(4)]
    vocab = build_vocabulary(
        visits, {"cond": ["thing"]}, max_terms=50, bigrams=[]
    )
    # "ubiquitous"/"filler" appear in 6/10 > 50% records and must be dropped.
    assert "ubiquitous" not in vocab.tokens and "filler" not in vocab.tokens
    assert "rare0" in vocab.tokens


def test_anchor_tokens_fold_into_aggregated_column():
    visits = [_mk_visit(k, "cough anchorword") for k in range(4)]
    visits += [_mk_visit(4 + k, "cough") for k in range(4)]
    vocab = build_vocabulary(visits, {"cond": ["anchorword"]}, max_terms=10, bigrams=[])
    assert "anchorword" not in vocab.tokens
    assert anchor_token_name("cond") in vocab.tokens
    assert vocab.doc_freq[anchor_token_name("cond")] == 4


def test_anchors_readded_after_frequency_cut():
    # Many frequent fillers push the rare anchor out of the top slots; the
    # final width is max_terms plus the re-added anchor column.
    visits = []
    for k in range(12):
        # each filler appears in 5 of 13 records, under the 50% cutoff
        words = " ".join(f"common{j}" for j in range(8) if (k + j) % 12 < 5)
        visits.append(_mk_visit(k, words))
    visits.append(_mk_visit(99, "rareanchor"))
    vocab = build_vocabulary(visits, {"cond": ["rareanchor"]}, max_terms=4, bigrams=[])
    assert vocab.n == 5
    assert vocab.tokens[-1] == anchor_token_name("cond")
    assert vocab.anchor_index[0] == 4


def test_vocabulary_round_trip(tmp_path):
    visits = [_mk_visit(k, f"alpha beta{k}") for k in range(5)]
    vocab = build_vocabulary(visits, {"c": ["alpha"]}, max_terms=8, bigrams=[["beta0", "x"]])
    path = tmp_path / "vocab.json"
    vocab.save(path)
    back = Vocabulary.load(path)
    assert back.tokens == vocab.tokens
    assert back.anchor_tokens == vocab.anchor_tokens
    np.testing.assert_array_equal(back.anchor_index, vocab.anchor_index)
    assert back.bigram_set() == vocab.bigram_set()


def test_discover_bigrams_breaks_on_punctuation():
    visits = [
        _mk_visit(0, "chest pain. chest pain"),
        _mk_visit(1, "chest pain chest. pain"),
    ]
    found = discover_bigrams(visits, top=3)
    assert ["chest", "pain"] in found
    # "pain chest" occurs once unbroken; "pain . chest" pairs never count.
    counts = {tuple(b) for b in found}
    assert ("pain", "chest") in counts or len(found) <= 3


# ----------------------------------------------------------------------
# vectorization and ingest


def test_vectorize_sets_anchor_bits():
    visits = [_mk_visit(0, "cough anchorword"), _mk_visit(1, "cough")]
    vocab = build_vocabulary(visits, {"cond": ["anchorword"]}, max_terms=10, bigrams=[])
    rec = vectorize(visits[0], vocab)
    assert rec.a[0] == 1
    assert rec.x[vocab.anchor_index[0]] == 1
    rec = vectorize(visits[1], vocab)
    assert rec.a[0] == 0
    assert rec.x[vocab.anchor_index[0]] == 0


def test_ingest_corpus_shapes():
    visits = [_mk_visit(k, f"word{k % 3} anchorword" if k % 2 else f"word{k % 3}")
              for k in range(10)]
    ds, vocab = ingest_corpus(visits, {"cond": ["anchorword"]}, max_terms=20)
    assert len(ds) == 10
    assert ds.n == vocab.n and ds.m == 1
    np.testing.assert_array_equal(ds.X[:, vocab.anchor_index[0]], ds.A[:, 0])


def test_build_vocabulary_rejects_empty_inputs():
    with pytest.raises(ValueError):
        build_vocabulary([], {"c": ["a"]})
    with pytest.raises(ValueError):
        build_vocabulary([_mk_visit(0, "x")], {"c": []})
