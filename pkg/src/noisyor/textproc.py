"""Free-text and coded fields to binary bag-of-words features.

Tokenization keeps the punctuation that matters for negation scoping as
tokens, merges configured bigrams into single tokens, then prefixes tokens
inside a negation scope with "neg:".  The vocabulary drops >50%-frequency
stopwords, keeps the most frequent terms, and always carries one aggregated
anchor column per condition.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .model import PatientRecord

NEGATION_TRIGGERS = {"no", "not", "denies", "without", "non", "unable"}
# "-" is handled separately: it stops any open scope and negates exactly the
# next word.
NEGATION_STOPS = {
    ".", ";", "[", "+", "but", "and", "pt", "except", "reports", "alert",
    "complains", "has", "states", "secondary", "per", "did", "aox3",
}
_PUNCT_TOKENS = {".", ";", "[", "+"}

_TOKEN_RE = re.compile(r"[a-z0-9']+|[.;\[\+\-]|\n")


def basic_tokens(text: str) -> list[str]:
    """Lowercased word and punctuation tokens; newline survives as a token."""
    return _TOKEN_RE.findall(text.lower())


def merge_bigrams(tokens: list[str], bigrams: set[tuple[str, str]]) -> list[str]:
    """Greedy left-to-right replacement of configured bigrams by w1_w2."""
    out: list[str] = []
    i = 0
    while i < len(tokens):
        if i + 1 < len(tokens) and (tokens[i], tokens[i + 1]) in bigrams:
            out.append(f"{tokens[i]}_{tokens[i + 1]}")
            i += 2
        else:
            out.append(tokens[i])
            i += 1
    return out


def tokenize_with_negation(
    text: str, bigrams: set[tuple[str, str]] | None = None
) -> list[str]:
    """Appendix-style negation tagging over merged tokens.

    A trigger word opens a scope; tokens are emitted neg:-prefixed until a
    stop token.  Triggers inside an open scope do not restart it.  "-" closes
    any open scope, is not emitted itself, and negates exactly the next word.
    Newlines stop scopes and are never emitted.
    """
    tokens = merge_bigrams(basic_tokens(text), bigrams or set())
    out: list[str] = []
    in_scope = False
    negate_next = False
    for tok in tokens:
        if tok == "-":
            in_scope = False
            negate_next = True
            continue
        if tok == "\n":
            in_scope = False
            negate_next = False
            continue
        if tok in NEGATION_STOPS:
            in_scope = False
            negate_next = False
            out.append(tok)
            continue
        if negate_next:
            out.append(f"neg:{tok}")
            negate_next = False
            continue
        if in_scope:
            out.append(f"neg:{tok}")
            continue
        out.append(tok)
        if tok in NEGATION_TRIGGERS:
            in_scope = True
    return out


# ----------------------------------------------------------------------
# raw visits


@dataclass
class RawVisit:
    id: str = ""
    age: int | None = None
    sex: str | None = None
    chief_complaint: str = ""
    triage: str = ""
    md_comments: str = ""
    medication_history: list[str] = field(default_factory=list)
    dispensed_medications: list[str] = field(default_factory=list)
    billing_codes: list[str] = field(default_factory=list)  # evaluation only

    @staticmethod
    def from_dict(d: dict) -> "RawVisit":
        return RawVisit(
            id=d.get("id", ""),
            age=d.get("age"),
            sex=d.get("sex"),
            chief_complaint=d.get("chief_complaint", ""),
            triage=d.get("triage", ""),
            md_comments=d.get("md_comments", ""),
            medication_history=list(d.get("medication_history", [])),
            dispensed_medications=list(d.get("dispensed_medications", [])),
            billing_codes=list(d.get("billing_codes", [])),
        )


def visit_tokens(visit: RawVisit, bigrams: set[tuple[str, str]] | None = None) -> set[str]:
    """Distinct feature tokens of one visit.  Billing codes never appear."""
    toks: set[str] = set()
    for text in (visit.chief_complaint, visit.triage, visit.md_comments):
        toks.update(tokenize_with_negation(text, bigrams))
    toks.update(f"medhx:{c}" for c in visit.medication_history)
    toks.update(f"med:{c}" for c in visit.dispensed_medications)
    if visit.age is not None:
        decade = int(visit.age) // 10 * 10
        toks.add(f"age:{decade}-{decade + 9}")
    if visit.sex:
        toks.add(f"sex:{visit.sex.strip().lower()}")
    return toks


def load_visits_jsonl(path: str | Path) -> list[RawVisit]:
    visits = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                visits.append(RawVisit.from_dict(json.loads(line)))
    return visits


# ----------------------------------------------------------------------
# vocabulary


@dataclass
class Vocabulary:
    tokens: list[str]
    anchor_tokens: dict[str, list[str]]      # condition name -> raw anchor tokens
    conditions: list[str]
    anchor_index: np.ndarray                 # condition order -> column
    bigrams: list[list[str]]
    doc_freq: dict[str, int]

    def __post_init__(self):
        self.token_to_index = {t: k for k, t in enumerate(self.tokens)}
        self.anchor_index = np.asarray(self.anchor_index, dtype=int)

    @property
    def n(self) -> int:
        return len(self.tokens)

    @property
    def m(self) -> int:
        return len(self.conditions)

    def bigram_set(self) -> set[tuple[str, str]]:
        return {tuple(b) for b in self.bigrams}

    def to_dict(self) -> dict:
        return {
            "tokens": self.tokens,
            "anchor_tokens": self.anchor_tokens,
            "conditions": self.conditions,
            "anchor_index": self.anchor_index.tolist(),
            "bigrams": self.bigrams,
            "doc_freq": self.doc_freq,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @staticmethod
    def load(path: str | Path) -> "Vocabulary":
        d = json.loads(Path(path).read_text())
        return Vocabulary(
            tokens=d["tokens"],
            anchor_tokens=d["anchor_tokens"],
            conditions=d["conditions"],
            anchor_index=np.asarray(d["anchor_index"]),
            bigrams=d["bigrams"],
            doc_freq=d["doc_freq"],
        )


def anchor_token_name(condition: str) -> str:
    return f"anchor:{condition}"


def discover_bigrams(visits: list[RawVisit], top: int = 200) -> list[list[str]]:
    """Most frequent adjacent word pairs across the text fields."""
    counts: Counter = Counter()
    for v in visits:
        for text in (v.chief_complaint, v.triage, v.md_comments):
            run: list[str] = []
            for t in basic_tokens(text) + ["\n"]:
                if t.isalnum() or "'" in t:
                    run.append(t)
                else:
                    counts.update(zip(run, run[1:]))  # punctuation breaks adjacency
                    run = []
    return [list(b) for b, _ in counts.most_common(top)]


def build_vocabulary(
    visits: list[RawVisit],
    anchor_spec: dict[str, list[str]],
    max_terms: int = 1000,
    bigrams: list[list[str]] | None = None,
    bigram_top: int = 200,
) -> Vocabulary:
    """Frequency-filtered vocabulary plus one aggregated anchor column per
    condition.

    The aggregated anchor tokens compete in the frequency ranking like any
    other token; any that miss the cut are added back at the end, so the final
    width is max_terms plus the re-added anchors (when enough tokens exist).
    """
    if not visits:
        raise ValueError("empty corpus")
    for cond, toks in anchor_spec.items():
        if not toks:
            raise ValueError(f"condition {cond!r} has no anchor tokens")
    if bigrams is None:
        bigrams = discover_bigrams(visits, top=bigram_top)
    bigram_set = {tuple(b) for b in bigrams}

    conditions = list(anchor_spec.keys())
    raw_anchor = {c: set(t) for c, t in anchor_spec.items()}
    all_raw_anchor = set().union(*raw_anchor.values())

    df: Counter = Counter()
    for v in visits:
        toks = visit_tokens(v, bigram_set)
        agg = {
            anchor_token_name(c)
            for c in conditions
            if toks & raw_anchor[c]
        }
        # Raw anchor tokens are folded into their aggregated column and do not
        # compete as ordinary vocabulary.
        df.update((toks - all_raw_anchor) | agg)

    n_records = len(visits)
    kept = [(t, c) for t, c in df.items() if c <= 0.5 * n_records]
    kept.sort(key=lambda tc: (-tc[1], tc[0]))
    vocab_tokens = [t for t, _ in kept[:max_terms]]
    present = set(vocab_tokens)
    for c in conditions:
        name = anchor_token_name(c)
        if name not in present:
            vocab_tokens.append(name)
            present.add(name)
    anchor_index = [vocab_tokens.index(anchor_token_name(c)) for c in conditions]
    return Vocabulary(
        tokens=vocab_tokens,
        anchor_tokens={c: sorted(raw_anchor[c]) for c in conditions},
        conditions=conditions,
        anchor_index=np.asarray(anchor_index),
        bigrams=bigrams,
        doc_freq=dict(df),
    )


def vectorize(visit: RawVisit, vocab: Vocabulary) -> PatientRecord:
    """Binary presence vector over the vocabulary; unknown tokens are ignored."""
    toks = visit_tokens(visit, vocab.bigram_set())
    x = np.zeros(vocab.n, dtype=np.int8)
    for t in toks:
        k = vocab.token_to_index.get(t)
        if k is not None:
            x[k] = 1
    a = np.zeros(vocab.m, dtype=np.int8)
    for ci, cond in enumerate(vocab.conditions):
        if toks & set(vocab.anchor_tokens[cond]):
            a[ci] = 1
    x[vocab.anchor_index] = a
    return PatientRecord(x=x, a=a, id=visit.id)


def ingest_corpus(
    visits: list[RawVisit],
    anchor_spec: dict[str, list[str]],
    max_terms: int = 1000,
    bigrams: list[list[str]] | None = None,
) -> tuple[Dataset, Vocabulary]:
    vocab = build_vocabulary(visits, anchor_spec, max_terms=max_terms, bigrams=bigrams)
    records = [vectorize(v, vocab) for v in visits]
    return Dataset.from_records(records), vocab
