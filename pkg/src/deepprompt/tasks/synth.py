"""Procedurally generated tasks with known optimal accuracy.

* ``classification``: the label is whether a trigger word occurs (Bayes accuracy 1).
* ``ner``: a marker word introduces an entity; the entity is the run of
  entity-pool words right after it (``mr`` -> PER, ``at`` -> LOC).
* ``qa``: the question names a key word; the answer is the words that follow
  the key in the context. From difficulty 1 on, a third of the questions ask
  for a key that is absent (unanswerable).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from ..errors import ConfigError
from ..heads import HeadSpec
from .encoding import encode_classification, encode_ner, encode_qa_record, verbalizer_head
from .types import EncodedExample, TaskSpec
from .vocab import Vocab

TRIGGER = "trigger"
VERBALIZER_WORDS = ("false", "true")
PER_MARKER, LOC_MARKER = "mr", "at"
NER_LABELS = ("O", "B-PER", "I-PER", "B-LOC", "I-LOC")


@dataclass
class SynthTask:
    spec: TaskSpec
    vocab: Vocab
    train: List[EncodedExample]
    dev: List[EncodedExample]
    train_raw: list = field(default_factory=list)
    dev_raw: list = field(default_factory=list)

    def __iter__(self):
        # allows ``train, dev = synth_task(...)``
        return iter((self.train, self.dev))


def _pick(rng, items, **kw):
    return [str(x) for x in rng.choice(items, **kw)]


def _fillers(n):
    return [f"w{i}" for i in range(n)]


def _classification_raw(rng, n, difficulty):
    words = _fillers(16 + 16 * difficulty)
    lo, hi = 4 + 2 * difficulty, 9 + 2 * difficulty
    out = []
    for i in range(n):
        label = i % 2
        sent = _pick(rng, words, size=rng.integers(lo, hi))
        if label:
            sent.insert(int(rng.integers(0, len(sent) + 1)), TRIGGER)
        out.append((" ".join(sent), label))
    order = rng.permutation(n)
    return [out[i] for i in order]


def _ner_raw(rng, n, difficulty):
    fillers = _fillers(16 + 16 * difficulty)
    names = [f"name{i}" for i in range(8)]
    places = [f"place{i}" for i in range(6)]
    pool = set(names) | set(places)
    out = []
    for _ in range(n):
        tokens, tags = [], []
        for _ in range(int(rng.integers(2, 4 + difficulty))):
            r = rng.random()
            if r < 0.3:
                span = _pick(rng, names, size=rng.integers(1, 3), replace=False)
                tokens += [PER_MARKER] + span
                tags += ["O", "B-PER"] + ["I-PER"] * (len(span) - 1)
            elif r < 0.5:
                tokens += [LOC_MARKER, str(rng.choice(places))]
                tags += ["O", "B-LOC"]
            # a filler always follows, so an entity never runs into pool words
            k = int(rng.integers(1, 4))
            extra = _pick(rng, fillers, size=k)
            if difficulty >= 1 and rng.random() < 0.3:
                extra.append(str(rng.choice(sorted(pool))))
                extra.append(str(rng.choice(fillers)))
            tokens += extra
            tags += ["O"] * len(extra)
        out.append((tokens, tags))
    return out


def _qa_raw(rng, n, difficulty):
    fillers = _fillers(16 + 16 * difficulty)
    keys = [f"key{i}" for i in range(6)]
    values = [f"val{i}" for i in range(10)]
    out = []
    for i in range(n):
        ctx = _pick(rng, fillers, size=rng.integers(6, 11))
        key = str(rng.choice(keys))
        impossible = difficulty >= 1 and i % 3 == 2
        answer = _pick(rng, values, size=rng.integers(1, 3), replace=False)
        pos = int(rng.integers(0, len(ctx)))
        if impossible:
            other = str(rng.choice([k for k in keys if k != key]))
            ctx[pos:pos] = [other] + answer
        else:
            ctx[pos:pos] = [key] + answer
        context = " ".join(ctx)
        rec = {"question": f"find {key}", "context": context, "is_impossible": impossible, "answers": []}
        if not impossible:
            start = len(" ".join(ctx[: pos + 1])) + 1
            text = " ".join(answer)
            assert context[start:start + len(text)] == text
            rec["answers"] = [{"text": text, "answer_start": start}]
        out.append(rec)
    return out


def ner_pattern_spans(tokens):
    """Entity spans recomputed from surface tokens alone (independent of generated tags)."""
    spans = set()
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        kind = {"mr": "PER", "at": "LOC"}.get(tok)
        prefix = "name" if kind == "PER" else "place"
        if kind is None:
            i += 1
            continue
        j = i + 1
        while j < len(tokens) and tokens[j].startswith(prefix) and tokens[j][len(prefix):].isdigit():
            j += 1
        if j > i + 1:
            spans.add((kind, i + 1, j))
        i = j
    return frozenset(spans)


def synth_task(kind: str, difficulty: int = 0, seed: int = 0, n_train: int = 256, n_dev: int = 128,
               head_kind: str = None) -> SynthTask:
    """Generate a reproducible (train, dev) pair of encoded datasets."""
    rng = np.random.default_rng(seed)
    n = n_train + n_dev
    if kind == "classification":
        raw = _classification_raw(rng, n, difficulty)
        head_kind = head_kind or "cls_linear"
        vocab = Vocab.build([t for t, _ in raw], extra=(TRIGGER,) + VERBALIZER_WORDS)
        labels = ("negative", "positive")
        head = (verbalizer_head(dict(zip(labels, VERBALIZER_WORDS)), labels, vocab) if head_kind == "verbalizer"
                else HeadSpec(head_kind, 2))
        spec = TaskSpec(f"synth-trigger-d{difficulty}", "classification", labels, head, prompt_length_hint=8)
        encoded = [encode_classification(t, y, spec, vocab) for t, y in raw]
    elif kind == "ner":
        raw = _ner_raw(rng, n, difficulty)
        vocab = Vocab.build([t for t, _ in raw])
        spec = TaskSpec(f"synth-ner-d{difficulty}", "ner", NER_LABELS,
                        HeadSpec("token_tagging", len(NER_LABELS)), prompt_length_hint=16)
        encoded = [encode_ner(t, g, spec, vocab) for t, g in raw]
    elif kind == "qa":
        raw = _qa_raw(rng, n, difficulty)
        vocab = Vocab.build([r["question"] for r in raw] + [r["context"] for r in raw])
        spec = TaskSpec(f"synth-qa-d{difficulty}", "qa", ("start", "end"), HeadSpec("span", 2),
                        prompt_length_hint=16)
        encoded = [encode_qa_record(r, vocab) for r in raw]
    else:
        raise ConfigError(f"synthetic tasks exist for classification, ner and qa; got {kind!r}")
    return SynthTask(spec, vocab, encoded[:n_train], encoded[n_train:], raw[:n_train], raw[n_train:])
