"""Turn raw task inputs into :class:`EncodedExample` instances."""
from __future__ import annotations

import json
import warnings
from pathlib import Path
from typing import List, Mapping, Optional, Sequence

from ..errors import DataError
from ..heads import HeadSpec
from .conll import IOB2RepairWarning, repair_iob2
from .types import IGNORE_INDEX, EncodedExample, TaskSpec
from .vocab import Vocab, split_words_with_offsets


def _tag_ids(tags, spec: TaskSpec):
    try:
        return [spec.label_id(t) for t in tags]
    except Exception as exc:
        raise DataError(str(exc)) from None


def _repaired(tags):
    tags, changed = repair_iob2(tags)
    if changed:
        warnings.warn(f"orphan I- tags at positions {changed} rewritten to B-", IOB2RepairWarning, stacklevel=3)
    return tags


def verbalizer_head(label_words: Mapping[str, str], label_set: Sequence[str], vocab: Vocab) -> HeadSpec:
    """Resolve a label -> word map into a verbalizer head spec (one token per label)."""
    ids = []
    for label in label_set:
        if label not in label_words:
            raise DataError(f"no verbalizer word for label {label!r}")
        pieces = vocab.encode(label_words[label])
        if len(pieces) != 1 or pieces[0] == vocab.unk_id:
            raise DataError(f"verbalizer word {label_words[label]!r} for {label!r} is not a single known token")
        ids.append(pieces[0])
    return HeadSpec("verbalizer", len(label_set), tuple(ids))


def encode_classification(text, label, spec: TaskSpec, vocab: Vocab, text_b: Optional[str] = None,
                          head_kind: Optional[str] = None) -> EncodedExample:
    """``[CLS] text [SEP] (text_b [SEP])``, plus a trailing ``[MASK]`` for verbalizer heads."""
    head_kind = head_kind or spec.head.kind
    ids = [vocab.cls_id] + vocab.encode(text) + [vocab.sep_id]
    if text_b is not None:
        ids += vocab.encode(text_b) + [vocab.sep_id]
    if head_kind == "verbalizer":
        ids.append(vocab.mask_id)
    return EncodedExample(ids, [1] * len(ids), label=spec.label_id(label))


def encode_ner(tokens: Sequence[str], tags: Sequence[str], spec: TaskSpec, vocab: Vocab) -> EncodedExample:
    if len(tokens) != len(tags):
        raise DataError(f"{len(tokens)} tokens but {len(tags)} tags")
    tags = _repaired(tags)
    ids = [vocab.cls_id] + [vocab.lookup(t) for t in tokens] + [vocab.sep_id]
    tag_ids = [IGNORE_INDEX] + _tag_ids(tags, spec) + [IGNORE_INDEX]
    return EncodedExample(ids, [1] * len(ids), tag_ids=tag_ids)


def encode_srl(tokens: Sequence[str], verb_index: int, tags: Sequence[str], spec: TaskSpec,
               vocab: Vocab) -> EncodedExample:
    """``[CLS] tokens [SEP] verb``; the appended verb marks which predicate is labelled."""
    if not 0 <= verb_index < len(tokens):
        raise DataError(f"verb_index {verb_index} outside sentence of length {len(tokens)}")
    if len(tokens) != len(tags):
        raise DataError(f"{len(tokens)} tokens but {len(tags)} tags")
    tags = _repaired(tags)
    ids = [vocab.cls_id] + [vocab.lookup(t) for t in tokens] + [vocab.sep_id, vocab.lookup(tokens[verb_index])]
    tag_ids = [IGNORE_INDEX] + _tag_ids(tags, spec) + [IGNORE_INDEX, IGNORE_INDEX]
    return EncodedExample(ids, [1] * len(ids), tag_ids=tag_ids, verb_token_position=len(ids) - 1)


def encode_qa(question: str, context: str, answer_text: Optional[str], answer_start: Optional[int],
              is_impossible: bool, vocab: Vocab, answers: Sequence[str] = ()) -> EncodedExample:
    """``[CLS] question [SEP] context [SEP]`` with the answer aligned to context tokens.

    Unanswerable questions point both ends at the [CLS] position.
    """
    q_ids = vocab.encode(question)
    words = split_words_with_offsets(context)
    t0 = 1 + len(q_ids) + 1
    ids = [vocab.cls_id] + q_ids + [vocab.sep_id] + [vocab.lookup(w) for w, _, _ in words] + [vocab.sep_id]
    offsets: List[Optional[tuple]] = [None] * t0 + [(s, e) for _, s, e in words] + [None]
    window = (t0, t0 + len(words))
    golds = list(answers) or ([] if is_impossible or answer_text is None else [answer_text])
    ex = EncodedExample(ids, [1] * len(ids), context_window=window, token_offsets=offsets,
                        context=context, answers=golds)
    if is_impossible:
        ex.start_token, ex.end_token, ex.is_impossible = 0, 0, True
        return ex

    if answer_text is None or answer_start is None:
        raise DataError("answerable question needs answer text and start offset")
    a0, a1 = answer_start, answer_start + len(answer_text)
    if context[a0:a1] != answer_text:
        raise DataError(f"answer {answer_text!r} not found at offsets [{a0}, {a1}) of the context")
    covering = [i for i, (_, s, e) in enumerate(words) if s < a1 and e > a0]
    if not covering:
        raise DataError(f"answer offsets [{a0}, {a1}) cover no context token")
    first, last = covering[0], covering[-1]
    if words[first][1] < a0 or words[last][2] > a1:
        raise DataError(f"answer offsets [{a0}, {a1}) split a token: tokens span "
                        f"[{words[first][1]}, {words[last][2]})")
    ex.start_token, ex.end_token = t0 + first, t0 + last + 1
    return ex


def load_qa_json(path) -> List[dict]:
    """Read a SQuAD-like document: a list of ``{question, context, answers, is_impossible}``.

    A top-level ``{"data": [...]}`` wrapper is accepted too.
    """
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    records = doc["data"] if isinstance(doc, dict) else doc
    for i, rec in enumerate(records):
        missing = {"question", "context", "answers"} - set(rec)
        if missing:
            raise DataError(f"record {i} lacks fields {sorted(missing)}")
    return records


def encode_qa_record(record: dict, vocab: Vocab) -> EncodedExample:
    answers = record.get("answers") or []
    impossible = bool(record.get("is_impossible", not answers))
    golds = [a["text"] for a in answers]
    if impossible:
        return encode_qa(record["question"], record["context"], None, None, True, vocab)
    first = answers[0]
    return encode_qa(record["question"], record["context"], first["text"], first["answer_start"], False, vocab,
                     answers=golds)
