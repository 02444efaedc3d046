"""CoNLL column files and IOB2 span conversion."""
from __future__ import annotations

import warnings
from pathlib import Path
from typing import FrozenSet, List, Sequence, Tuple

from ..errors import ParseError

Span = Tuple[str, int, int]
SpanSet = FrozenSet[Span]


class IOB2RepairWarning(UserWarning):
    """An orphan ``I-X`` tag was rewritten to ``B-X``."""


def _split_tag(tag: str):
    if tag == "O":
        return "O", None
    if len(tag) > 2 and tag[1] == "-" and tag[0] in "BI":
        return tag[0], tag[2:]
    raise ValueError(f"not an IOB2 tag: {tag!r}")


def repair_iob2(tags: Sequence[str]):
    """Rewrite orphan ``I-X`` (no preceding ``B-X``/``I-X``) to ``B-X``.

    Returns ``(repaired_tags, positions_changed)``.
    """
    out, changed = [], []
    prev_type = None
    for i, tag in enumerate(tags):
        prefix, kind = _split_tag(tag)
        if prefix == "I" and prev_type != kind:
            tag = f"B-{kind}"
            changed.append(i)
        out.append(tag)
        prev_type = kind
    return out, changed


def iob2_to_spans(tags: Sequence[str]) -> SpanSet:
    """Maximal ``B-X (I-X)*`` runs as ``(X, start, end)`` with ``end`` exclusive."""
    tags, _ = repair_iob2(tags)
    spans = []
    start = kind = None
    for i, tag in enumerate(list(tags) + ["O"]):
        prefix, k = _split_tag(tag)
        if kind is not None and (prefix != "I" or k != kind):
            spans.append((kind, start, i))
            kind = None
        if prefix == "B":
            start, kind = i, k
    return frozenset(spans)


def spans_to_iob2(spans, length: int) -> List[str]:
    tags = ["O"] * length
    for kind, start, end in sorted(spans, key=lambda s: s[1]):
        if not 0 <= start < end <= length:
            raise ValueError(f"span {(kind, start, end)} outside sequence of length {length}")
        if any(t != "O" for t in tags[start:end]):
            raise ValueError(f"span {(kind, start, end)} overlaps another span")
        tags[start] = f"B-{kind}"
        for i in range(start + 1, end):
            tags[i] = f"I-{kind}"
    return tags


def load_conll_columns(path) -> List[Tuple[List[str], List[str]]]:
    """Read blank-line separated sentences; token in column 0, tag in the last column."""
    sentences = []
    tokens, tags = [], []
    width = None
    start_line = 0

    def flush():
        if tokens:
            repaired, changed = repair_iob2(tags)
            if changed:
                warnings.warn(f"sentence at line {start_line}: orphan I- tags at positions {changed} "
                              f"rewritten to B-", IOB2RepairWarning, stacklevel=3)
            sentences.append((list(tokens), repaired))
        tokens.clear()
        tags.clear()

    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("-DOCSTART-"):
                flush()
                continue
            cols = line.split()
            if len(cols) < 2:
                raise ParseError(f"expected at least 2 columns, found {len(cols)}", lineno)
            if width is None:
                width = len(cols)
            elif len(cols) != width:
                raise ParseError(f"ragged columns: expected {width}, found {len(cols)}", lineno)
            try:
                _split_tag(cols[-1])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if not tokens:
                start_line = lineno
            tokens.append(cols[0])
            tags.append(cols[-1])
    flush()
    return sentences


def write_conll_columns(path, sentences):
    with Path(path).open("w", encoding="utf-8") as fh:
        for tokens, tags in sentences:
            for tok, tag in zip(tokens, tags):
                fh.write(f"{tok} {tag}\n")
            fh.write("\n")
