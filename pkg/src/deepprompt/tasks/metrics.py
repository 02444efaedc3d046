"""Span micro-F1 for tagging tasks and SQuAD-style EM/F1."""
from __future__ import annotations

import re
import string
from collections import Counter
from typing import Iterable, Sequence, Tuple

from ..errors import UsageError


def micro_f1(pred: Sequence[Iterable], gold: Sequence[Iterable]) -> Tuple[float, float, float]:
    """Exact-match span precision/recall/F1 pooled over all examples.

    A ratio whose denominator is zero is reported as 0.
    """
    if len(pred) != len(gold):
        raise UsageError(f"pred has {len(pred)} examples, gold has {len(gold)}")
    tp = n_pred = n_gold = 0
    for p, g in zip(pred, gold):
        p, g = set(p), set(g)
        tp += len(p & g)
        n_pred += len(p)
        n_gold += len(g)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


def normalize_answer(text: str) -> str:
    text = "".join(ch for ch in text.lower() if ch not in _PUNCT)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def _token_f1(pred: str, gold: str) -> float:
    p, g = normalize_answer(pred).split(), normalize_answer(gold).split()
    if not p or not g:
        return float(p == g)
    common = sum((Counter(p) & Counter(g)).values())
    if common == 0:
        return 0.0
    precision, recall = common / len(p), common / len(g)
    return 2 * precision * recall / (precision + recall)


def qa_em_f1(pred_text: str, gold_texts: Sequence[str]) -> Tuple[float, float]:
    """Max exact-match and token-F1 over the gold answers.

    An unanswerable question has no gold answers (or only empty strings) and
    is matched only by an empty prediction.
    """
    golds = [g for g in gold_texts if normalize_answer(g)] or [""]
    em = max(float(normalize_answer(pred_text) == normalize_answer(g)) for g in golds)
    f1 = max(_token_f1(pred_text, g) for g in golds)
    return em, f1
