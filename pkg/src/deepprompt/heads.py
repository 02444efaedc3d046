"""Output heads: [CLS] linear classifier, verbalizer, token tagger and span head."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError, TaskEncodingError

HEAD_KINDS = ("cls_linear", "verbalizer", "token_tagging", "span")
INIT_STD = 0.02
DEFAULT_MAX_SPAN_LEN = 30


@dataclass(frozen=True)
class HeadSpec:
    kind: str
    num_labels: int
    verbalizer_ids: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "verbalizer_ids", tuple(int(i) for i in self.verbalizer_ids))
        if self.kind not in HEAD_KINDS:
            raise ConfigError(f"head kind must be one of {HEAD_KINDS}, got {self.kind!r}")
        if self.num_labels < 1:
            raise ConfigError("num_labels must be positive")
        if self.kind in ("cls_linear", "verbalizer") and self.num_labels < 2:
            raise ConfigError("classification heads need at least two labels")
        if self.kind == "span" and self.num_labels != 2:
            raise ConfigError("span head has exactly two labels (start, end)")
        if self.kind == "verbalizer":
            if len(self.verbalizer_ids) != self.num_labels:
                raise ConfigError(f"need one verbalizer id per label: {self.num_labels} labels, "
                                  f"{len(self.verbalizer_ids)} ids")
            if len(set(self.verbalizer_ids)) != len(self.verbalizer_ids):
                raise ConfigError(f"verbalizer ids must be distinct: {self.verbalizer_ids}")

    def validate(self, vocab_size: int):
        bad = [i for i in self.verbalizer_ids if not 0 <= i < vocab_size]
        if bad:
            raise ConfigError(f"verbalizer ids {bad} outside vocabulary of size {vocab_size}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "num_labels": self.num_labels, "verbalizer_ids": list(self.verbalizer_ids)}

    @classmethod
    def from_dict(cls, data) -> "HeadSpec":
        return cls(data["kind"], data["num_labels"], tuple(data.get("verbalizer_ids", ())))


@dataclass
class SpanPrediction:
    start: int
    end: int  # exclusive
    score: float
    is_null: bool
    null_score: float = field(default=float("nan"))


def _init_linear(linear: nn.Linear, gen: torch.Generator):
    with torch.no_grad():
        linear.weight.copy_(torch.randn(linear.weight.shape, generator=gen) * INIT_STD)
        linear.bias.zero_()


class ClsLinearHead(nn.Module):
    """Randomly initialised affine classifier over the pooled first-token state."""

    def __init__(self, hidden_size, num_labels, seed=0):
        super().__init__()
        self.linear = nn.Linear(hidden_size, num_labels)
        _init_linear(self.linear, torch.Generator().manual_seed(seed))

    def forward(self, pooled):
        return self.linear(pooled)


def cls_linear(pooled: torch.Tensor, head: ClsLinearHead) -> torch.Tensor:
    return head(pooled)


def mask_positions(token_ids: torch.Tensor, mask_token_id: int) -> torch.Tensor:
    """Index of the first [MASK] in each row; raises if a row has none."""
    is_mask = token_ids == mask_token_id
    missing = (~is_mask.any(dim=1)).nonzero().flatten().tolist()
    if missing:
        raise TaskEncodingError(f"rows {missing} contain no [MASK] token (id {mask_token_id})")
    return is_mask.to(torch.long).argmax(dim=1)


def verbalizer_logits(mask_hidden: torch.Tensor, verbalizer_ids: Sequence[int],
                      embedding_table: torch.Tensor) -> torch.Tensor:
    """Dot product of the [MASK] state with each label word's embedding row."""
    ids = torch.as_tensor(list(verbalizer_ids), dtype=torch.long)
    if ids.numel() and (ids.min() < 0 or ids.max() >= embedding_table.shape[0]):
        raise ConfigError(f"verbalizer ids {ids.tolist()} outside embedding table")
    return mask_hidden @ embedding_table[ids].to(mask_hidden.dtype).T


class VerbalizerHead(nn.Module):
    """LM-style head tied to the frozen token embedding table; has no parameters."""

    def __init__(self, embedding: nn.Embedding, verbalizer_ids: Sequence[int], mask_token_id: int):
        super().__init__()
        self._embedding = [embedding]  # not registered: the table belongs to the backbone
        self.verbalizer_ids = tuple(verbalizer_ids)
        self.mask_token_id = mask_token_id

    @property
    def embedding_table(self):
        return self._embedding[0].weight

    def forward(self, hidden, token_ids):
        pos = mask_positions(token_ids, self.mask_token_id)
        mask_hidden = hidden[torch.arange(hidden.shape[0]), pos]
        return verbalizer_logits(mask_hidden, self.verbalizer_ids, self.embedding_table)


class TokenTaggingHead(nn.Module):
    def __init__(self, hidden_size, num_labels, seed=0):
        super().__init__()
        self.linear = nn.Linear(hidden_size, num_labels)
        _init_linear(self.linear, torch.Generator().manual_seed(seed))

    def forward(self, hidden):
        return self.linear(hidden)


def token_tagging(hidden: torch.Tensor, head: TokenTaggingHead) -> torch.Tensor:
    return head(hidden)


class SpanHead(nn.Module):
    def __init__(self, hidden_size, seed=0):
        super().__init__()
        self.linear = nn.Linear(hidden_size, 2)
        _init_linear(self.linear, torch.Generator().manual_seed(seed))

    def forward(self, hidden):
        logits = self.linear(hidden)
        return logits[..., 0], logits[..., 1]


def span_logits(hidden: torch.Tensor, head: SpanHead):
    return head(hidden)


def build_head(spec: HeadSpec, hidden_size: int, embedding: Optional[nn.Embedding] = None,
               mask_token_id: Optional[int] = None, seed: int = 0) -> nn.Module:
    # nn.Linear's default init draws from the global RNG before the seeded init overwrites it
    with torch.random.fork_rng(devices=[]):
        return _build_head(spec, hidden_size, embedding, mask_token_id, seed)


def _build_head(spec, hidden_size, embedding, mask_token_id, seed):
    if spec.kind == "cls_linear":
        return ClsLinearHead(hidden_size, spec.num_labels, seed)
    if spec.kind == "token_tagging":
        return TokenTaggingHead(hidden_size, spec.num_labels, seed)
    if spec.kind == "span":
        return SpanHead(hidden_size, seed)
    if embedding is None or mask_token_id is None:
        raise ConfigError("verbalizer head needs the backbone embedding table and [MASK] id")
    spec.validate(embedding.num_embeddings)
    return VerbalizerHead(embedding, spec.verbalizer_ids, mask_token_id)


def _as_float64(values) -> np.ndarray:
    # lists go straight to float64; routing them through torch would round to float32
    if isinstance(values, torch.Tensor):
        values = values.detach().cpu().numpy()
    return np.asarray(values, dtype=np.float64)


def decode_span(start_logits, end_logits, context_window, max_span_len=DEFAULT_MAX_SPAN_LEN,
                null_threshold=0.0, cls_index=0) -> SpanPrediction:
    """Best start/end pair of one example, or a null answer.

    A pair ``(s, e)`` (``e`` exclusive) scores ``start[s] + end[e-1]`` and must lie
    inside ``context_window = (lo, hi)`` with ``e - s <= max_span_len``. Ties go
    to the earlier start, then the shorter span. The answer is null when the
    best score minus ``start[cls] + end[cls]`` falls below ``null_threshold``.
    """
    start, end = _as_float64(start_logits), _as_float64(end_logits)
    lo, hi = int(context_window[0]), int(context_window[1])
    lo, hi = max(lo, 0), min(hi, len(start))
    if hi <= lo:
        raise TaskEncodingError(f"empty context window {tuple(context_window)}")
    if max_span_len < 1:
        raise ConfigError("max_span_len must be at least 1")

    s = np.arange(lo, hi)[:, None]
    j = np.arange(lo, hi)[None, :]  # inclusive end index
    valid = (j >= s) & (j - s < max_span_len)
    scores = start[lo:hi, None] + end[None, lo:hi]
    scores = np.where(valid, scores, -np.inf)
    flat = int(np.argmax(scores))  # first maximum: earliest start, then shortest
    bs, bj = divmod(flat, hi - lo)
    best = float(scores[bs, bj])
    null_score = float(start[cls_index] + end[cls_index])
    if best - null_score < null_threshold:
        return SpanPrediction(cls_index, cls_index, best, True, null_score)
    return SpanPrediction(lo + bs, lo + bj + 1, best, False, null_score)
