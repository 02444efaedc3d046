"""Word-level tokenizer with a fixed vocabulary."""
from __future__ import annotations

import hashlib
import json
import re
from typing import Iterable, List, Sequence, Tuple

from ..backbone import ModelConfig
from ..errors import DataError

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)

_WORD_RE = re.compile(r"\w+|[^\w\s]")


def split_words(text: str) -> List[str]:
    return _WORD_RE.findall(text)


def split_words_with_offsets(text: str) -> List[Tuple[str, int, int]]:
    """Words with their ``[start, end)`` character offsets in ``text``."""
    return [(m.group(), m.start(), m.end()) for m in _WORD_RE.finditer(text)]


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            tokens = list(SPECIAL_TOKENS) + [t for t in tokens if t not in SPECIAL_TOKENS]
        if len(set(tokens)) != len(tokens):
            raise DataError("vocabulary contains duplicate tokens")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def build(cls, corpus: Iterable, extra: Iterable[str] = ()) -> "Vocab":
        """Vocabulary over ``corpus`` (strings or pre-split token lists), first-seen order."""
        seen = dict.fromkeys(SPECIAL_TOKENS)
        for item in corpus:
            words = split_words(item) if isinstance(item, str) else item
            seen.update(dict.fromkeys(words))
        seen.update(dict.fromkeys(extra))
        return cls(list(seen))

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    pad_id = property(lambda self: self.stoi[PAD])
    unk_id = property(lambda self: self.stoi[UNK])
    cls_id = property(lambda self: self.stoi[CLS])
    sep_id = property(lambda self: self.stoi[SEP])
    mask_id = property(lambda self: self.stoi[MASK])

    def lookup(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    def encode(self, text: str) -> List[int]:
        return [self.lookup(w) for w in split_words(text)]

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self.itos[i] for i in ids]

    def version(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()[:12]

    def to_json(self) -> str:
        return json.dumps(self.itos)

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        return cls(json.loads(text))

    def model_config(self, **kwargs) -> ModelConfig:
        """A :class:`ModelConfig` sized to this vocabulary with matching special ids."""
        return ModelConfig(vocab_size=len(self), pad_token_id=self.pad_id, cls_token_id=self.cls_id,
                           sep_token_id=self.sep_id, mask_token_id=self.mask_id, **kwargs)


def tokenize(text: str, vocab: Vocab) -> List[int]:
    return vocab.encode(text)
