from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from ..errors import ConfigError
from ..heads import HeadSpec

TASK_KINDS = ("classification", "ner", "qa", "srl")
IGNORE_INDEX = -100

_COMPATIBLE_HEADS = {
    "classification": ("cls_linear", "verbalizer"),
    "ner": ("token_tagging",),
    "srl": ("token_tagging",),
    "qa": ("span",),
}


@dataclass(frozen=True)
class TaskSpec:
    name: str
    kind: str
    label_set: tuple
    head: HeadSpec
    prompt_length_hint: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "label_set", tuple(self.label_set))
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"task kind must be one of {TASK_KINDS}, got {self.kind!r}")
        if not self.label_set:
            raise ConfigError("label_set must be non-empty")
        if self.head.kind not in _COMPATIBLE_HEADS[self.kind]:
            raise ConfigError(f"{self.kind} task cannot use a {self.head.kind} head")
        if self.kind != "qa" and self.head.num_labels != len(self.label_set):
            raise ConfigError(f"head has {self.head.num_labels} labels but label_set has {len(self.label_set)}")

    @property
    def family(self) -> str:
        return "tagging" if self.kind in ("ner", "srl") else self.kind

    def label_id(self, label) -> int:
        if isinstance(label, int):
            if not 0 <= label < len(self.label_set):
                raise ConfigError(f"label index {label} outside label_set")
            return label
        try:
            return self.label_set.index(label)
        except ValueError:
            raise ConfigError(f"unknown label {label!r}; expected one of {self.label_set}") from None

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "label_set": list(self.label_set),
                "head": self.head.to_dict(), "prompt_length_hint": self.prompt_length_hint}

    @classmethod
    def from_dict(cls, d) -> "TaskSpec":
        return cls(d["name"], d["kind"], tuple(d["label_set"]), HeadSpec.from_dict(d["head"]),
                   d.get("prompt_length_hint"))


@dataclass
class EncodedExample:
    """One tokenised training instance.

    Exactly one target group is populated, depending on the task kind:
    ``label``; ``tag_ids`` (``IGNORE_INDEX`` on special tokens); the QA triple
    ``start_token``/``end_token`` (end exclusive) and ``is_impossible``; or
    ``tag_ids`` plus ``verb_token_position`` for SRL.
    """

    token_ids: List[int]
    attention_mask: List[int]
    label: Optional[int] = None
    tag_ids: Optional[List[int]] = None
    start_token: Optional[int] = None
    end_token: Optional[int] = None
    is_impossible: bool = False
    verb_token_position: Optional[int] = None
    context_window: Optional[Tuple[int, int]] = None
    token_offsets: Optional[List[Optional[Tuple[int, int]]]] = None
    context: Optional[str] = None
    answers: List[str] = field(default_factory=list)

    def __len__(self):
        return len(self.token_ids)

    def span_text(self, start: int, end: int) -> str:
        """Context substring covered by tokens ``[start, end)``."""
        if self.context is None or self.token_offsets is None or end <= start:
            return ""
        return self.context[self.token_offsets[start][0]:self.token_offsets[end - 1][1]]
