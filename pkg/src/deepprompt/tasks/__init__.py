"""Task formulations, data loading, metrics and synthetic generators."""
from .conll import (IOB2RepairWarning, iob2_to_spans, load_conll_columns, repair_iob2, spans_to_iob2,
                    write_conll_columns)
from .encoding import (encode_classification, encode_ner, encode_qa, encode_qa_record, encode_srl,
                       load_qa_json, verbalizer_head)
from .metrics import micro_f1, normalize_answer, qa_em_f1
from .synth import SynthTask, ner_pattern_spans, synth_task
from .types import IGNORE_INDEX, TASK_KINDS, EncodedExample, TaskSpec
from .vocab import SPECIAL_TOKENS, Vocab, split_words, tokenize

__all__ = [
    "IOB2RepairWarning", "iob2_to_spans", "load_conll_columns", "repair_iob2", "spans_to_iob2",
    "write_conll_columns", "encode_classification", "encode_ner", "encode_qa", "encode_qa_record",
    "encode_srl", "load_qa_json", "verbalizer_head", "micro_f1", "normalize_answer", "qa_em_f1", "SynthTask",
    "ner_pattern_spans", "synth_task", "IGNORE_INDEX", "TASK_KINDS", "EncodedExample", "TaskSpec",
    "SPECIAL_TOKENS", "Vocab", "split_words", "tokenize",
]
