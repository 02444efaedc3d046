"""Deep prompt tuning over a frozen bidirectional transformer encoder."""
from .backbone import FrozenBackbone, ModelConfig, attention_with_prefix, count_backbone_parameters
from .checkpoint import load_backbone, load_checkpoint, save_backbone, save_checkpoint
from .errors import *  # noqa: F401,F403
from .harness import (AblationReport, RunConfig, SweepSpec, depth_ablation, emit_report, head_comparison,
                      length_sweep, read_tsv, run, run_sweep)
from .heads import HeadSpec, SpanPrediction, decode_span
from .prompts import PrefixCache, PromptConfig, PromptEncoder, encode_deep, encode_shallow, init_prompts
from .tasks import TaskSpec, Vocab, micro_f1, qa_em_f1, synth_task
from .training import (MultiTaskPlan, TrainConfig, build_state, evaluate, optimizer_census, prompt_census, train,
                       train_multitask, trainable_census)

__version__ = "0.1.0"
