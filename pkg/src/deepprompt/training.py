"""Prompt-only optimisation over a frozen backbone, single- and multi-task."""
from __future__ import annotations

import copy
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import FrozenBackbone, count_backbone_parameters
from .errors import ConfigError, PlanError, TrainingDivergedError
from .heads import DEFAULT_MAX_SPAN_LEN, SpanHead, TokenTaggingHead, VerbalizerHead, build_head, decode_span
from .prompts import PromptConfig, PromptEncoder, insertion_positions, splice_prompts
from .tasks.conll import iob2_to_spans
from .tasks.metrics import micro_f1, qa_em_f1
from .tasks.types import IGNORE_INDEX, EncodedExample, TaskSpec

log = logging.getLogger(__name__)

DEFAULT_TASK = "task"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    batch_size: int = 32
    epochs: int = 20
    dropout: Optional[float] = None  # None keeps the backbone's own rate
    weight_decay: float = 0.0
    seed: int = 0
    optimizer: str = "adamw"
    warmup_fraction: float = 0.1
    null_threshold: float = 0.0
    max_span_len: int = DEFAULT_MAX_SPAN_LEN
    restore_best: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.batch_size <= 0 or self.epochs <= 0:
            raise ConfigError("batch_size and epochs must be positive")
        if self.optimizer != "adamw":
            raise ConfigError(f"only the adamw optimizer is supported, got {self.optimizer!r}")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ConfigError("warmup_fraction must lie in [0, 1]")
        if self.dropout is not None and not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def collate(examples: Sequence[EncodedExample], pad_id: int) -> Dict[str, torch.Tensor]:
    """Right-pad a list of examples into a batch of tensors."""
    width = max(len(ex) for ex in examples)
    b = len(examples)
    ids = torch.full((b, width), pad_id, dtype=torch.long)
    mask = torch.zeros((b, width), dtype=torch.long)
    for i, ex in enumerate(examples):
        ids[i, : len(ex)] = torch.as_tensor(ex.token_ids)
        mask[i, : len(ex)] = torch.as_tensor(ex.attention_mask)
    batch = {"token_ids": ids, "attention_mask": mask}
    first = examples[0]
    if first.label is not None:
        batch["labels"] = torch.as_tensor([ex.label for ex in examples], dtype=torch.long)
    if first.tag_ids is not None:
        tags = torch.full((b, width), IGNORE_INDEX, dtype=torch.long)
        for i, ex in enumerate(examples):
            tags[i, : len(ex)] = torch.as_tensor(ex.tag_ids)
        batch["tag_ids"] = tags
    if first.start_token is not None:
        batch["start_positions"] = torch.as_tensor([ex.start_token for ex in examples], dtype=torch.long)
        batch["end_positions"] = torch.as_tensor(
            [0 if ex.is_impossible else ex.end_token - 1 for ex in examples], dtype=torch.long)
    return batch


class PromptTuningModel(nn.Module):
    """Frozen backbone + trainable prompts + one head per dataset."""

    def __init__(self, backbone: FrozenBackbone, prompt_config: PromptConfig, tasks: Mapping[str, TaskSpec],
                 head_seed: int = 0):
        super().__init__()
        if not tasks:
            raise ConfigError("need at least one task")
        self.backbone = backbone
        self.prompt_config = prompt_config
        self.prompts = PromptEncoder(prompt_config, backbone.config)
        self.tasks = dict(tasks)
        heads = {}
        for i, (name, spec) in enumerate(self.tasks.items()):
            heads[name] = build_head(spec.head, backbone.config.hidden_size, backbone.token_embeddings,
                                     backbone.config.mask_token_id, seed=head_seed + i)
        self.heads = nn.ModuleDict(heads)

    @property
    def config(self):
        return self.backbone.config

    def trainable_named_parameters(self):
        for name, p in self.prompts.named_parameters():
            yield f"prompts.{name}", p
        for name, p in self.heads.named_parameters():
            yield f"heads.{name}", p

    def trainable_parameters(self) -> List[nn.Parameter]:
        return [p for _, p in self.trainable_named_parameters()]

    def trainable_state(self) -> Dict[str, torch.Tensor]:
        return {k: p.detach().clone() for k, p in self.trainable_named_parameters()}

    def load_trainable_state(self, state: Mapping[str, torch.Tensor]):
        params = dict(self.trainable_named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise ConfigError(f"trainable state mismatch; missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        with torch.no_grad():
            for k, p in params.items():
                if tuple(state[k].shape) != tuple(p.shape):
                    raise ConfigError(f"shape mismatch for {k}: {tuple(state[k].shape)} vs {tuple(p.shape)}")
                p.copy_(state[k])

    def encode(self, token_ids, attention_mask):
        """Hidden states ``[B, S, H]`` aligned with ``token_ids``, plus the pooled [CLS] state."""
        if self.prompt_config.mode == "deep":
            cache = self.prompts.encode_deep()
            return self.backbone(token_ids, attention_mask, cache, layer_set=cache.layer_set)
        embeds = self.backbone.embed(token_ids)
        prompts = self.prompts.encode_shallow()
        pos = insertion_positions(token_ids, attention_mask, self.prompt_config.placement,
                                  self.config.mask_token_id)
        spliced, mask, index = splice_prompts(embeds, attention_mask, prompts, pos)
        hidden, _ = self.backbone.forward_embeddings(spliced, mask)
        hidden = torch.gather(hidden, 1, index.unsqueeze(-1).expand(-1, -1, hidden.shape[-1]))
        return hidden, hidden[:, 0]

    def forward(self, batch, task: Optional[str] = None):
        task = task or next(iter(self.tasks))
        head = self.heads[task]
        hidden, pooled = self.encode(batch["token_ids"], batch["attention_mask"])
        if isinstance(head, VerbalizerHead):
            return head(hidden, batch["token_ids"])
        if isinstance(head, (TokenTaggingHead,)):
            return head(hidden)
        if isinstance(head, SpanHead):
            start, end = head(hidden)
            pad = ~batch["attention_mask"].to(torch.bool)
            neg = torch.finfo(start.dtype).min
            return start.masked_fill(pad, neg), end.masked_fill(pad, neg)
        return head(pooled)


def task_loss(spec: TaskSpec, outputs, batch) -> torch.Tensor:
    kind = spec.head.kind
    if kind in ("cls_linear", "verbalizer"):
        return F.cross_entropy(outputs, batch["labels"])
    if kind == "token_tagging":
        return F.cross_entropy(outputs.reshape(-1, outputs.shape[-1]), batch["tag_ids"].reshape(-1),
                               ignore_index=IGNORE_INDEX)
    start, end = outputs
    return 0.5 * (F.cross_entropy(start, batch["start_positions"]) + F.cross_entropy(end, batch["end_positions"]))


PRIMARY_METRIC = {"classification": "accuracy", "ner": "f1", "srl": "f1", "qa": "f1"}


@torch.no_grad()
def predict(model: PromptTuningModel, data: Sequence[EncodedExample], task: Optional[str] = None,
            batch_size: int = 64):
    """Raw head outputs for ``data``, batch by batch (list of per-batch outputs)."""
    task = task or next(iter(model.tasks))
    was_training = model.training
    model.eval()
    outs = []
    try:
        for i in range(0, len(data), batch_size):
            batch = collate(data[i:i + batch_size], model.config.pad_token_id)
            outs.append((batch, model(batch, task)))
    finally:
        model.train(was_training)
    return outs


def evaluate(model: PromptTuningModel, data: Sequence[EncodedExample], task: Optional[str] = None,
             null_threshold: float = 0.0, max_span_len: int = DEFAULT_MAX_SPAN_LEN, batch_size: int = 64) -> dict:
    task = task or next(iter(model.tasks))
    spec = model.tasks[task]
    if not data:
        return {"metric": float("nan")}
    results = predict(model, data, task, batch_size)
    if spec.kind == "classification":
        correct = sum(int((out.argmax(-1) == batch["labels"]).sum()) for batch, out in results)
        acc = correct / len(data)
        return {"accuracy": acc, "metric": acc}
    if spec.kind in ("ner", "srl"):
        pred_spans, gold_spans = [], []
        for batch, out in results:
            pred = out.argmax(-1)
            for row in range(pred.shape[0]):
                keep = batch["tag_ids"][row] != IGNORE_INDEX
                gold_tags = [spec.label_set[i] for i in batch["tag_ids"][row][keep].tolist()]
                pred_tags = [spec.label_set[i] for i in pred[row][keep].tolist()]
                pred_spans.append(iob2_to_spans(pred_tags))
                gold_spans.append(iob2_to_spans(gold_tags))
        p, r, f1 = micro_f1(pred_spans, gold_spans)
        return {"precision": p, "recall": r, "f1": f1, "metric": f1}
    ems, f1s = [], []
    offset = 0
    for batch, (start, end) in results:
        for row in range(start.shape[0]):
            ex = data[offset]
            offset += 1
            span = decode_span(start[row, : len(ex)], end[row, : len(ex)], ex.context_window, max_span_len,
                               null_threshold)
            text = "" if span.is_null else ex.span_text(span.start, span.end)
            em, f1 = qa_em_f1(text, ex.answers)
            ems.append(em)
            f1s.append(f1)
    return {"em": float(np.mean(ems)), "f1": float(np.mean(f1s)), "metric": float(np.mean(f1s))}


@dataclass
class TrainState:
    model: PromptTuningModel
    optimizer: Optional[torch.optim.Optimizer] = None
    step: int = 0
    history: list = field(default_factory=list)
    best_metric: Optional[float] = None

    @property
    def backbone(self) -> FrozenBackbone:
        return self.model.backbone


def build_state(backbone: FrozenBackbone, prompt_config: PromptConfig, tasks, head_seed: Optional[int] = None):
    """Fresh :class:`TrainState`; ``tasks`` is a TaskSpec or a ``{name: TaskSpec}`` mapping."""
    if isinstance(tasks, TaskSpec):
        tasks = {DEFAULT_TASK: tasks}
    seed = prompt_config.seed if head_seed is None else head_seed
    return TrainState(PromptTuningModel(backbone, prompt_config, tasks, head_seed=seed + 1))


def trainable_census(state: TrainState) -> Tuple[int, int, float]:
    """(trainable scalars, backbone scalars, trainable / backbone)."""
    trainable = sum(p.numel() for p in state.model.trainable_parameters())
    backbone = sum(p.numel() for p in state.backbone.parameters())
    assert backbone == count_backbone_parameters(state.backbone.config)
    return trainable, backbone, trainable / backbone


def prompt_census(model_config, prompt_config: PromptConfig, head_params: int = 0) -> Tuple[int, int, float]:
    """Census without materialising a backbone (for full-size configurations)."""
    from .prompts import prompt_param_count

    trainable = prompt_param_count(prompt_config, model_config) + head_params
    backbone = count_backbone_parameters(model_config)
    return trainable, backbone, trainable / backbone


def optimizer_census(state: TrainState) -> Tuple[int, int]:
    """(#trainable arrays holding optimizer moments, #backbone arrays holding any)."""
    if state.optimizer is None:
        return 0, 0
    backbone_ids = {id(p) for p in state.backbone.parameters()}
    held = [p for p, s in state.optimizer.state.items() if s]
    return sum(id(p) not in backbone_ids for p in held), sum(id(p) in backbone_ids for p in held)


def _make_optimizer(model: PromptTuningModel, cfg: TrainConfig, total_steps: int):
    params = model.trainable_parameters()
    if any(not p.requires_grad for p in params):
        raise ConfigError("trainable parameter unexpectedly frozen")
    opt = torch.optim.AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    warmup = int(round(cfg.warmup_fraction * total_steps))

    def schedule(step):
        if warmup and step < warmup:
            return (step + 1) / warmup
        return max(0.0, (total_steps - step) / max(1, total_steps - warmup))

    return opt, torch.optim.lr_scheduler.LambdaLR(opt, schedule)


def batch_schedule(sizes: Mapping[str, int], batch_size: int, generator: torch.Generator):
    """One epoch of ``(task, indices)`` batches.

    Every dataset is shuffled and chunked; with several datasets the batch
    order is shuffled as well, so each dataset is drawn in proportion to its size.
    """
    batches = []
    for task, n in sizes.items():
        if n == 0:
            continue
        perm = torch.randperm(n, generator=generator).tolist()
        batches += [(task, perm[i:i + batch_size]) for i in range(0, n, batch_size)]
    if len({t for t, _ in batches}) > 1:
        order = torch.randperm(len(batches), generator=generator).tolist()
        batches = [batches[i] for i in order]
    return batches


def _grad_norms(model: PromptTuningModel):
    norms = {}
    for name, p in model.trainable_named_parameters():
        group = name.split(".")[0] if name.startswith("prompts") else ".".join(name.split(".")[:2])
        if p.grad is not None:
            norms[group] = norms.get(group, 0.0) + float(p.grad.detach().pow(2).sum())
    return {k: math.sqrt(v) for k, v in norms.items()}


def _primary(metrics):
    return metrics.get("metric", float("nan"))


def _run_phase(state: TrainState, train_data: Mapping[str, Sequence[EncodedExample]], cfg: TrainConfig,
               dev_data: Optional[Mapping[str, Sequence[EncodedExample]]] = None, phase: str = "train",
               on_step=None):
    model = state.model
    sizes = {t: len(d) for t, d in train_data.items()}
    unknown = set(sizes) - set(model.tasks)
    if unknown:
        raise ConfigError(f"no head for datasets {sorted(unknown)}")
    steps_per_epoch = sum(math.ceil(n / cfg.batch_size) for n in sizes.values())
    total = max(1, steps_per_epoch * cfg.epochs)
    opt, sched = _make_optimizer(model, cfg, total)
    state.optimizer = opt
    gen = torch.Generator().manual_seed(cfg.seed)
    old_rates = None
    if cfg.dropout is not None:
        old_rates = [m.p for m in model.modules() if isinstance(m, nn.Dropout)]
        model.backbone.set_dropout(cfg.dropout)

    def dev_eval():
        if not dev_data:
            return {}
        return {t: evaluate(model, d, t, cfg.null_threshold, cfg.max_span_len) for t, d in dev_data.items()}

    def score(dev):
        vals = [_primary(m) for m in dev.values()]
        return float(np.mean(vals)) if vals else float("nan")

    history = [{"phase": phase, "epoch": 0, "loss": None, "dev": dev_eval()}]
    best = score(history[0]["dev"])
    best_state = model.trainable_state()

    try:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            for epoch in range(1, cfg.epochs + 1):
                model.train()
                losses = []
                for task, idx in batch_schedule(sizes, cfg.batch_size, gen):
                    batch = collate([train_data[task][i] for i in idx], model.config.pad_token_id)
                    opt.zero_grad(set_to_none=True)
                    loss = task_loss(model.tasks[task], model(batch, task), batch)
                    if not torch.isfinite(loss):
                        loss.backward()
                        raise TrainingDivergedError(state.step, sched.get_last_lr()[0], _grad_norms(model),
                                                    float(loss.detach()))
                    loss.backward()
                    opt.step()
                    sched.step()
                    state.step += 1
                    losses.append(float(loss.detach()))
                    if on_step is not None:
                        on_step(state, task, idx)
                dev = dev_eval()
                history.append({"phase": phase, "epoch": epoch, "loss": float(np.mean(losses)), "dev": dev})
                current = score(dev)
                log.debug("%s epoch %d loss %.4f dev %.4f", phase, epoch, history[-1]["loss"], current)
                if dev and (math.isnan(best) or current > best):
                    best, best_state = current, model.trainable_state()
    finally:
        if old_rates is not None:
            for m, p in zip([m for m in model.modules() if isinstance(m, nn.Dropout)], old_rates):
                m.p = p
        model.eval()

    if cfg.restore_best and dev_data:
        model.load_trainable_state(best_state)
        history.append({"phase": phase, "epoch": "best", "loss": None, "dev": dev_eval()})
    state.best_metric = best
    state.history.extend(history)
    return history


def train(state: TrainState, data: Sequence[EncodedExample], cfg: TrainConfig,
          dev: Optional[Sequence[EncodedExample]] = None, task: Optional[str] = None, on_step=None):
    """Train prompts and the head of ``task``; returns ``(state, history)``."""
    task = task or next(iter(state.model.tasks))
    history = _run_phase(state, {task: data}, cfg, None if dev is None else {task: dev}, on_step=on_step)
    return state, history


PHASES = ("joint", "per_task_finetune")


@dataclass
class MultiTaskPlan:
    datasets: List[Tuple[str, TaskSpec]]
    prompt_config: PromptConfig
    phase: str = "joint"

    def __post_init__(self):
        if self.phase not in PHASES:
            raise PlanError(f"phase must be one of {PHASES}")
        if not self.datasets:
            raise PlanError("plan has no datasets")
        names = [n for n, _ in self.datasets]
        if len(set(names)) != len(names):
            raise PlanError(f"duplicate dataset names: {names}")
        kinds = {spec.kind for _, spec in self.datasets}
        if len(kinds) > 1:
            raise PlanError(f"cannot share prompts across task kinds {sorted(kinds)}")

    @property
    def tasks(self) -> Dict[str, TaskSpec]:
        return dict(self.datasets)


@dataclass
class MultiTaskResult:
    joint: TrainState
    joint_history: list
    finetuned: Dict[str, Tuple[TrainState, list]] = field(default_factory=dict)


def fork_for_task(state: TrainState, task: str) -> TrainState:
    """Single-task state initialised from the shared prompts and ``task``'s head."""
    src = state.model
    model = PromptTuningModel(src.backbone, src.prompt_config, {task: src.tasks[task]})
    model.prompts.load_state_dict(copy.deepcopy(src.prompts.state_dict()))
    model.heads[task].load_state_dict(copy.deepcopy(src.heads[task].state_dict()))
    return TrainState(model)


def train_multitask(plan: MultiTaskPlan, backbone: FrozenBackbone,
                    data: Mapping[str, Tuple[Sequence[EncodedExample], Optional[Sequence[EncodedExample]]]],
                    cfg: TrainConfig, finetune_cfg: Optional[TrainConfig] = None, on_step=None) -> MultiTaskResult:
    """Joint phase with one shared prompt set and per-dataset heads, then an optional per-task phase."""
    missing = set(plan.tasks) - set(data)
    if missing:
        raise PlanError(f"no data for datasets {sorted(missing)}")
    state = build_state(backbone, plan.prompt_config, plan.tasks)
    train_sets = {name: data[name][0] for name in plan.tasks}
    dev_sets = {name: data[name][1] for name in plan.tasks if data[name][1]}
    history = _run_phase(state, train_sets, cfg, dev_sets or None, phase="joint", on_step=on_step)
    result = MultiTaskResult(state, history)
    if plan.phase == "per_task_finetune":
        ft_cfg = finetune_cfg or cfg
        for name in plan.tasks:
            sub = fork_for_task(state, name)
            dev = data[name][1]
            sub_hist = _run_phase(sub, {name: train_sets[name]}, ft_cfg, {name: dev} if dev else None,
                                  phase=f"finetune:{name}")
            result.finetuned[name] = (sub, sub_hist)
    return result
