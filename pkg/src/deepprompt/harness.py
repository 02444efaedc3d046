"""Sweep engine for depth, length/reparameterisation and head-choice ablations.

Every run is described by a :class:`RunConfig`; its canonical JSON hashes to a
run id, and with a ``run_root`` the run's config, metrics and prompt
checkpoint live in ``run_root/<run id>/``. Re-running a sweep reuses those
directories instead of retraining.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .backbone import FrozenBackbone
from .checkpoint import load_backbone, load_checkpoint, save_checkpoint
from .errors import ConfigError, IncompleteReportError, SpecError
from .heads import HeadSpec
from .prompts import PromptConfig
from .tasks import TaskSpec, Vocab, encode_ner, encode_qa_record, load_conll_columns, load_qa_json, synth_task
from .training import TrainConfig, build_state, evaluate, train, trainable_census

log = logging.getLogger(__name__)

AXES = ("depth_interval", "prompt_length", "reparam", "head_kind")
ORDERS = ("ascending", "descending")
TSV_COLUMNS = ("axis_value", "order", "variant", "seed", "metric", "params", "seconds")
SIMPLE_TASK_LENGTHS = (1, 2, 4, 8, 16)
SEQUENCE_TASK_LENGTHS = (16, 32, 64, 100, 128)


@dataclass(frozen=True)
class TaskConfig:
    kind: str = "classification"
    difficulty: int = 0
    seed: int = 0
    n_train: int = 256
    n_dev: int = 128
    head_kind: Optional[str] = None
    train_path: Optional[str] = None  # CoNLL columns (ner) or QA JSON (qa)
    dev_path: Optional[str] = None


@dataclass(frozen=True)
class ArchConfig:
    num_layers: int = 4
    hidden_size: int = 64
    num_heads: int = 4
    ffn_size: int = 128
    max_positions: int = 64
    dropout_rate: float = 0.0
    layer_norm_eps: float = 1e-12
    init_std: float = 0.1
    backbone_seed: int = 0


DESK_TRAIN = TrainConfig(learning_rate=5e-2, batch_size=32, epochs=30, warmup_fraction=0.1)


@dataclass(frozen=True)
class RunConfig:
    task: TaskConfig = TaskConfig()
    arch: ArchConfig = ArchConfig()
    prompt: PromptConfig = PromptConfig(mode="deep", prompt_length=8)
    train: TrainConfig = DESK_TRAIN

    def to_dict(self) -> dict:
        return {"task": dataclasses.asdict(self.task), "arch": dataclasses.asdict(self.arch),
                "prompt": self.prompt.to_dict(), "train": self.train.to_dict()}

    @classmethod
    def from_dict(cls, data) -> "RunConfig":
        unknown = set(data) - {"task", "arch", "prompt", "train"}
        if unknown:
            raise ConfigError(f"unknown run config sections: {sorted(unknown)}")
        try:
            return cls(TaskConfig(**data.get("task", {})), ArchConfig(**data.get("arch", {})),
                       PromptConfig.from_dict(data.get("prompt", {})),
                       TrainConfig.from_dict({**DESK_TRAIN.to_dict(), **data.get("train", {})}))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def run_id(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, prompt=self.prompt.replace(seed=seed), train=self.train.replace(seed=seed))

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)


@dataclass
class PreparedTask:
    spec: TaskSpec
    vocab: Vocab
    train: list
    dev: list


def _ner_from_files(cfg: TaskConfig) -> PreparedTask:
    train_raw = load_conll_columns(cfg.train_path)
    dev_raw = load_conll_columns(cfg.dev_path) if cfg.dev_path else []
    tags = sorted({t for _, ts in train_raw + dev_raw for t in ts} - {"O"})
    labels = ("O",) + tuple(tags)
    spec = TaskSpec(Path(cfg.train_path).stem, "ner", labels, HeadSpec("token_tagging", len(labels)))
    vocab = Vocab.build([toks for toks, _ in train_raw])
    return PreparedTask(spec, vocab, [encode_ner(t, g, spec, vocab) for t, g in train_raw],
                        [encode_ner(t, g, spec, vocab) for t, g in dev_raw])


def _qa_from_files(cfg: TaskConfig) -> PreparedTask:
    train_raw = load_qa_json(cfg.train_path)
    dev_raw = load_qa_json(cfg.dev_path) if cfg.dev_path else []
    vocab = Vocab.build([r["question"] for r in train_raw] + [r["context"] for r in train_raw])
    spec = TaskSpec(Path(cfg.train_path).stem, "qa", ("start", "end"), HeadSpec("span", 2))
    return PreparedTask(spec, vocab, [encode_qa_record(r, vocab) for r in train_raw],
                        [encode_qa_record(r, vocab) for r in dev_raw])


def prepare_task(cfg: TaskConfig) -> PreparedTask:
    if cfg.train_path:
        if cfg.kind == "ner":
            return _ner_from_files(cfg)
        if cfg.kind == "qa":
            return _qa_from_files(cfg)
        raise ConfigError(f"file-based loading supports ner (CoNLL) and qa (JSON), not {cfg.kind!r}")
    t = synth_task(cfg.kind, cfg.difficulty, cfg.seed, cfg.n_train, cfg.n_dev, head_kind=cfg.head_kind)
    return PreparedTask(t.spec, t.vocab, t.train, t.dev)


_BACKBONES: Dict[tuple, FrozenBackbone] = {}
_BACKBONE_LOCK = threading.Lock()


def build_backbone(arch: ArchConfig, vocab: Vocab) -> FrozenBackbone:
    """Shared read-only backbone for ``(arch, vocab)``; built once per process."""
    key = (dataclasses.astuple(arch), vocab.version(), len(vocab))
    with _BACKBONE_LOCK:
        if key not in _BACKBONES:
            mc = vocab.model_config(num_layers=arch.num_layers, hidden_size=arch.hidden_size,
                                    num_heads=arch.num_heads, ffn_size=arch.ffn_size,
                                    max_positions=arch.max_positions, dropout_rate=arch.dropout_rate,
                                    layer_norm_eps=arch.layer_norm_eps)
            _BACKBONES[key] = FrozenBackbone(mc, seed=arch.backbone_seed, init_std=arch.init_std)
        return _BACKBONES[key]


@dataclass
class RunResult:
    run_id: str
    metric: float
    metrics: dict
    params: int
    seconds: float
    history: list = field(default_factory=list)
    run_dir: Optional[str] = None
    resumed: bool = False


def run(config: RunConfig, run_root=None, backbone_path=None) -> RunResult:
    """Train and evaluate one configuration (or reload it from ``run_root``)."""
    run_id = config.run_id()
    run_dir = Path(run_root) / run_id if run_root else None
    if run_dir is not None and (run_dir / "metrics.json").exists():
        stored = json.loads((run_dir / "metrics.json").read_text())
        return RunResult(run_id, stored["metric"], stored["metrics"], stored["params"], stored["seconds"],
                         stored.get("history", []), str(run_dir), resumed=True)

    task = prepare_task(config.task)
    backbone = load_backbone(backbone_path) if backbone_path else build_backbone(config.arch, task.vocab)
    state = build_state(backbone, config.prompt, task.spec)
    params = trainable_census(state)[0]
    t0 = time.perf_counter()
    state, history = train(state, task.train, config.train, dev=task.dev or None)
    seconds = time.perf_counter() - t0
    metrics = evaluate(state.model, task.dev, null_threshold=config.train.null_threshold,
                       max_span_len=config.train.max_span_len) if task.dev else {"metric": float("nan")}
    result = RunResult(run_id, metrics["metric"], metrics, params, seconds, history,
                       str(run_dir) if run_dir else None)
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(config.to_json())
        save_checkpoint(state, run_dir / "prompts.ckpt", metrics={"best": state.best_metric, **metrics})
        (run_dir / "vocab.json").write_text(task.vocab.to_json())
        payload = {"run_id": run_id, "metric": result.metric, "metrics": metrics, "params": params,
                   "seconds": seconds, "history": history}
        (run_dir / "metrics.json").write_text(json.dumps(payload, indent=2))
    return result


def evaluate_run(run_dir, backbone_path=None) -> dict:
    """Reload a stored run's checkpoint and evaluate it on the dev split."""
    run_dir = Path(run_dir)
    config = RunConfig.load(run_dir / "config.json")
    task = prepare_task(config.task)
    if backbone_path is None and (run_dir / "backbone.ckpt").exists():
        backbone_path = run_dir / "backbone.ckpt"
    backbone = load_backbone(backbone_path) if backbone_path else build_backbone(config.arch, task.vocab)
    state = load_checkpoint(run_dir / "prompts.ckpt", backbone)
    return evaluate(state.model, task.dev, null_threshold=config.train.null_threshold,
                    max_span_len=config.train.max_span_len)


# ---------------------------------------------------------------------------
# sweeps


def depth_layer_set(k: int, num_layers: int, order: str) -> tuple:
    """First ``k`` layers (ascending) or last ``k`` layers (descending), sorted."""
    if not 1 <= k <= num_layers:
        raise SpecError(f"k={k} outside [1, {num_layers}]")
    if order == "ascending":
        return tuple(range(k))
    if order == "descending":
        return tuple(range(num_layers - k, num_layers))
    raise SpecError(f"order must be one of {ORDERS}, got {order!r}")


def interval_label(layers: Sequence[int]) -> str:
    """1-indexed ``"x-y"`` label of a contiguous 0-indexed layer set."""
    lo, hi = min(layers), max(layers)
    if sorted(layers) != list(range(lo, hi + 1)):
        raise SpecError(f"layer set {sorted(layers)} is not contiguous")
    return f"{lo + 1}-{hi + 1}"


@dataclass
class SweepSpec:
    axis: str
    values: list
    repeats: int = 3
    base: RunConfig = RunConfig()
    orders: tuple = ORDERS
    reparams: tuple = ("none", "mlp")

    def __post_init__(self):
        if self.axis not in AXES:
            raise SpecError(f"axis must be one of {AXES}, got {self.axis!r}")
        if not self.values:
            raise SpecError("sweep needs at least one value")
        if self.repeats < 1:
            raise SpecError("repeats must be at least 1")


@dataclass
class ReportRow:
    axis_value: object
    order: str
    variant: str
    seed: int
    metric: float
    params: int
    seconds: float
    run_id: str = ""

    def key(self):
        return (self.axis_value, self.order, self.variant, self.seed)

    def as_record(self) -> dict:
        return {c: getattr(self, c) for c in TSV_COLUMNS}


@dataclass
class AblationReport:
    axis: str
    rows: List[ReportRow] = field(default_factory=list)
    expected: List[tuple] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def missing(self) -> List[tuple]:
        have = {r.key() for r in self.rows}
        return [k for k in self.expected if k not in have]

    def series_key(self, row: ReportRow) -> str:
        return row.order if self.axis == "depth_interval" else row.variant

    def points(self) -> Dict[tuple, List[ReportRow]]:
        groups: Dict[tuple, List[ReportRow]] = {}
        for r in self.rows:
            groups.setdefault((r.axis_value, r.order, r.variant), []).append(r)
        return groups

    def summary(self) -> List[dict]:
        out = []
        for (value, order, variant), rows in self.points().items():
            m = np.array([r.metric for r in rows], dtype=float)
            out.append({"axis_value": value, "order": order, "variant": variant, "mean": float(m.mean()),
                        "min": float(m.min()), "max": float(m.max()), "seeds": [r.seed for r in rows],
                        "metrics": m.tolist(), "params": rows[0].params,
                        "seconds": float(np.mean([r.seconds for r in rows]))})
        return out

    def mean_metric(self, axis_value, order="-", variant=None) -> float:
        vals = [r.metric for r in self.rows if r.axis_value == axis_value and r.order == order
                and (variant is None or r.variant == variant)]
        return float(np.mean(vals))

    def to_dict(self) -> dict:
        return {"axis": self.axis, "metadata": self.metadata, "expected": [list(k) for k in self.expected],
                "rows": [dataclasses.asdict(r) for r in self.rows]}

    @classmethod
    def from_dict(cls, d) -> "AblationReport":
        return cls(d["axis"], [ReportRow(**r) for r in d["rows"]], [tuple(k) for k in d.get("expected", [])],
                   d.get("metadata", {}))


def _execute(jobs, run_root, workers):
    """Run ``{key: RunConfig}`` jobs, deduplicating identical configurations."""
    unique = {}
    for cfg in jobs.values():
        unique.setdefault(cfg.run_id(), cfg)
    if workers > 1 and len(unique) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {rid: pool.submit(run, cfg, run_root) for rid, cfg in unique.items()}
            done = {rid: f.result() for rid, f in futures.items()}
    else:
        done = {rid: run(cfg, run_root) for rid, cfg in unique.items()}
    return {key: done[cfg.run_id()] for key, cfg in jobs.items()}


def _collect(axis, jobs, results, metadata) -> AblationReport:
    report = AblationReport(axis, expected=list(jobs), metadata=metadata)
    for key, res in results.items():
        value, order, variant, seed = key
        report.rows.append(ReportRow(value, order, variant, seed, float(res.metric), int(res.params),
                                     float(res.seconds), res.run_id))
    return report


def _seeds(base: RunConfig, repeats: int):
    return [base.train.seed + i for i in range(repeats)]


def depth_ablation(k_values, base: RunConfig = RunConfig(), orders=ORDERS, repeats: int = 3, run_root=None,
                   workers: int = 1) -> AblationReport:
    """Deep prompts on the first or last ``k`` layers for each ``k``."""
    n = base.arch.num_layers
    if base.prompt.mode != "deep":
        raise SpecError("depth ablation needs a deep-mode prompt config")
    jobs = {}
    for k in k_values:
        for order in orders:
            layers = depth_layer_set(int(k), n, order)
            for seed in _seeds(base, repeats):
                cfg = base.replace(prompt=base.prompt.replace(layer_set=layers)).with_seed(seed)
                jobs[(int(k), order, interval_label(layers), seed)] = cfg
    report = _collect("depth_interval", jobs, _execute(jobs, run_root, workers),
                      {"num_layers": n, "orders": list(orders), "base": base.to_dict()})
    signs = {}
    if set(ORDERS) <= set(orders):
        for k in k_values:
            gap = report.mean_metric(int(k), "descending") - report.mean_metric(int(k), "ascending")
            signs[str(int(k))] = {"descending_minus_ascending": gap, "sign": int(np.sign(gap))}
    report.metadata["observed_descending_vs_ascending"] = signs
    return report


def default_lengths(kind: str) -> tuple:
    return SIMPLE_TASK_LENGTHS if kind == "classification" else SEQUENCE_TASK_LENGTHS


def length_sweep(lengths=None, reparams=("none", "mlp"), base: RunConfig = RunConfig(), repeats: int = 3,
                 run_root=None, workers: int = 1) -> AblationReport:
    """Full cross of prompt lengths and reparameterisations."""
    lengths = tuple(lengths or default_lengths(base.task.kind))
    if any(int(L) <= 0 for L in lengths):
        raise SpecError("prompt lengths must be positive")
    jobs = {}
    for L in lengths:
        for reparam in reparams:
            for seed in _seeds(base, repeats):
                cfg = base.replace(prompt=base.prompt.replace(prompt_length=int(L), reparam=reparam)).with_seed(seed)
                jobs[(int(L), "-", reparam, seed)] = cfg
    return _collect("prompt_length", jobs, _execute(jobs, run_root, workers),
                    {"lengths": list(lengths), "reparams": list(reparams), "base": base.to_dict()})


def reparam_sweep(reparams=("none", "mlp", "lstm"), base: RunConfig = RunConfig(), repeats: int = 3,
                  run_root=None, workers: int = 1) -> AblationReport:
    jobs = {}
    for reparam in reparams:
        for seed in _seeds(base, repeats):
            jobs[(reparam, "-", reparam, seed)] = base.replace(prompt=base.prompt.replace(reparam=reparam)).with_seed(seed)
    return _collect("reparam", jobs, _execute(jobs, run_root, workers),
                    {"reparams": list(reparams), "base": base.to_dict()})


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def resolved_arm(cfg: RunConfig) -> dict:
    """Flattened configuration of one head-comparison arm, head spec included."""
    d = cfg.to_dict()
    d["task"].pop("head_kind")
    d["head"] = prepare_task(cfg.task).spec.head.to_dict()
    d["head"].pop("num_labels")
    return _flatten(d)


def head_comparison(base: RunConfig = RunConfig(), repeats: int = 3, run_root=None, workers: int = 1,
                    kinds=("cls_linear", "verbalizer")) -> AblationReport:
    """Same run twice, differing only in the classification head."""
    if base.task.kind != "classification":
        raise SpecError(f"head comparison needs a classification task, got {base.task.kind!r}")
    arms = {kind: base.replace(task=dataclasses.replace(base.task, head_kind=kind)) for kind in kinds}
    flat = {kind: resolved_arm(cfg) for kind, cfg in arms.items()}
    first = flat[kinds[0]]
    diff = sorted({k for kind in kinds[1:] for k in set(first) | set(flat[kind])
                   if first.get(k) != flat[kind].get(k)})
    jobs = {}
    for kind, cfg in arms.items():
        for seed in _seeds(base, repeats):
            jobs[(kind, "-", kind, seed)] = cfg.with_seed(seed)
    report = _collect("head_kind", jobs, _execute(jobs, run_root, workers),
                      {"kinds": list(kinds), "arm_diff": diff, "base": base.to_dict()})
    task = prepare_task(base.task)
    head_params = {}
    for kind in kinds:
        arm_task = prepare_task(arms[kind].task)
        backbone = build_backbone(base.arch, arm_task.vocab)
        state = build_state(backbone, base.prompt, arm_task.spec)
        head_params[kind] = sum(p.numel() for p in state.model.heads.parameters())
    report.metadata["head_params"] = head_params
    report.metadata["task"] = task.spec.name
    return report


def run_sweep(spec: SweepSpec, run_root=None, workers: int = 1) -> AblationReport:
    if spec.axis == "depth_interval":
        return depth_ablation(spec.values, spec.base, spec.orders, spec.repeats, run_root, workers)
    if spec.axis == "prompt_length":
        return length_sweep(spec.values, spec.reparams, spec.base, spec.repeats, run_root, workers)
    if spec.axis == "reparam":
        return reparam_sweep(spec.values, spec.base, spec.repeats, run_root, workers)
    return head_comparison(spec.base, spec.repeats, run_root, workers, kinds=tuple(spec.values))


# ---------------------------------------------------------------------------
# reporting


def _parse_value(text: str):
    try:
        return int(text)
    except ValueError:
        return text


def write_tsv(report: AblationReport, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(TSV_COLUMNS)
        for r in report.rows:
            writer.writerow([r.axis_value, r.order, r.variant, r.seed, repr(r.metric), r.params, repr(r.seconds)])
    return path


def read_tsv(path) -> List[dict]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader)
        if tuple(header) != TSV_COLUMNS:
            raise ConfigError(f"unexpected TSV columns {header}")
        rows = []
        for rec in reader:
            d = dict(zip(header, rec))
            rows.append({"axis_value": _parse_value(d["axis_value"]), "order": d["order"], "variant": d["variant"],
                         "seed": int(d["seed"]), "metric": float(d["metric"]), "params": int(d["params"]),
                         "seconds": float(d["seconds"])})
    return rows


def write_json(report: AblationReport, path) -> Path:
    path = Path(path)
    doc = {"axis": report.axis, "columns": list(TSV_COLUMNS), "rows": [r.as_record() for r in report.rows],
           "summary": report.summary(), "metadata": report.metadata,
           "run_ids": [r.run_id for r in report.rows], "expected": [list(k) for k in report.expected]}
    path.write_text(json.dumps(doc, indent=2, default=str), encoding="utf-8")
    return path


def write_plot(report: AblationReport, path) -> Optional[Path]:
    """Mean metric against axis value, one line per variant; ``None`` with fewer than two points."""
    values = list(dict.fromkeys(r.axis_value for r in report.rows))
    if len(values) < 2:
        return None
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    numeric = all(isinstance(v, (int, float)) for v in values)
    xs_of = {v: (v if numeric else i) for i, v in enumerate(values)}
    series: Dict[str, Dict[object, List[float]]] = {}
    for r in report.rows:
        series.setdefault(report.series_key(r), {}).setdefault(r.axis_value, []).append(r.metric)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, points in series.items():
        keys = [v for v in values if v in points]
        ax.plot([xs_of[v] for v in keys], [np.mean(points[v]) for v in keys], marker="o", label=name)
    if not numeric:
        ax.set_xticks(range(len(values)))
        ax.set_xticklabels([str(v) for v in values])
    ax.set_xlabel(report.axis)
    ax.set_ylabel("dev metric")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def emit_report(report: AblationReport, out_dir, formats=("tsv", "json", "plot")) -> Dict[str, Path]:
    """Write the report in each requested format; refuses incomplete reports."""
    missing = report.missing()
    if missing:
        raise IncompleteReportError(missing)
    unknown = set(formats) - {"tsv", "json", "plot"}
    if unknown:
        raise ConfigError(f"unknown report formats {sorted(unknown)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    stem = f"{report.axis}"
    if "tsv" in formats:
        written["tsv"] = write_tsv(report, out_dir / f"{stem}.tsv")
    if "json" in formats:
        written["json"] = write_json(report, out_dir / f"{stem}.json")
    if "plot" in formats:
        plot = write_plot(report, out_dir / f"{stem}.png")
        if plot is not None:
            written["plot"] = plot
    return written


def save_report(report: AblationReport, path) -> Path:
    """Full report (including expected points) for later ``emit_report``."""
    path = Path(path)
    path.write_text(json.dumps(report.to_dict(), indent=2, default=str), encoding="utf-8")
    return path


def load_report(path) -> AblationReport:
    return AblationReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
