"""Command line entry point: ``deepprompt {train,eval,sweep,report}``.

A run config is a JSON key/value document (see :class:`RunConfig`); every
field of it can also be overridden with a flag of the same name, e.g.
``--prompt-length 16`` or ``--learning-rate 0.05``. Fields that appear in more
than one section take a section prefix (``--train-seed``, ``--task-seed``);
``--seed`` sets both the prompt and the training seed.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .checkpoint import save_backbone
from .errors import DeepPromptError, UsageError
from .harness import (AXES, ORDERS, RunConfig, SweepSpec, build_backbone, emit_report, evaluate_run, load_report,
                      prepare_task, run, run_sweep, save_report)

SECTIONS = ("task", "arch", "prompt", "train")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        return [_parse_value(part) for part in text.split(",") if part]
    return text


def _section_fields():
    base = RunConfig()
    return {s: [f.name for f in dataclasses.fields(getattr(base, s))] for s in SECTIONS}


def _override_flags():
    """``{flag dest: (section, field)}`` for every config field."""
    fields = _section_fields()
    counts = {}
    for names in fields.values():
        for n in names:
            counts[n] = counts.get(n, 0) + 1
    flags = {}
    for section, names in fields.items():
        for n in names:
            flag = n if counts[n] == 1 else f"{section}_{n}"
            flags[flag] = (section, n)
    return flags


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="run config JSON document")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.FIELD=VALUE",
                   help="generic override, repeatable")
    p.add_argument("--seed", type=int, help="sets both prompt.seed and train.seed")
    group = p.add_argument_group("config fields")
    for flag, (section, name) in _override_flags().items():
        group.add_argument("--" + flag.replace("_", "-"), dest="cfg__" + flag, metavar="VALUE",
                           help=f"{section}.{name}")


def build_config(args) -> RunConfig:
    doc = RunConfig().to_dict()
    if args.config:
        loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        doc = RunConfig.from_dict(loaded).to_dict()
    for flag, (section, name) in _override_flags().items():
        value = getattr(args, "cfg__" + flag, None)
        if value is not None:
            doc[section][name] = _parse_value(value)
    for item in args.set:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or section not in doc:
            raise UsageError(f"--set expects SECTION.FIELD=VALUE, got {item!r}")
        doc[section][name] = _parse_value(value)
    if args.seed is not None:
        doc["prompt"]["seed"] = doc["train"]["seed"] = args.seed
    if isinstance(doc["prompt"].get("layer_set"), int):
        doc["prompt"]["layer_set"] = [doc["prompt"]["layer_set"]]
    return RunConfig.from_dict(doc)


def _print(obj):
    print(json.dumps(obj, indent=2, default=str))


def cmd_train(args) -> int:
    config = build_config(args)
    result = run(config, run_root=args.run_root)
    if args.save_backbone and result.run_dir:
        task = prepare_task(config.task)
        save_backbone(build_backbone(config.arch, task.vocab), Path(result.run_dir) / "backbone.ckpt")
    _print({"run_id": result.run_id, "run_dir": result.run_dir, "metric": result.metric,
            "metrics": result.metrics, "trainable_params": result.params, "seconds": result.seconds,
            "resumed": result.resumed})
    return 0


def cmd_eval(args) -> int:
    _print(evaluate_run(args.run_dir, backbone_path=args.backbone))
    return 0


def cmd_sweep(args) -> int:
    base = build_config(args)
    values = [_parse_value(v) for v in args.values.split(",") if v]
    spec = SweepSpec(args.axis, values, repeats=args.repeats, base=base, orders=tuple(args.orders.split(",")),
                     reparams=tuple(args.reparams.split(",")))
    report = run_sweep(spec, run_root=args.run_root, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_report(report, out / f"{report.axis}.report.json")
    written = emit_report(report, out, formats=tuple(args.formats.split(",")))
    _print({"report": str(out / f"{report.axis}.report.json"), "files": {k: str(v) for k, v in written.items()},
            "summary": report.summary(), "metadata": {k: v for k, v in report.metadata.items() if k != "base"}})
    return 0


def cmd_report(args) -> int:
    report = load_report(args.report)
    written = emit_report(report, args.out, formats=tuple(args.formats.split(",")))
    _print({k: str(v) for k, v in written.items()})
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepprompt", description="Deep prompt tuning over a frozen encoder.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration")
    _add_config_args(p)
    p.add_argument("--run-root", default="runs", help="parent of content-addressed run directories")
    p.add_argument("--save-backbone", action="store_true", help="also write the backbone weights to the run dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a stored run on its dev split")
    p.add_argument("run_dir")
    p.add_argument("--backbone", help="backbone checkpoint (default: regenerate from the run config)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run an ablation sweep and write its report")
    _add_config_args(p)
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--values", required=True, help="comma-separated sweep values")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--orders", default=",".join(ORDERS), help="depth sweeps: ascending,descending")
    p.add_argument("--reparams", default="none,mlp", help="length sweeps: reparameterisations to cross")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--run-root", default="runs")
    p.add_argument("--out", default="reports")
    p.add_argument("--formats", default="tsv,json,plot")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="re-emit a stored sweep report")
    p.add_argument("report", help="*.report.json written by `sweep`")
    p.add_argument("--out", default="reports")
    p.add_argument("--formats", default="tsv,json,plot")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (DeepPromptError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
