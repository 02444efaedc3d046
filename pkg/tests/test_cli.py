import json

import pytest

from deepprompt.cli import build_config, main, make_parser

TINY_FLAGS = ["--num-layers", "2", "--hidden-size", "16", "--num-heads", "2", "--ffn-size", "32",
              "--n-train", "32", "--n-dev", "16", "--epochs", "1", "--prompt-length", "2"]


def _json_out(capsys):
    return json.loads(capsys.readouterr().out)


def test_flags_mirror_config_fields():
    args = make_parser().parse_args(["train", "--learning-rate", "0.1", "--reparam", "mlp", "--layer-set", "0,2",
                                     "--task-seed", "4", "--seed", "9", "--set", "arch.init_std=0.2"])
    cfg = build_config(args)
    assert cfg.train.learning_rate == 0.1 and cfg.prompt.reparam == "mlp" and cfg.prompt.layer_set == (0, 2)
    assert cfg.task.seed == 4 and cfg.prompt.seed == cfg.train.seed == 9 and cfg.arch.init_std == 0.2


def test_config_document_with_override(tmp_path):
    doc = tmp_path / "run.json"
    doc.write_text(json.dumps({"prompt": {"prompt_length": 3}, "train": {"epochs": 2}}))
    cfg = build_config(make_parser().parse_args(["train", "--config", str(doc), "--epochs", "5"]))
    assert cfg.prompt.prompt_length == 3 and cfg.train.epochs == 5


def test_train_then_eval(tmp_path, capsys):
    assert main(["train", *TINY_FLAGS, "--run-root", str(tmp_path), "--save-backbone"]) == 0
    trained = _json_out(capsys)
    run_dir = tmp_path / trained["run_id"]
    assert (run_dir / "backbone.ckpt").exists()
    assert main(["eval", str(run_dir)]) == 0
    assert _json_out(capsys)["metric"] == trained["metric"]


def test_sweep_then_report(tmp_path, capsys):
    out = tmp_path / "reports"
    assert main(["sweep", *TINY_FLAGS, "--axis", "depth_interval", "--values", "1,2", "--repeats", "1",
                 "--run-root", str(tmp_path / "runs"), "--out", str(out)]) == 0
    summary = _json_out(capsys)
    assert set(summary["files"]) == {"tsv", "json", "plot"}
    again = tmp_path / "again"
    assert main(["report", summary["report"], "--out", str(again), "--formats", "tsv"]) == 0
    assert (again / "depth_interval.tsv").read_text() == (out / "depth_interval.tsv").read_text()


@pytest.mark.parametrize("argv", [
    ["train", "--prompt-length", "0"],
    ["train", "--set", "nonsense"],
    ["sweep", "--axis", "depth_interval", "--values", "9", "--num-layers", "2"],
    ["eval", "/nonexistent/run"],
    ["report", "/nonexistent/report.json"],
])
def test_failures_exit_nonzero(argv, capsys):
    assert main(argv) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_usage_errors_exit_two():
    with pytest.raises(SystemExit) as info:
        main(["sweep", "--axis", "width", "--values", "1"])
    assert info.value.code == 2
