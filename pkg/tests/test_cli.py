import json
import math
from pathlib import Path

import pandas as pd
import pytest

from main import main
from src.data.checkpoint import save_checkpoint
from src.data.synthetic import write_synthetic_fixture
from src.models.base import STAGES
from src.models.pban_config import PBANConfig
from src.models.weights import init_weights, param_count

BUNDLED = Path(__file__).parent / "fixtures" / "synthetic"


@pytest.fixture
def micro():
    return PBANConfig.micro(patch_size=8)


@pytest.fixture
def fixture_dir(tmp_path):
    write_synthetic_fixture(tmp_path / "data", n=6, size=16, seed=0)
    return tmp_path / "data"


@pytest.fixture
def model(tmp_path, micro):
    return save_checkpoint(init_weights(micro, seed=0), micro, tmp_path / "model.pbn")


def test_missing_manifest_is_usage_error(tmp_path):
    assert main(["train", "--out", str(tmp_path / "m.pbn")]) == 1


def test_unknown_flag_is_usage_error(model):
    assert main(["inspect", "--model", str(model), "--verbose"]) == 1


def test_single_fold_is_rejected(tmp_path, fixture_dir):
    argv = ["train", "--manifest", str(fixture_dir / "manifest.csv"), "--out", str(tmp_path / "m.pbn")]
    assert main(argv + ["--folds", "1"]) == 1


def test_train_writes_checkpoint_and_report(tmp_path, fixture_dir, micro):
    cfg = tmp_path / "micro.json"
    cfg.write_text(micro.to_json())
    out = tmp_path / "m.pbn"
    code = main(
        [
            "train",
            "--manifest", str(fixture_dir / "manifest.csv"),
            "--out", str(out),
            "--config", str(cfg),
            "--epochs", "1",
            "--folds", "2",
            "--batch", "8",
        ]
    )
    assert code == 0
    assert out.exists()
    report = json.loads((tmp_path / "m.pbn.report.json").read_text())
    assert len(report["epoch_losses"]) == 1
    assert len(report["fold_metrics"]) == 2
    assert (tmp_path / "m.pbn.loss.png").exists()


def test_train_into_missing_directory(tmp_path, fixture_dir):
    argv = ["train", "--manifest", str(fixture_dir / "manifest.csv"), "--out", str(tmp_path / "no" / "m.pbn")]
    assert main(argv) == 2


def test_train_size_mismatch_is_data_error(tmp_path, fixture_dir, micro):
    write_synthetic_fixture(tmp_path / "big", n=1, size=24)
    csv = tmp_path / "bad.csv"
    csv.write_text(f"sr_path,hr_path,mos\n{fixture_dir / 'sr_000.png'},{tmp_path / 'big' / 'hr_000.png'},0.5\n")
    cfg = tmp_path / "micro.json"
    cfg.write_text(micro.to_json())
    assert main(["train", "--manifest", str(csv), "--out", str(tmp_path / "m.pbn"), "--config", str(cfg)]) == 2


def test_score_prints_one_float(capsys, model, fixture_dir):
    code = main(
        ["score", "--model", str(model), "--sr", str(fixture_dir / "sr_000.png"), "--hr", str(fixture_dir / "hr_000.png")]
    )
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1
    assert math.isfinite(float(lines[0]))


def test_score_same_image_twice(capsys, model, fixture_dir):
    image = str(fixture_dir / "hr_001.png")
    assert main(["score", "--model", str(model), "--sr", image, "--hr", image, "--batch", "1"]) == 0
    assert math.isfinite(float(capsys.readouterr().out))


def test_score_size_mismatch(tmp_path, model, fixture_dir):
    write_synthetic_fixture(tmp_path / "big", n=1, size=24)
    code = main(
        ["score", "--model", str(model), "--sr", str(fixture_dir / "sr_000.png"), "--hr", str(tmp_path / "big" / "hr_000.png")]
    )
    assert code == 2


def test_unreadable_model(tmp_path, fixture_dir):
    bogus = tmp_path / "bogus.pbn"
    bogus.write_bytes(b"nonsense")
    image = str(fixture_dir / "sr_000.png")
    assert main(["score", "--model", str(bogus), "--sr", image, "--hr", image]) == 2
    assert main(["score", "--model", str(tmp_path / "absent.pbn"), "--sr", image, "--hr", image]) == 2


@pytest.mark.parametrize("command", ["score", "eval", "inspect"])
def test_checkpoint_for_another_config_is_data_error(tmp_path, fixture_dir, micro, command):
    other = PBANConfig.micro(patch_size=8, attention_mode="none")
    model = save_checkpoint(init_weights(other, seed=0), micro, tmp_path / "mismatch.pbn")
    argv = {
        "score": ["--sr", str(fixture_dir / "sr_000.png"), "--hr", str(fixture_dir / "hr_000.png")],
        "eval": ["--manifest", str(fixture_dir / "manifest.csv"), "--out", str(tmp_path / "r.json")],
        "inspect": [],
    }[command]
    assert main([command, "--model", str(model), *argv]) == 2


def test_eval_writes_report_and_predictions(tmp_path, model, fixture_dir):
    out, predictions = tmp_path / "report.json", tmp_path / "pred.csv"
    code = main(
        [
            "eval",
            "--model", str(model),
            "--manifest", str(fixture_dir / "manifest.csv"),
            "--out", str(out),
            "--predictions", str(predictions),
        ]
    )
    assert code == 0
    report = json.loads(out.read_text())
    assert {"srcc", "krcc", "plcc", "rmse", "n", "logistic", "converged"} <= set(report)
    assert report["n"] == 6
    table = pd.read_csv(predictions)
    assert list(table.columns) == ["sr_path", "hr_path", "mos", "prediction"]
    assert len(table) == 6


def test_eval_empty_manifest(tmp_path, model):
    csv = tmp_path / "empty.csv"
    csv.write_text("sr_path,hr_path,mos\n")
    assert main(["eval", "--model", str(model), "--manifest", str(csv), "--out", str(tmp_path / "r.json")]) == 2


def test_eval_missing_output_directory(tmp_path, model, fixture_dir):
    out = tmp_path / "missing" / "r.json"
    argv = ["eval", "--model", str(model), "--manifest", str(fixture_dir / "manifest.csv"), "--out", str(out)]
    assert main(argv) == 2


def test_eval_too_few_records_for_the_fit(tmp_path, model, fixture_dir):
    csv = tmp_path / "two.csv"
    rows = [f"{fixture_dir / f'sr_00{i}.png'},{fixture_dir / f'hr_00{i}.png'},{i}" for i in range(2)]
    csv.write_text("sr_path,hr_path,mos\n" + "\n".join(rows) + "\n")
    assert main(["eval", "--model", str(model), "--manifest", str(csv), "--out", str(tmp_path / "r.json")]) == 3


def test_gradcheck_list(capsys):
    assert main(["gradcheck", "--list"]) == 0
    names = capsys.readouterr().out.split()
    assert "deform_conv2d" in names and "pban_loss" in names


def test_gradcheck_single_op_to_json(tmp_path):
    out = tmp_path / "grad.json"
    assert main(["gradcheck", "--op", "softmax_rows", "--seed", "2", "--out", str(out)]) == 0
    (report,) = json.loads(out.read_text())["reports"]
    assert report["op"] == "softmax_rows" and report["passed"]


def test_gradcheck_unknown_op():
    assert main(["gradcheck", "--op", "nosuchop"]) == 1


def test_gradcheck_random_shapes(tmp_path):
    out = tmp_path / "grad.json"
    args = ["gradcheck", "--op", "conv2d", "--seed", "4", "--random-shapes", "--out", str(out)]
    assert main(args) == 0
    (report,) = json.loads(out.read_text())["reports"]
    assert report["passed"]
    assert all(1 <= d <= 5 for shape in report["shapes"].values() for d in shape)


def test_inspect_matches_param_count(capsys, model, micro):
    assert main(["inspect", "--model", str(model)]) == 0
    out = capsys.readouterr().out
    assert f"trainable: {param_count(micro).total}" in out
    assert f"buffers: {param_count(micro).buffers}" in out


def test_dump_features(tmp_path, model, fixture_dir, micro):
    out = tmp_path / "maps"
    out.mkdir()
    argv = ["dump-features", "--model", str(model), "--sr", str(fixture_dir / "sr_000.png")]
    assert main(argv + ["--hr", str(fixture_dir / "hr_000.png"), "--out", str(out)]) == 0
    assert len(list(out.glob("*.png"))) == 2 * len(STAGES) * micro.blocks
    assert main(argv + ["--hr", str(fixture_dir / "hr_000.png"), "--out", str(tmp_path / "nope")]) == 2


@pytest.mark.slow
def test_train_eval_score_end_to_end(tmp_path, capsys):
    data = BUNDLED
    manifest = data / "manifest.csv"
    cfg = tmp_path / "micro.json"
    cfg.write_text(PBANConfig.micro().to_json())
    model = tmp_path / "model.pbn"
    train_argv = ["train", "--manifest", str(manifest), "--out", str(model), "--config", str(cfg)]
    assert main(train_argv + ["--epochs", "500", "--folds", "2", "--batch", "8"]) == 0

    out = tmp_path / "report.json"
    assert main(["eval", "--model", str(model), "--manifest", str(manifest), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["srcc"] > 0.9

    capsys.readouterr()
    image = ["--sr", str(data / "sr_000.png"), "--hr", str(data / "hr_000.png")]
    assert main(["score", "--model", str(model), *image]) == 0
    float(capsys.readouterr().out)
