import io
import json

import pytest

from msoattn.archive import load_weights
from msoattn.cli import main


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(argv, out, err)
    return code, out.getvalue(), err.getvalue()


def test_param_count_table_and_csv():
    code, out, _ = run(["param-count", "--u", "3", "--d", "512", "--h", "4"])
    assert code == 0
    assert "2,363,904" in out and "28,371,456" in out and "0.0833" in out
    code, out, _ = run(["param-count", "--u", "3", "--d", "512", "--h", "4", "--csv"])
    assert out.splitlines() == ["config,proposed_total,naive_total,ratio", "U=3 d=512 H=4,2363904,28371456,0.0833"]


def test_param_count_plot(tmp_path):
    code, _, _ = run(["param-count", "--u", "3", "--d", "64", "--h", "4", "--plot", str(tmp_path / "p.png")])
    assert code == 0 and (tmp_path / "p.png").stat().st_size > 0


@pytest.mark.parametrize("argv", [
    ["param-count", "--u", "3", "--d", "512", "--h", "4", "--bogus"],
    ["frobnicate"],
    [],
    ["evaluate", "--weights", "w.bin", "--mode", "best"],
])
def test_usage_errors_exit_1(argv):
    code, _, err = run(argv)
    assert code == 1 and "usage" in err


def test_missing_config_exits_2_with_path(tmp_path):
    missing = tmp_path / "nowhere.json"
    code, _, err = run(["train", "--config", str(missing), "--out", str(tmp_path / "o")])
    assert code == 2 and str(missing) in err
    code, _, err = run(["grad-check", "--config", str(missing)])
    assert code == 2 and str(missing) in err


def test_invalid_config_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n_train": 10, "colour": "red"}')
    code, _, err = run(["train", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert code == 2 and "colour" in err


def test_grad_check_default_config():
    code, out, _ = run(["grad-check", "--entries", "3"])
    assert code == 0 and "max relative error" in out


def test_train_evaluate_dump(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_train": 64, "n_val": 20, "n_test": 20, "d": 16, "h": 2, "l": 1, "epochs": 1}))
    out_dir = tmp_path / "run"
    code, _, err = run(["train", "--config", str(cfg), "--out", str(out_dir)])
    assert code == 0, err
    for name in ("metrics.csv", "weights.bin", "manifest.txt", "config.json", "training.png"):
        assert (out_dir / name).is_file()
    assert (out_dir / "metrics.csv").read_text().splitlines()[0] == "epoch,NDCG,MRR,R@1,R@5,R@10,Mean"
    weights = load_weights(out_dir / "weights.bin")
    assert sorted(weights) == [line.split("\t")[0] for line in (out_dir / "manifest.txt").read_text().splitlines()]

    for mode in ("disc", "gen", "avg"):
        code, out, err = run(["evaluate", "--weights", str(out_dir / "weights.bin"), "--mode", mode,
                              "--out", str(tmp_path / mode)])
        assert code == 0, err
        assert out.splitlines()[0] == "eval,NDCG,MRR,R@1,R@5,R@10,Mean"
        assert (tmp_path / mode / "scores.csv").is_file()

    att = tmp_path / "att.json"
    code, _, err = run(["dump-attention", "--weights", str(out_dir / "weights.bin"), "--episode", "2",
                        "--out", str(att)])
    assert code == 0, err
    doc = json.loads(att.read_text())
    assert "1/Q/V/0" not in doc and "0/Q/V/1" in doc  # L=1, H=2
    assert len(doc["0/Q/V/0"]) == 8 and len(doc["0/Q/V/0"][0]) == 12 + 2
    assert att.with_suffix(".png").is_file()
    code, _, err = run(["dump-attention", "--weights", str(out_dir / "weights.bin"), "--episode", "999",
                        "--out", str(att)])
    assert code == 2 and "999" in err


def test_missing_weights_exit_2(tmp_path):
    code, _, err = run(["evaluate", "--weights", str(tmp_path / "w.bin")])
    assert code == 2 and "w.bin" in err


def test_bench_cli(tmp_path):
    out_csv = tmp_path / "b.csv"
    code, out, _ = run(["bench", "--u", "3", "--d", "16", "--sizes", "4,8", "--out", str(out_csv)])
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("# machine:") and lines[1] == "u,d,h,n,proposed_ms,naive_ms,ratio,reps"
    assert len(lines) == 4 and out_csv.read_text() == out
    assert out_csv.with_suffix(".png").is_file()
    code, _, _ = run(["bench", "--sizes", "4,x"])
    assert code == 1
