import json
import math

import pytest

from maskdp import accountant
from maskdp.cli import main
from oracles import full_batch_scan


def run(capsys, *argv):
    try:
        code = main(list(argv))
    except SystemExit as exc:
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


def test_account_matches_scan(capsys):
    code, out, err = run(capsys, "account", "--q", "1", "--z", "2", "--steps", "1", "--delta", "1e-5", "--json")
    assert code == 0
    doc = json.loads(out)
    eps, best = full_batch_scan(2.0, 1, 1e-5)
    assert doc["epsilon"] == pytest.approx(eps, rel=1e-12)
    assert doc["best_alpha"] == best
    assert doc["config"]["alpha_max"] == 256


def test_account_zero_rate_is_pure_penalty(capsys):
    code, out, _ = run(capsys, "account", "--q", "0", "--z", "1", "--steps", "10", "--delta", "1e-5", "--json")
    assert code == 0
    doc = json.loads(out)
    assert doc["per_step_rdp"] == 0.0
    assert doc["epsilon"] == pytest.approx(accountant.rdp_to_dp(doc["best_alpha"], 0.0, 1e-5))


def test_account_human_output(capsys):
    code, out, err = run(capsys, "account", "--q", "0.01", "--z", "1", "--steps", "100", "--delta", "1e-5")
    assert code == 0
    assert out.startswith("epsilon")
    assert "effective config" in err


def test_missing_delta_is_usage_error(capsys):
    code, _, err = run(capsys, "account", "--q", "1", "--z", "2", "--steps", "1")
    assert code == 2
    assert "--delta" in err


@pytest.mark.parametrize("flag,value", [("--q", "1.5"), ("--z", "0"), ("--steps", "0"), ("--delta", "1")])
def test_invalid_flag_named(capsys, flag, value):
    args = {"--q": "0.1", "--z": "1", "--steps": "5", "--delta": "1e-5"}
    args[flag] = value
    code, _, err = run(capsys, "account", *[x for kv in args.items() for x in kv])
    assert code == 2
    assert flag in err


def test_calibrate_round_trip(capsys):
    code, out, _ = run(capsys, "calibrate", "--epsilon", "0.5", "--delta", "1e-5", "--q", "0.01",
                       "--steps", "1000", "--json")
    assert code == 0
    z = json.loads(out)["noise_multiplier"]
    code, out, _ = run(capsys, "account", "--q", "0.01", "--z", repr(z), "--steps", "1000",
                       "--delta", "1e-5", "--json")
    assert 0.999 * 0.5 <= json.loads(out)["epsilon"] <= 0.5


def test_calibrate_monotone(capsys):
    zs = []
    for eps in ("0.1", "5"):
        _, out, _ = run(capsys, "calibrate", "--epsilon", eps, "--delta", "1e-5", "--q", "0.01",
                        "--steps", "1000", "--json")
        zs.append(json.loads(out)["noise_multiplier"])
    assert zs[0] > zs[1]


def test_calibrate_infeasible_exit_3(capsys):
    code, _, err = run(capsys, "calibrate", "--epsilon", "1e-9", "--delta", "1e-6", "--q", "1",
                       "--steps", "100000")
    assert code == 3
    assert "infeasible" in err


def test_config_file_and_flag_precedence(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"q": 1, "z": 2, "steps": 1, "delta": 1e-5}))
    code, out, _ = run(capsys, "account", "--config", str(cfg), "--json")
    assert code == 0
    assert json.loads(out)["config"]["z"] == 2
    code, out, _ = run(capsys, "account", "--config", str(cfg), "--z", "3", "--json")
    assert json.loads(out)["config"]["z"] == 3


def test_config_unknown_key(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    code, _, err = run(capsys, "account", "--config", str(cfg))
    assert code == 2 and "bogus" in err


def _gen(capsys, tmp_path, name, *extra):
    tr, te = tmp_path / f"{name}_train.jsonl", tmp_path / f"{name}_test.jsonl"
    code, _, _ = run(capsys, "gen-data", "--train-out", str(tr), "--test-out", str(te), "--seed", "3", *extra)
    assert code == 0
    return tr, te


def test_gen_data_deterministic(capsys, tmp_path):
    a = _gen(capsys, tmp_path, "a", "--n", "100", "--n-test", "20")
    b = _gen(capsys, tmp_path, "b", "--n", "100", "--n-test", "20")
    assert a[0].read_bytes() == b[0].read_bytes()
    assert a[1].read_bytes() == b[1].read_bytes()


def test_train_sgd_on_default_data(capsys, tmp_path):
    tr, te = _gen(capsys, tmp_path, "d")
    report = tmp_path / "r.json"
    code, out, _ = run(capsys, "train", "--mode", "sgd", "--train-data", str(tr), "--test-data", str(te),
                       "--report", str(report), "--json")
    assert code == 0
    doc = json.loads(out)
    assert doc["test_accuracy"] > 0.9
    assert doc["config"]["mode"] == "sgd"
    assert (tmp_path / "r.ckpt").exists()
    assert json.loads(report.read_text())["test_accuracy"] == doc["test_accuracy"]


def test_train_needs_noise_or_epsilon(capsys, tmp_path):
    tr, _ = _gen(capsys, tmp_path, "e", "--n", "100", "--n-test", "10")
    code, _, err = run(capsys, "train", "--mode", "dp", "--train-data", str(tr), "--batch-size", "10")
    assert code == 2
    assert "--noise-multiplier" in err


def test_train_missing_file_exit_3(capsys, tmp_path):
    code, _, _ = run(capsys, "train", "--mode", "sgd", "--train-data", str(tmp_path / "missing"))
    assert code == 3


def test_sweep_writes_two_rows(capsys, tmp_path):
    tr, te = _gen(capsys, tmp_path, "s", "--n", "300", "--n-test", "50")
    out_path = tmp_path / "sweep.csv"
    code, out, _ = run(capsys, "sweep", "--train-data", str(tr), "--test-data", str(te),
                       "--cell", "dp:0.5", "--cell", "maskdp:0.5", "--batch-size", "30",
                       "--out", str(out_path), "--json")
    assert code == 0
    lines = out_path.read_text().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("mode,epsilon_target,epsilon_realized")
    assert [row["mode"] for row in json.loads(out)["rows"]] == ["dp", "maskdp"]


def test_json_mode_single_document(capsys, tmp_path):
    tr, te = _gen(capsys, tmp_path, "j", "--n", "100", "--n-test", "10")
    code, out, err = run(capsys, "train", "--mode", "maskdp", "--epsilon", "1", "--train-data", str(tr),
                         "--batch-size", "10", "--json")
    assert code == 0
    doc = json.loads(out)  # exactly one document, nothing else on stdout
    assert doc["accounting"]["epsilon"] <= 1.0
    assert not math.isnan(doc["noise_multiplier"])
