import json

import pytest

from securedyn.cli import main

FAST = ["--set", "data.synth_counts=2000,2000", "--set", "data.synth_dim=6", "--set", "model.hidden=6,4",
        "--set", "partition.clients=4", "--set", "partition.samples_per_client=300",
        "--set", "train.local_epochs=1"]


def test_crypto_selftest(capsys):
    assert main(["crypto-selftest"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("all ") and out.strip().endswith("checks passed")


def test_zero_round_run_writes_header_only_csv(tmp_path, capsys):
    assert main(["run", "--rounds", "0", "--out", str(tmp_path), "--quiet", *FAST]) == 0
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    body = [l for l in lines if not l.startswith("#")]
    assert len(body) == 1 and body[0].startswith("round,overall_acc")
    assert lines[0] == "# seed: 0"


def test_run_flags_override_config_file(tmp_path):
    cfg = tmp_path / "cfg.ini"
    cfg.write_text("[run]\nrounds = 50\nseed = 3\nencrypt = true\n[attack]\nkind = flip-both\nratio = 0.25\n")
    out = tmp_path / "out"
    rc = main(["run", "--config", str(cfg), "--rounds", "2", "--seed", "5", "--no-encrypt",
               "--attack", "model-scaling", "--attack-ratio", "0.5", "--out", str(out), "--quiet", *FAST])
    assert rc == 0
    meta = (out / "metrics.csv").read_text().splitlines()
    assert meta[0] == "# seed: 5"
    resolved = json.loads(meta[1].removeprefix("# config: "))
    assert resolved["run"]["rounds"] == 2 and resolved["run"]["encrypt"] is False
    assert resolved["attack"] == {**resolved["attack"], "kind": "model-scaling", "ratio": 0.5}
    assert len([l for l in meta if l[:1].isdigit()]) == 2
    for name in ("audit.csv", "summary.txt"):
        assert (out / name).read_text().startswith("# seed: 5\n# config: ")


def test_encrypted_run_and_no_audit(tmp_path):
    assert main(["run", "--rounds", "1", "--no-audit", "--out", str(tmp_path), "--quiet", *FAST]) == 0
    summary = (tmp_path / "summary.txt").read_text()
    assert "encrypted = True" in summary
    assert "# auditing disabled" in (tmp_path / "audit.csv").read_text()


@pytest.mark.parametrize("argv, needle", [
    (["run", "--set", "run.rounds=lots"], "run.rounds"),
    (["run", "--set", "quant.levels=256", "--set", "crypto.plaintext_prime_bits=7"], "K*(N-1)*2 < n"),
    (["run", "--attack", "backdoor"], "unknown attack kind"),
    (["run", "--set", "noequals"], "SECTION.KEY=VALUE"),
    (["partition-preview", "--set", "partition.samples_per_client=100000"], "need"),
])
def test_errors_exit_nonzero_with_message(argv, needle, capsys):
    assert main(argv) == 1
    assert needle in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.ini")]) == 1
    assert "nope.ini" in capsys.readouterr().err


def test_partition_preview(capsys):
    assert main(["partition-preview", "--set", "partition.scenario=benign-attack",
                 "--set", "partition.clients=4"]) == 0
    rows = [l for l in capsys.readouterr().out.splitlines() if l[:1].isdigit()]
    assert rows == ["0,500,0,500", "1,500,0,500", "2,0,1000,1000", "3,0,1000,1000"]


def test_keygen_bench_table(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    assert main(["keygen-bench", "--sizes", "128,512", "--min-seconds", "0.05", "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[1].startswith("bits,") and [r.split(",")[0] for r in rows[2:]] == ["128", "512"]


def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
