import dataclasses
import json
import subprocess
import sys

import pytest

from rvtag import cli
from rvtag.cli import EquivalenceFailure, compare_states, main
from rvtag.emitlink import read_image
from rvtag.emulator import run as run_image
from rvtag.pipeline import build_image
from rvtag.tagplan import make_config

SUM_SRC = (
    ".globl main\n.entry main\nmain:\n"
    "    li a0, 0\n"
    "    li t1, 1\n"
    "    li t2, 10\n"
    "acc:\n"
    "    add a0, a0, t1\n"
    "    addi t1, t1, 1\n"
    "    bge t2, t1, acc\n"
    "    li a7, 93\n"
    "    ecall\n"
)


@pytest.fixture
def workspace(tmp_path):
    (tmp_path / "prog.s").write_text(SUM_SRC)
    (tmp_path / "tags.conf").write_text("carrier = lui\ncoverage = 3\n")
    (tmp_path / "cfi.conf").write_text("carrier = lui\ncoverage = 3\npolicy = cfi\n")
    (tmp_path / "cov.conf").write_text("carrier = lui\ncoverage = 7\npolicy = coverage\n")
    return tmp_path


def test_assemble_summary(workspace, capsys):
    assert main(["assemble", str(workspace / "prog.s")]) == 0
    out = capsys.readouterr().out
    assert "main" in out and "entry" in out
    assert main(["assemble", "--json", str(workspace / "prog.s")]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["entry"] == "main"
    assert payload["fragments"][0]["instructions"] == 8


def test_build_produces_baseline_and_tagged(workspace, capsys):
    out = workspace / "prog.rvti"
    code = main(["build", "--config", str(workspace / "tags.conf"),
                 "--out", str(out), str(workspace / "prog.s")])
    assert code == 0
    table = capsys.readouterr().out
    assert "prog.base.rvti" in table and "prog.rvti" in table
    baseline = read_image(workspace / "prog.base.rvti")
    tagged = read_image(out)
    assert not baseline.tags_present and tagged.tags_present
    assert len(tagged.text) > len(baseline.text)


def test_build_cfi_emits_nolabel_variant(workspace):
    src = workspace / "api.s"
    src.write_text(
        ".globl main\n.entry main\nmain:\n"
        '    .signature "i64()"\n'
        "    li a7, 93\n"
        "    ecall\n"
    )
    out = workspace / "api.rvti"
    code = main(["build", "--config", str(workspace / "cfi.conf"),
                 "--out", str(out), str(src)])
    assert code == 0
    assert (workspace / "api.nolabels.rvti").exists()
    with_labels = read_image(out)
    without = read_image(workspace / "api.nolabels.rvti")
    assert len(with_labels.text) > len(without.text)


def test_build_no_tags_single_image(workspace, capsys):
    out = workspace / "base_only.rvti"
    code = main(["build", "--no-tags", "--config", str(workspace / "tags.conf"),
                 "--out", str(out), str(workspace / "prog.s")])
    assert code == 0
    assert read_image(out).tags_present is False


def test_build_rejects_na_coverage(workspace, capsys):
    (workspace / "bad.conf").write_text("carrier = lui\ncoverage = 31\n")
    code = main(["build", "--config", str(workspace / "bad.conf"),
                 "--out", str(workspace / "x.rvti"), str(workspace / "prog.s")])
    assert code == cli.EXIT_BUILD
    assert "coverage" in capsys.readouterr().err


def test_link_and_run(workspace, capsys):
    out = workspace / "sum.rvti"
    assert main(["link", "--config", str(workspace / "tags.conf"),
                 "--out", str(out), str(workspace / "prog.s")]) == 0
    assert main(["run", str(out)]) == 0
    run_output = capsys.readouterr().out
    assert "exit=55" in run_output
    assert main(["run", "--mode", "aware", str(out)]) == 0


def test_env_config_fallback(workspace, monkeypatch):
    monkeypatch.setenv("RVTAG_CONFIG", str(workspace / "tags.conf"))
    out = workspace / "env.rvti"
    assert main(["link", "--out", str(out), str(workspace / "prog.s")]) == 0


def test_missing_config_is_usage_error(workspace, monkeypatch, capsys):
    monkeypatch.delenv("RVTAG_CONFIG", raising=False)
    code = main(["link", "--out", str(workspace / "x.rvti"),
                 str(workspace / "prog.s")])
    assert code == cli.EXIT_USAGE


def test_unknown_command_exits_1(workspace):
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == cli.EXIT_USAGE


def test_enforce_clean_and_violating(workspace, capsys):
    clean_src = workspace / "ok.s"
    clean_src.write_text(
        "main:\n"
        "    li a0, 3\n"
        "    li a2, 2\n"
        "    sub a2, a0, a2 !unsigned\n"
        "    li a7, 93\n"
        "    ecall\n"
    )
    bad_src = workspace / "bad.s"
    bad_src.write_text(
        "main:\n"
        "    li a0, 2\n"
        "    li a2, 3\n"
        "    sub a2, a0, a2 !unsigned\n"
        "    li a7, 93\n"
        "    ecall\n"
    )
    (workspace / "un.conf").write_text(
        "carrier = lui\ncoverage = 3\npolicy = unarith\n")
    for name, expected in (("ok.s", 0), ("bad.s", cli.EXIT_POLICY)):
        out = workspace / f"{name}.rvti"
        assert main(["link", "--config", str(workspace / "un.conf"),
                     "--out", str(out), str(workspace / name)]) == 0
        assert main(["enforce", str(out)]) == expected
    err_out = capsys.readouterr().out
    assert "UnsignedOverflow" in err_out


def test_run_dump_coverage(workspace, capsys):
    src = workspace / "covprog.s"
    src.write_text(
        ".globl main\n.entry main\nmain:\n"
        "    li t1, 2\n"
        "again:\n"
        "    addi a0, a0, 1\n"
        "    addi t1, t1, -1\n"
        "    bne t1, x0, again\n"
        "    li a7, 93\n"
        "    ecall\n"
    )
    out = workspace / "covprog.rvti"
    dump = workspace / "coverage.json"
    assert main(["link", "--config", str(workspace / "cov.conf"),
                 "--out", str(out), str(src)]) == 0
    assert main(["run", "--mode", "aware", str(out),
                 "--dump-coverage", str(dump)]) == 0
    payload = json.loads(dump.read_text())
    assert set(payload) == {"cl", "ci", "bcf"}
    assert all(entry["count"] >= 0 for entry in payload["cl"])
    assert any(entry["count"] == 2 for entry in payload["cl"])
    for targets in payload["bcf"].values():
        for key, count in targets.items():
            assert key.startswith("0x") and count >= 1


def test_diff_run_files_and_generated(workspace, capsys):
    code = main(["diff-run", "--config", str(workspace / "tags.conf"),
                 "--generate", "5", "--seed", "99",
                 str(workspace / "prog.s")])
    assert code == 0
    out = capsys.readouterr().out
    assert "corpus seed: 99" in out
    assert "aggregate" in out
    assert "6/6 programs identical" in out


def test_diff_run_single_instruction_program(workspace, capsys):
    tiny = workspace / "tiny.s"
    tiny.write_text("main:\n    ecall\n")
    code = main(["diff-run", "--config", str(workspace / "tags.conf"),
                 "--json", str(tiny)])
    assert code == 0
    out = capsys.readouterr().out
    payload = json.loads(out[out.index("{"):])
    result = payload["results"][0]
    # one instruction plus its carrier: 2 fetch units against 1
    assert result["baseline_dynamic"] == 1
    assert result["tagged_dynamic"] == 2
    assert result["dynamic_overhead_pct"] == 100.0


def test_diff_run_cfi_reports_label_cost(workspace, capsys):
    code = main(["diff-run", "--config", str(workspace / "cfi.conf"),
                 "--json", "--cfi-label-direct-calls",
                 "--generate", "3", "--seed", "11"])
    assert code == 0
    out = capsys.readouterr().out
    payload = json.loads(out[out.index("{"):])
    for result in payload["results"]:
        assert "nolabel_dynamic_overhead_pct" in result
        assert result["nolabel_tagged_dynamic"] <= result["tagged_dynamic"]
        assert result["nolabel_tagged_text_bytes"] <= result["tagged_text_bytes"]


def test_diff_run_json_report_round_trips(workspace, capsys, tmp_path):
    code = main(["diff-run", "--config", str(workspace / "tags.conf"),
                 "--json", "--generate", "3", "--seed", "5"])
    assert code == 0
    out = capsys.readouterr().out
    json_start = out.index("{")
    payload = json.loads(out[json_start:])
    assert payload["schema"] == "rvtag-report-v1"
    assert payload["aggregate"]["programs"] == 3
    report_path = tmp_path / "report.json"
    report_path.write_text(out[json_start:])
    assert main(["report", str(report_path)]) == 0
    rendered = capsys.readouterr().out
    assert "aggregate" in rendered
    assert main(["report", "--json", str(report_path)]) == 0


def test_report_rejects_unknown_schema(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema": "mystery-v9"}))
    assert main(["report", str(bad)]) == cli.EXIT_USAGE


def test_corrupted_tag_word_breaks_equivalence(workspace):
    """A carrier rewritten to lui x1,1 becomes architecturally visible."""
    config = make_config(carrier="lui", coverage=3)
    baseline = build_image(SUM_SRC, config, tagged=False)
    tagged = build_image(SUM_SRC, config, tagged=True)
    text = bytearray(tagged.text)
    # first word is main's first carrier: make it lui x1 with a nonzero payload
    text[0] |= 0x80   # rd low bit -> x1
    text[1] |= 0x10   # immediate bit 0
    corrupted = dataclasses.replace(tagged, text=bytes(text))
    base_state, _, _ = run_image(baseline, mode="compat")
    bad_state, _, _ = run_image(corrupted, mode="compat")
    divergence = compare_states(base_state, bad_state, baseline.data_base)
    assert divergence is not None and "x1" in divergence


def test_diff_run_equivalence_failure_exit_code(workspace, monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise EquivalenceFailure("prog: x5: baseline 0x1 != tagged 0x2")

    monkeypatch.setattr(cli, "diff_one", boom)
    code = main(["diff-run", "--config", str(workspace / "tags.conf"),
                 str(workspace / "prog.s")])
    assert code == cli.EXIT_EQUIV
    assert "equivalence failure" in capsys.readouterr().err


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "rvtag.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for verb in ("assemble", "build", "run", "diff-run", "enforce", "report"):
        assert verb in proc.stdout
