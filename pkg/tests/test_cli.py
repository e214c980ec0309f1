import json

import pytest

from vmksim.cli import main
from vmksim.trace import read_csv

EMPTY = """
name = "empty"
duration = "50ms"
sample_interval = "10ms"
[host]
cores = 2
[[sandbox]]
name = "a"
pcpu = 0
[[sandbox]]
name = "b"
pcpu = 1
"""


def _write(tmp_path, text, name="s.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    assert "fig7_isolation" in capsys.readouterr().out.split()


def test_empty_scenario_has_only_samples(tmp_path):
    trace = tmp_path / "t.csv"
    summary = tmp_path / "s.json"
    assert main(["run", _write(tmp_path, EMPTY), "--trace", str(trace),
                 "--summary", str(summary)]) == 0
    with open(trace) as fh:
        recs = read_csv(fh)
    assert recs and {r.kind for r in recs} == {"SAMPLE"}
    assert len(recs) == 2 * 5
    assert json.loads(summary.read_text())["scenario"] == "empty"


def test_run_writes_csv_header(tmp_path):
    out = tmp_path / "fig4.csv"
    assert main(["run", "fig4_schedule", "--trace", str(out), "--until", "100000"]) == 0
    assert out.read_text().splitlines()[0] == "time_tick,pcpu,sandbox,kind,subject,detail"
    assert max(int(l.split(",")[0]) for l in out.read_text().splitlines()[1:]) <= 100000


def test_summary_to_stdout(capsys):
    assert main(["run", "fig4_schedule", "--summary", "-"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["vcpus"]["io"]["class"] == "io"
    assert data["interrupts_total"] == 17


def test_run_is_byte_identical_across_invocations(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert main(["run", "fig7_isolation", "--trace", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_usage_errors_exit_one(tmp_path, capsys):
    assert main(["run", "no_such_scenario"]) == 1
    assert main(["run", _write(tmp_path, "name = [\n")]) == 1
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 1


def test_admission_failure_exits_two(tmp_path, capsys):
    text = EMPTY + "".join(
        f'[[vcpu]]\nname = "v{i}"\nsandbox = "a"\nbudget = "40ms"\nperiod = "100ms"\n'
        for i in range(3))
    assert main(["run", _write(tmp_path, text)]) == 2
    assert "admission failed" in capsys.readouterr().err


def test_invariant_violation_exits_three(monkeypatch, capsys):
    from vmksim.sched import ReplenishmentItem, Vcpu

    def charging_background_run(self, ran_for):
        if ran_for:
            self.replenishments.append(ReplenishmentItem(ran_for, 10**12))

    monkeypatch.setattr(Vcpu, "background_run", charging_background_run)
    assert main(["run", "fig4_schedule"]) == 3
    assert "capacity" in capsys.readouterr().err


def test_verify_prints_one_line_per_check(capsys):
    assert main(["verify", "fig4_schedule"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(l.startswith("PASS ") for l in lines)
