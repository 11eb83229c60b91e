import csv
import io

import pytest

from provsim.cli import main
from provsim.config import parse_config


def test_simulate_writes_csv_and_summary(capsys):
    assert main(["simulate", "--arch", "arch4", "--scenario", "sb"]) == 0
    out, err = capsys.readouterr()
    body = list(csv.reader(io.StringIO(out)))
    assert body[0][0] == "vm_index" and len(body) == 41
    assert "arch4" in err and "total (min)" in err


def test_simulate_to_file_and_trace(tmp_path, capsys):
    out, trace = tmp_path / "r.csv", tmp_path / "t.csv"
    assert main(["simulate", "--arch", "arch3", "--scenario", "mi", "--runs", "1",
                 "--out", str(out), "--trace", str(trace)]) == 0
    assert len(out.read_text().splitlines()) == 21
    head = trace.read_text().splitlines()[0]
    assert head == "time_s,event_kind,vm_id,node_id,detail"
    assert "total (min)" in capsys.readouterr().out


def test_dump_config_round_trips(capsys):
    assert main(["simulate", "--arch", "arch2", "--jitter", "0.1", "--dump-config"]) == 0
    cfg = parse_config(capsys.readouterr().out)
    assert cfg.arch.value == "arch2" and cfg.jitter == 0.1


def test_sweep(tmp_path, capsys):
    out = tmp_path / "grid.csv"
    assert main(["sweep", "--runs", "1", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 1 + 16 * 20
    assert len(capsys.readouterr().out.splitlines()) == 5


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[cluster]\nunknwon_key = 1\n")
    assert main(["simulate", "--config", str(bad)]) == 1
    assert "unknwon_key" in capsys.readouterr().err


def test_missing_config_exit_code(capsys):
    assert main(["simulate", "--config", "/nonexistent.ini"]) == 1


def test_unwritable_output_exit_code(capsys):
    assert main(["simulate", "--out", "/nonexistent/dir/x.csv"]) == 2


def test_negative_runs_rejected(capsys):
    assert main(["simulate", "--runs", "0"]) == 1


def test_calibrate_with_targets(tmp_path, capsys):
    targets = tmp_path / "targets.csv"
    targets.write_text("arch,scenario,target_minutes,metric\narch4,sb,12,max_deploy\n")
    out = tmp_path / "fitted.ini"
    assert main(["calibrate", "--targets", str(targets), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "arch4" in text and "max_deploy" in text
    cfg = parse_config(out.read_text())
    assert cfg.cluster.nodes[0].local_disk_rate > 0


def test_calibrate_bad_targets(tmp_path, capsys):
    targets = tmp_path / "targets.csv"
    targets.write_text("arch9,sb,12\n")
    assert main(["calibrate", "--targets", str(targets)]) == 1


def test_argparse_rejects_unknown_arch():
    with pytest.raises(SystemExit):
        main(["simulate", "--arch", "arch9"])
