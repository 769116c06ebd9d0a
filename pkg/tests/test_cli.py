import json

from polyfee.cli import main


def write_scenario(tmp_path, **extra):
    doc = {
        "seed": 3,
        "chain": {
            "units": ["USD", "CNY"],
            "genesis_rates": {"CNY": "7.2"},
            "committees": {"USD": {"members": ["mgr-0", "mgr-1"], "quorum_size": 2}},
        },
        "network": {"gst_ms": 0, "delta_ms": 10, "base_timeout_ms": 100, "block_interval_ms": 10},
        "accounts": {"alice": {"USD": "10"}, "mgr-0": {"USD": "10"}, "mgr-1": {"USD": "10"}},
        "workload": [
            {"at_ms": 5, "unit": "USD", "from": "alice", "to": "bob", "amount_tokens": "1"},
            {"at_ms": 6, "unit": "USD", "from": "mgr-0", "label": "mint-a",
             "governance": {"propose": {"action": {"kind": "mint", "to": "alice", "amount_tokens": "2"}}}},
            {"at_ms": 400, "unit": "USD", "from": "mgr-1",
             "governance": {"vote": {"proposal": "mint-a"}}},
        ],
        "run": {"until_height": 6, "max_ms": 60000},
    }
    doc.update(extra)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(doc))
    return str(path)


def test_node_run_prints_report(tmp_path, capsys):
    code = main(["node", "run", "--scenario", write_scenario(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert "# per-run" in out
    assert "safety_violations=0" in out


def test_node_run_writes_report_file(tmp_path, capsys):
    report_path = tmp_path / "report.txt"
    code = main(["node", "run", "--scenario", write_scenario(tmp_path), "--report", str(report_path)])
    assert code == 0
    assert report_path.exists()
    assert (tmp_path / "report.txt.json").exists()


def test_missing_scenario_is_config_error(tmp_path, capsys):
    code = main(["node", "run", "--scenario", str(tmp_path / "absent.json")])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_fee_ratio_command(capsys):
    code = main(["experiment", "fee-ratio", "--rate", "7.11"])
    assert code == 0
    assert "fee_ratio=7.11" in capsys.readouterr().out


def test_fee_stability_command_with_defaults(capsys):
    code = main(["experiment", "fee-stability"])
    out = capsys.readouterr().out
    assert code == 0
    assert "volatile_fee_ratio=1.84" in out
    stable_line = [l for l in out.splitlines() if l.startswith("stable_fee_ratio=")][0]
    assert float(stable_line.split("=")[1]) <= 1.004


def test_gen_series_then_stability(tmp_path, capsys):
    stable = str(tmp_path / "stable.csv")
    volatile = str(tmp_path / "volatile.csv")
    assert main(["experiment", "gen-series", "--stable-out", stable, "--volatile-out", volatile]) == 0
    capsys.readouterr()
    code = main(["experiment", "fee-stability", "--stable", stable, "--volatile", volatile])
    out = capsys.readouterr().out
    assert code == 0
    assert "volatile_fee_ratio=1.84" in out


def test_gov_status_lists_proposals(tmp_path, capsys):
    code = main(["gov", "status", "--unit", "USD", "--scenario", write_scenario(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert "unit=USD" in out
    assert "action=Mint" in out
    assert "status=executed" in out
