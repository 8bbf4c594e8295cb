import json

import pytest

from helpers import CONFIG_DIR, TARGETS_CSV

from poolsim.cli import main


def write_config(path, mode="shared", pool_size=2, rule="least_outstanding_tokens", extra=""):
    path.write_text(
        f"""
[cluster]
decode_pool_mode = "{mode}"
decode_pool_size = {pool_size}

[cluster.models]
count = 2
param_count = 8.03e9
shared_decoder = {"true" if mode == "shared" else "false"}

[routing]
decode_rule = "{rule}"

[workload]
total_rps = 2.0
isl = 64
osl = 8
grace_period = 1.0
measurement_window = 10.0
drain_margin = 5.0
seed = 5

[cost]
prefill_flops_per_token = 2.0e10
prefill_fixed_overhead = 0.01
decode_fixed_overhead = 0.002
dequant_compute_penalty = 1.25
mfu = 0.5
mbu = 0.8
{extra}
"""
    )


def test_validate_ok(tmp_path, capsys):
    cfg = tmp_path / "ok.toml"
    write_config(cfg)
    assert main(["validate", "--config", str(cfg)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["status"] == "ok"


def test_validate_rejects_isolated_partial_pool(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    write_config(cfg, mode="isolated", pool_size=1, rule="pinned")
    code = main(["validate", "--config", str(cfg)])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "InvalidConfig"
    assert any("decode_pool_size" in v for v in err["violations"])


def test_missing_config_is_clean_error(capsys):
    assert main(["validate", "--config", "/does/not/exist.toml"]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "FileNotFoundError"


def test_run_is_deterministic(tmp_path):
    cfg = tmp_path / "run.toml"
    write_config(cfg)
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["run", "--config", str(cfg), "--seed", "3", "--out", str(out1)]) == 0
    assert main(["run", "--config", str(cfg), "--seed", "3", "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_run_json_format(tmp_path):
    cfg = tmp_path / "run.toml"
    write_config(cfg)
    out = tmp_path / "run.json"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--format", "json"]) == 0
    rows = json.loads(out.read_text())
    assert len(rows) == 1 and rows[0]["error"] == ""


def test_run_emits_event_and_request_traces(tmp_path):
    cfg = tmp_path / "run.toml"
    write_config(cfg)
    events = tmp_path / "events.log"
    trace = tmp_path / "trace.csv"
    code = main(
        [
            "run",
            "--config",
            str(cfg),
            "--out",
            str(tmp_path / "o.csv"),
            "--events",
            str(events),
            "--trace-out",
            str(trace),
        ]
    )
    assert code == 0
    assert events.read_text().startswith("time_ns,kind,request_id,worker_id")
    assert trace.read_text().startswith("arrival_time_ns,model_id,isl,osl")


def test_replay_matches_run(tmp_path):
    cfg = tmp_path / "run.toml"
    write_config(cfg)
    out1 = tmp_path / "direct.csv"
    trace = tmp_path / "trace.csv"
    main(["run", "--config", str(cfg), "--out", str(out1), "--trace-out", str(trace)])
    out2 = tmp_path / "replayed.csv"
    assert main(["replay", "--config", str(cfg), "--trace", str(trace), "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_replay_actually_uses_the_trace_file(tmp_path):
    cfg = tmp_path / "run.toml"
    write_config(cfg)
    full_out = tmp_path / "direct.csv"
    trace = tmp_path / "trace.csv"
    main(["run", "--config", str(cfg), "--out", str(full_out), "--trace-out", str(trace)])
    # Drop the second half of the workload; the replayed row must change.
    lines = trace.read_text().splitlines()
    truncated = tmp_path / "half.csv"
    truncated.write_text("\n".join(lines[: 1 + (len(lines) - 1) // 2]) + "\n")
    half_out = tmp_path / "half_run.csv"
    assert main(["replay", "--config", str(cfg), "--trace", str(truncated), "--out", str(half_out)]) == 0
    assert half_out.read_bytes() != full_out.read_bytes()


def test_calibrate_outputs_cost_section(tmp_path, capsys):
    out = tmp_path / "params.toml"
    code = main(
        [
            "calibrate",
            "--config",
            str(CONFIG_DIR / "cluster_shared.toml"),
            "--targets",
            str(TARGETS_CSV),
            "--out",
            str(out),
        ]
    )
    assert code == 0
    text = out.read_text()
    assert text.startswith("[cost]")
    assert "mbu" in text and "dequant_compute_penalty" in text


def test_calibrate_infeasible_reports_residuals(tmp_path, capsys):
    bad = tmp_path / "bad_targets.csv"
    bad.write_text(
        "model,prefill_bits,decode_bits,isl,osl,concurrency,ttft_ms,tpot_ms\n"
        "m,16,16,1024,512,1,100.0,14.0\n"
        "m,16,16,1024,512,1,200.0,14.0\n"
    )
    code = main(
        [
            "calibrate",
            "--config",
            str(CONFIG_DIR / "cluster_shared.toml"),
            "--targets",
            str(bad),
        ]
    )
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "CalibrationInfeasible"
    assert err["residuals"]


def test_sweep_parallel_flag_byte_identical(tmp_path):
    cfg = tmp_path / "base.toml"
    write_config(cfg)
    spec = tmp_path / "sweep.toml"
    spec.write_text(
        f"""
base_config = "{cfg.name}"
replicates = 1

[axes]
alpha = [0.0, 1.5, 3.0]
seed = [1, 2]
"""
    )
    out1, out8 = tmp_path / "p1.csv", tmp_path / "p8.csv"
    assert main(["sweep", "--spec", str(spec), "--parallel", "1", "--out", str(out1)]) == 0
    assert main(["sweep", "--spec", str(spec), "--parallel", "8", "--out", str(out8)]) == 0
    assert out1.read_bytes() == out8.read_bytes()
    assert len(out1.read_text().splitlines()) == 7  # header + 6 rows


def test_sweep_ratio_grid_output(tmp_path):
    cfg = tmp_path / "base.toml"
    write_config(cfg)
    spec = tmp_path / "sweep.toml"
    spec.write_text(
        f"""
base_config = "{cfg.name}"

[axes]
decode_pool_mode = ["isolated", "shared"]
offered_rps = [1.0, 2.0]
alpha = [0.0, 1.5]
"""
    )
    grid = tmp_path / "grid.csv"
    code = main(
        [
            "sweep",
            "--spec",
            str(spec),
            "--out",
            str(tmp_path / "rows.csv"),
            "--ratio-grid-out",
            str(grid),
        ]
    )
    assert code == 0
    lines = grid.read_text().splitlines()
    assert lines[0] == "offered_rps,alpha,mode,ratio"
    assert len(lines) == 9  # header + 8 cells
    assert lines[1].startswith("1.0,0.0,isolated,")


def test_usage_error_exits_nonzero():
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 2
