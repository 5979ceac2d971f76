import csv
import io
import json
import math

import pytest

from rfpkv import kernels as K
from rfpkv.baselines import ParadigmKind
from rfpkv.bench import ConfigError, LatencyHistogram, RunConfig, emit, percentile, run, sweep
from rfpkv.bench import report as report_mod
from rfpkv.bench.cli import main
from rfpkv.bench.report import CSV_COLUMNS, EmptyHistogram, bottleneck_label, render
from rfpkv.workload import WorkloadSpec


def small(paradigm="rfp", **kw):
    spec = WorkloadSpec(**({"key_count": 2000, "ops": 4000} | kw.pop("workload", {})))
    kw = {"client_threads": 8, "client_machines": 2, "duration_ops": spec.ops} | kw
    return RunConfig(paradigm=ParadigmKind.parse(paradigm), workload=spec, **kw)


@pytest.fixture(scope="module")
def reports():
    return {p: run(small(p)) for p in ("rfp", "server_reply", "bypass")}


# -- histogram and percentiles ----------------------------------------------------

def edge(ns):
    return report_mod.bucket_upper_edge(K.hist_bucket(ns))


def test_percentile_of_uniform_samples():
    h = LatencyHistogram()
    for ns in range(1000, 101000, 1000):       # 100 samples
        h.record(ns)
    # [oracle] nearest-rank percentile, reported as its bucket's upper edge
    assert h.percentile(0.5) == edge(50_000)
    assert h.percentile(0.15) == edge(15_000)
    assert h.percentile(0.99) == edge(99_000)
    assert h.percentile(1.0) == edge(100_000)


def test_percentile_single_sample_and_overflow():
    h = LatencyHistogram()
    h.record(5000)
    assert h.percentile(0.01) == h.percentile(1.0) == edge(5000)
    h.record(5e9)
    assert h.percentile(1.0) == 5e9


def test_percentile_edge_contract():
    h = LatencyHistogram()
    for ns in (150, 150, 150, 9000):
        h.record(ns)
    assert h.percentile(0.75) == edge(150) and h.percentile(0.76) == edge(9000)
    assert edge(150) >= 150 and edge(150) / 1.02 <= 150


def test_empty_histogram_raises():
    with pytest.raises(EmptyHistogram):
        LatencyHistogram().percentile(0.5)
    with pytest.raises(ValueError):
        LatencyHistogram().percentile(0)


def test_merge_and_sparse_roundtrip():
    a, b = LatencyHistogram(), LatencyHistogram()
    a.record(300)
    b.record(300)
    b.record(7000)
    a.merge(b)
    assert a.total == 3 and a.max_ns == 7000
    c = LatencyHistogram.from_sparse(a.sparse(), a.max_ns)
    assert c.counts == a.counts


@pytest.mark.parametrize("util, label", [
    ({"server_inbound_iops": 0.9, "server_inbound_bandwidth": 0.1}, "server_inbound_iops"),
    ({"server_inbound_iops": 0.2, "server_inbound_bandwidth": 0.7}, "server_inbound_bandwidth"),
    ({"client_outbound_iops": 0.95}, "client_outbound_iops"),
    ({"server_cpu": 0.99}, "server_cpu"),
])
def test_bottleneck_label(util, label):
    full = dict.fromkeys(report_mod.UTILIZATION_KEYS, 0.0) | util
    assert bottleneck_label(full) == label


# -- run reports ------------------------------------------------------------------

@pytest.mark.parametrize("paradigm", ["rfp", "server_reply", "bypass"])
def test_conservation(reports, paradigm):
    r = reports[paradigm]
    assert r.completed == r.gets + r.puts == 4000
    assert sum(r.round_trips.values()) == r.completed == r.latency.total
    assert r.iops > 0 and r.elapsed_ns > 0
    if paradigm == "server_reply":
        assert r.server_nic_ops == r.completed
    if paradigm == "rfp":
        assert r.server_nic_ops == 0
    if paradigm == "bypass":
        assert r.server_nic_ops == r.puts


def test_report_is_deterministic(reports):
    again = run(small("rfp"))
    assert render([again], "csv") == render([reports["rfp"]], "csv")


def test_percentile_helper(reports):
    r = reports["rfp"]
    assert percentile(r, 0.5) == r.latency.percentile(0.5)
    p = r.percentiles()
    assert p["p15"] <= p["p50"] <= p["p99"] <= p["p100"]


def test_csv_header_and_float_format(reports, tmp_path):
    path = tmp_path / "r.csv"
    emit(list(reports.values()), path)
    rows = list(csv.DictReader(io.StringIO(path.read_text())))
    assert tuple(csv.reader(io.StringIO(path.read_text())).__next__()) == CSV_COLUMNS
    assert len(rows) == 3
    for row in rows:
        for col in ("iops", "mean_round_trips", "util_server_cpu"):
            assert len(row[col].split(".")[1]) == 3
        assert int(row["completed"]) == int(row["gets"]) + int(row["puts"])


def test_emit_is_byte_identical(reports, tmp_path):
    for fmt in ("csv", "json"):
        a, b = tmp_path / f"a.{fmt}", tmp_path / f"b.{fmt}"
        emit(reports["bypass"], a, fmt)
        emit(reports["bypass"], b, fmt)
        assert a.read_bytes() == b.read_bytes()


def test_json_roundtrip(reports, tmp_path):
    path = tmp_path / "r.json"
    emit(reports["rfp"], path, "json")
    d = json.loads(path.read_text())
    r = reports["rfp"]
    assert d["completed"] == r.completed and d["config"]["paradigm"] == "rfp"
    assert math.isclose(d["iops"], r.iops, rel_tol=1e-3)
    hist = LatencyHistogram.from_sparse(d["latency_histogram"]["buckets"],
                                        d["latency_histogram"]["max_observed_ns"])
    assert hist.counts == r.latency.counts
    emit(list(reports.values()), path, "json")
    assert isinstance(json.loads(path.read_text()), list)


def test_failed_emit_leaves_no_file(reports, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise OSError("disk full")
    monkeypatch.setattr(report_mod.os, "replace", boom)
    with pytest.raises(OSError):
        emit(reports["rfp"], tmp_path / "r.csv")
    assert list(tmp_path.iterdir()) == []


def test_unknown_format(reports):
    with pytest.raises(ValueError):
        render([reports["rfp"]], "xml")


# -- config, sweeps, traces --------------------------------------------------------

@pytest.mark.parametrize("bad", [
    dict(server_workers=0), dict(client_threads=0), dict(rfs=1), dict(ring_depth=0),
    dict(mode="batch"), dict(client_machines=0),
])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        small(**bad)


def test_sweep_over_value_size():
    out = sweep(small(), "value_size", ["16", "64"])
    assert [r.config["value_size"] for r in out] == [16, 64]
    assert out[1].mean_round_trips > out[0].mean_round_trips
    with pytest.raises(ConfigError):
        sweep(small(), "colour", ["red"])


def test_trace_run_reports_mean_value_size(tmp_path):
    from rfpkv.workload import synthesize_trace
    p = tmp_path / "t.tsv"
    synthesize_trace(p, records=2000)
    r = run(small(trace=str(p), rfs=132))
    assert r.completed == 4000
    # every record is replayed exactly twice, so the mean is the file's mean
    assert round(r.mean_value_size, 1) == 43.0


def test_live_mode_small_run():
    r = run(small(mode="live", workload=dict(ops=600)))
    assert r.completed == r.gets + r.puts == 600
    assert r.bottleneck == "unmodeled"


# -- CLI ---------------------------------------------------------------------------

ARGS = ["--key-count", "500", "--ops", "800", "--clients", "4", "--client-machines", "2"]


def test_cli_run_writes_csv(tmp_path, capsys):
    out = tmp_path / "r.csv"
    assert main(["run", *ARGS, "--paradigm", "server-reply", "--out", str(out)]) == 0
    row = next(csv.DictReader(out.open()))
    assert row["paradigm"] == "server_reply" and row["completed"] == "800"


def test_cli_stdout_json(capsys):
    assert main(["run", *ARGS, "--format", "json", "--dist", "zipf:0.9"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["config"]["distribution"] == "zipf:0.9"


def test_cli_sweep(capsys):
    assert main(["sweep", *ARGS, "--axis", "get_fraction", "--points", "0.5,1"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [r["get_fraction"] for r in rows] == ["0.500", "1.000"]


@pytest.mark.parametrize("argv", [
    ["run", "--server-workers", "0"],
    ["run", "--dist", "pareto"],
    ["run", "--rfs", "1"],
    ["sweep", "--axis", "rfs", "--points", ","],
])
def test_cli_config_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_cli_missing_profile_exit_1(tmp_path):
    assert main(["run", *ARGS, "--nic-profile", str(tmp_path / "none.json")]) in (1, 2)


def test_cli_unwritable_output_exit_1(tmp_path):
    assert main(["run", *ARGS, "--out", str(tmp_path / "no" / "dir" / "r.csv")]) == 1


def test_cli_make_trace(tmp_path):
    p = tmp_path / "t.tsv"
    assert main(["make-trace", str(p), "--records", "100"]) == 0
    assert len(p.read_text().splitlines()) == 100
