import json
import subprocess
import sys

import numpy as np
import pytest

from loglinmc3.cli import main
from loglinmc3.ingest import read_counts_csv, write_counts_csv
from loglinmc3.model import ConfigCounts, ParamVector, Structure, format_cluster, parse_cluster
from loglinmc3.summaries import read_report_csv
from loglinmc3.synth import GeneratorSpec, exact_inclusion, exact_structure_posterior, sample_configurations


@pytest.fixture()
def k3_csv(tmp_path):
    th = ParamVector(Structure(3, (1, 2, 4, 3)), [-0.5, -0.3, 0.2, 0.7])
    data = sample_configurations(GeneratorSpec(th, 500, seed=7))
    path = tmp_path / "k3.csv"
    write_counts_csv(data, path)
    return path, data


def test_bin_command(tmp_path):
    spikes = tmp_path / "spikes.csv"
    segs = tmp_path / "segs.csv"
    spikes.write_text("neuron,time_ms\nb,39\nb,40\na,5\n")
    segs.write_text("start_ms,end_ms\n0,120\n")
    out = tmp_path / "counts.csv"
    assert main(["-q", "bin", "--spikes", str(spikes), "--segments", str(segs), "-o", str(out)]) == 0
    assert out.read_text() == "config,count\n00,1\n01,1\n11,1\n"
    assert main(["-q", "bin", "--spikes", str(spikes), "--segments", str(segs), "--neurons", "b",
                 "--window-ms", "60", "-o", str(out)]) == 0
    # both spikes of b share the first 60 ms window
    assert read_counts_csv(out).as_dict() == {1: 1, 0: 1}


def test_simulate_command(tmp_path):
    out = tmp_path / "sim.csv"
    assert main(["-q", "simulate", "--spec", "table3", "--seed", "1", "-o", str(out)]) == 0
    data = read_counts_csv(out)
    assert data.N == 2000 and data.k == 6
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"k": 2, "N": 50, "seed": 3, "clusters": [{"nodes": [1], "theta": 0.5}]}))
    assert main(["-q", "simulate", "--spec", str(spec), "--n", "70", "-o", str(out)]) == 0
    assert read_counts_csv(out).N == 70


def test_fit_uniform_data_gives_zero_estimates(tmp_path, capsys):
    data = ConfigCounts.from_dense(np.full(8, 25))
    path = tmp_path / "u.csv"
    write_counts_csv(data, path)
    js = tmp_path / "fit.json"
    assert main(["-q", "fit", str(path), "--json", str(js)]) == 0
    rec = json.loads(js.read_text())
    assert rec["clusters"] == ["{1}", "{2}", "{3}"]
    assert np.max(np.abs(rec["theta"])) < 1e-10
    assert rec["converged"]
    assert "log marginal" in capsys.readouterr().out


def test_fit_with_explicit_structure(k3_csv, tmp_path):
    path, _ = k3_csv
    js = tmp_path / "fit.json"
    assert main(["-q", "fit", str(path), "--structure", "1,2", "--json", str(js), "-o", str(tmp_path / "f.txt")]) == 0
    assert json.loads(js.read_text())["clusters"] == ["{1}", "{2}", "{3}", "{1,2}"]


def test_oracle_vs_search_inclusion(k3_csv, tmp_path, capsys):
    path, data = k3_csv
    csv = tmp_path / "r.csv"
    assert main(["-q", "search", str(path), "--iters", "55000", "--burn-in", "5000", "--seed", "5",
                 "--threshold", "0", "--csv", str(csv), "-o", str(tmp_path / "r.txt")]) == 0
    report = {r["cluster"]: r for r in read_report_csv(csv)}
    exact = exact_inclusion(exact_structure_posterior(data))
    for m, p in exact.items():
        row = report.get(format_cluster(m), {"p_freq": 0.0, "p_topk": 0.0})
        assert abs(row["p_freq"] - p) < 0.05
        assert abs(row["p_topk"] - p) < 0.05

    assert main(["-q", "oracle", str(path), "--threshold", "0"]) == 0
    out = capsys.readouterr().out.splitlines()
    rows = {}
    for line in out[1:]:
        if not line.strip():
            break
        name, p = line.split()
        rows[parse_cluster(name)] = float(p)
    for m, p in exact.items():
        assert rows[m] == pytest.approx(p, abs=5e-5)


def test_oracle_marginal_mode(k3_csv, capsys):
    path, _ = k3_csv
    assert main(["-q", "oracle", str(path), "--mode", "marginal", "--structure", "1,2", "--no-singletons",
                 "--draws", "20000"]) == 0
    out = capsys.readouterr().out
    assert "quadrature" in out and "monte carlo" in out


def test_search_summarize_compare(k3_csv, tmp_path):
    path, _ = k3_csv
    cache = tmp_path / "cache.jsonl"
    trace = tmp_path / "trace.csv"
    a = tmp_path / "a.csv"
    assert main(["-q", "search", str(path), "--iters", "1500", "--seed", "1", "--cache", str(cache),
                 "--trace", str(trace), "--csv", str(a), "-o", str(tmp_path / "a.txt")]) == 0
    lines = trace.read_text().splitlines()
    assert lines[0] == "iteration,structure_hash,accepted,score" and len(lines) == 1501
    b = tmp_path / "b.csv"
    assert main(["-q", "summarize", str(cache), "--csv", str(b), "-o", str(tmp_path / "b.txt")]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert main(["-q", "summarize", str(cache), "--threshold", "1.1", "--csv", str(b),
                 "-o", str(tmp_path / "b.txt")]) == 0
    assert read_report_csv(b) == []
    cmp = tmp_path / "cmp.txt"
    assert main(["-q", "compare", str(a), str(b), "--labels", "pre,post", "-o", str(cmp)]) == 0
    assert "pre" in cmp.read_text()


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["-q", "fit", str(tmp_path / "missing.csv")]) == 1
    bad = tmp_path / "bad.csv"
    bad.write_text("config,count\n01,1\n0x,2\n")
    assert main(["-q", "fit", str(bad)]) == 1
    assert "line 3" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["search", "--no-such-flag"])
    assert exc.value.code != 0


def test_pipeline_through_stdin(tmp_path):
    sim = subprocess.run([sys.executable, "-m", "loglinmc3", "-q", "simulate", "--spec", "table3", "--seed", "3",
                          "--n", "300"], capture_output=True, text=True, check=True)
    fit = subprocess.run([sys.executable, "-m", "loglinmc3", "fit", "--structure", "4,6"],
                         input=sim.stdout, capture_output=True, text=True, check=True)
    assert "{4,6}" in fit.stdout
    assert '"command": "fit"' in fit.stderr
