import math

import numpy as np
import pytest

from loglinmc3.errors import UndefinedEstimateError
from loglinmc3.inference import StructureFit
from loglinmc3.model import ParamVector, Structure, cluster
from loglinmc3.search import CacheEntry, ChainTrace, SearchConfig, mc3_run
from loglinmc3.summaries import (
    ClusterReport,
    averaged_covariance,
    cluster_reports,
    compare_reports,
    conditional_theta,
    conditional_variance,
    inclusion_prob_frequency,
    inclusion_prob_topk,
    model_averaged_theta,
    read_report_csv,
    render_comparison,
    render_report,
    top_structures,
)
from loglinmc3.synth import GeneratorSpec, exact_inclusion, exact_structure_posterior, sample_configurations

PAIR = cluster(0, 1)
K = 100


def entry(structure, theta, var, score, post_visits=0):
    d = len(structure)
    fit = StructureFit(
        structure=structure,
        theta_map=ParamVector(structure, theta),
        covariance=np.diag(np.asarray(var, dtype=float)) if d else np.zeros((0, 0)),
        log_marginal=score,
        iterations=1,
        converged=True,
        gradient_norm=0.0,
    )
    return CacheEntry(structure, fit, 0.0, visits=post_visits, post_visits=post_visits)


def two_structure_cache(w_with, theta=1.0, var=0.1):
    with_pair = Structure(2, (1, 2, PAIR))
    without = Structure.singletons(2)
    a = entry(with_pair, [0.0, 0.0, theta], [0.1, 0.1, var], math.log(w_with), post_visits=2)
    b = entry(without, [0.0, 0.0], [0.1, 0.1], math.log(1 - w_with), post_visits=1)
    return {a.hash: a, b.hash: b}


def test_frequency_estimator_examples():
    cache = two_structure_cache(0.6)
    assert inclusion_prob_frequency(cache, 1) == 1.0
    assert inclusion_prob_frequency(cache, PAIR) == pytest.approx(2 / 3)
    hashes = [h for h in cache for _ in range(cache[h].post_visits)]
    trace = ChainTrace(hashes, np.ones(3, bool), np.zeros(3), cache, burn_in=0)
    assert inclusion_prob_frequency(trace, PAIR) == pytest.approx(2 / 3)


def test_topk_examples():
    cache = two_structure_cache(0.5)
    assert inclusion_prob_topk(cache, K, PAIR) == pytest.approx(0.5)
    assert inclusion_prob_topk(cache, 1, 1) == 1.0
    cache = two_structure_cache(0.7)
    assert inclusion_prob_topk(cache, 1, PAIR) == 1.0


def test_model_average_and_conditional_examples():
    cache = two_structure_cache(0.6)
    assert model_averaged_theta(cache, K, PAIR) == pytest.approx(0.6)
    cache = two_structure_cache(0.5)
    assert model_averaged_theta(cache, K, PAIR) == pytest.approx(0.5)
    assert conditional_theta(cache, K, PAIR) == pytest.approx(1.0)


def test_absent_cluster():
    cache = two_structure_cache(0.6)
    only = {h: e for h, e in cache.items() if PAIR not in e.structure}
    assert model_averaged_theta(only, K, PAIR) == 0.0
    with pytest.raises(UndefinedEstimateError):
        conditional_theta(only, K, PAIR)
    with pytest.raises(UndefinedEstimateError):
        conditional_variance(only, K, PAIR)


def test_conditional_variance_examples():
    cache = two_structure_cache(0.6, var=0.3)
    assert conditional_variance(cache, K, PAIR) == pytest.approx(0.3, abs=1e-15)
    s1 = Structure(2, (1, 2, PAIR))
    s2 = Structure(2, (1, PAIR))
    a = entry(s1, [0, 0, 1.0], [0.1, 0.1, 0.1], 0.0)
    b = entry(s2, [0, 2.0], [0.1, 0.1], 0.0)
    assert conditional_variance({a.hash: a, b.hash: b}, K, PAIR) == pytest.approx(0.35, abs=1e-14)


def test_between_component_vanishes_when_estimates_agree():
    s1 = Structure(2, (1, 2, PAIR))
    s2 = Structure(2, (1, PAIR))
    a = entry(s1, [0, 0, 0.7], [0.1, 0.1, 0.2], -1.0)
    b = entry(s2, [0, 0.7], [0.1, 0.4], -2.0)
    cache = {a.hash: a, b.hash: b}
    w = np.exp([-1.0, -2.0]) / np.exp([-1.0, -2.0]).sum()
    assert conditional_variance(cache, K, PAIR) == pytest.approx(w @ [0.2, 0.4], abs=1e-15)


def test_top_k_ties_broken_by_hash():
    a = entry(Structure(2, (1,)), [0.0], [1.0], -1.0)
    b = entry(Structure(2, (2,)), [0.0], [1.0], -1.0)
    top = top_structures({a.hash: a, b.hash: b}, 1)
    assert top[0].hash == min(a.hash, b.hash)


def test_averaged_covariance():
    cache = two_structure_cache(0.6, var=0.3)
    union, cov = averaged_covariance(cache, 1)
    assert union == [1, 2, PAIR]
    np.testing.assert_allclose(cov, np.diag([0.1, 0.1, 0.3]))
    union, cov = averaged_covariance(cache, K)
    assert cov[2, 2] == pytest.approx(0.6 * 0.3)
    assert np.all(np.diag(cov) >= 0)


@pytest.fixture(scope="module")
def k3_run():
    th = ParamVector(Structure(3, (1, 2, 4, 3)), [-0.5, -0.3, 0.2, 0.7])
    data = sample_configurations(GeneratorSpec(th, 500, seed=7))
    trace = mc3_run(data, SearchConfig(iterations=22_000, burn_in=2_000, seed=3))
    return data, trace


@pytest.mark.slow
def test_estimators_agree_with_enumeration(k3_run):
    data, trace = k3_run
    exact = exact_inclusion(exact_structure_posterior(data))
    for m, p in exact.items():
        assert abs(inclusion_prob_frequency(trace, m) - p) < 0.05
        assert abs(inclusion_prob_topk(trace, K, m) - p) < 0.05


def test_conditional_identity_and_covariance_cross_check(k3_run):
    _, trace = k3_run
    union, cov = averaged_covariance(trace, K)
    for j, m in enumerate(union):
        p = inclusion_prob_topk(trace, K, m)
        avg = model_averaged_theta(trace, K, m)
        assert conditional_theta(trace, K, m) * p == pytest.approx(avg, abs=1e-12)
        containing = [e for e in top_structures(trace, K) if m in e.structure]
        sc = np.array([e.score for e in containing])
        w = np.exp(sc - sc.max())
        w /= w.sum()
        within = sum(wi * e.fit.covariance[e.structure.index(m), e.structure.index(m)] for wi, e in zip(w, containing))
        assert cov[j, j] == pytest.approx(p * within, rel=1e-10)


def test_render_report_rows_and_order():
    reports = [
        ClusterReport(cluster(3, 5), 0.99, 0.99, 0.45, 0.46, 0.10),
        ClusterReport(1, 1.0, 1.0, -1.5, -1.5, 0.06),
        ClusterReport(cluster(2, 3, 5), 0.93, 0.96, 1.1, 1.13, 0.26),
        ClusterReport(cluster(0, 1), 0.04, 0.03, 0.01, 0.5, 0.3),
    ]
    rep = render_report(reports, 0.1)
    assert [r["cluster"] for r in rep.records] == ["{1}", "{4,6}", "{3,4,6}"]
    lines = rep.text.splitlines()
    assert len(lines) == 2 + 3
    assert lines[2].startswith("{1}")
    assert render_report(reports, 1.1).records == []
    assert len(render_report([], 0.1).text.splitlines()) == 2
    assert rep.to_csv().splitlines()[2].startswith('"{4,6}",')


def test_report_is_deterministic(k3_run, tmp_path):
    _, trace = k3_run
    a = render_report(cluster_reports(trace, K))
    b = render_report(cluster_reports(trace, K))
    assert a.text == b.text and a.to_csv() == b.to_csv()
    path = tmp_path / "r.csv"
    path.write_text(a.to_csv())
    back = read_report_csv(path)
    assert back == a.records


def test_compare_reports_flags_changes():
    a = [{"cluster": "{1}", "p_freq": 1.0}, {"cluster": "{4,6}", "p_freq": 0.98}]
    b = [{"cluster": "{1}", "p_freq": 1.0}, {"cluster": "{3,4}", "p_freq": 0.86}]
    rows = compare_reports(a, b, margin=0.5)
    flags = {r["cluster"]: r["flag"] for r in rows}
    assert flags == {"{1}": False, "{3,4}": True, "{4,6}": True}
    text = render_comparison(rows, ("pre", "post"))
    assert "pre" in text.splitlines()[0]
