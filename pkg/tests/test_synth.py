import json
import math

import numpy as np
import pytest

from loglinmc3.errors import CapacityError
from loglinmc3.inference import PriorSpec, newton_map
from loglinmc3.model import ConfigCounts, ParamVector, Structure, cluster, cluster_moment, sufficient_stats
from loglinmc3.synth import (
    GeneratorSpec,
    enumerate_structures,
    exact_inclusion,
    exact_structure_posterior,
    load_generator_spec,
    mc_log_marginal,
    quadrature_log_marginal,
    sample_configurations,
    table3_spec,
)

PRIOR = PriorSpec()


def test_table3_spec_contents():
    spec = table3_spec()
    assert spec.k == 6 and spec.N == 2000
    vals = {m: spec.theta.get(m) for m in spec.structure.clusters}
    assert [vals[1 << i] for i in range(6)] == [-1.52, -1.74, -3.24, -0.82, -2.78, -0.83]
    assert vals[cluster(3, 5)] == 0.45
    assert vals[cluster(2, 3, 5)] == 0.74
    assert vals[cluster(1, 2, 3, 4)] == 1.79
    assert vals[cluster(1, 2, 3, 4, 5)] == 0.61


def test_generator_spec_round_trip(tmp_path):
    spec = table3_spec(N=10, seed=4)
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec.to_dict()))
    back = load_generator_spec(path)
    assert back.structure == spec.structure
    assert np.array_equal(back.theta.theta, spec.theta.theta)
    assert (back.N, back.seed) == (10, 4)


def test_uniform_sampling():
    spec = GeneratorSpec(ParamVector.zeros(Structure(2, ())), 1_000_000, seed=3)
    data = sample_configurations(spec)
    freq = data.dense() / spec.N
    se = math.sqrt(0.25 * 0.75 / spec.N)
    assert np.all(np.abs(freq - 0.25) < 3 * se)


def test_sampling_counts_and_determinism():
    spec = table3_spec(N=2000, seed=8)
    a, b = sample_configurations(spec), sample_configurations(spec)
    assert a.N == 2000
    assert a == b


def test_table3_sample_moments():
    spec = table3_spec(N=2000, seed=1)
    data = sample_configurations(spec)
    tbar = sufficient_stats(data, spec.structure)
    for m, t in zip(spec.structure.clusters, tbar):
        mu = cluster_moment(spec.theta, m)
        assert abs(t - mu) < 3 * math.sqrt(mu * (1 - mu) / spec.N)


def test_generator_round_trip_recovery():
    spec = table3_spec()
    ok = 0
    for rep in range(20):
        data = sample_configurations(GeneratorSpec(spec.theta, 2000, seed=1000 + rep))
        fit = newton_map(spec.structure, data)
        ok += bool(np.all(np.abs(fit.theta - spec.theta.theta) < 4 * fit.sd))
    assert ok >= 19


@pytest.mark.parametrize("k,n", [(3, 16), (2, 2), (4, 2048)])
def test_enumerate_structure_counts(k, n):
    structures = list(enumerate_structures(k))
    assert len(structures) == n
    assert len({s.hash for s in structures}) == n


def test_enumerate_capacity():
    with pytest.raises(CapacityError):
        next(enumerate_structures(5))


def test_exact_posterior_trivial_and_normalized():
    data = ConfigCounts.from_mapping(1, {0: 3, 1: 4})
    post = exact_structure_posterior(data, PRIOR)
    assert list(post.values()) == [1.0]
    rng = np.random.default_rng(0)
    data = ConfigCounts.from_records(3, rng.integers(0, 8, size=100))
    post = exact_structure_posterior(data, PRIOR)
    assert abs(sum(post.values()) - 1.0) < 1e-12


def test_exact_posterior_detects_strong_pair():
    th = ParamVector(Structure(3, (1, 2, 4, 3)), [-0.2, -0.4, 0.1, 1.5])
    data = sample_configurations(GeneratorSpec(th, 1000, seed=2))
    incl = exact_inclusion(exact_structure_posterior(data, PRIOR))
    assert incl[3] > 0.9


# ------------------------------------------------------ marginal likelihoods


def test_zero_dimensional_oracles():
    data = ConfigCounts.from_mapping(2, {0: 4, 3: 6})
    s = Structure(2, ())
    assert mc_log_marginal(s, data, PRIOR) == (-10 * 2 * math.log(2), 0.0)
    assert quadrature_log_marginal(s, data, PRIOR) == -10 * 2 * math.log(2)


def test_quadrature_symmetry():
    data = ConfigCounts.from_mapping(1, {0: 25, 1: 25})
    s = Structure.singletons(1)
    full = quadrature_log_marginal(s, data, PRIOR)
    # symmetric integrand: twice the half-line integral
    from scipy.integrate import quad
    from scipy.stats import norm

    half = quad(lambda t: math.exp(25 * t - 50 * math.log1p(math.exp(t))) * norm.pdf(t, 0, 2), 0, 16,
                epsabs=0, epsrel=1e-10, points=[0.5])[0]
    assert full == pytest.approx(math.log(2 * half), abs=1e-7)


def test_quadrature_rejects_three_parameters():
    data = ConfigCounts.from_mapping(2, {0: 1})
    with pytest.raises(CapacityError):
        quadrature_log_marginal(Structure(2, (1, 2, 3)), data, PRIOR)


@pytest.mark.parametrize("seed", range(20))
def test_mc_matches_quadrature_k1(seed):
    rng = np.random.default_rng(seed)
    data = ConfigCounts.from_records(1, (rng.random(20) < rng.uniform(0.1, 0.9)).astype(int))
    s = Structure.singletons(1)
    ref = quadrature_log_marginal(s, data, PRIOR)
    est, se = mc_log_marginal(s, data, PRIOR, draws=200_000, rng=np.random.default_rng(seed))
    assert abs(est - ref) < 3 * se
    assert abs(newton_map(s, data).log_marginal - ref) < 0.3


def test_mc_invariant_to_record_order():
    rng = np.random.default_rng(1)
    recs = rng.integers(0, 4, size=40)
    a = ConfigCounts.from_records(2, recs)
    b = ConfigCounts.from_records(2, recs[::-1])
    s = Structure(2, (1, 3))
    assert mc_log_marginal(s, a, draws=5000) == mc_log_marginal(s, b, draws=5000)


def test_mc_rejects_few_draws():
    with pytest.raises(ValueError):
        mc_log_marginal(Structure.singletons(1), ConfigCounts.from_mapping(1, {0: 1}), draws=10)
