"""Forward sampling and brute-force reference computations.

The oracles here deliberately avoid the fitting code path: the quadrature
and Monte Carlo marginal likelihoods evaluate the likelihood from scratch
with their own indicator loops.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.integrate import nquad
from scipy.optimize import minimize
from scipy.special import logsumexp

from .errors import CapacityError, FitError
from .inference import PriorSpec, newton_map
from .model import (
    ConfigCounts,
    ParamVector,
    Structure,
    check_enumerable,
    cluster_members,
    config_distribution,
    format_cluster,
    parse_cluster,
)
from .search import candidate_clusters, structure_log_prior

MAX_TOGGLEABLE = 16


@dataclass(frozen=True, eq=False)
class GeneratorSpec:
    theta: ParamVector
    N: int
    seed: int = 0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")

    @property
    def k(self) -> int:
        return self.theta.structure.k

    @property
    def structure(self) -> Structure:
        return self.theta.structure

    def to_dict(self) -> dict:
        s = self.structure
        return {
            "k": s.k,
            "N": self.N,
            "seed": self.seed,
            "clusters": [
                {"nodes": [i + 1 for i in cluster_members(m)], "theta": float(t)}
                for m, t in zip(s.clusters, self.theta.theta)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        k = int(d["k"])
        values = {}
        for item in d["clusters"]:
            nodes = item["nodes"]
            mask = parse_cluster(",".join(str(n) for n in nodes)) if not isinstance(nodes, str) else parse_cluster(nodes)
            values[mask] = float(item["theta"])
        structure = Structure(k, tuple(values))
        return cls(ParamVector.from_mapping(structure, values), int(d["N"]), int(d.get("seed", 0)))


def load_generator_spec(path: str | Path) -> GeneratorSpec:
    """Read a generator spec; the name ``table3`` resolves to the bundled file."""
    if str(path) == "table3":
        text = resources.files("loglinmc3").joinpath("data/table3.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return GeneratorSpec.from_dict(json.loads(text))


def table3_spec(N: int = 2000, seed: int = 0) -> GeneratorSpec:
    spec = load_generator_spec("table3")
    return GeneratorSpec(spec.theta, N, seed)


def sample_configurations(spec: GeneratorSpec, rng: np.random.Generator | None = None) -> ConfigCounts:
    """N iid draws by inverse CDF over the exact configuration table."""
    check_enumerable(spec.k)
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    p = config_distribution(spec.theta)
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    x = np.searchsorted(cdf, rng.random(spec.N), side="right")
    return ConfigCounts.from_dense(np.bincount(x, minlength=p.size))


# --------------------------------------------------------------------------
# structure enumeration


def enumerate_structures(k: int, max_order: int | None = None, singleton_toggle: bool = False) -> Iterator[Structure]:
    """Every structure over the candidate set; fixed singletons when not toggled."""
    toggles = candidate_clusters(k, max_order, include_singletons=singleton_toggle)
    if len(toggles) > MAX_TOGGLEABLE:
        raise CapacityError(f"{len(toggles)} toggleable clusters exceed the limit of {MAX_TOGGLEABLE}")
    base = () if singleton_toggle else tuple(1 << i for i in range(k))
    for s in range(1 << len(toggles)):
        yield Structure(k, base + tuple(c for j, c in enumerate(toggles) if (s >> j) & 1))


def exact_structure_posterior(data: ConfigCounts, prior: PriorSpec | None = None, max_order: int | None = None,
                              singleton_toggle: bool = False) -> dict[Structure, float]:
    """Normalized exp(Laplace log marginal + log prior) over all structures."""
    prior = prior or PriorSpec()
    structures = list(enumerate_structures(data.k, max_order, singleton_toggle))
    scores = np.empty(len(structures))
    for i, s in enumerate(structures):
        try:
            fit = newton_map(s, data, prior)
            lm = fit.log_marginal
        except FitError:
            lm = -math.inf
        scores[i] = lm + structure_log_prior(s, prior, max_order)
    probs = np.exp(scores - logsumexp(scores))
    return dict(zip(structures, probs.tolist()))


def exact_inclusion(posterior: dict[Structure, float]) -> dict[int, float]:
    out: dict[int, float] = {}
    for s, p in posterior.items():
        for m in s.clusters:
            out[m] = out.get(m, 0.0) + p
    return out


# --------------------------------------------------------------------------
# marginal likelihood references


def _oracle_design(k: int, clusters: tuple[int, ...]) -> np.ndarray:
    D = np.zeros((1 << k, len(clusters)))
    for x in range(1 << k):
        for j, c in enumerate(clusters):
            if all((x >> i) & 1 for i in cluster_members(c)):
                D[x, j] = 1.0
    return D


def _oracle_stats(data: ConfigCounts, clusters: tuple[int, ...]) -> np.ndarray:
    t = np.zeros(len(clusters))
    for x, n in data.as_dict().items():
        for j, c in enumerate(clusters):
            if all((x >> i) & 1 for i in cluster_members(c)):
                t[j] += n
    return t / data.N


def mc_log_marginal(structure: Structure, data: ConfigCounts, prior: PriorSpec | None = None,
                    draws: int = 1_000_000, rng: np.random.Generator | None = None,
                    chunk: int = 100_000) -> tuple[float, float]:
    """Prior-sampling Monte Carlo estimate of the log marginal likelihood.

    Returns ``(estimate, standard_error)`` where the standard error is the
    delta-method error of the log of the sample mean likelihood.
    """
    if draws < 1000:
        raise ValueError("use at least 1000 draws")
    prior = prior or PriorSpec()
    rng = np.random.default_rng(0) if rng is None else rng
    k, d, N = structure.k, len(structure), data.N
    check_enumerable(k)
    if d == 0:
        return -N * k * math.log(2.0), 0.0
    D = _oracle_design(k, structure.clusters)
    tbar = _oracle_stats(data, structure.clusters)
    ll = np.empty(draws)
    for start in range(0, draws, chunk):
        stop = min(start + chunk, draws)
        th = rng.normal(0.0, prior.sigma, size=(stop - start, d))
        ll[start:stop] = N * (th @ tbar - logsumexp(th @ D.T, axis=1))
    top = ll.max()
    w = np.exp(ll - top)
    mean = w.mean()
    se = w.std(ddof=1) / math.sqrt(draws) / mean
    return top + math.log(mean), float(se)


def quadrature_log_marginal(structure: Structure, data: ConfigCounts, prior: PriorSpec | None = None,
                            epsrel: float = 1e-8) -> float:
    """Adaptive quadrature of the marginal likelihood over [-8 sigma, 8 sigma]^d, d <= 2."""
    prior = prior or PriorSpec()
    k, d, N = structure.k, len(structure), data.N
    if d > 2:
        raise CapacityError("quadrature oracle supports at most 2 parameters")
    if d == 0:
        return -N * k * math.log(2.0)
    D = _oracle_design(k, structure.clusters)
    tbar = _oracle_stats(data, structure.clusters)
    s2 = prior.sigma**2
    lo, hi = -8.0 * prior.sigma, 8.0 * prior.sigma

    def log_integrand(th):
        th = np.asarray(th, dtype=float)
        return (
            N * (th @ tbar - logsumexp(D @ th))
            - 0.5 * d * math.log(2 * math.pi * s2)
            - 0.5 * (th @ th) / s2
        )

    # locate the peak on a grid, then polish; it sets the scale and break points
    grid = np.linspace(lo, hi, 801 if d == 1 else 161)
    if d == 1:
        vals = [log_integrand([a]) for a in grid]
        start = np.array([grid[int(np.argmax(vals))]])
    else:
        best = max(((log_integrand([a, b]), a, b) for a in grid for b in grid))
        start = np.array(best[1:])
    res = minimize(lambda t: -log_integrand(t), start, method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 5000})
    mode = res.x
    shift = log_integrand(mode)
    width = 2.0 / math.sqrt(N)
    offsets = width * np.array([-16, -8, -4, -2, -1, 0, 1, 2, 4, 8, 16])

    def pts(c):
        return sorted({float(v) for v in np.clip(c + offsets, lo, hi) if lo < v < hi})

    opts = [{"points": pts(mode[j]), "epsrel": epsrel, "epsabs": 1e-300, "limit": 400} for j in range(d)]
    val, _ = nquad(lambda *t: math.exp(log_integrand(t) - shift), [(lo, hi)] * d, opts=opts)
    return shift + math.log(val)


def describe_spec(spec: GeneratorSpec) -> str:
    return "; ".join(f"{format_cluster(m)}={t:g}" for m, t in zip(spec.structure.clusters, spec.theta.theta))
