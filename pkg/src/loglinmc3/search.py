"""MC3 Metropolis-Hastings search over interaction structures.

The chain moves by toggling one candidate cluster at a time.  The cluster
to toggle is drawn from a :class:`ProposalTable` that keeps a separate
weight for adding and for deleting each candidate, so the selection
distribution may depend on the current structure; acceptance always uses
the full Hastings ratio with the reverse-move probability.  Weights adapt
during burn-in only and are frozen afterwards.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from math import comb
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import FitError, InvalidStructureError
from .inference import PriorSpec, StructureFit, newton_map
from .model import ConfigCounts, ParamVector, Structure, check_enumerable, cluster_order, format_cluster

ADAPT_UP = 1.1
ADAPT_DOWN = 0.95


def candidate_clusters(k: int, max_order: int | None = None, include_singletons: bool = True) -> tuple[int, ...]:
    """All nonempty clusters of order <= max_order, sorted by (order, mask)."""
    max_order = k if max_order is None else max_order
    lo = 1 if include_singletons else 2
    out = []
    for r in range(lo, min(max_order, k) + 1):
        for nodes in combinations(range(k), r):
            out.append(sum(1 << i for i in nodes))
    return tuple(sorted(out, key=lambda m: (cluster_order(m), m)))


def structure_log_prior(structure: Structure, prior: PriorSpec, max_order: int | None = None) -> float:
    """Independent inclusion prior over every candidate cluster of order <= max_order."""
    k = structure.k
    max_order = k if max_order is None else max_order
    n_single = 0
    n_high = 0
    for m in structure.clusters:
        r = cluster_order(m)
        if r > max_order:
            raise InvalidStructureError(
                f"cluster {format_cluster(m)} has order {r} > max_order={max_order}"
            )
        if r == 1:
            n_single += 1
        else:
            n_high += 1
    total_high = sum(comb(k, r) for r in range(2, min(max_order, k) + 1))
    total_single = k if max_order >= 1 else 0
    return (
        n_single * math.log(prior.q_single)
        + (total_single - n_single) * math.log1p(-prior.q_single)
        + n_high * math.log(prior.q_high)
        + (total_high - n_high) * math.log1p(-prior.q_high)
    )


# --------------------------------------------------------------------------
# proposal


@dataclass(frozen=True, eq=False)
class ProposalTable:
    """Selection weights for toggling each candidate cluster.

    ``add_weights[j]`` applies when candidate ``j`` is absent from the current
    structure and ``del_weights[j]`` when it is present.  Selection
    probabilities mix the normalized weights with a uniform floor so every
    candidate keeps probability at least ``floor``.
    """

    candidates: tuple[int, ...]
    add_weights: np.ndarray
    del_weights: np.ndarray
    floor: float
    adaptive: bool = True

    def __post_init__(self):
        n = len(self.candidates)
        if n == 0:
            raise InvalidStructureError("proposal table needs at least one candidate cluster")
        for name in ("add_weights", "del_weights"):
            w = np.array(getattr(self, name), dtype=float).reshape(-1)
            if w.shape != (n,) or not np.all(w > 0) or not np.all(np.isfinite(w)):
                raise ValueError(f"{name} must hold {n} positive finite weights")
            w.flags.writeable = False
            object.__setattr__(self, name, w)
        if not 0 < self.floor * n <= 1:
            raise ValueError("floor must satisfy 0 < floor * n_candidates <= 1")
        object.__setattr__(self, "_index", {m: j for j, m in enumerate(self.candidates)})

    @classmethod
    def uniform(cls, candidates: Iterable[int], floor: float | None = None, adaptive: bool = True) -> "ProposalTable":
        candidates = tuple(candidates)
        n = len(candidates)
        floor = 0.01 / max(n, 1) if floor is None else floor
        return cls(candidates, np.ones(n), np.ones(n), floor, adaptive)

    def __len__(self) -> int:
        return len(self.candidates)

    def index(self, mask: int) -> int:
        return self._index[mask]

    def presence(self, structure: Structure) -> np.ndarray:
        return np.fromiter((m in structure for m in self.candidates), dtype=bool, count=len(self.candidates))

    def probabilities(self, present: np.ndarray) -> np.ndarray:
        w = np.where(present, self.del_weights, self.add_weights)
        n = len(self.candidates)
        return self.floor + (1.0 - n * self.floor) * (w / w.sum())

    def frozen(self) -> "ProposalTable":
        if not self.adaptive:
            return self
        return ProposalTable(self.candidates, self.add_weights, self.del_weights, self.floor, adaptive=False)

    def digest(self) -> str:
        h = hashlib.blake2b(digest_size=8)
        h.update(np.asarray(self.candidates, dtype=np.int64).tobytes())
        h.update(self.add_weights.tobytes())
        h.update(self.del_weights.tobytes())
        h.update(repr((self.floor, self.adaptive)).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class Proposal:
    structure: Structure
    cluster: int
    index: int
    is_add: bool
    log_fwd: float
    log_rev: float


def propose(structure: Structure, table: ProposalTable, rng: np.random.Generator) -> Proposal:
    """Draw one toggle move; returns forward and reverse log selection probabilities."""
    present = table.presence(structure)
    p = table.probabilities(present)
    j = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
    j = min(j, len(p) - 1)
    mask = table.candidates[j]
    is_add = not present[j]
    present_new = present.copy()
    present_new[j] = is_add
    p_new = table.probabilities(present_new)
    return Proposal(
        structure=structure.toggle(mask),
        cluster=mask,
        index=j,
        is_add=is_add,
        log_fwd=math.log(p[j]),
        log_rev=math.log(p_new[j]),
    )


def acceptance_log_prob(current_score: float, proposed_score: float, log_fwd: float, log_rev: float) -> float:
    """Log Metropolis-Hastings acceptance probability for a toggle move.

    Scores are log marginal likelihood plus log structure prior.
    """
    if proposed_score == -math.inf or math.isnan(proposed_score):
        return -math.inf
    if current_score == -math.inf:
        return 0.0
    return min(0.0, (proposed_score + log_rev) - (current_score + log_fwd))


def adapt_proposal(table: ProposalTable, index: int, is_add: bool, accepted: bool) -> ProposalTable:
    """Multiplicative weight update for the move just tried; no-op when frozen."""
    if not table.adaptive:
        return table
    factor = ADAPT_UP if accepted else ADAPT_DOWN
    add_w = table.add_weights.copy()
    del_w = table.del_weights.copy()
    if is_add:
        add_w[index] *= factor
    else:
        del_w[index] *= factor
    scale = 0.5 * (add_w.mean() + del_w.mean())
    return ProposalTable(table.candidates, add_w / scale, del_w / scale, table.floor, adaptive=True)


# --------------------------------------------------------------------------
# chain


@dataclass(frozen=True)
class SearchConfig:
    iterations: int = 15000
    burn_in: int | None = None
    max_order: int | None = None
    top_k: int = 100
    seed: int = 0
    singleton_moves: bool = False
    adapt: bool = True
    tol: float = 1e-8
    max_newton_iter: int = 100

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", self.iterations // 10)
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")


@dataclass
class CacheEntry:
    structure: Structure
    fit: StructureFit | None
    log_prior: float
    visits: int = 0
    post_visits: int = 0
    error: str | None = None

    @property
    def log_marginal(self) -> float:
        if self.fit is None or not self.fit.converged:
            return -math.inf
        return self.fit.log_marginal

    @property
    def score(self) -> float:
        return self.log_marginal + self.log_prior

    @property
    def hash(self) -> str:
        return self.structure.hash


@dataclass
class ChainTrace:
    hashes: list[str]
    accepted: np.ndarray
    scores: np.ndarray
    cache: dict[str, CacheEntry]
    burn_in: int
    table: ProposalTable | None = None
    table_digests: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.hashes)

    def post_burn_in(self) -> list[str]:
        return self.hashes[self.burn_in:]

    def acceptance_rate(self) -> float:
        return float(self.accepted.mean()) if len(self.accepted) else 0.0


def fit_entry(structure: Structure, data: ConfigCounts, prior: PriorSpec, max_order: int | None,
              tol: float = 1e-8, max_iter: int = 100) -> CacheEntry:
    log_prior = structure_log_prior(structure, prior, max_order)
    try:
        fit = newton_map(structure, data, prior, tol=tol, max_iter=max_iter)
    except FitError as exc:
        return CacheEntry(structure, None, log_prior, error=str(exc))
    return CacheEntry(structure, fit, log_prior)


def mc3_run(data: ConfigCounts, cfg: SearchConfig | None = None, prior: PriorSpec | None = None,
            table: ProposalTable | None = None) -> ChainTrace:
    """Run one MC3 chain from the singletons-only structure.

    Every structure proposed is fitted once and cached.  ``cfg.iterations``
    includes the burn-in; proposal adaptation is confined to burn-in.
    """
    cfg = cfg or SearchConfig()
    prior = prior or PriorSpec()
    k = data.k
    check_enumerable(k)
    max_order = k if cfg.max_order is None else min(cfg.max_order, k)
    if table is None:
        table = ProposalTable.uniform(
            candidate_clusters(k, max_order, include_singletons=cfg.singleton_moves),
            adaptive=cfg.adapt,
        )
    rng = np.random.default_rng(cfg.seed)
    cache: dict[str, CacheEntry] = {}

    def lookup(structure: Structure) -> CacheEntry:
        entry = cache.get(structure.hash)
        if entry is None:
            entry = fit_entry(structure, data, prior, max_order, cfg.tol, cfg.max_newton_iter)
            cache[structure.hash] = entry
        return entry

    current = lookup(Structure.singletons(k))
    hashes: list[str] = []
    accepted = np.zeros(cfg.iterations, dtype=bool)
    scores = np.empty(cfg.iterations)
    digests: list[str] = []
    for it in range(cfg.iterations):
        if it == cfg.burn_in:
            table = table.frozen()
        move = propose(current.structure, table, rng)
        cand = lookup(move.structure)
        log_a = acceptance_log_prob(current.score, cand.score, move.log_fwd, move.log_rev)
        ok = bool(rng.random() < math.exp(log_a))
        if it < cfg.burn_in:
            table = adapt_proposal(table, move.index, move.is_add, ok)
        if ok:
            current = cand
        current.visits += 1
        if it >= cfg.burn_in:
            current.post_visits += 1
            digests.append(table.digest())
        hashes.append(current.hash)
        accepted[it] = ok
        scores[it] = current.score
    return ChainTrace(hashes, accepted, scores, cache, cfg.burn_in, table.frozen(), digests)


# --------------------------------------------------------------------------
# dumps


def write_trace(trace: ChainTrace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iteration,structure_hash,accepted,score\n")
        for i, (h, a, s) in enumerate(zip(trace.hashes, trace.accepted, trace.scores)):
            fh.write(f"{i},{h},{int(a)},{float(s)!r}\n")


def _entry_record(entry: CacheEntry) -> dict:
    fit = entry.fit
    rec = {
        "hash": entry.hash,
        "k": entry.structure.k,
        "clusters": [format_cluster(m) for m in entry.structure.clusters],
        "log_prior": entry.log_prior,
        "log_marginal": entry.log_marginal,
        "visits": entry.visits,
        "post_visits": entry.post_visits,
    }
    if fit is not None:
        rec.update(
            theta=[float(t) for t in fit.theta],
            sd2=[float(v) for v in np.diag(fit.covariance)],
            covariance=[[float(v) for v in row] for row in fit.covariance],
            iterations=fit.iterations,
            converged=fit.converged,
            gradient_norm=fit.gradient_norm,
        )
    if entry.error:
        rec["error"] = entry.error
    return rec


def dump_cache(cache: dict[str, CacheEntry], path: str | Path) -> None:
    """One JSON record per cached structure, ordered by structure hash."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for h in sorted(cache):
            fh.write(json.dumps(_entry_record(cache[h]), sort_keys=True) + "\n")


def load_cache(path: str | Path) -> dict[str, CacheEntry]:
    from .model import parse_cluster

    cache: dict[str, CacheEntry] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            structure = Structure(int(rec["k"]), tuple(parse_cluster(c) for c in rec["clusters"]))
            fit = None
            if "theta" in rec:
                fit = StructureFit(
                    structure=structure,
                    theta_map=ParamVector(structure, rec["theta"]),
                    covariance=np.array(rec["covariance"], dtype=float).reshape(len(structure), len(structure)),
                    log_marginal=float(rec["log_marginal"]),
                    iterations=int(rec["iterations"]),
                    converged=bool(rec["converged"]),
                    gradient_norm=float(rec["gradient_norm"]),
                )
            cache[structure.hash] = CacheEntry(
                structure, fit, float(rec["log_prior"]), int(rec["visits"]), int(rec["post_visits"]), rec.get("error")
            )
    return cache


def merge_caches(caches: Iterable[dict[str, CacheEntry]]) -> dict[str, CacheEntry]:
    """Union of caches from independent chains; visit counts are summed."""
    merged: dict[str, CacheEntry] = {}
    for cache in caches:
        for h, e in cache.items():
            if h in merged:
                m = merged[h]
                m.visits += e.visits
                m.post_visits += e.post_visits
            else:
                merged[h] = CacheEntry(e.structure, e.fit, e.log_prior, e.visits, e.post_visits, e.error)
    return merged
