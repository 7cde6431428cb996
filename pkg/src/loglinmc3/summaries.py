"""Posterior summaries of an MC3 run.

Structure weights come from the cached Laplace scores (log marginal plus
log prior) renormalized over the K highest-scoring structures.  Ties in
score are broken by structure hash so every summary is deterministic.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy.special import logsumexp

from .errors import UndefinedEstimateError
from .model import cluster_order, format_cluster, parse_cluster
from .search import CacheEntry, ChainTrace

Cache = Mapping[str, CacheEntry]


def _cache_of(source: ChainTrace | Cache) -> Cache:
    return source.cache if isinstance(source, ChainTrace) else source


def top_structures(cache: ChainTrace | Cache, K: int = 100) -> list[CacheEntry]:
    entries = [e for e in _cache_of(cache).values() if math.isfinite(e.score)]
    entries.sort(key=lambda e: (-e.score, e.hash))
    return entries[:K]


def structure_weights(entries: list[CacheEntry]) -> np.ndarray:
    if not entries:
        return np.zeros(0)
    s = np.array([e.score for e in entries])
    return np.exp(s - logsumexp(s))


def inclusion_prob_frequency(source: ChainTrace | Cache, mask: int) -> float:
    """Fraction of post-burn-in iterations spent in structures containing ``mask``."""
    if isinstance(source, ChainTrace):
        post = source.post_burn_in()
        if not post:
            return 0.0
        hits = sum(1 for h in post if mask in source.cache[h].structure)
        return hits / len(post)
    total = sum(e.post_visits for e in source.values())
    if total == 0:
        return 0.0
    return sum(e.post_visits for e in source.values() if mask in e.structure) / total


def inclusion_prob_topk(cache: ChainTrace | Cache, K: int, mask: int) -> float:
    top = top_structures(cache, K)
    w = structure_weights(top)
    return float(sum(wi for wi, e in zip(w, top) if mask in e.structure))


def _param(entry: CacheEntry, mask: int) -> tuple[float, float]:
    j = entry.structure.index(mask)
    return float(entry.fit.theta[j]), float(entry.fit.covariance[j, j])


def model_averaged_theta(cache: ChainTrace | Cache, K: int, mask: int) -> float:
    """Score-weighted mean of the MAP estimates, with 0 for structures lacking ``mask``."""
    top = top_structures(cache, K)
    w = structure_weights(top)
    return float(sum(wi * _param(e, mask)[0] for wi, e in zip(w, top) if mask in e.structure))


def conditional_theta(cache: ChainTrace | Cache, K: int, mask: int) -> float:
    p = inclusion_prob_topk(cache, K, mask)
    if p <= 0.0:
        raise UndefinedEstimateError(f"{format_cluster(mask)} is in no top-{K} structure")
    return model_averaged_theta(cache, K, mask) / p


def conditional_variance(cache: ChainTrace | Cache, K: int, mask: int) -> float:
    """Within- plus between-structure variance over top-K structures containing ``mask``."""
    containing = [e for e in top_structures(cache, K) if mask in e.structure]
    if not containing:
        raise UndefinedEstimateError(f"{format_cluster(mask)} is in no top-{K} structure")
    w = structure_weights(containing)
    params = np.array([_param(e, mask) for e in containing])
    theta, within = params[:, 0], params[:, 1]
    mean = float(w @ theta)
    return float(w @ (within + (theta - mean) ** 2))


def averaged_covariance(cache: ChainTrace | Cache, K: int = 100) -> tuple[list[int], np.ndarray]:
    """Weighted average of structure covariances embedded in the union of clusters.

    Absent clusters contribute zero rows and columns.  Returns the cluster
    index (sorted by order, then mask) and the matrix.
    """
    top = top_structures(cache, K)
    w = structure_weights(top)
    union = sorted({m for e in top for m in e.structure.clusters}, key=lambda m: (cluster_order(m), m))
    pos = {m: i for i, m in enumerate(union)}
    out = np.zeros((len(union), len(union)))
    for wi, e in zip(w, top):
        idx = np.array([pos[m] for m in e.structure.clusters], dtype=int)
        if idx.size:
            out[np.ix_(idx, idx)] += wi * e.fit.covariance
    return union, out


# --------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class ClusterReport:
    cluster: int
    p_freq: float
    p_topk: float
    theta_avg: float
    theta_cond: float
    sd_cond: float

    @property
    def label(self) -> str:
        return format_cluster(self.cluster)


def cluster_reports(cache: ChainTrace | Cache, K: int = 100) -> list[ClusterReport]:
    """One report per cluster seen in a visited or top-K structure."""
    cache = _cache_of(cache)
    top = top_structures(cache, K)
    masks = {m for e in cache.values() if e.post_visits > 0 for m in e.structure.clusters}
    masks |= {m for e in top for m in e.structure.clusters}
    out = []
    for m in sorted(masks, key=lambda c: (cluster_order(c), c)):
        p_topk = inclusion_prob_topk(cache, K, m)
        avg = model_averaged_theta(cache, K, m)
        if p_topk > 0:
            cond = avg / p_topk
            sd = math.sqrt(conditional_variance(cache, K, m))
        else:
            cond = sd = math.nan
        out.append(ClusterReport(m, inclusion_prob_frequency(cache, m), p_topk, avg, cond, sd))
    return out


@dataclass(frozen=True)
class RenderedReport:
    text: str
    records: list[dict]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in self.records:
            writer.writerow([r["cluster"]] + [repr(float(r[c])) for c in REPORT_COLUMNS[1:]])
        return buf.getvalue()


REPORT_COLUMNS = ("cluster", "p_freq", "p_topk", "theta_cond", "sd_cond")


def _row_order(r: ClusterReport):
    if cluster_order(r.cluster) == 1:
        return (0, 0.0, r.cluster)
    return (1, -r.p_freq, cluster_order(r.cluster), r.cluster)


def render_report(reports: Iterable[ClusterReport], threshold: float = 0.1, K: int = 100) -> RenderedReport:
    rows = [r for r in reports if max(r.p_freq, r.p_topk) >= threshold]
    rows.sort(key=_row_order)
    headers = ["Cluster", "P (frequency)", f"P (best {K} models)", "MAP estimate", "Std. deviation"]
    body = [
        [r.label, f"{r.p_freq:.2f}", f"{r.p_topk:.2f}", f"{r.theta_cond:.2f}", f"{r.sd_cond:.2f}"]
        for r in rows
    ]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(headers, widths)))]
    lines.append("  ".join("-" * w for w in widths))
    for b in body:
        lines.append("  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(b, widths))))
    records = [
        {"cluster": r.label, "p_freq": r.p_freq, "p_topk": r.p_topk, "theta_cond": r.theta_cond, "sd_cond": r.sd_cond}
        for r in rows
    ]
    return RenderedReport("\n".join(lines) + "\n", records)


def read_report_csv(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(REPORT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: report CSV lacks columns {sorted(missing)}")
        out = []
        for row in reader:
            rec = {"cluster": row["cluster"]}
            rec.update({c: float(row[c]) for c in REPORT_COLUMNS[1:]})
            out.append(rec)
    return out


def compare_reports(a: list[dict], b: list[dict], margin: float = 0.5) -> list[dict]:
    """Side-by-side inclusion probabilities; clusters absent from a report count as 0."""
    pa = {r["cluster"]: r for r in a}
    pb = {r["cluster"]: r for r in b}
    keys = sorted(set(pa) | set(pb), key=lambda s: (cluster_order(parse_cluster(s)), parse_cluster(s)))
    rows = []
    for c in keys:
        fa = pa[c]["p_freq"] if c in pa else 0.0
        fb = pb[c]["p_freq"] if c in pb else 0.0
        rows.append({"cluster": c, "p_a": fa, "p_b": fb, "diff": fb - fa, "flag": abs(fb - fa) > margin})
    return rows


def render_comparison(rows: list[dict], labels: tuple[str, str] = ("A", "B")) -> str:
    headers = ["Cluster", f"P ({labels[0]})", f"P ({labels[1]})", "difference", ""]
    body = [[r["cluster"], f"{r['p_a']:.2f}", f"{r['p_b']:.2f}", f"{r['diff']:+.2f}", "*" if r["flag"] else ""] for r in rows]
    widths = [max(len(h), *(len(x[i]) for x in body)) if body else len(h) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
    for x in body:
        lines.append("  ".join(v.ljust(w) for v, w in zip(x, widths)).rstrip())
    return "\n".join(lines) + "\n"
