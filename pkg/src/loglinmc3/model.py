"""Configurations, clusters, structures and the exact loglinear model.

Clusters and configurations are both encoded as integer bitmasks: bit ``i``
is set iff node ``i`` belongs to the cluster (is active in the
configuration).  A configuration ``x`` activates cluster ``c`` iff
``x & c == c``.

The probability model is

    log p(x) = theta_empty + sum_c theta_c * T_c(x)

where ``theta_empty`` is the negative log partition function, computed by
enumerating all ``2**k`` configurations.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np
from scipy.special import logsumexp

from .errors import CapacityError, DimensionError, DomainError, InvalidClusterError

#: Largest node count for which the 2**k enumeration is attempted.
MAX_ENUMERATION_NODES = 20

_MAX_MASK_BITS = 62


def check_enumerable(k: int, limit: int | None = None) -> None:
    limit = MAX_ENUMERATION_NODES if limit is None else limit
    if k > limit:
        raise CapacityError(
            f"k={k} exceeds the enumeration limit of {limit} nodes"
        )


# --------------------------------------------------------------------------
# clusters


def cluster(*nodes: int) -> int:
    """Bitmask for the cluster containing the given 0-based nodes."""
    mask = 0
    for i in nodes:
        if i < 0 or i >= _MAX_MASK_BITS:
            raise InvalidClusterError(f"node index {i} out of range")
        mask |= 1 << i
    return mask


def cluster_members(mask: int) -> tuple[int, ...]:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def cluster_order(mask: int) -> int:
    return int(mask).bit_count()


def format_cluster(mask: int, one_based: bool = True) -> str:
    """Render a cluster as ``{4,6}`` (1-based labels by default)."""
    off = 1 if one_based else 0
    return "{" + ",".join(str(i + off) for i in cluster_members(mask)) + "}"


def parse_cluster(text: str, one_based: bool = True) -> int:
    """Inverse of :func:`format_cluster`; braces are optional."""
    body = text.strip().strip("{}").strip()
    if not body:
        return 0
    off = 1 if one_based else 0
    try:
        nodes = [int(tok) - off for tok in body.split(",")]
    except ValueError as exc:
        raise InvalidClusterError(f"cannot parse cluster {text!r}") from exc
    mask = cluster(*nodes)
    if cluster_order(mask) != len(nodes):
        raise InvalidClusterError(f"repeated node in cluster {text!r}")
    return mask


def cluster_sort_key(mask: int) -> tuple[int, int]:
    return (cluster_order(mask), mask)


def cluster_indicator(x: int, mask: int, k: int | None = None) -> int:
    """T_c(x): 1 iff every node of ``mask`` is active in configuration ``x``."""
    if k is not None and mask >> k:
        raise InvalidClusterError(
            f"cluster {format_cluster(mask, one_based=False)} references a node >= k={k}"
        )
    return int((x & mask) == mask)


# --------------------------------------------------------------------------
# configurations


def config_from_string(text: str) -> int:
    """Parse a 0/1 string with node 0 leftmost."""
    mask = 0
    for i, ch in enumerate(text):
        if ch == "1":
            mask |= 1 << i
        elif ch != "0":
            raise ValueError(f"invalid configuration string {text!r}")
    return mask


def config_to_string(x: int, k: int) -> str:
    return "".join("1" if (x >> i) & 1 else "0" for i in range(k))


def all_configs(k: int) -> np.ndarray:
    check_enumerable(k)
    return np.arange(1 << k, dtype=np.int64)


def indicator_matrix(configs: np.ndarray, clusters: Iterable[int]) -> np.ndarray:
    """Boolean matrix ``T[n, j] = T_{clusters[j]}(configs[n])``."""
    masks = np.asarray(list(clusters), dtype=np.int64)
    configs = np.asarray(configs, dtype=np.int64)
    if masks.size == 0:
        return np.zeros((configs.size, 0), dtype=bool)
    return (configs[:, None] & masks[None, :]) == masks[None, :]


# --------------------------------------------------------------------------
# structures


@dataclass(frozen=True)
class Structure:
    """A set of nonempty clusters over ``k`` nodes.

    The empty cluster is implicit.  Clusters are kept sorted by
    ``(order, bitmask)`` so equal structures compare and serialize equal.
    No hierarchy constraint is imposed.
    """

    k: int
    clusters: tuple[int, ...] = ()

    def __post_init__(self):
        if self.k < 1 or self.k > _MAX_MASK_BITS:
            raise InvalidClusterError(f"node count k={self.k} out of range")
        masks = [int(m) for m in self.clusters]
        for m in masks:
            if m <= 0:
                raise InvalidClusterError("structures cannot hold the empty cluster")
            if m >> self.k:
                raise InvalidClusterError(
                    f"cluster {format_cluster(m, one_based=False)} references a node >= k={self.k}"
                )
        canon = tuple(sorted(set(masks), key=cluster_sort_key))
        if len(canon) != len(masks):
            raise InvalidClusterError("duplicate cluster in structure")
        object.__setattr__(self, "clusters", canon)

    @classmethod
    def singletons(cls, k: int) -> "Structure":
        return cls(k, tuple(1 << i for i in range(k)))

    @classmethod
    def from_nodes(cls, k: int, node_lists: Iterable[Iterable[int]], one_based: bool = False) -> "Structure":
        off = 1 if one_based else 0
        return cls(k, tuple(cluster(*[i - off for i in nodes]) for nodes in node_lists))

    def __len__(self) -> int:
        return len(self.clusters)

    def __contains__(self, mask: int) -> bool:
        return mask in self._cluster_set

    @cached_property
    def _cluster_set(self) -> frozenset:
        return frozenset(self.clusters)

    @cached_property
    def key(self) -> str:
        """Canonical text form, e.g. ``6:1,2,4,8,16,32,40``."""
        return f"{self.k}:" + ",".join(str(m) for m in self.clusters)

    @cached_property
    def hash(self) -> str:
        """Short digest of :attr:`key`, stable across runs and platforms."""
        return hashlib.blake2b(self.key.encode("ascii"), digest_size=8).hexdigest()

    def toggle(self, mask: int) -> "Structure":
        if mask in self:
            return Structure(self.k, tuple(m for m in self.clusters if m != mask))
        return Structure(self.k, self.clusters + (mask,))

    def index(self, mask: int) -> int:
        return self.clusters.index(mask)

    def max_order(self) -> int:
        return max((cluster_order(m) for m in self.clusters), default=0)

    def describe(self) -> str:
        return " ".join(format_cluster(m) for m in self.clusters) or "{}"

    @cached_property
    def full_design(self) -> np.ndarray:
        """Float indicator matrix over all ``2**k`` configurations."""
        return indicator_matrix(all_configs(self.k), self.clusters).astype(float)


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Interaction parameters aligned with ``structure.clusters``."""

    structure: Structure
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        if theta.size != len(self.structure):
            raise DimensionError(
                f"theta has {theta.size} entries, structure has {len(self.structure)} clusters"
            )
        if not np.all(np.isfinite(theta)):
            raise DomainError("theta must be finite")
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)

    @classmethod
    def zeros(cls, structure: Structure) -> "ParamVector":
        return cls(structure, np.zeros(len(structure)))

    @classmethod
    def from_mapping(cls, structure: Structure, values: Mapping[int, float]) -> "ParamVector":
        return cls(structure, np.array([values.get(m, 0.0) for m in structure.clusters]))

    def get(self, mask: int, default: float = 0.0) -> float:
        if mask in self.structure:
            return float(self.theta[self.structure.index(mask)])
        return default


# --------------------------------------------------------------------------
# data


@dataclass(frozen=True, eq=False)
class ConfigCounts:
    """Configuration frequency table: the sufficient data summary.

    Stored sparsely as sorted unique configuration masks with positive
    counts, so two tables built from the same multiset are identical.
    """

    k: int
    configs: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        configs = np.asarray(self.configs, dtype=np.int64).reshape(-1)
        counts = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        if configs.shape != counts.shape:
            raise DimensionError("configs and counts differ in length")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        if configs.size and (configs.min() < 0 or int(configs.max()) >> self.k):
            raise DimensionError(f"configuration outside k={self.k} bits")
        # canonicalize: merge duplicates, drop zeros, sort by mask
        uniq, inv = np.unique(configs, return_inverse=True)
        merged = np.zeros(uniq.size, dtype=np.int64)
        np.add.at(merged, inv, counts)
        keep = merged > 0
        uniq, merged = uniq[keep], merged[keep]
        if merged.sum() < 1:
            raise ValueError("ConfigCounts needs at least one observation")
        uniq.flags.writeable = False
        merged.flags.writeable = False
        object.__setattr__(self, "configs", uniq)
        object.__setattr__(self, "counts", merged)

    @classmethod
    def from_mapping(cls, k: int, mapping: Mapping[int, int]) -> "ConfigCounts":
        items = list(mapping.items())
        return cls(k, np.array([c for c, _ in items], dtype=np.int64), np.array([n for _, n in items], dtype=np.int64))

    @classmethod
    def from_records(cls, k: int, records: Iterable[int]) -> "ConfigCounts":
        recs = np.fromiter((int(r) for r in records), dtype=np.int64)
        return cls(k, recs, np.ones(recs.size, dtype=np.int64))

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "ConfigCounts":
        dense = np.asarray(dense, dtype=np.int64)
        k = int(dense.size).bit_length() - 1
        if 1 << k != dense.size:
            raise DimensionError("dense table length must be a power of two")
        return cls(k, np.arange(dense.size, dtype=np.int64), dense)

    @property
    def N(self) -> int:
        return int(self.counts.sum())

    def as_dict(self) -> dict[int, int]:
        return {int(c): int(n) for c, n in zip(self.configs, self.counts)}

    def dense(self) -> np.ndarray:
        check_enumerable(self.k)
        out = np.zeros(1 << self.k, dtype=np.int64)
        out[self.configs] = self.counts
        return out

    def records(self) -> np.ndarray:
        """Expand to one configuration per observation (sorted)."""
        return np.repeat(self.configs, self.counts)

    def __eq__(self, other):
        if not isinstance(other, ConfigCounts):
            return NotImplemented
        return (
            self.k == other.k
            and np.array_equal(self.configs, other.configs)
            and np.array_equal(self.counts, other.counts)
        )

    __hash__ = None


def sufficient_stats(data: ConfigCounts, structure: Structure) -> np.ndarray:
    """Marginal activation frequency of every cluster of ``structure``."""
    if data.k != structure.k:
        raise DimensionError(f"data has k={data.k}, structure has k={structure.k}")
    T = indicator_matrix(data.configs, structure.clusters)
    return (data.counts @ T) / data.N


# --------------------------------------------------------------------------
# exact model quantities


def _check_theta(theta: ParamVector) -> tuple[Structure, np.ndarray]:
    check_enumerable(theta.structure.k)
    return theta.structure, theta.theta


def log_weights(theta: ParamVector) -> np.ndarray:
    """Unnormalized log probability of every configuration."""
    structure, th = _check_theta(theta)
    if th.size == 0:
        return np.zeros(1 << structure.k)
    return structure.full_design @ th


def theta_empty(theta: ParamVector) -> float:
    """Normalizing term: ``-log sum_x exp(sum_c theta_c T_c(x))``."""
    return -float(logsumexp(log_weights(theta)))


def config_distribution(theta: ParamVector) -> np.ndarray:
    """Probability of every configuration, indexed by bitmask."""
    lw = log_weights(theta)
    return np.exp(lw - logsumexp(lw))


def config_log_prob(x: int, theta: ParamVector) -> float:
    structure = theta.structure
    if x < 0 or x >> structure.k:
        raise DimensionError(f"configuration {x} has more than k={structure.k} bits")
    total = theta_empty(theta)
    for m, t in zip(structure.clusters, theta.theta):
        if (x & m) == m:
            total += t
    return total


def superset_sums(p: np.ndarray, k: int) -> np.ndarray:
    """``M[s] = sum_{x superset of s} p[x]`` for every mask ``s`` (zeta transform)."""
    M = np.array(p, dtype=float, copy=True)
    idx = np.arange(1 << k, dtype=np.int64)
    for i in range(k):
        bit = 1 << i
        low = idx[(idx & bit) == 0]
        M[low] += M[low | bit]
    return M


def cluster_moment(theta: ParamVector, mask: int) -> float:
    """E[T_c] under the model: probability that every node of ``mask`` fires."""
    k = theta.structure.k
    if mask >> k:
        raise InvalidClusterError(f"cluster references a node >= k={k}")
    p = config_distribution(theta)
    configs = np.arange(p.size, dtype=np.int64)
    return float(p[(configs & mask) == mask].sum())
