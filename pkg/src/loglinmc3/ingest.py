"""Spike binning and configuration-count CSV I/O."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import EmptyDataError, ParseError
from .model import ConfigCounts, config_from_string, config_to_string

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BinningConfig:
    window_ms: int = 40
    neurons: tuple[str, ...] | None = None
    min_spikes: int = 1

    def __post_init__(self):
        if self.window_ms < 1:
            raise ValueError("window_ms must be at least 1")
        if self.min_spikes < 1:
            raise ValueError("min_spikes must be at least 1")
        if self.neurons is not None:
            neurons = tuple(self.neurons)
            if len(set(neurons)) != len(neurons):
                raise ValueError("selected neurons must be distinct")
            object.__setattr__(self, "neurons", neurons)


@dataclass(frozen=True)
class SpikeEvents:
    labels: tuple[str, ...]
    times: np.ndarray
    segments: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if len(self.labels) != len(self.times):
            raise ValueError("labels and times differ in length")
        segs = sorted(self.segments)
        for a, b in segs:
            if not a < b:
                raise ValueError(f"segment [{a}, {b}) is empty")
        for (_, b), (c, _) in zip(segs, segs[1:]):
            if c < b:
                raise ValueError("segments overlap")
        object.__setattr__(self, "segments", tuple(segs))


def _rows(fh: IO[str], header: Sequence[str], what: str) -> Iterable[tuple[int, list[str]]]:
    reader = csv.reader(fh)
    try:
        first = next(reader)
    except StopIteration:
        raise ParseError(f"{what}: empty file", 1) from None
    if [h.strip() for h in first] != list(header):
        raise ParseError(f"{what}: expected header {','.join(header)!r}, got {','.join(first)!r}", 1)
    for row in reader:
        if not row or not "".join(row).strip():
            continue
        if len(row) != len(header):
            raise ParseError(f"{what}: expected {len(header)} fields, got {len(row)}", reader.line_num)
        yield reader.line_num, [c.strip() for c in row]


def _nonneg_int(text: str, line: int, what: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise ParseError(f"{what}: {text!r} is not an integer", line) from None
    if v < 0:
        raise ParseError(f"{what}: negative value {v}", line)
    return v


def read_spike_events(events: str | Path | IO[str], segments: str | Path | IO[str]) -> SpikeEvents:
    labels, times, segs = [], [], []
    with _open(events) as fh:
        for line, (label, t) in _rows(fh, ("neuron", "time_ms"), "spike events"):
            labels.append(label)
            times.append(_nonneg_int(t, line, "spike events"))
    with _open(segments) as fh:
        for line, (a, b) in _rows(fh, ("start_ms", "end_ms"), "segments"):
            a, b = _nonneg_int(a, line, "segments"), _nonneg_int(b, line, "segments")
            if not a < b:
                raise ParseError(f"segments: start {a} is not before end {b}", line)
            segs.append((a, b))
    return SpikeEvents(tuple(labels), np.array(times, dtype=np.int64), tuple(segs))


def bin_spikes(events: SpikeEvents, cfg: BinningConfig | None = None) -> ConfigCounts:
    """Binary configurations of consecutive windows within each segment.

    Windows restart at every segment start and a trailing partial window is
    dropped.  A neuron is active in a window when it spikes at least
    ``cfg.min_spikes`` times there.  Node ``i`` is ``cfg.neurons[i]``
    (sorted label order when no selection is given).
    """
    cfg = cfg or BinningConfig()
    universe = sorted(set(events.labels))
    neurons = cfg.neurons if cfg.neurons is not None else tuple(universe)
    if not neurons:
        raise EmptyDataError("no neurons selected")
    missing = [n for n in neurons if n not in set(universe)]
    if missing:
        log.warning("selected neurons without spikes: %s", ", ".join(missing))
    node_of = {n: i for i, n in enumerate(neurons)}
    w = cfg.window_ms

    labels = np.array(events.labels, dtype=object)
    node = np.array([node_of.get(l, -1) for l in labels], dtype=np.int64) if len(labels) else np.zeros(0, np.int64)
    keep = node >= 0
    node, times = node[keep], events.times[keep]

    configs = []
    for a, b in events.segments:
        nwin = (b - a) // w
        if nwin == 0:
            continue
        sel = (times >= a) & (times < a + nwin * w)
        win = (times[sel] - a) // w
        spikes = np.zeros((nwin, len(neurons)), dtype=np.int64)
        np.add.at(spikes, (win, node[sel]), 1)
        active = spikes >= cfg.min_spikes
        configs.append(active.astype(np.int64) @ (1 << np.arange(len(neurons), dtype=np.int64)))
    if not configs:
        raise EmptyDataError("no complete window in any segment")
    allc = np.concatenate(configs)
    return ConfigCounts(len(neurons), allc, np.ones(allc.size, dtype=np.int64))


# --------------------------------------------------------------------------
# config counts CSV


class _open:
    """Context manager accepting a path or an already-open text stream."""

    def __init__(self, src, mode="r"):
        self.src, self.mode, self.fh, self.own = src, mode, None, False

    def __enter__(self):
        if hasattr(self.src, "read") or hasattr(self.src, "write"):
            self.fh = self.src
        else:
            self.fh = open(self.src, self.mode, encoding="utf-8", newline="")
            self.own = True
        return self.fh

    def __exit__(self, *exc):
        if self.own:
            self.fh.close()


def read_counts_csv(src: str | Path | IO[str]) -> ConfigCounts:
    """Load ``config,count`` rows; duplicate configurations are summed."""
    k = None
    configs, counts = [], []
    with _open(src) as fh:
        for line, (cfg, n) in _rows(fh, ("config", "count"), "config counts"):
            if not cfg or set(cfg) - {"0", "1"}:
                raise ParseError(f"config counts: invalid configuration {cfg!r}", line)
            if k is None:
                k = len(cfg)
            elif len(cfg) != k:
                raise ParseError(f"config counts: expected {k} bits, got {len(cfg)}", line)
            configs.append(config_from_string(cfg))
            counts.append(_nonneg_int(n, line, "config counts"))
    if k is None or sum(counts) == 0:
        raise EmptyDataError("config counts file holds no observations")
    return ConfigCounts(k, np.array(configs, dtype=np.int64), np.array(counts, dtype=np.int64))


def write_counts_csv(data: ConfigCounts, dst: str | Path | IO[str]) -> None:
    with _open(dst, "w") as fh:
        fh.write("config,count\n")
        for x, n in zip(data.configs, data.counts):
            fh.write(f"{config_to_string(int(x), data.k)},{int(n)}\n")
