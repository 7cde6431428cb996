"""Command-line entry point: ``loglinmc3 <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import LoglinError
from .inference import PriorSpec, newton_map
from .ingest import BinningConfig, bin_spikes, read_counts_csv, read_spike_events, write_counts_csv
from .model import Structure, format_cluster, parse_cluster
from .search import SearchConfig, dump_cache, load_cache, mc3_run, write_trace
from .summaries import (
    cluster_reports,
    compare_reports,
    read_report_csv,
    render_comparison,
    render_report,
)
from .synth import (
    GeneratorSpec,
    exact_inclusion,
    exact_structure_posterior,
    load_generator_spec,
    mc_log_marginal,
    quadrature_log_marginal,
    sample_configurations,
)

log = logging.getLogger("loglinmc3")


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _read_counts(path: str):
    if path == "-":
        return read_counts_csv(sys.stdin)
    return read_counts_csv(path)


def _write_counts(data, path: str | None) -> None:
    if path is None or path == "-":
        write_counts_csv(data, sys.stdout)
        sys.stdout.flush()
    else:
        write_counts_csv(data, path)


def _prior(args) -> PriorSpec:
    return PriorSpec(sigma=args.sigma, q_high=args.q_high, q_single=args.q_single)


def _parse_structure(k: int, text: str | None, singletons: bool = True) -> Structure:
    masks = {1 << i for i in range(k)} if singletons else set()
    if text:
        for tok in text.replace(" ", "").split(";"):
            if tok:
                masks.add(parse_cluster(tok))
    return Structure(k, tuple(masks))


def _log_run(command: str, **settings) -> None:
    record = {"command": command, "version": __version__, **settings}
    log.info("run %s", json.dumps(record, sort_keys=True, default=str))


# --------------------------------------------------------------------------
# commands


def cmd_bin(args) -> int:
    neurons = tuple(n.strip() for n in args.neurons.split(",")) if args.neurons else None
    cfg = BinningConfig(window_ms=args.window_ms, neurons=neurons, min_spikes=args.min_spikes)
    _log_run("bin", window_ms=cfg.window_ms, neurons=cfg.neurons, min_spikes=cfg.min_spikes)
    data = bin_spikes(read_spike_events(args.spikes, args.segments), cfg)
    log.info("binned N=%d configurations over k=%d neurons", data.N, data.k)
    _write_counts(data, args.out)
    return 0


def cmd_simulate(args) -> int:
    spec = load_generator_spec(args.spec)
    spec = GeneratorSpec(spec.theta, args.n if args.n is not None else spec.N,
                         args.seed if args.seed is not None else spec.seed)
    _log_run("simulate", spec=spec.to_dict())
    _write_counts(sample_configurations(spec), args.out)
    return 0


def _fit_text(fit) -> str:
    lines = [f"{'Cluster':<16}{'MAP estimate':>14}{'Std. deviation':>16}"]
    for m, t, s in zip(fit.structure.clusters, fit.theta, fit.sd):
        lines.append(f"{format_cluster(m):<16}{t:>14.4f}{s:>16.4f}")
    lines.append(f"log marginal (Laplace): {fit.log_marginal:.6f}")
    lines.append(f"iterations: {fit.iterations}  converged: {fit.converged}  |grad|: {fit.gradient_norm:.3e}")
    return "\n".join(lines) + "\n"


def cmd_fit(args) -> int:
    data = _read_counts(args.data)
    prior = _prior(args)
    structure = _parse_structure(data.k, args.structure, singletons=not args.no_singletons)
    _log_run("fit", prior=prior, structure=structure.describe(), N=data.N, k=data.k)
    fit = newton_map(structure, data, prior)
    _write_text(args.out, _fit_text(fit))
    if args.json:
        rec = {
            "clusters": [format_cluster(m) for m in structure.clusters],
            "theta": [float(t) for t in fit.theta],
            "sd": [float(s) for s in fit.sd],
            "log_marginal": fit.log_marginal,
            "iterations": fit.iterations,
            "converged": fit.converged,
        }
        _write_text(args.json, json.dumps(rec, indent=2, sort_keys=True) + "\n")
    return 0


def _emit_report(cache, args) -> None:
    report = render_report(cluster_reports(cache, args.top_k), args.threshold, args.top_k)
    _write_text(args.out, report.text)
    if args.csv:
        _write_text(args.csv, report.to_csv())


def cmd_search(args) -> int:
    data = _read_counts(args.data)
    prior = _prior(args)
    cfg = SearchConfig(
        iterations=args.iters,
        burn_in=args.burn_in,
        max_order=args.max_order,
        top_k=args.top_k,
        seed=args.seed,
        singleton_moves=args.singleton_moves,
        adapt=not args.no_adapt,
    )
    _log_run("search", config=cfg, prior=prior, N=data.N, k=data.k, threshold=args.threshold)
    trace = mc3_run(data, cfg, prior)
    log.info("visited %d structures, acceptance rate %.3f", len(trace.cache), trace.acceptance_rate())
    _emit_report(trace.cache, args)
    if args.trace:
        write_trace(trace, args.trace)
    if args.cache:
        dump_cache(trace.cache, args.cache)
    return 0


def cmd_summarize(args) -> int:
    _log_run("summarize", cache=args.cache_file, top_k=args.top_k, threshold=args.threshold)
    _emit_report(load_cache(args.cache_file), args)
    return 0


def cmd_oracle(args) -> int:
    data = _read_counts(args.data)
    prior = _prior(args)
    _log_run("oracle", mode=args.mode, prior=prior, max_order=args.max_order, seed=args.seed, draws=args.draws)
    if args.mode == "posterior":
        post = exact_structure_posterior(data, prior, args.max_order, args.singleton_moves)
        incl = exact_inclusion(post)
        lines = [f"{'Cluster':<16}{'P (exact)':>10}"]
        for m in sorted(incl, key=lambda c: (bin(c).count("1"), c)):
            if incl[m] >= args.threshold:
                lines.append(f"{format_cluster(m):<16}{incl[m]:>10.4f}")
        lines.append("")
        lines.append(f"{'Probability':>12}  Structure")
        for s, p in sorted(post.items(), key=lambda kv: (-kv[1], kv[0].hash)):
            lines.append(f"{p:>12.6f}  {s.describe()}")
        _write_text(args.out, "\n".join(lines) + "\n")
        return 0
    structure = _parse_structure(data.k, args.structure, singletons=not args.no_singletons)
    fit = newton_map(structure, data, prior)
    est, se = mc_log_marginal(structure, data, prior, args.draws, np.random.default_rng(args.seed))
    lines = [f"structure: {structure.describe()}", f"laplace:    {fit.log_marginal:.6f}"]
    if len(structure) <= 2:
        lines.append(f"quadrature: {quadrature_log_marginal(structure, data, prior):.6f}")
    lines.append(f"monte carlo: {est:.6f} +/- {se:.6f}")
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_compare(args) -> int:
    labels = tuple(args.labels.split(",")) if args.labels else (Path(args.a).stem, Path(args.b).stem)
    if len(labels) != 2:
        raise ValueError("--labels needs exactly two comma-separated names")
    _log_run("compare", a=args.a, b=args.b, margin=args.margin)
    rows = compare_reports(read_report_csv(args.a), read_report_csv(args.b), args.margin)
    _write_text(args.out, render_comparison(rows, labels))
    return 0


# --------------------------------------------------------------------------
# parser


def _add_prior(p: argparse.ArgumentParser) -> None:
    d = PriorSpec()
    p.add_argument("--sigma", type=float, default=d.sigma, help="prior sd of each interaction parameter")
    p.add_argument("--q-high", type=float, default=d.q_high, help="prior inclusion probability, order >= 2")
    p.add_argument("--q-single", type=float, default=d.q_single, help="prior inclusion probability, singletons")


def _add_report(p: argparse.ArgumentParser) -> None:
    p.add_argument("--top-k", type=int, default=100)
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--csv", help="write the report as CSV to this path")
    p.add_argument("-o", "--out", help="text report path (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="loglinmc3", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-q", "--quiet", action="store_true", help="suppress run logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bin", help="bin spike events into configuration counts")
    p.add_argument("--spikes", required=True, help="CSV with header neuron,time_ms")
    p.add_argument("--segments", required=True, help="CSV with header start_ms,end_ms")
    p.add_argument("--window-ms", type=int, default=40)
    p.add_argument("--neurons", help="comma-separated neuron labels, in node order")
    p.add_argument("--min-spikes", type=int, default=1, help="spikes needed to mark a window active")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_bin)

    p = sub.add_parser("simulate", help="sample configuration counts from a generator spec")
    p.add_argument("--spec", required=True, help="generator JSON path, or 'table3' for the bundled spec")
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int, help="override the sample size")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit one structure")
    p.add_argument("data", nargs="?", default="-")
    p.add_argument("--structure", help="extra clusters, e.g. '4,6;3,4,6' (1-based)")
    p.add_argument("--no-singletons", action="store_true", help="do not add all singletons")
    p.add_argument("--json")
    p.add_argument("-o", "--out")
    _add_prior(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("search", help="MC3 structure search")
    p.add_argument("data", nargs="?", default="-")
    p.add_argument("--iters", type=int, default=15000)
    p.add_argument("--burn-in", type=int, help="default: 10%% of --iters")
    p.add_argument("--max-order", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--singleton-moves", action="store_true")
    p.add_argument("--no-adapt", action="store_true", help="keep the proposal uniform during burn-in")
    p.add_argument("--trace", help="write per-iteration trace CSV")
    p.add_argument("--cache", help="write structure cache (JSON lines)")
    _add_prior(p)
    _add_report(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("summarize", help="re-render a report from a cache dump")
    p.add_argument("cache_file")
    _add_report(p)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("oracle", help="exact structure posterior or marginal-likelihood cross-check")
    p.add_argument("data", nargs="?", default="-")
    p.add_argument("--mode", choices=("posterior", "marginal"), default="posterior")
    p.add_argument("--max-order", type=int)
    p.add_argument("--singleton-moves", action="store_true", help="also toggle singletons")
    p.add_argument("--structure")
    p.add_argument("--no-singletons", action="store_true")
    p.add_argument("--draws", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("-o", "--out")
    _add_prior(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("compare", help="contrast inclusion probabilities of two report CSVs")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--margin", type=float, default=0.5)
    p.add_argument("--labels", help="two comma-separated column names")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (LoglinError, ValueError, OSError) as exc:
        print(f"loglinmc3 {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
