"""Command-line entry point.

Subcommands::

    fit-sites   dataset CSV (+ graph)        -> stage1.json
    select      stage1.json + graph (+ cfg)  -> draws, summary.json, report.json
    simulate    study preset/config          -> dataset.csv, truth.json, graph.txt
    replicate   study preset/config          -> aggregate.csv/json, per-replication metrics
    evaluate    report.json + truth.json     -> metrics.csv/json

Exit status is 0 on success, 1 for invalid input or usage, 2 for a
numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io as _io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import io as sio
from .errors import InvalidArgumentError, NumericalError, SchemaError, ValidationError
from .mcmc.chain import run_chain
from .mcmc.config import ChainConfig, PriorConfig
from .mcmc.model import StageTwoData
from .mcmc.summary import summarize
from .selection import average_mse, confusion_metrics, decide
from .simulation import (PRESETS, StudySpec, aggregate, generate_coefficients,
                         generate_survival_data, preset, replication_seed, run_study)
from .spatial_graph import graph_distance_matrix, read_edge_list, write_edge_list
from .survival_core import FitOptions, fit_all_sites

log = logging.getLogger("spatialcox")

METRIC_FIELDS = ("tp", "fn", "tn", "fp", "tpr", "tnr", "ppv", "npv")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1 instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "NaN" if math.isnan(x) else repr(float(x))
    return "" if x is None else str(x)


def _write_csv(path, header, rows) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    sio.atomic_write_text(path, buf.getvalue())


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise SchemaError(f"{path}: config must be a JSON object")
    return cfg


def _study(args) -> StudySpec:
    if (args.preset is None) == (args.config is None):
        raise InvalidArgumentError("give exactly one of --preset or --config")
    if args.preset is not None:
        spec = preset(args.preset)
    else:
        spec = StudySpec.from_dict(_read_config(args.config), base_dir=Path(args.config).parent)
    if getattr(args, "chains", None):
        spec = spec.with_(chain=replace(spec.chain, n_chains=args.chains))
    return spec


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


# ---------------------------------------------------------------- commands


def cmd_fit_sites(args, argv) -> int:
    started = _now()
    cfg = _read_config(args.config)
    opts = FitOptions(**cfg.get("fit_options", {}))
    threshold = float(args.exclusion_threshold if args.exclusion_threshold is not None
                      else cfg.get("exclusion_threshold", 100.0))
    sites, names = sio.parse_dataset(args.data)
    if args.graph:
        graph = read_edge_list(args.graph)
        graph.subgraph_order([s.site_id for s in sites])
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            estimates, excluded = fit_all_sites(sites, opts, threshold, executor=pool)
    else:
        estimates, excluded = fit_all_sites(sites, opts, threshold)
    for x in excluded:
        log.warning("excluded site %s: %s", x.site_id, x.reason)
    doc = sio.Stage1Document.from_fit(sites, estimates, excluded, names, threshold,
                                      {"max_iter": opts.max_iter, "grad_tol": opts.grad_tol,
                                       "step_halving_max": opts.step_halving_max,
                                       "divergence_bound": opts.divergence_bound})
    out = Path(args.out_dir)
    sio.save_stage1(doc, out / "stage1.json")
    sio.write_manifest(out, "fit-sites", argv, config_path=args.config,
                       inputs=[args.data, args.graph, args.config], started=started)
    print(f"fitted {len(sites)} sites, excluded {len(excluded)}; wrote {out / 'stage1.json'}")
    return 0


def cmd_select(args, argv) -> int:
    started = _now()
    cfg = _read_config(args.config)
    prior = PriorConfig.from_dict(cfg.get("prior"))
    chain = ChainConfig.from_dict(cfg.get("chain"))
    if args.seed is not None:
        chain = replace(chain, seed=args.seed)
    if args.chains:
        chain = replace(chain, n_chains=args.chains)
    doc = sio.load_stage1(args.stage1)
    pmles = doc.included()
    if not pmles:
        raise InvalidArgumentError(f"{args.stage1}: every site is excluded")
    graph = read_edge_list(args.graph)
    keep = graph.subgraph_order([e.site_id for e in pmles])
    D = graph_distance_matrix(graph)[np.ix_(keep, keep)]
    data = StageTwoData.from_pmles(pmles, D)
    if args.workers > 1 and chain.n_chains > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            draws = run_chain(data, prior, chain, executor=pool)
    else:
        draws = run_chain(data, prior, chain)
    summary = summarize(draws)
    lam_t = float(cfg.get("lambda_threshold", 1.0))
    c_t = float(cfg.get("c_threshold", 0.5))
    report = decide(summary, lam_t, c_t, names=doc.covariates)

    out = Path(args.out_dir)
    sio.save_draws(draws, out / f"draws.{args.draws_format}")
    sio.save_summary(summary, out / "summary.json")
    sio.save_report(report, out / "report.json",
                    {"lambda_threshold": lam_t, "c_threshold": c_t})
    names = list(doc.covariates)
    _write_csv(out / "site_coefficients.csv",
               ["site_id"] + [f"{nm}_{stat}" for nm in names
                              for stat in ("mean", "q025", "q500", "q975")],
               [[sid] + [v for k in range(len(names))
                         for v in (summary.beta_mean[i, k],
                                   *summary.beta_quantiles[:, i, k])]
                for i, sid in enumerate(summary.site_ids)])
    sio.write_manifest(out, "select", argv, seed=chain.seed, config_path=args.config,
                       inputs=[args.stage1, args.graph, args.config], started=started)
    for rec in report.records():
        flag = "selected" if rec["selected"] else "dropped"
        kind = {True: ", varying", False: ", static", None: ""}[rec["spatially_varying"]]
        print(f"{rec['name']:>12}  lambda={rec['lambda_mean']:.3f}  "
              f"P(varying)={rec['c_mean']:.3f}  {flag}{kind}")
    return 0


def cmd_simulate(args, argv) -> int:
    started = _now()
    spec = _study(args)
    seed = replication_seed(args.seed, 0)
    coef_ss, surv_ss, _ = np.random.SeedSequence(seed).spawn(3)
    D = graph_distance_matrix(spec.graph)
    truth = generate_coefficients(spec, np.random.default_rng(coef_ss), D)
    sites = generate_survival_data(truth, spec, np.random.default_rng(surv_ss))
    out = Path(args.out_dir)
    names = [f"x{k + 1}" for k in range(spec.p)]
    sio.write_dataset(sites, out / "dataset.csv", names)
    write_edge_list(spec.graph, out / "graph.txt")
    sio.save_json(out / "truth.json", sio.TRUTH, {
        "study": spec.name,
        "site_ids": [str(s) for s in spec.graph.site_ids],
        "covariates": names,
        "beta": truth,
        "significant": spec.significant,
        "varying": spec.varying,
        "pattern": [c.to_dict() for c in spec.pattern],
    })
    sio.atomic_write_text(out / "study.json", json.dumps(spec.to_dict(), indent=1) + "\n")
    sio.write_manifest(out, "simulate", argv, seed=args.seed, config_path=args.config,
                       inputs=[args.config], started=started)
    rate = 1.0 - float(np.mean(np.concatenate([s.status for s in sites])))
    print(f"simulated {len(sites)} sites x {spec.per_site_n} subjects, "
          f"censoring {100 * rate:.1f}%; wrote {out}")
    return 0


def _replication_rows(results):
    for r in results:
        for level in ("significance", "spatial"):
            m = getattr(r, level)
            vals = [math.nan] * len(METRIC_FIELDS) if m is None else \
                [getattr(m, f) for f in METRIC_FIELDS]
            yield [r.index, r.seed, level, *vals, r.censoring_rate,
                   "" if r.ok else r.error.splitlines()[0]]


def cmd_replicate(args, argv) -> int:
    started = _now()
    spec = _study(args)
    count = args.replications or spec.replications

    def progress(r):
        status = "ok" if r.ok else f"FAILED ({r.error.splitlines()[0]})"
        log.info("replication %d (seed %d): %s in %.1fs", r.index, r.seed, status, r.wall_time)

    results = run_study(spec, args.seed, workers=args.workers, replications=count,
                        progress=progress)
    agg = aggregate(results, spec)
    out = Path(args.out_dir)
    _write_csv(out / "aggregate.csv", ["level", "metric", "mean", "sd", "n_defined", "n_undefined"],
               [[m["level"], m["metric"], m["mean"], m["sd"], m["n_defined"], m["n_undefined"]]
                for m in agg["metrics"]])
    _write_csv(out / "coefficients.csv", ["coefficient", "truth", "selected", "varying",
                                          "average_mse"],
               [[c["coefficient"], c["truth"], c["selected"], c["varying"], c["average_mse"]]
                for c in agg["coefficients"]])
    _write_csv(out / "replications.csv",
               ["replication", "seed", "level", *METRIC_FIELDS, "censoring_rate", "error"],
               _replication_rows(results))
    sio.save_json(out / "aggregate.json", "spatialcox.aggregate",
                  {"master_seed": args.seed, "study": spec.to_dict(), **agg,
                   "per_replication": [
                       {"index": r.index, "seed": r.seed, "ok": r.ok,
                        "selected": r.selected, "varying": r.varying,
                        "lambda_mean": r.lambda_mean, "c_mean": r.c_mean, "mse": r.mse,
                        "censoring_rate": r.censoring_rate,
                        "excluded_sites": list(r.excluded_sites)}
                       for r in results]})
    sio.save_json(out / "timing.json", "spatialcox.timing",
                  {"wall_time": [r.wall_time for r in results]})
    sio.write_manifest(out, "replicate", argv, seed=args.seed, config_path=args.config,
                       inputs=[args.config], started=started)
    for m in agg["metrics"]:
        print(f"{m['level']:>12} {m['metric']}: {_fmt(m['mean'])} (sd {_fmt(m['sd'])}, "
              f"defined in {m['n_defined']})")
    if agg["failed"]:
        print(f"{len(agg['failed'])} of {count} replications failed", file=sys.stderr)
        if not agg["succeeded"]:
            return 2
    return 0


def cmd_evaluate(args, argv) -> int:
    started = _now()
    report = sio.load_report(args.report)
    truth = sio.load_json(args.truth, sio.TRUTH)
    sig = np.array(truth["significant"], dtype=bool)
    var = np.array(truth["varying"], dtype=bool)
    if sig.size != report.selected.size:
        raise InvalidArgumentError(f"report has {report.selected.size} predictors, "
                                   f"truth has {sig.size}")
    called = np.array([bool(v) for v in report.spatially_varying])
    metrics = {"significance": confusion_metrics(report.selected, sig),
               "spatial": confusion_metrics(called[sig], var[sig])}
    out = Path(args.out_dir)
    _write_csv(out / "metrics.csv", ["level", *METRIC_FIELDS],
               [[lvl, *(getattr(m, f) for f in METRIC_FIELDS)] for lvl, m in metrics.items()])
    payload = {"metrics": {lvl: m.as_dict() for lvl, m in metrics.items()}}
    inputs = [args.report, args.truth]
    if args.summary:
        summary = sio.load_summary(args.summary)
        ids = [str(s) for s in truth["site_ids"]]
        pos = {s: i for i, s in enumerate(ids)}
        try:
            rows = [pos[str(s)] for s in summary.site_ids]
        except KeyError as exc:
            raise InvalidArgumentError(f"summary site {exc.args[0]!r} not in truth") from None
        beta = np.array(truth["beta"], dtype=float)[rows]
        payload["average_mse"] = average_mse(summary.beta_mean, beta)
        inputs.append(args.summary)
    sio.save_json(out / "metrics.json", "spatialcox.metrics", payload)
    sio.write_manifest(out, "evaluate", argv, inputs=inputs, started=started)
    for lvl, m in metrics.items():
        print(f"{lvl:>12}: " + "  ".join(f"{f}={_fmt(getattr(m, f))}" for f in METRIC_FIELDS))
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spatialcox",
                description="Two-stage spatially varying Cox regression with "
                            "horseshoe and spike-and-slab selection.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def common(sp, seed=True, config=True, seed_default=None):
        sp.add_argument("--out-dir", required=True, help="directory for all outputs")
        if seed:
            sp.add_argument("--seed", type=int, default=seed_default, help="master random seed")
        if config:
            sp.add_argument("--config", help="JSON configuration file")

    fs = sub.add_parser("fit-sites", help="per-site partial-likelihood fits")
    fs.add_argument("--data", required=True, help="CSV: site_id,time,status,x1..xp")
    fs.add_argument("--graph", help="edge list to cross-check site ids against")
    fs.add_argument("--exclusion-threshold", type=float,
                    help="exclude sites whose covariance diagonal exceeds this (default 100)")
    fs.add_argument("--workers", type=int, default=1)
    common(fs, seed=False)
    fs.set_defaults(func=cmd_fit_sites)

    se = sub.add_parser("select", help="stage-2 sampler and selection report")
    se.add_argument("--stage1", required=True, help="stage1.json from fit-sites")
    se.add_argument("--graph", required=True, help="edge list over the sites")
    se.add_argument("--chains", type=int, help="number of independent chains")
    se.add_argument("--workers", type=int, default=1, help="processes for chains")
    se.add_argument("--draws-format", choices=("npz", "csv"), default="npz")
    common(se)
    se.set_defaults(func=cmd_select)

    for name, func, helptext in (("simulate", cmd_simulate, "one synthetic dataset"),
                                 ("replicate", cmd_replicate, "a full simulation study")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--preset", choices=PRESETS, help="built-in study")
        if name == "replicate":
            sp.add_argument("--workers", type=int, default=1, help="processes for replications")
            sp.add_argument("--replications", type=int, help="override the replication count")
            sp.add_argument("--chains", type=int, help="chains per replication")
        common(sp, seed_default=0)
        sp.set_defaults(func=func)

    ev = sub.add_parser("evaluate", help="score a report against the truth")
    ev.add_argument("--report", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--summary", help="summary.json, to add per-coefficient MSE")
    common(ev, seed=False, config=False)
    ev.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args, argv)
    except NumericalError as exc:
        print(f"spatialcox: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, OSError, TypeError, ValueError) as exc:
        print(f"spatialcox: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
