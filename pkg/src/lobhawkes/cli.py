"""Command-line pipeline: ingest, bin, estimate, select, aggregate, export, simulate."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import List, Optional

import numpy as np

from . import binning, estimator, events, postprocess, selection, simulator

log = logging.getLogger("lobhawkes")


class ConfigInvalid(ValueError):
    def __init__(self, problems):
        self.problems = problems
        super().__init__("; ".join(f"{k}: {v}" for k, v in problems.items()))


@dataclass
class PipelineConfig:
    delta: float = 0.25
    support: float = 20.0
    k_levels: int = 3
    use_sizes: bool = True
    lam: object = 0.0005  # a number or "auto"
    variant: int = 7
    days: List[str] = field(default_factory=list)
    seed: int = 0
    workers: int = 1

    def validate(self) -> "PipelineConfig":
        problems = {}
        if not (isinstance(self.delta, (int, float)) and self.delta > 0):
            problems["delta"] = f"must be a positive number, got {self.delta!r}"
        if not (isinstance(self.support, (int, float)) and self.support > 0):
            problems["support"] = f"must be a positive number, got {self.support!r}"
        elif "delta" not in problems and not self.delta < self.support < binning.SESSION:
            problems["support"] = f"need delta < support < {binning.SESSION:g}"
        if not (isinstance(self.k_levels, int) and self.k_levels >= 1):
            problems["k_levels"] = f"must be a positive integer, got {self.k_levels!r}"
        if self.lam != "auto" and not (isinstance(self.lam, (int, float)) and self.lam >= 0):
            problems["lambda"] = f"must be >= 0 or 'auto', got {self.lam!r}"
        if self.variant not in range(1, 8):
            problems["variant"] = f"must be 1..7, got {self.variant!r}"
        if not (isinstance(self.workers, int) and self.workers >= 1):
            problems["workers"] = "must be a positive integer"
        if problems:
            raise ConfigInvalid(problems)
        return self

    def bin_config(self) -> binning.BinConfig:
        return binning.BinConfig(delta=self.delta, support=self.support, k_levels=self.k_levels,
                                 use_sizes=self.use_sizes)


_FLAG_FIELDS = {"delta": float, "support": float, "k_levels": int, "variant": int, "seed": int, "workers": int}


def load_config(path: Optional[str], args: argparse.Namespace) -> PipelineConfig:
    """Defaults, then the config file, then explicit flags."""
    values = {}
    if path:
        with open(path) as fh:
            raw = json.load(fh)
        names = {f.name for f in fields(PipelineConfig)}
        if "lambda" in raw:
            raw["lam"] = raw.pop("lambda")
        unknown = sorted(set(raw) - names)
        if unknown:
            raise ConfigInvalid({k: "unknown field" for k in unknown})
        values.update(raw)
    for name in _FLAG_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    lam = getattr(args, "lam", None)
    if lam is not None:
        values["lam"] = lam if lam == "auto" else _number(lam, "lambda")
    if getattr(args, "no_sizes", False):
        values["use_sizes"] = False
    return PipelineConfig(**values).validate()


def _number(text, name):
    try:
        return float(text)
    except ValueError:
        raise ConfigInvalid({name: f"not a number: {text!r}"}) from None


# --------------------------------------------------------------------------
# subcommands


def cmd_ingest(args, cfg):
    ic = events.IngestConfig(k_levels=cfg.k_levels)
    res = events.ingest(args.messages, args.orderbook, ic)
    os.makedirs(args.out, exist_ok=True)
    events.write_events(os.path.join(args.out, "events.csv"), res.events)
    events.save_path(os.path.join(args.out, "path.npz"), res.path)
    events.write_report(os.path.join(args.out, "report.json"), res.report)
    print(f"{res.report['classified']} events from {res.report['messages']} messages, "
          f"{res.report['drift_resyncs']} resyncs")


def _load_day(directory):
    evs = events.read_events(os.path.join(directory, "events.csv"))
    path_file = os.path.join(directory, "path.npz")
    path = events.load_path(path_file) if os.path.exists(path_file) else None
    return evs, path


def cmd_bin(args, cfg):
    evs, path = _load_day(args.events)
    bins = binning.build_bins(evs, cfg.bin_config(), path=path)
    binning.save_bins(args.out, bins)
    print(f"{bins.d} types x {bins.n} bins -> {args.out}")


def _penalty(problem, cfg, variant):
    if not estimator.ModelVariant(variant).lasso:
        return 0.0
    if cfg.lam == "auto":
        return estimator.calibrate_lambda(problem, variant=variant)
    return cfg.lam


def cmd_estimate(args, cfg):
    bins = binning.load_bins(args.bins)
    bcfg = bins.config
    problem = estimator.build_design(bins, bcfg)
    lam = _penalty(problem, cfg, cfg.variant)
    est, diag = estimator.estimate_model(bins, bcfg, cfg.variant, lam, day=args.day, problem=problem)
    if cfg.lam == "auto" and est.variant.lasso:
        est.lam = "auto"
    estimator.save_estimators(args.out, est)
    print(f"variant {cfg.variant}: {diag.zero_count} zero kernel coefficients -> {args.out}")


def _select_day(job):
    path, cfg = job
    bins = binning.load_bins(path)
    problem = estimator.build_design(bins, bins.config)
    lam = _penalty(problem, cfg, estimator.ModelVariant.FULL_LASSO)
    fits = selection.run_selection(bins, bins.config, lam, problem=problem)
    return {v: (f.aic, f.d_e, f.sample_count) for v, f in fits.items()}


def cmd_select(args, cfg):
    jobs = [(p, cfg) for p in args.bins]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_select_day, jobs))
    else:
        results = [_select_day(j) for j in jobs]
    os.makedirs(args.out, exist_ok=True)
    by_day, diffs = {}, {}
    for path, res in zip(args.bins, results):
        day = os.path.splitext(os.path.basename(path))[0]
        fits = {v: selection.ModelFit(v, None, de, aic, m) for v, (aic, de, m) in res.items()}
        by_day[day] = fits
        diffs[day] = selection.pairwise_differences(fits)
    selection.write_selection(os.path.join(args.out, "selection.csv"), by_day)
    rows = selection.write_pairwise(os.path.join(args.out, "pairwise.csv"), diffs)
    print(selection.format_table(rows))


def cmd_aggregate(args, cfg):
    sets = [estimator.load_estimators(d) for d in args.bundles]
    agg = postprocess.aggregate_days(sets)
    estimator.save_estimators(args.out, agg.mean)
    with open(os.path.join(args.out, "coverage.json"), "w") as fh:
        json.dump({"days": agg.days, **{k: np.asarray(v).tolist() for k, v in agg.coverage.items()}},
                  fh, sort_keys=True)
        fh.write("\n")
    print(f"averaged {len(sets)} days -> {args.out}")


def _parse_event(text):
    text = text.strip()
    try:
        return int(text) - 1
    except ValueError:
        return text


def cmd_export(args, cfg):
    est = estimator.load_estimators(args.bundle)
    sel = []
    for pair in args.pair or []:
        if ":" not in pair:
            raise ConfigInvalid({"pair": f"expected SOURCE:TARGET, got {pair!r}"})
        j, i = pair.split(":", 1)
        sel.append((_parse_event(j), _parse_event(i)))
    sel += [_parse_event(e) for e in args.event or []]
    files = postprocess.export_plots(est, sel, args.out)
    print(f"{len(files)} files -> {args.out}")


def _truth(args, cfg):
    if args.truth:
        return simulator.load_truth(args.truth)
    return simulator.book_truth(k_levels=cfg.k_levels, delta=cfg.delta, support=min(cfg.support, 5.0))


def cmd_simulate(args, cfg):
    truth = _truth(args, cfg)
    mode = args.mode or ("full" if truth.k_levels is not None and truth.liq_fn is not None else "pure")
    res = simulator.simulate(truth, simulator.SimConfig(args.horizon, cfg.seed, mode))
    os.makedirs(args.out, exist_ok=True)
    events.write_events(os.path.join(args.out, "events.csv"), res.events)
    if mode == "full":
        events.save_path(os.path.join(args.out, "path.npz"), res.path)
        simulator.export_lobster(res, args.out)
    events.write_report(os.path.join(args.out, "report.json"), res.stats)
    print(f"{len(res.events)} events over {args.horizon:g}s -> {args.out}")


def cmd_roundtrip(args, cfg):
    import tempfile
    truth = _truth(args, cfg)
    res = simulator.simulate(truth, simulator.SimConfig(args.horizon, cfg.seed, "full"))
    with tempfile.TemporaryDirectory() as tmp:
        m, o = simulator.export_lobster(res, tmp)
        back = events.ingest(m, o, events.IngestConfig(k_levels=truth.k_levels))
    same = back.events == res.events
    print(f"{len(res.events)} simulated, {len(back.events)} re-ingested, identical: {same}")
    return 0 if same else 1


COMMANDS = {
    "ingest": cmd_ingest,
    "bin": cmd_bin,
    "estimate": cmd_estimate,
    "select": cmd_select,
    "aggregate": cmd_aggregate,
    "export": cmd_export,
    "simulate": cmd_simulate,
    "roundtrip-check": cmd_roundtrip,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config; flags override it")
    common.add_argument("--delta", type=float, help="bin width in seconds (default 0.25)")
    common.add_argument("--support", type=float, help="kernel support in seconds (default 20)")
    common.add_argument("--k-levels", dest="k_levels", type=int, help="book levels K (default 3)")
    common.add_argument("--lambda", dest="lam", help="LASSO penalty or 'auto' (default 0.0005)")
    common.add_argument("--variant", type=int, help="model variant 1..7 (default 7)")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--no-sizes", action="store_true", help="count events instead of shares")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="lobhawkes", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("ingest", parents=[common], help="replay LOBSTER files into classified events")
    p.add_argument("--messages", required=True)
    p.add_argument("--orderbook", required=True)
    p.add_argument("--out", required=True)
    p = sub.add_parser("bin", parents=[common], help="bin a classified stream")
    p.add_argument("--events", required=True, help="directory holding events.csv (and path.npz)")
    p.add_argument("--out", required=True)
    p = sub.add_parser("estimate", parents=[common], help="fit one model variant")
    p.add_argument("--bins", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--day")
    p = sub.add_parser("select", parents=[common], help="compare the seven variants by AIC")
    p.add_argument("--bins", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p = sub.add_parser("aggregate", parents=[common], help="average daily estimates")
    p.add_argument("--bundles", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p = sub.add_parser("export", parents=[common], help="write plot data")
    p.add_argument("--bundle", required=True)
    p.add_argument("--pair", action="append", help="SOURCE:TARGET, 1-based index or label")
    p.add_argument("--event", action="append", help="event for liquidity/time bars")
    p.add_argument("--out", required=True)
    for name in ("simulate", "roundtrip-check"):
        p = sub.add_parser(name, parents=[common], help="simulate a synthetic day" if name == "simulate"
                           else "simulate, export, re-ingest and compare")
        p.add_argument("--truth", help="ground truth JSON; a built-in book model otherwise")
        p.add_argument("--horizon", type=float, default=600.0)
        if name == "simulate":
            p.add_argument("--mode", choices=("full", "pure"))
            p.add_argument("--out", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args)
        rc = COMMANDS[args.command](args, cfg)
    except ConfigInvalid as e:
        for k, v in e.problems.items():
            print(f"config error: {k}: {v}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
