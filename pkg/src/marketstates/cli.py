"""Command-line entry point: ``marketstates {fetch,run,report,synth}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import ingest, synth
from .io import write_rows
from .pipeline import ConfigError, Pipeline, StageError, load_config

# flag name -> config key
_RUN_FLAGS = {
    "csv": "csv",
    "source": "source",
    "coins": "coins",
    "cache_dir": "cache_dir",
    "start": "start",
    "end": "end",
    "labels": "labels",
    "epoch_length": "epoch_length",
    "top_k": "top_k",
    "norm_window": "norm_window",
    "power_q": "power_q",
    "alpha": "alpha",
    "null": "null",
    "wl_iterations": "wl_iterations",
    "k": "k",
    "k_max": "k_max",
    "neighbors": "neighbors",
    "seed": "seed",
    "restarts": "restarts",
    "out": "out",
    "base_url": "remote_base_url",
}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file; flags override it")
    p.add_argument("--source", choices=("csv", "remote"))
    p.add_argument("--csv", help="price panel CSV (date,coin_id,close,market_cap)")
    p.add_argument("--coins", help="comma-separated coin ids for the remote source")
    p.add_argument("--cache-dir")
    p.add_argument("--base-url", help="remote aggregator base URL")
    p.add_argument("--start", help="first date, YYYY-MM-DD")
    p.add_argument("--end", help="last date, YYYY-MM-DD")
    p.add_argument("--labels", help="planted labels CSV (epoch_index,regime) for an ARI in the report")
    p.add_argument("--epoch-length", type=int)
    p.add_argument("--top-k", type=int)
    p.add_argument("--norm-window", type=int)
    p.add_argument("--power-q", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--null", choices=("student", "fisher"))
    p.add_argument("--wl-iterations", type=int)
    p.add_argument("--k", type=int, help="number of states; skips the eigengap choice")
    p.add_argument("--k-max", type=int)
    p.add_argument("--neighbors", type=int, help="kNN size of the clustering affinity (0 = dense)")
    p.add_argument("--seed", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)


def _overrides(args: argparse.Namespace) -> dict:
    out = {}
    for flag, key in _RUN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="marketstates", description="Market states from correlation-network kernels.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the full pipeline")
    _add_run_flags(p)

    p = sub.add_parser("report", help="print the summary of a finished run")
    p.add_argument("--out", default="out")
    p.add_argument("--json", action="store_true", help="print the raw summary JSON")

    p = sub.add_parser("fetch", help="download daily prices into a cache and write a panel CSV")
    p.add_argument("--config")
    p.add_argument("--coins", help="comma-separated coin ids, or @file with one id per line")
    p.add_argument("--start", required=True)
    p.add_argument("--end", required=True)
    p.add_argument("--cache-dir")
    p.add_argument("--base-url")
    p.add_argument("--output", required=True, help="panel CSV to write")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("synth", help="write a synthetic panel with planted regimes")
    p.add_argument("--output", required=True, help="panel CSV to write")
    p.add_argument("--labels", required=True, help="planted labels CSV to write")
    p.add_argument("--epochs", type=int, default=103)
    p.add_argument("--epoch-length", type=int, default=20)
    p.add_argument("--top-k", type=int, default=40)
    p.add_argument("--regimes", type=int, default=4)
    p.add_argument("--rho-in", type=float, default=0.7)
    p.add_argument("--rho-out", type=float, default=0.1)
    p.add_argument("--distribution", choices=("gaussian", "student"), default="gaussian")
    p.add_argument("--seed", type=int, default=0)
    return parser


def cmd_run(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    Pipeline(cfg, jobs=args.jobs).run()
    summary = json.loads((Path(cfg.out) / "report" / "summary.json").read_text(encoding="utf-8"))
    print(_describe(summary))
    return 0


def cmd_report(args) -> int:
    path = Path(args.out) / "report" / "summary.json"
    if not path.exists():
        print(f"no report at {path}; run the pipeline first", file=sys.stderr)
        return 1
    summary = json.loads(path.read_text(encoding="utf-8"))
    print(json.dumps(summary, indent=1, sort_keys=True) if args.json else _describe(summary))
    return 0


def cmd_fetch(args) -> int:
    overrides = {"source": "remote", "csv": None}
    if args.coins:
        coins = args.coins
        if coins.startswith("@"):
            coins = ",".join(Path(coins[1:]).read_text(encoding="utf-8").split())
        overrides["coins"] = coins
    for flag, key in (("start", "start"), ("end", "end"), ("cache_dir", "cache_dir"), ("base_url", "remote_base_url")):
        if getattr(args, flag) is not None:
            overrides[key] = getattr(args, flag)
    cfg = load_config(args.config, overrides)
    panel = ingest.fetch_remote(list(cfg.coins), (cfg.start, cfg.end), cfg.cache_dir, config=cfg.remote_config(), jobs=args.jobs)
    ingest.write_csv(panel, args.output)
    report = ingest.validate_panel(panel)
    print(f"wrote {args.output}: {report.n_coins} coins x {report.n_dates} days, {report.missing_cells} missing cells")
    return 0


def cmd_synth(args) -> int:
    specs = synth.decoupling_regimes(args.top_k, args.epochs, args.regimes, args.rho_in, args.rho_out)
    panel = synth.generate_panel(
        specs, args.top_k, args.epoch_length, args.epochs, args.seed, distribution=args.distribution
    )
    ingest.write_csv(panel, args.output)
    labels = synth.planted_labels(specs, args.epochs)
    write_rows(args.labels, ["epoch_index", "regime"], enumerate(labels))
    print(f"wrote {args.output} ({len(panel.coins)} coins x {len(panel.dates)} days) and {args.labels}")
    return 0


def _describe(summary: dict) -> str:
    lines = [f"epochs: {summary['n_epochs']}  states: {summary['k']} ({summary['k_source']})"]
    if summary.get("skipped_epochs"):
        lines.append(f"skipped epochs: {len(summary['skipped_epochs'])}")
    for st in summary["states"]:
        lines.append(
            f"  state {st['state']}: {st['size']} epochs, medoid {st['medoid']}, mean correlation {st['mean_correlation']:.3f}"
        )
    if summary.get("ari") is not None:
        lines.append(f"ARI vs planted labels: {summary['ari']:.3f}")
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": cmd_run, "report": cmd_report, "fetch": cmd_fetch, "synth": cmd_synth}
    try:
        return handlers[args.command](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ingest.IngestError, ingest.FetchError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
